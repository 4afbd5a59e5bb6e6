"""Dense SIFT feature extractor with an exact backward pass.

The extractor is fully convolutional: a descriptor is computed at every
stride-spaced placement that fits entirely inside the image (no padding), so
input size is free.  The forward pipeline is

1. centered-difference gradients with replicate boundary handling;
2. soft orientation binning: each pixel's gradient magnitude is split
   between the two nearest of ``num_orientations`` evenly spaced bins by
   linear angular interpolation;
3. bilinear (triangular-window) spatial pooling of every orientation plane
   into the ``grid x grid`` cell layout of each descriptor;
4. descriptor normalization: divide by (norm + norm_eps), squash every
   component through the smooth clamp ``t*tanh(x*s/t)/tanh(s)`` with
   ``t = clamp_threshold`` and ``s = smooth_sharpness``, renormalize.

Every stage is smooth (the clamp replaces the classic hard cutoff), so
:func:`dsift_backward` is the exact vector-Jacobian product of the pipeline.
Descriptor depth is laid out as ``(cell_row * grid + cell_col) *
num_orientations + orientation``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    DimensionMismatchError,
    ImageTooSmallError,
    InvalidParameterError,
)
from .imaging import GrayImage
from . import tensorio

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class DsiftConfig:
    num_orientations: int = 8
    cell_size: int = 4
    grid: int = 4
    stride: int | None = None  # None means cell_size
    clamp_threshold: float = 0.2
    norm_eps: float = 1e-8
    # sharpness of the soft clamp t*tanh(x*s/t)/tanh(s): the limit s -> 0 is
    # the identity, large s binarizes.  Values near 1/3 keep near-unit slope
    # below the threshold while compressing components above it, which the
    # inversion optimizer needs; sharp settings (s >> 1) leave no usable
    # gradient through saturated components.
    smooth_sharpness: float = 0.35

    def __post_init__(self):
        if self.stride is None:
            object.__setattr__(self, "stride", self.cell_size)
        if self.num_orientations < 2:
            raise InvalidParameterError("need at least 2 orientation bins")
        if self.cell_size < 1 or self.grid < 1 or self.stride < 1:
            raise InvalidParameterError("cell_size, grid and stride must be >= 1")
        if not 0.0 < self.clamp_threshold <= 1.0:
            raise InvalidParameterError("clamp_threshold must lie in (0, 1]")
        if not self.norm_eps > 0:
            raise InvalidParameterError("norm_eps must be > 0")
        if not self.smooth_sharpness > 0:
            raise InvalidParameterError("smooth_sharpness must be > 0")

    @property
    def support(self) -> int:
        """Side length of one descriptor's pixel footprint."""
        return self.grid * self.cell_size

    @property
    def descriptor_size(self) -> int:
        return self.grid * self.grid * self.num_orientations

    def feature_shape(self, height: int, width: int) -> tuple[int, int]:
        """Descriptor grid dims for an input image; valid placements only."""
        if height < self.support or width < self.support:
            raise ImageTooSmallError(
                f"{height}x{width} image cannot host a {self.support}-pixel descriptor"
            )
        rows = (height - self.support) // self.stride + 1
        cols = (width - self.support) // self.stride + 1
        return rows, cols


@dataclass(frozen=True)
class FeatureMap:
    """Dense descriptor grid: data has shape (rows, cols, depth), float64."""

    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C")  # private copy
        if arr.ndim != 3:
            raise DimensionMismatchError(
                f"feature map must be rank 3, got shape {arr.shape}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def save(self, path: str) -> None:
        tensorio.save_tensor(path, self.data)

    @staticmethod
    def load(path: str) -> "FeatureMap":
        arr = tensorio.load_tensor(path)
        return FeatureMap(arr.astype(np.float64))


def concat_depth(maps: list[FeatureMap]) -> FeatureMap:
    """Stack feature maps of equal spatial dims along depth (channel fusion)."""
    if not maps:
        raise InvalidParameterError("nothing to concatenate")
    rows, cols = maps[0].height, maps[0].width
    for m in maps[1:]:
        if (m.height, m.width) != (rows, cols):
            raise DimensionMismatchError("feature maps disagree in spatial dims")
    return FeatureMap(np.concatenate([m.data for m in maps], axis=2))


# --------------------------------------------------------------------------
# forward
# --------------------------------------------------------------------------

def _centered_gradients(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    h, w = x.shape
    gx = np.zeros_like(x)
    gy = np.zeros_like(x)
    if w >= 2:
        gx[:, 1:-1] = 0.5 * (x[:, 2:] - x[:, :-2])
        gx[:, 0] = 0.5 * (x[:, 1] - x[:, 0])
        gx[:, -1] = 0.5 * (x[:, -1] - x[:, -2])
    if h >= 2:
        gy[1:-1, :] = 0.5 * (x[2:, :] - x[:-2, :])
        gy[0, :] = 0.5 * (x[1, :] - x[0, :])
        gy[-1, :] = 0.5 * (x[-1, :] - x[-2, :])
    return gx, gy


def _soft_bins(gx: np.ndarray, gy: np.ndarray, num_orientations: int):
    """Magnitude split between the two neighbouring orientation bins.

    Returns (magnitude, low bin index, high bin index, high-bin fraction).
    Zero-magnitude pixels get bin 0 with zero contribution, sidestepping the
    undefined angle.
    """
    mag = np.hypot(gx, gy)
    nonzero = mag > 0.0
    phi = np.zeros_like(mag)
    np.arctan2(gy, gx, where=nonzero, out=phi)
    phi = np.where(phi < 0.0, phi + TWO_PI, phi)
    a = phi * (num_orientations / TWO_PI)
    k0 = np.floor(a).astype(np.intp)
    np.clip(k0, 0, num_orientations - 1, out=k0)
    frac = a - k0
    k1 = (k0 + 1) % num_orientations
    return mag, k0, k1, frac


def _orientation_planes(mag, k0, k1, frac, num_orientations, shape):
    n = mag.size
    planes = np.zeros((num_orientations, n))
    cols = np.arange(n)
    planes[k0.ravel(), cols] = (mag * (1.0 - frac)).ravel()
    planes[k1.ravel(), cols] = (mag * frac).ravel()
    return planes.reshape(num_orientations, *shape)


def _pool_matrix(cfg: DsiftConfig) -> np.ndarray:
    """(support, grid) matrix of triangular cell weights per pixel offset."""
    offsets = np.arange(cfg.support, dtype=np.float64)
    centers = (np.arange(cfg.grid, dtype=np.float64) + 0.5) * cfg.cell_size - 0.5
    return np.maximum(0.0, 1.0 - np.abs(offsets[:, None] - centers[None, :])
                      / cfg.cell_size)


def _pool(planes: np.ndarray, cfg: DsiftConfig) -> np.ndarray:
    """(O, h, w) orientation planes -> (rows, cols, grid, grid, O) raw cells.

    Both axes pool through the same (support, grid) weight matrix; windows
    are copied contiguous first so the contractions run as plain matmuls.
    """
    u = _pool_matrix(cfg)
    L, s = cfg.support, cfg.stride
    o, h, _ = planes.shape
    cols_view = np.ascontiguousarray(
        sliding_window_view(planes, L, axis=2)[:, :, ::s, :])
    cols = cols_view.shape[2]
    pooled_cols = (cols_view.reshape(-1, L) @ u).reshape(o, h, cols, cfg.grid)
    rows_view = np.ascontiguousarray(
        sliding_window_view(pooled_cols, L, axis=1)[:, ::s, :, :, :])
    rows = rows_view.shape[1]
    # rows_view axes: (O, row, col, cell_col, row_offset)
    cells = (rows_view.reshape(-1, L) @ u).reshape(
        o, rows, cols, cfg.grid, cfg.grid)
    # cells axes: (O, row, col, cell_col, cell_row) -> (row, col, cr, cc, O)
    return np.ascontiguousarray(np.transpose(cells, (1, 2, 4, 3, 0)))


def _smooth_clamp(d1: np.ndarray, cfg: DsiftConfig):
    t, s = cfg.clamp_threshold, cfg.smooth_sharpness
    ch = np.tanh(d1 * (s / t))
    scale = t / np.tanh(s)
    return scale * ch, ch


def _normalize(cells: np.ndarray, cfg: DsiftConfig):
    """Stage 4; returns the final descriptors plus backward intermediates."""
    rows, cols = cells.shape[:2]
    d = cells.reshape(rows, cols, -1)
    n1 = np.linalg.norm(d, axis=2, keepdims=True)
    d1 = d / (n1 + cfg.norm_eps)
    d2, ch = _smooth_clamp(d1, cfg)
    n2 = np.linalg.norm(d2, axis=2, keepdims=True)
    out = d2 / (n2 + cfg.norm_eps)
    return out, (d, n1, d1, d2, ch, n2)


def dsift_forward(img: GrayImage, cfg: DsiftConfig = DsiftConfig()) -> FeatureMap:
    """Extract the dense descriptor grid of ``img``."""
    out, _ = _forward_with_state(img.data, cfg)
    return FeatureMap(out)


def _forward_with_state(x: np.ndarray, cfg: DsiftConfig):
    rows, cols = cfg.feature_shape(*x.shape)
    gx, gy = _centered_gradients(x)
    mag, k0, k1, frac = _soft_bins(gx, gy, cfg.num_orientations)
    planes = _orientation_planes(mag, k0, k1, frac, cfg.num_orientations, x.shape)
    cells = _pool(planes, cfg)
    assert cells.shape[:2] == (rows, cols)
    out, norm_state = _normalize(cells, cfg)
    state = (gx, gy, mag, k0, k1, frac, norm_state)
    return out, state


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------

def _normalize_backward(upstream: np.ndarray, cfg: DsiftConfig, norm_state):
    d, n1, d1, d2, ch, n2 = norm_state
    eps = cfg.norm_eps
    t, s = cfg.clamp_threshold, cfg.smooth_sharpness

    # out = d2 / (n2 + eps); where n2 == 0 the norm term is dropped
    dot2 = np.sum(upstream * d2, axis=2, keepdims=True)
    inv2 = 1.0 / (n2 + eps)
    safe_n2 = np.where(n2 > 0.0, n2, 1.0)
    g_d2 = upstream * inv2 - np.where(
        n2 > 0.0, d2 * (dot2 / safe_n2) * inv2 * inv2, 0.0
    )
    # d2 = (t / tanh(s)) * tanh(d1 * s / t)
    g_d1 = g_d2 * ((s / np.tanh(s)) * (1.0 - ch * ch))
    # d1 = d / (n1 + eps)
    dot1 = np.sum(g_d1 * d, axis=2, keepdims=True)
    inv1 = 1.0 / (n1 + eps)
    safe_n1 = np.where(n1 > 0.0, n1, 1.0)
    g_d = g_d1 * inv1 - np.where(
        n1 > 0.0, d * (dot1 / safe_n1) * inv1 * inv1, 0.0
    )
    return g_d


def _pool_backward(g_cells: np.ndarray, cfg: DsiftConfig,
                   image_shape: tuple[int, int]) -> np.ndarray:
    h, w = image_shape
    o = cfg.num_orientations
    L, s = cfg.support, cfg.stride
    rows, cols = g_cells.shape[:2]
    u = _pool_matrix(cfg)

    # (row, col, cr, cc, O) -> (O, row, col, cc, cr), contracted axis last
    g = np.ascontiguousarray(np.transpose(g_cells, (4, 0, 1, 3, 2)))
    # undo the row pooling: scatter cell-row contributions back to plane rows
    m = (g.reshape(-1, cfg.grid) @ u.T).reshape(o, rows, cols, cfg.grid, L)
    g_pooled_cols = np.zeros((o, h, cols, cfg.grid))
    for p in range(L):
        g_pooled_cols[:, p:p + rows * s:s, :, :] += m[:, :, :, :, p]
    # undo the column pooling
    n = (g_pooled_cols.reshape(-1, cfg.grid) @ u.T).reshape(o, h, cols, L)
    g_planes = np.zeros((o, h, w))
    for p in range(L):
        g_planes[:, :, p:p + cols * s:s] += n[:, :, :, p]
    return g_planes


def _bins_backward(g_planes, gx, gy, mag, k0, k1, frac, num_orientations):
    h, w = mag.shape
    n = mag.size
    flat = g_planes.reshape(num_orientations, n)
    colidx = np.arange(n)
    u0 = flat[k0.ravel(), colidx].reshape(h, w)
    u1 = flat[k1.ravel(), colidx].reshape(h, w)

    kappa = num_orientations / TWO_PI
    safe = np.where(mag > 0.0, mag, 1.0)
    cx, cy = gx / safe, gy / safe
    g_gx = u0 * ((1.0 - frac) * cx + kappa * cy) + u1 * (frac * cx - kappa * cy)
    g_gy = u0 * ((1.0 - frac) * cy - kappa * cx) + u1 * (frac * cy + kappa * cx)
    zero = mag == 0.0
    g_gx[zero] = 0.0
    g_gy[zero] = 0.0
    return g_gx, g_gy


def _gradients_backward(g_gx: np.ndarray, g_gy: np.ndarray) -> np.ndarray:
    h, w = g_gx.shape
    out = np.zeros_like(g_gx)
    if w >= 2:
        out[:, 1:-1] += 0.5 * (g_gx[:, :-2] - g_gx[:, 2:])
        out[:, 0] += -0.5 * (g_gx[:, 0] + g_gx[:, 1])
        out[:, -1] += 0.5 * (g_gx[:, -2] + g_gx[:, -1])
    if h >= 2:
        out[1:-1, :] += 0.5 * (g_gy[:-2, :] - g_gy[2:, :])
        out[0, :] += -0.5 * (g_gy[0, :] + g_gy[1, :])
        out[-1, :] += 0.5 * (g_gy[-2, :] + g_gy[-1, :])
    return out


def _backward_from_state(cfg: DsiftConfig, image_shape: tuple[int, int],
                         ups: np.ndarray, state) -> np.ndarray:
    gx, gy, mag, k0, k1, frac, norm_state = state
    rows, cols = ups.shape[:2]
    g_d = _normalize_backward(ups, cfg, norm_state)
    g_cells = g_d.reshape(rows, cols, cfg.grid, cfg.grid, cfg.num_orientations)
    g_planes = _pool_backward(g_cells, cfg, image_shape)
    g_gx, g_gy = _bins_backward(g_planes, gx, gy, mag, k0, k1, frac,
                                cfg.num_orientations)
    return _gradients_backward(g_gx, g_gy)


def dsift_backward(img: GrayImage, cfg: DsiftConfig,
                   upstream) -> np.ndarray:
    """Exact vector-Jacobian product of :func:`dsift_forward`.

    ``upstream`` holds per-descriptor-entry gradients with the forward output
    shape; the return value has the image's shape.
    """
    ups = upstream.data if isinstance(upstream, FeatureMap) else np.asarray(
        upstream, dtype=np.float64)
    x = img.data
    rows, cols = cfg.feature_shape(*x.shape)
    if ups.shape != (rows, cols, cfg.descriptor_size):
        raise DimensionMismatchError(
            f"upstream shape {ups.shape} does not match forward output "
            f"{(rows, cols, cfg.descriptor_size)}"
        )
    _, state = _forward_with_state(x, cfg)
    return _backward_from_state(cfg, x.shape, ups, state)
