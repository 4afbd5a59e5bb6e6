"""Image data model, grayscale file I/O, polarimetric stack handling and the
non-local-means photometric normalization filter.

Images are single-channel rasters of float64 intensities in [0, 1], indexed
``(u, v)`` with ``u`` the row and ``v`` the column.  A polarimetric capture is
a stack of co-registered planes drawn from {S0, S1, S2, DoLP}, where S0 is the
total-intensity (conventional thermal) image and DoLP is derived per pixel as
``sqrt(S1^2 + S2^2) / S0``.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy.ndimage import uniform_filter

from .errors import (
    CorruptImageError,
    DimensionMismatchError,
    InvalidParameterError,
    UnsupportedFormatError,
)

STOKES_CHANNELS = ("S0", "S1", "S2", "DoLP")


def _as_image_array(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64, order="C")  # private copy
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatchError(
            f"expected a 2-D raster with positive dims, got shape {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("image intensities must all be finite")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class GrayImage:
    """Immutable single-channel image. ``data`` is read-only float64, (h, w)."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_image_array(self.data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def allclose(self, other: "GrayImage", atol: float = 0.0) -> bool:
        return self.shape == other.shape and np.allclose(
            self.data, other.data, rtol=0.0, atol=atol
        )


@dataclass(frozen=True)
class ThermalStack:
    """Ordered set of co-registered planes drawn from {S0, S1, S2, DoLP}."""

    channels: tuple[str, ...]
    planes: tuple[GrayImage, ...] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "planes", tuple(self.planes))
        if not self.channels:
            raise InvalidParameterError("a thermal stack needs at least one channel")
        if len(self.channels) != len(self.planes):
            raise DimensionMismatchError("one plane per channel required")
        for name in self.channels:
            if name not in STOKES_CHANNELS:
                raise InvalidParameterError(f"unknown channel {name!r}")
        if len(set(self.channels)) != len(self.channels):
            raise InvalidParameterError("duplicate channel names")
        shape = self.planes[0].shape
        for plane in self.planes[1:]:
            if plane.shape != shape:
                raise DimensionMismatchError("all planes must share dimensions")

    @property
    def height(self) -> int:
        return self.planes[0].height

    @property
    def width(self) -> int:
        return self.planes[0].width

    def plane(self, channel: str) -> GrayImage:
        try:
            return self.planes[self.channels.index(channel)]
        except ValueError:
            raise InvalidParameterError(f"stack has no {channel!r} plane") from None

    @staticmethod
    def from_stokes(s0: GrayImage, s1: GrayImage | None = None,
                    s2: GrayImage | None = None, with_dolp: bool = False,
                    eps: float = 1e-6) -> "ThermalStack":
        """Assemble a stack from Stokes planes, deriving DoLP on request."""
        channels: list[str] = ["S0"]
        planes: list[GrayImage] = [s0]
        if s1 is not None:
            channels.append("S1")
            planes.append(s1)
        if s2 is not None:
            channels.append("S2")
            planes.append(s2)
        if with_dolp:
            if s1 is None or s2 is None:
                raise InvalidParameterError("DoLP needs S1 and S2 planes")
            channels.append("DoLP")
            planes.append(compute_dolp(s0, s1, s2, eps=eps))
        return ThermalStack(tuple(channels), tuple(planes))


# --------------------------------------------------------------------------
# file I/O: binary PGM (P5) and grayscale PNG, 8/16-bit
# --------------------------------------------------------------------------

_PGM_TOKEN = re.compile(rb"^\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(b"P5"):
        raise UnsupportedFormatError(f"{path}: not a binary (P5) PGM")
    pos = 2
    fields = []
    for _ in range(3):  # width, height, maxval
        m = _PGM_TOKEN.match(blob, pos)
        if m is None:
            raise CorruptImageError(f"{path}: truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise CorruptImageError(f"{path}: malformed PGM header") from None
    if w < 1 or h < 1:
        raise CorruptImageError(f"{path}: bad PGM dimensions {w}x{h}")
    if maxval not in (255, 65535):
        raise UnsupportedFormatError(
            f"{path}: PGM maxval {maxval} (only 255 and 65535 supported)"
        )
    pos += 1  # single whitespace byte after maxval
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    need = h * w * dtype.itemsize
    raw = blob[pos:pos + need]
    if len(raw) != need:
        raise CorruptImageError(f"{path}: PGM pixel data truncated")
    pixels = np.frombuffer(raw, dtype=dtype).reshape(h, w)
    return pixels.astype(np.float64) / float(maxval)


def _read_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "L":
                return np.asarray(im, dtype=np.float64) / 255.0
            if mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float64)
                if arr.min() < 0 or arr.max() > 65535:
                    raise UnsupportedFormatError(
                        f"{path}: integer PNG outside 16-bit range"
                    )
                return arr / 65535.0
            raise UnsupportedFormatError(
                f"{path}: PNG mode {mode!r} is not 8/16-bit grayscale"
            )
    except UnidentifiedImageError:
        raise CorruptImageError(f"{path}: cannot decode PNG") from None


def load_image(path: str) -> GrayImage:
    """Load an 8/16-bit grayscale PGM or PNG, scaled to [0, 1] by the
    format's max code value."""
    if not os.path.isfile(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as fh:
        head = fh.read(8)
    if head.startswith(b"P5"):
        return GrayImage(_read_pgm(path))
    if head.startswith(b"\x89PNG\r\n\x1a\n"):
        return GrayImage(_read_png(path))
    if head.startswith(b"P2"):
        raise UnsupportedFormatError(f"{path}: ASCII PGM not supported")
    raise UnsupportedFormatError(f"{path}: unrecognized image format")


def quantize(values: np.ndarray, depth: int) -> np.ndarray:
    """Map [0, 1] intensities to integer codes, rounding half away from zero.

    Out-of-range intensities are clamped before quantization.
    """
    if depth not in (8, 16):
        raise InvalidParameterError(f"depth must be 8 or 16, got {depth}")
    maxval = (1 << depth) - 1
    clipped = np.clip(values, 0.0, 1.0)
    codes = np.floor(clipped * maxval + 0.5)  # values are >= 0 after clamping
    return codes.astype(np.uint8 if depth == 8 else np.uint16)


def save_image(img: GrayImage, path: str, depth: int = 8) -> None:
    """Write ``img`` as PGM (``.pgm``) or PNG (anything else) at 8/16 bits."""
    codes = quantize(img.data, depth)
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        if str(path).lower().endswith(".pgm"):
            maxval = (1 << depth) - 1
            payload = codes.astype(">u2").tobytes() if depth == 16 else codes.tobytes()
            with open(tmp, "wb") as fh:
                fh.write(f"P5\n{img.width} {img.height}\n{maxval}\n".encode("ascii"))
                fh.write(payload)
        else:
            mode = "L" if depth == 8 else "I;16"
            Image.fromarray(codes, mode=mode).save(tmp, format="PNG")
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# --------------------------------------------------------------------------
# degree of linear polarization
# --------------------------------------------------------------------------

def compute_dolp(s0: GrayImage, s1: GrayImage, s2: GrayImage,
                 eps: float = 1e-6) -> GrayImage:
    """Per-pixel degree of linear polarization sqrt(S1^2 + S2^2) / max(S0, eps).

    With ``eps=0`` a zero S0 pixel is a hard error (strict mode).
    """
    if not (s0.shape == s1.shape == s2.shape):
        raise DimensionMismatchError(
            f"Stokes planes disagree: {s0.shape} vs {s1.shape} vs {s2.shape}"
        )
    if eps < 0:
        raise InvalidParameterError("eps must be >= 0")
    if eps == 0.0 and np.any(s0.data == 0.0):
        raise ZeroDivisionError("S0 is zero at some pixel and eps = 0")
    denom = np.maximum(s0.data, eps)
    return GrayImage(np.hypot(s1.data, s2.data) / denom)


# --------------------------------------------------------------------------
# non-local means
# --------------------------------------------------------------------------

def nlm_filter(img: GrayImage, patch_radius: int = 3, search_radius: int = 10,
               strength: float = 0.12) -> GrayImage:
    """Non-local means photometric normalization.

    Each output pixel is the weighted average of the image pixels inside its
    search window (clipped at the image border), with weights
    ``exp(-d2 / strength^2)`` where ``d2`` is the mean squared difference of
    the two replicate-padded patches, normalized to sum to 1.  The pixel
    itself participates with weight 1.
    """
    if patch_radius < 1 or search_radius < 1:
        raise InvalidParameterError("patch and search radii must be >= 1")
    if not strength > 0:
        raise InvalidParameterError("strength must be > 0")

    x = img.data
    h, w = x.shape
    rp, rs = int(patch_radius), int(search_radius)
    inv_h2 = 1.0 / (strength * strength)
    pad = np.pad(x, rp + rs, mode="edge")
    # Q is the image with a patch_radius halo; shifted copies of it give the
    # per-offset difference field whose box mean is the patch distance.
    q = pad[rs:rs + h + 2 * rp, rs:rs + w + 2 * rp]

    acc = np.zeros((h, w))
    wsum = np.zeros((h, w))
    size = 2 * rp + 1
    for dy in range(-rs, rs + 1):
        for dx in range(-rs, rs + 1):
            qs = pad[rs + dy:rs + dy + h + 2 * rp, rs + dx:rs + dx + w + 2 * rp]
            diff2 = (q - qs) ** 2
            d2 = uniform_filter(diff2, size=size)[rp:rp + h, rp:rp + w]
            weight = np.exp(-d2 * inv_h2)
            # neighbour must be a real pixel: clip the window at the border
            ys = slice(max(0, -dy), h - max(0, dy))
            xs = slice(max(0, -dx), w - max(0, dx))
            yn = slice(max(0, dy), h + min(0, dy))
            xn = slice(max(0, dx), w + min(0, dx))
            acc[ys, xs] += weight[ys, xs] * x[yn, xn]
            wsum[ys, xs] += weight[ys, xs]
    return GrayImage(acc / wsum)
