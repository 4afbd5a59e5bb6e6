"""Multi-region feature-inversion optimizer.

Synthesis recovers a visible-band image whose dense descriptors match
per-region target features predicted from a thermal input.  Each region
contributes a regional objective (feature error plus intensity-range and
total-variation penalties on its crop); the combined objective blends the
regional gradients with per-pixel weight fields and is minimized by momentum
gradient descent (velocity update first, then the image step).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .crossmap import CrossMap, crossmap_forward
from .dsift import (
    DsiftConfig,
    FeatureMap,
    _backward_from_state,
    _forward_with_state,
    concat_depth,
    dsift_forward,
)
from .errors import (
    DimensionMismatchError,
    DivergedObjectiveError,
    InvalidParameterError,
)
from .imaging import GrayImage, ThermalStack
from .regions import Region, RegionSet, crop_region

INIT_MODES = ("zeros", "mean", "noise")


@dataclass(frozen=True)
class SynthConfig:
    lambda_alpha: float = 1e-4
    lambda_tv: float = 1e-4
    alpha: float = 6.0
    tv_beta: float = 2.0
    momentum: float = 0.9
    learning_rate: float = 0.004
    iterations: int = 400
    init_mode: str = "mean"
    init_seed: int = 0
    tv_eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidParameterError("momentum must lie in [0, 1)")
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning_rate must be > 0")
        if self.iterations < 0:
            raise InvalidParameterError("iterations must be >= 0")
        if self.alpha < 1.0 or self.tv_beta < 1.0:
            raise InvalidParameterError("alpha and tv_beta must be >= 1")
        if not self.tv_eps > 0:
            raise InvalidParameterError("tv_eps must be > 0")
        if self.lambda_alpha < 0 or self.lambda_tv < 0:
            raise InvalidParameterError("regularizer weights must be >= 0")
        if self.init_mode not in INIT_MODES:
            raise InvalidParameterError(
                f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}"
            )


# --------------------------------------------------------------------------
# regularizers
# --------------------------------------------------------------------------

def reg_alpha(x: np.ndarray, alpha: float) -> tuple[float, np.ndarray]:
    """Intensity-range penalty sum(|x|^alpha) and its gradient."""
    if alpha < 1.0:
        raise InvalidParameterError("alpha must be >= 1")
    ax = np.abs(x)
    value = float(np.sum(ax ** alpha))
    grad = alpha * np.sign(x) * ax ** (alpha - 1.0)
    return value, grad


def reg_tv(x: np.ndarray, tv_beta: float, tv_eps: float = 1e-8):
    """Smoothed total variation with forward differences.

    Out-of-range neighbours contribute a zero difference (replicate
    boundary).  The per-pixel term is (dh^2 + dv^2 + tv_eps)^(beta/2); with
    tv_eps > 0 the gradient is defined everywhere, including flat patches
    when beta < 2.
    """
    if tv_beta < 1.0:
        raise InvalidParameterError("tv_beta must be >= 1")
    if tv_eps < 0:
        raise InvalidParameterError("tv_eps must be >= 0")
    dh = np.zeros_like(x)
    dv = np.zeros_like(x)
    dh[:, :-1] = x[:, 1:] - x[:, :-1]
    dv[:-1, :] = x[1:, :] - x[:-1, :]
    e = dh * dh + dv * dv + tv_eps
    value = float(np.sum(e ** (tv_beta / 2.0)))
    f = tv_beta * e ** (tv_beta / 2.0 - 1.0)
    th, tv_ = f * dh, f * dv
    grad = -(th + tv_)
    grad[:, 1:] += th[:, :-1]
    grad[1:, :] += tv_[:-1, :]
    return value, grad


# --------------------------------------------------------------------------
# objectives
# --------------------------------------------------------------------------

def region_objective(x: GrayImage, region: Region, target: FeatureMap,
                     dsift_cfg: DsiftConfig, synth_cfg: SynthConfig,
                     cross_map: CrossMap | None = None):
    """Feature error plus regularizers of one region's crop.

    Returns ``(value, grad)`` with the gradient scattered back to full-image
    coordinates, zero outside the region.  ``cross_map`` is the mapping whose
    prediction produced ``target``; when given it is only used to validate
    that the target depth is consistent.
    """
    region.check_inside(x.height, x.width)
    crop = x.data[region.y:region.y + region.h, region.x:region.x + region.w]
    rows, cols = dsift_cfg.feature_shape(region.h, region.w)
    expected = (rows, cols, dsift_cfg.descriptor_size)
    if target.shape != expected:
        raise DimensionMismatchError(
            f"region {region.id!r}: target shape {target.shape}, expected {expected}"
        )
    if cross_map is not None and cross_map.d_out != dsift_cfg.descriptor_size:
        raise DimensionMismatchError(
            f"region {region.id!r}: map output {cross_map.d_out} does not "
            f"produce {dsift_cfg.descriptor_size}-dim descriptors"
        )

    # one shared forward pass feeds both the loss and its backward sweep
    feats, state = _forward_with_state(np.asarray(crop, dtype=np.float64),
                                       dsift_cfg)
    resid = feats - target.data
    value = float(np.sum(resid * resid))
    grad_crop = _backward_from_state(dsift_cfg, crop.shape, 2.0 * resid, state)

    a_val, a_grad = reg_alpha(crop, synth_cfg.alpha)
    t_val, t_grad = reg_tv(crop, synth_cfg.tv_beta, synth_cfg.tv_eps)
    value += synth_cfg.lambda_alpha * a_val + synth_cfg.lambda_tv * t_val
    grad_crop = grad_crop + synth_cfg.lambda_alpha * a_grad \
        + synth_cfg.lambda_tv * t_grad

    grad = np.zeros((x.height, x.width))
    grad[region.y:region.y + region.h, region.x:region.x + region.w] = grad_crop
    return value, grad


@dataclass(frozen=True)
class ObjectiveSpec:
    """Everything one synthesis run needs: regions with weight fields, the
    per-region cross-spectrum maps (None means identity), the precomputed
    per-region target features, and both configs."""

    regions: RegionSet
    maps: Mapping[str, CrossMap | None]
    targets: Mapping[str, FeatureMap]
    dsift_cfg: DsiftConfig
    synth_cfg: SynthConfig

    def __post_init__(self):
        for r in self.regions.regions:
            if r.id not in self.targets:
                raise InvalidParameterError(f"no target for region {r.id!r}")
            rows, cols = self.dsift_cfg.feature_shape(r.h, r.w)
            expected = (rows, cols, self.dsift_cfg.descriptor_size)
            if self.targets[r.id].shape != expected:
                raise DimensionMismatchError(
                    f"region {r.id!r}: target shape "
                    f"{self.targets[r.id].shape}, expected {expected}"
                )


def _objective_terms(x: GrayImage, spec: ObjectiveSpec):
    """Per-region values plus the per-pixel blended gradient."""
    if (x.height, x.width) != (spec.regions.height, spec.regions.width):
        raise DimensionMismatchError(
            f"image {x.shape} does not match region set "
            f"{(spec.regions.height, spec.regions.width)}"
        )
    per_region: dict[str, float] = {}
    blended = np.zeros((x.height, x.width))
    total = 0.0
    for r in spec.regions.regions:
        value, grad = region_objective(
            x, r, spec.targets[r.id], spec.dsift_cfg, spec.synth_cfg,
            cross_map=spec.maps.get(r.id),
        )
        per_region[r.id] = value
        total += spec.regions.mean_weight(r.id) * value
        blended += spec.regions.weight_fields[r.id] * grad
    return total, blended, per_region


def total_objective(x: GrayImage, spec: ObjectiveSpec):
    """Weighted objective value and the per-pixel blended gradient.

    The value weights each regional objective by the mean of its weight
    field over its support; the gradient blends regional gradients with the
    per-pixel fields.  With constant fields the two views are consistent
    (the gradient is exactly the value's gradient).
    """
    total, blended, _ = _objective_terms(x, spec)
    return total, blended


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthesisTrace:
    region_ids: tuple[str, ...]
    objective: np.ndarray = field(repr=False)
    per_region: Mapping[str, np.ndarray] = field(repr=False)

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("iteration,J," + ",".join(
                f"J_{rid}" for rid in self.region_ids) + "\n")
            for j in range(len(self.objective)):
                row = [str(j), repr(float(self.objective[j]))]
                row += [repr(float(self.per_region[rid][j]))
                        for rid in self.region_ids]
                fh.write(",".join(row) + "\n")


def initial_image(shape: tuple[int, int], cfg: SynthConfig) -> GrayImage:
    if cfg.init_mode == "zeros":
        return GrayImage(np.zeros(shape))
    if cfg.init_mode == "mean":
        return GrayImage(np.full(shape, 0.5))
    rng = np.random.default_rng(cfg.init_seed)
    return GrayImage(rng.uniform(0.45, 0.55, size=shape))


def build_objective_spec(stack: ThermalStack, regions: RegionSet,
                         maps: Mapping[str, CrossMap | None],
                         dsift_cfg: DsiftConfig, synth_cfg: SynthConfig,
                         channels: tuple[str, ...] | None = None) -> ObjectiveSpec:
    """Precompute per-region targets h_i(g(thermal crop)) from the stack.

    Features of multi-channel stacks are the depth-wise concatenation of the
    per-channel descriptor grids, in ``channels`` order.  A ``None`` map is
    the identity (the thermal features are the target directly).
    """
    if (stack.height, stack.width) != (regions.height, regions.width):
        raise DimensionMismatchError(
            f"stack {stack.height}x{stack.width} does not match region set "
            f"{regions.height}x{regions.width}"
        )
    use = tuple(channels) if channels is not None else stack.channels
    targets: dict[str, FeatureMap] = {}
    for r in regions.regions:
        z = thermal_features(stack, r, dsift_cfg, use)
        m = maps.get(r.id)
        targets[r.id] = z if m is None else crossmap_forward(m, z)
    return ObjectiveSpec(regions, dict(maps), targets, dsift_cfg, synth_cfg)


def thermal_features(stack: ThermalStack, region: Region,
                     dsift_cfg: DsiftConfig,
                     channels: tuple[str, ...]) -> FeatureMap:
    """Depth-concatenated descriptors of a region's crop, one grid per channel."""
    crops = [crop_region(stack.plane(c), region) for c in channels]
    return concat_depth([dsift_forward(c, dsift_cfg) for c in crops])


def optimize(spec: ObjectiveSpec, x0: GrayImage | None = None):
    """Momentum descent on the blended objective.

    The velocity update precedes the image update: ``v <- mu v - eta grad``,
    then ``x <- x + v``.  Returns the final image and the iteration trace.
    """
    cfg = spec.synth_cfg
    shape = (spec.regions.height, spec.regions.width)
    x = (x0.data if x0 is not None else initial_image(shape, cfg).data).copy()
    if x.shape != shape:
        raise DimensionMismatchError(
            f"initial image {x.shape} does not match region set {shape}"
        )
    v = np.zeros(shape)
    region_ids = tuple(r.id for r in spec.regions.regions)
    obj = np.zeros(cfg.iterations)
    per = {rid: np.zeros(cfg.iterations) for rid in region_ids}
    with np.errstate(all="ignore"):
        for j in range(cfg.iterations):
            value, grad, breakdown = _objective_terms(GrayImage(x), spec)
            if not np.isfinite(value):
                raise DivergedObjectiveError(
                    f"objective became non-finite at iteration {j}"
                )
            obj[j] = value
            for rid in region_ids:
                per[rid][j] = breakdown[rid]
            v = cfg.momentum * v - cfg.learning_rate * grad
            x = x + v
            if not np.all(np.isfinite(x)):
                raise DivergedObjectiveError(
                    f"iterate became non-finite at iteration {j}"
                )
    trace = SynthesisTrace(region_ids, obj, per)
    return GrayImage(x), trace


def synthesize(stack: ThermalStack, regions: RegionSet,
               maps: Mapping[str, CrossMap | None],
               dsift_cfg: DsiftConfig = DsiftConfig(),
               synth_cfg: SynthConfig = SynthConfig(),
               channels: tuple[str, ...] | None = None):
    """Full inversion: build the objective from the thermal stack, then run
    momentum descent from the configured initialization."""
    spec = build_objective_spec(stack, regions, maps, dsift_cfg, synth_cfg,
                                channels)
    return optimize(spec)
