"""Region-specific cross-spectrum feature mapping and its trainer.

The mapping is a small regression network applied independently at every
feature-map location (a stack of 1x1 convolutions): two tanh hidden layers
of 200 units each and a linear output layer.  It is trained to turn thermal
descriptors into the matching visible descriptors by mini-batch SGD on the
squared error, one network per facial region, using only samples gathered
from that region's crops.

Canonical parameter dtype is float32 so model files round-trip bit exactly;
all arithmetic runs in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsift import FeatureMap
from .errors import (
    CorruptFileError,
    DimensionMismatchError,
    DivergedLossError,
    EmptyTrainingSetError,
    InvalidParameterError,
    MixedRegionError,
)
from . import tensorio

HIDDEN_UNITS = 200
_MODEL_KIND = "XSYNTH-CROSSMAP"


@dataclass
class CrossMap:
    """Per-location MLP with dims [d_in, 200, 200, d_out], tanh hidden units
    and an identity output layer.  ``weights[k]`` maps layer k to k+1 and has
    shape (fan_in, fan_out); ``biases[k]`` has shape (fan_out,)."""

    region_id: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise InvalidParameterError("expected exactly two hidden layers")
        dims = self.layer_dims
        if dims[1] != HIDDEN_UNITS or dims[2] != HIDDEN_UNITS:
            raise InvalidParameterError(
                f"hidden layers must have {HIDDEN_UNITS} units, got {dims[1:3]}"
            )
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape[1] != b.shape[0]:
                raise DimensionMismatchError(f"layer {k}: bias does not match weight")
            if k > 0 and w.shape[0] != self.weights[k - 1].shape[1]:
                raise DimensionMismatchError(f"layer {k}: fan-in mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise InvalidParameterError(f"layer {k}: non-finite parameters")

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def d_in(self) -> int:
        return self.weights[0].shape[0]

    @property
    def d_out(self) -> int:
        return self.weights[-1].shape[1]

    def astype(self, dtype) -> "CrossMap":
        return CrossMap(self.region_id,
                        [w.astype(dtype) for w in self.weights],
                        [b.astype(dtype) for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 256
    seed: int = 0
    weight_init_scale: float = 1.0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise InvalidParameterError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidParameterError("epochs and batch_size must be >= 1")


@dataclass(frozen=True)
class FeaturePair:
    """One (thermal features, visible features) training pair tagged with the
    region its crops came from."""

    region_id: str
    thermal: FeatureMap
    visible: FeatureMap

    def __post_init__(self):
        if self.thermal.shape[:2] != self.visible.shape[:2]:
            raise DimensionMismatchError(
                "thermal and visible feature maps disagree in spatial dims"
            )


def init_crossmap(d_in: int, d_out: int, seed: int = 0,
                  scale: float = 1.0, region_id: str = "global") -> CrossMap:
    """Seeded uniform init in [-scale/sqrt(fan_in), +scale/sqrt(fan_in)];
    biases start at zero."""
    if d_in < 1 or d_out < 1:
        raise InvalidParameterError("d_in and d_out must be >= 1")
    if scale < 0:
        raise InvalidParameterError("scale must be >= 0")
    rng = np.random.default_rng(seed)
    dims = [d_in, HIDDEN_UNITS, HIDDEN_UNITS, d_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = scale / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        weights.append(w.astype(np.float32))
        biases.append(np.zeros(fan_out, dtype=np.float32))
    return CrossMap(region_id, weights, biases)


# --------------------------------------------------------------------------
# forward / backward on flat (n, d) sample matrices
# --------------------------------------------------------------------------

def _forward_flat(m: CrossMap, x: np.ndarray):
    w1, w2, w3 = (w.astype(np.float64, copy=False) for w in m.weights)
    b1, b2, b3 = (b.astype(np.float64, copy=False) for b in m.biases)
    a1 = np.tanh(x @ w1 + b1)
    a2 = np.tanh(a1 @ w2 + b2)
    out = a2 @ w3 + b3
    return out, (a1, a2)


def _backward_flat(m: CrossMap, x: np.ndarray, upstream: np.ndarray, state):
    a1, a2 = state
    w1, w2, w3 = (w.astype(np.float64, copy=False) for w in m.weights)
    g_w3 = a2.T @ upstream
    g_b3 = upstream.sum(axis=0)
    d2 = (upstream @ w3.T) * (1.0 - a2 * a2)
    g_w2 = a1.T @ d2
    g_b2 = d2.sum(axis=0)
    d1 = (d2 @ w2.T) * (1.0 - a1 * a1)
    g_w1 = x.T @ d1
    g_b1 = d1.sum(axis=0)
    g_x = d1 @ w1.T
    return ([g_w1, g_w2, g_w3], [g_b1, g_b2, g_b3]), g_x


def crossmap_forward(m: CrossMap, f: FeatureMap) -> FeatureMap:
    """Apply the MLP at every location; spatial dims unchanged."""
    if f.depth != m.d_in:
        raise DimensionMismatchError(
            f"feature depth {f.depth} does not match map input {m.d_in}"
        )
    flat = f.data.reshape(-1, f.depth)
    out, _ = _forward_flat(m, flat)
    return FeatureMap(out.reshape(f.height, f.width, m.d_out))


def crossmap_backward(m: CrossMap, f: FeatureMap, upstream):
    """Exact gradients of the per-location MLP.

    Returns ``((weight_grads, bias_grads), input_grads)`` where input_grads
    has the input feature map's shape and parameter gradients are summed over
    locations.
    """
    ups = upstream.data if isinstance(upstream, FeatureMap) else np.asarray(
        upstream, dtype=np.float64)
    if f.depth != m.d_in:
        raise DimensionMismatchError("feature depth does not match map input")
    if ups.shape != (f.height, f.width, m.d_out):
        raise DimensionMismatchError(
            f"upstream shape {ups.shape}, expected {(f.height, f.width, m.d_out)}"
        )
    flat = f.data.reshape(-1, f.depth)
    _, state = _forward_flat(m, flat)
    grads, g_x = _backward_flat(m, flat, ups.reshape(-1, m.d_out), state)
    return grads, g_x.reshape(f.shape[0], f.shape[1], m.d_in)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def gather_samples(pairs: list[FeaturePair]) -> tuple[str, np.ndarray, np.ndarray]:
    """Stack per-location descriptor vectors from all pairs; rejects mixed
    region tags so a region's mapping never trains on foreign samples."""
    if not pairs:
        raise EmptyTrainingSetError("no training pairs supplied")
    tags = {p.region_id for p in pairs}
    if len(tags) != 1:
        raise MixedRegionError(f"pairs carry mixed region tags: {sorted(tags)}")
    d_in = pairs[0].thermal.depth
    d_out = pairs[0].visible.depth
    for p in pairs:
        if p.thermal.depth != d_in or p.visible.depth != d_out:
            raise DimensionMismatchError("pairs disagree in feature depth")
    x = np.concatenate([p.thermal.data.reshape(-1, d_in) for p in pairs])
    y = np.concatenate([p.visible.data.reshape(-1, d_out) for p in pairs])
    return pairs[0].region_id, x, y


def train_crossmap(pairs: list[FeaturePair],
                   cfg: TrainConfig = TrainConfig()) -> tuple[CrossMap, list[float]]:
    """Mini-batch SGD on the mean squared error over feature locations.

    The loss for a batch is ``mean_n ||y_n - h(z_n)||^2`` (summed over
    feature dims, averaged over locations).  Returns the trained map and the
    per-epoch mean loss; everything is deterministic for a fixed seed.
    """
    region_id, x, y = gather_samples(pairs)
    rng = np.random.default_rng(cfg.seed)
    model = init_crossmap(x.shape[1], y.shape[1], seed=cfg.seed,
                          scale=cfg.weight_init_scale, region_id=region_id)
    n = x.shape[0]
    history: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            pred, state = _forward_flat(model, xb)
            resid = pred - yb
            batch_loss = float(np.sum(resid * resid) / len(idx))
            if not np.isfinite(batch_loss):
                raise DivergedLossError(
                    f"region {region_id!r}: non-finite training loss"
                )
            epoch_loss += batch_loss * len(idx)
            (g_w, g_b), _ = _backward_flat(model, xb, (2.0 / len(idx)) * resid,
                                           state)
            for k in range(3):
                model.weights[k] = (
                    model.weights[k].astype(np.float64)
                    - cfg.learning_rate * g_w[k]
                ).astype(np.float32)
                model.biases[k] = (
                    model.biases[k].astype(np.float64)
                    - cfg.learning_rate * g_b[k]
                ).astype(np.float32)
        history.append(epoch_loss / n)
    return model, history


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

def save_crossmap(m: CrossMap, path: str) -> None:
    header = {
        "region_id": m.region_id,
        "dims": ",".join(str(d) for d in m.layer_dims),
    }
    tensors: dict[str, np.ndarray] = {}
    for k in range(3):
        tensors[f"w{k + 1}"] = m.weights[k]
        tensors[f"b{k + 1}"] = m.biases[k]
    tensorio.save_named(path, header, tensors, _MODEL_KIND)


def load_crossmap(path: str) -> CrossMap:
    header, tensors = tensorio.load_named(path, _MODEL_KIND)
    dims = [int(d) for d in header.get("dims", "").split(",") if d]
    weights = [tensors[f"w{k}"] for k in (1, 2, 3)]
    biases = [tensors[f"b{k}"] for k in (1, 2, 3)]
    m = CrossMap(header.get("region_id", "global"), weights, biases)
    if dims and dims != m.layer_dims:
        raise CorruptFileError(
            f"{path}: header dims {dims} disagree with tensors {m.layer_dims}"
        )
    return m
