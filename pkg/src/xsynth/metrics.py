"""Verification and image-quality metrics.

Embeddings default to the artifact's own pooled descriptor vector (flattened
dense-SIFT grid, L2-normalized); externally computed embedding tables can be
plugged in instead.  Scores are cosine similarities; ROC analysis reports
AUC by the rank statistic (ties count one half) and the equal error rate by
linear interpolation between the bracketing operating points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter

from .dsift import DsiftConfig, dsift_forward
from .errors import (
    CountMismatchError,
    DimensionMismatchError,
    EmptyScoresError,
    InvalidParameterError,
    MissingEmbeddingError,
    NoGenuinePairsError,
    ZeroFeatureVectorError,
    ZeroVectorError,
)
from .imaging import GrayImage
from .landmarks import LandmarkSet
from . import tensorio


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class EmbeddingSource:
    """Where image embeddings come from.

    ``dsift_pooled`` (default) flattens the image's descriptor grid and
    L2-normalizes it.  ``external_file`` looks vectors up by image id from a
    table loaded with :func:`load_embedding_table`.
    """

    mode: str = "dsift_pooled"
    dsift_cfg: DsiftConfig = DsiftConfig()
    table: dict | None = None

    def __post_init__(self):
        if self.mode not in ("dsift_pooled", "external_file"):
            raise InvalidParameterError(f"unknown embedding mode {self.mode!r}")
        if self.mode == "external_file" and self.table is None:
            raise InvalidParameterError("external_file mode needs a table")


def embed(img: GrayImage, src: EmbeddingSource = EmbeddingSource(),
          image_id: str | None = None) -> np.ndarray:
    if src.mode == "external_file":
        if image_id is None or image_id not in src.table:
            raise MissingEmbeddingError(image_id)
        return np.asarray(src.table[image_id], dtype=np.float64)
    feats = dsift_forward(img, src.dsift_cfg)
    vec = feats.data.ravel()
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        raise ZeroFeatureVectorError(
            "image has an all-zero feature map (constant image?)"
        )
    return vec / norm


def save_embedding_table(path: str, ids: list[str],
                         vectors: np.ndarray) -> None:
    """N x D float32 tensor plus a sidecar ``<path>.ids`` text index."""
    arr = np.asarray(vectors, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != len(ids):
        raise DimensionMismatchError("need one vector per image id")
    tensorio.save_tensor(path, arr)
    with open(f"{path}.ids", "w", encoding="ascii") as fh:
        fh.writelines(f"{i}\n" for i in ids)


def load_embedding_table(path: str) -> dict[str, np.ndarray]:
    arr = tensorio.load_tensor(path).astype(np.float64)
    if arr.ndim != 2:
        raise DimensionMismatchError("embedding tensor must be N x D")
    with open(f"{path}.ids", "r", encoding="ascii") as fh:
        ids = [line.strip() for line in fh if line.strip()]
    if len(ids) != arr.shape[0]:
        raise DimensionMismatchError(
            f"{len(ids)} ids for {arr.shape[0]} vectors"
        )
    return dict(zip(ids, arr))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatchError(f"vector shapes {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


# --------------------------------------------------------------------------
# score sets and ROC analysis
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.genuine, dtype=np.float64).ravel()
        i = np.asarray(self.impostor, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(i))):
            raise InvalidParameterError("scores must be finite")
        object.__setattr__(self, "genuine", g)
        object.__setattr__(self, "impostor", i)


@dataclass(frozen=True)
class RocReport:
    thresholds: np.ndarray = field(repr=False)
    tpr: np.ndarray = field(repr=False)
    fpr: np.ndarray = field(repr=False)
    auc: float = 0.0
    eer: float = 0.0

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("threshold,tpr,fpr\n")
            for t, tp, fp in zip(self.thresholds, self.tpr, self.fpr):
                fh.write(f"{t!r},{tp!r},{fp!r}\n")


def _rank_auc(genuine: np.ndarray, impostor: np.ndarray) -> float:
    """P(genuine > impostor) + 0.5 P(equal), via midranks."""
    scores = np.concatenate([genuine, impostor])
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    g = len(genuine)
    rank_sum = ranks[:g].sum()
    return float((rank_sum - g * (g + 1) / 2.0) / (g * len(impostor)))


def roc_auc_eer(scores: ScoreSet) -> RocReport:
    """Full ROC sweep over all distinct score thresholds.

    Operating points sit at tie-group boundaries (accept = score >= t), which
    makes the negate-and-swap EER duality hold exactly; the EER itself is the
    intersection of the polyline with FPR = FNR, linearly interpolated.
    """
    g, imp = scores.genuine, scores.impostor
    if g.size == 0 or imp.size == 0:
        raise EmptyScoresError("need at least one genuine and one impostor score")

    thresholds = np.unique(np.concatenate([g, imp]))[::-1]
    tpr = np.empty(thresholds.size + 1)
    fpr = np.empty(thresholds.size + 1)
    tpr[0] = fpr[0] = 0.0  # accept nothing
    for k, t in enumerate(thresholds, start=1):
        tpr[k] = np.count_nonzero(g >= t) / g.size
        fpr[k] = np.count_nonzero(imp >= t) / imp.size

    auc = _rank_auc(g, imp)

    # f = FPR - FNR rises strictly from -1 to +1 along the sweep; the EER is
    # where the polyline crosses f = 0
    f = fpr - (1.0 - tpr)
    k = int(np.searchsorted(f, 0.0, side="left"))
    if k == 0:
        eer = float(fpr[0])
    elif k == f.size:
        eer = float(fpr[-1])
    else:
        frac = -f[k - 1] / (f[k] - f[k - 1])
        eer = float(fpr[k - 1] + frac * (fpr[k] - fpr[k - 1]))

    all_thresholds = np.concatenate([[np.inf], thresholds])
    return RocReport(all_thresholds, tpr, fpr, auc=auc, eer=eer)


# --------------------------------------------------------------------------
# SSIM
# --------------------------------------------------------------------------

def ssim(a: GrayImage, b: GrayImage, window: int = 11, k1: float = 0.01,
         k2: float = 0.03, dynamic_range: float = 1.0) -> float:
    """Mean structural similarity with uniform windows.

    One window is centered at every pixel; boundaries are replicate-padded.
    Variances are population statistics over the window.
    """
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes {a.shape} vs {b.shape}")
    if window < 3 or window % 2 == 0:
        raise InvalidParameterError("window must be odd and >= 3")
    if k1 <= 0 or k2 <= 0 or dynamic_range <= 0:
        raise InvalidParameterError("k1, k2 and dynamic_range must be > 0")

    x, y = a.data, b.data
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2

    def box(img):
        return uniform_filter(img, size=window, mode="nearest")

    mx, my = box(x), box(y)
    sxx = box(x * x) - mx * mx
    syy = box(y * y) - my * my
    sxy = box(x * y) - mx * my
    num = (2.0 * mx * my + c1) * (2.0 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


# --------------------------------------------------------------------------
# landmarks
# --------------------------------------------------------------------------

def landmark_error(detected: LandmarkSet, truth: LandmarkSet) -> float:
    """Mean Euclidean distance between corresponding points, in pixels."""
    if detected.count != truth.count:
        raise CountMismatchError(
            f"{detected.count} detected vs {truth.count} truth landmarks"
        )
    deltas = detected.points - truth.points
    return float(np.mean(np.hypot(deltas[:, 0], deltas[:, 1])))


# --------------------------------------------------------------------------
# score matrices
# --------------------------------------------------------------------------

def build_score_matrix(gallery: list[np.ndarray], probes: list[np.ndarray],
                       gallery_labels: list[str], probe_labels: list[str]):
    """Score every probe against every gallery entry.

    Returns ``(ScoreSet, rows)`` where rows are
    ``(probe_label, gallery_label, score, genuine)`` tuples in probe-major
    order, and the score set splits them into same-identity and
    cross-identity lists.
    """
    if len(gallery) != len(gallery_labels) or len(probes) != len(probe_labels):
        raise DimensionMismatchError("one label per embedding required")
    genuine, impostor, rows = [], [], []
    for p, plabel in zip(probes, probe_labels):
        for gvec, glabel in zip(gallery, gallery_labels):
            score = cosine_similarity(p, gvec)
            is_genuine = plabel == glabel
            rows.append((plabel, glabel, score, is_genuine))
            (genuine if is_genuine else impostor).append(score)
    if not genuine:
        raise NoGenuinePairsError("no same-identity probe/gallery pair")
    return ScoreSet(np.array(genuine), np.array(impostor)), rows


def write_score_csv(path: str, rows, probe_ids=None, gallery_ids=None) -> None:
    """CSV rows ``probe_id,gallery_id,score,genuine``.

    ``rows`` carries labels; optional explicit id lists replace them (labels
    identify subjects, ids identify images)."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["probe_id", "gallery_id", "score", "genuine"])
        for k, (plabel, glabel, score, is_genuine) in enumerate(rows):
            pid = probe_ids[k] if probe_ids is not None else plabel
            gid = gallery_ids[k] if gallery_ids is not None else glabel
            writer.writerow([pid, gid, repr(score), int(is_genuine)])


def read_score_csv(path: str) -> ScoreSet:
    genuine, impostor = [], []
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            (genuine if int(row["genuine"]) else impostor).append(
                float(row["score"]))
    if not genuine or not impostor:
        raise EmptyScoresError(f"{path}: needs genuine and impostor rows")
    return ScoreSet(np.array(genuine), np.array(impostor))
