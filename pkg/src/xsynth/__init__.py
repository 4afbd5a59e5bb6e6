"""Thermal-to-visible face image synthesis by multi-region feature
inversion, with verification and landmark-error evaluation."""

from .crossmap import (
    CrossMap,
    FeaturePair,
    TrainConfig,
    crossmap_backward,
    crossmap_forward,
    init_crossmap,
    load_crossmap,
    save_crossmap,
    train_crossmap,
)
from .dsift import DsiftConfig, FeatureMap, concat_depth, dsift_backward, dsift_forward
from .imaging import (
    GrayImage,
    ThermalStack,
    compute_dolp,
    load_image,
    nlm_filter,
    save_image,
)
from .landmarks import LandmarkSet, read_landmarks, write_landmarks
from .metrics import (
    EmbeddingSource,
    RocReport,
    ScoreSet,
    build_score_matrix,
    cosine_similarity,
    embed,
    landmark_error,
    roc_auc_eer,
    ssim,
)
from .regions import Region, RegionSet, build_weight_fields, crop_region, read_regions_file
from .synthesis import (
    ObjectiveSpec,
    SynthConfig,
    SynthesisTrace,
    build_objective_spec,
    reg_alpha,
    reg_tv,
    region_objective,
    synthesize,
    total_objective,
)

__version__ = "0.1.0"
