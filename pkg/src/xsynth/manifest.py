"""Dataset manifests and the flat pipeline configuration format.

A manifest is a CSV with header ``subject_id,condition,split,visible_path,
s0_path,s1_path,s2_path,landmarks_path``; optional fields are left empty and
paths are resolved relative to the manifest's directory.  Splits must be
subject-disjoint.

A config file is flat ``key = value`` text; blank lines and ``#`` comments
are ignored and unknown keys are hard errors so typos cannot silently fall
back to defaults.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

from .crossmap import TrainConfig
from .dsift import DsiftConfig
from .errors import ConfigError, DataError
from .synthesis import SynthConfig

SPLITS = ("train", "eval")
MODES = ("thermal", "polarimetric")


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    condition: str
    split: str
    visible_path: str
    s0_path: str
    s1_path: str | None = None
    s2_path: str | None = None
    landmarks_path: str | None = None

    @property
    def image_id(self) -> str:
        return f"{self.subject_id}_{self.condition}"

    @property
    def is_polarimetric(self) -> bool:
        return self.s1_path is not None and self.s2_path is not None


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ManifestEntry, ...]

    def split(self, which: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == which]


_MANIFEST_COLUMNS = [
    "subject_id", "condition", "split", "visible_path", "s0_path",
    "s1_path", "s2_path", "landmarks_path",
]


def load_manifest(path: str, require_polar: bool = False) -> Manifest:
    """Read and validate a manifest CSV.

    Validation: header matches, referenced files exist, splits are
    subject-disjoint, and (with ``require_polar``) every entry carries all
    three Stokes paths.
    """
    if not os.path.isfile(path):
        raise DataError(f"manifest not found: {path}")
    base = os.path.dirname(os.path.abspath(path))
    entries: list[ManifestEntry] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [
                c.strip() for c in reader.fieldnames] != _MANIFEST_COLUMNS:
            raise DataError(
                f"{path}: manifest header must be {','.join(_MANIFEST_COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            def resolve(key, optional=False):
                value = (row.get(key) or "").strip()
                if not value:
                    if optional:
                        return None
                    raise DataError(f"{path}:{lineno}: missing {key}")
                full = value if os.path.isabs(value) else os.path.join(base, value)
                if not os.path.isfile(full):
                    raise DataError(f"{path}:{lineno}: {key} does not exist: {full}")
                return full

            split = (row.get("split") or "").strip()
            if split not in SPLITS:
                raise DataError(f"{path}:{lineno}: split must be train or eval")
            s1 = resolve("s1_path", optional=True)
            s2 = resolve("s2_path", optional=True)
            if (s1 is None) != (s2 is None):
                raise DataError(
                    f"{path}:{lineno}: S1 and S2 must be given together"
                )
            entries.append(ManifestEntry(
                subject_id=(row.get("subject_id") or "").strip(),
                condition=(row.get("condition") or "").strip(),
                split=split,
                visible_path=resolve("visible_path"),
                s0_path=resolve("s0_path"),
                s1_path=s1,
                s2_path=s2,
                landmarks_path=resolve("landmarks_path", optional=True),
            ))
    if not entries:
        raise DataError(f"{path}: empty manifest")
    train_subjects = {e.subject_id for e in entries if e.split == "train"}
    eval_subjects = {e.subject_id for e in entries if e.split == "eval"}
    shared = train_subjects & eval_subjects
    if shared:
        raise DataError(
            f"{path}: subjects in both splits (must be subject-disjoint): "
            f"{sorted(shared)}"
        )
    if require_polar:
        for e in entries:
            if not e.is_polarimetric:
                raise DataError(
                    f"{path}: entry {e.image_id} lacks S1/S2 but polarimetric "
                    f"mode requested"
                )
    return Manifest(tuple(entries))


def write_manifest(path: str, entries: list[ManifestEntry]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_MANIFEST_COLUMNS)
        for e in entries:
            writer.writerow([
                e.subject_id, e.condition, e.split, e.visible_path, e.s0_path,
                e.s1_path or "", e.s2_path or "", e.landmarks_path or "",
            ])


# --------------------------------------------------------------------------
# pipeline configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "thermal"
    regions_file: str | None = None
    seed: int = 0
    workers: int = 1
    dsift: DsiftConfig = field(default_factory=DsiftConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    nlm_patch_radius: int = 3
    nlm_search_radius: int = 10
    nlm_strength: float = 0.12
    nlm_channels: str = "all"     # or "s0"
    nlm_at_inference: bool = False
    embed_mode: str = "dsift_pooled"
    embed_file: str | None = None
    embed_crop: tuple[int, int, int, int] | None = None

    @property
    def channels(self) -> tuple[str, ...]:
        return ("S0",) if self.mode == "thermal" else ("S0", "DoLP")


def _parse_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_kv(path: str) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            key, eq, value = stripped.partition("=")
            if not eq:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip()
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = value.strip()
    return out


def load_config(path: str, seed_override: int | None = None,
                workers_override: int | None = None) -> PipelineConfig:
    raw = _parse_kv(path)
    base = os.path.dirname(os.path.abspath(path))

    def take(key, default=None):
        return raw.pop(key, default)

    def take_float(key, default):
        value = take(key)
        if value is None:
            return default
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None

    def take_int(key, default):
        value = take(key)
        if value is None:
            return default
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None

    try:
        mode = take("mode", "thermal")
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")

        regions_file = take("regions_file")
        if regions_file is not None and not os.path.isabs(regions_file):
            regions_file = os.path.join(base, regions_file)
        if regions_file is not None and not os.path.isfile(regions_file):
            raise ConfigError(f"regions_file does not exist: {regions_file}")

        stride = take_int("dsift_stride", None)
        dsift = DsiftConfig(
            num_orientations=take_int("dsift_num_orientations", 8),
            cell_size=take_int("dsift_cell_size", 4),
            grid=take_int("dsift_grid", 4),
            stride=stride,
            clamp_threshold=take_float("dsift_clamp_threshold", 0.2),
            norm_eps=take_float("dsift_norm_eps", 1e-8),
            smooth_sharpness=take_float("dsift_smooth_sharpness",
                                        DsiftConfig().smooth_sharpness),
        )

        lam = take_float("synth_lambda", 1e-4)
        seed = take_int("seed", 0)
        if seed_override is not None:
            seed = seed_override
        synth = SynthConfig(
            lambda_alpha=take_float("synth_lambda_alpha", lam),
            lambda_tv=take_float("synth_lambda_tv", lam),
            alpha=take_float("synth_alpha", 6.0),
            tv_beta=take_float("synth_tv_beta", 2.0),
            momentum=take_float("synth_momentum", 0.9),
            learning_rate=take_float("synth_learning_rate", 0.004),
            iterations=take_int("synth_iterations", 400),
            init_mode=take("synth_init", "mean"),
            init_seed=seed,
            tv_eps=take_float("synth_tv_eps", 1e-8),
        )
        train = TrainConfig(
            learning_rate=take_float("train_learning_rate", 1e-3),
            epochs=take_int("train_epochs", 300),
            batch_size=take_int("train_batch_size", 256),
            seed=seed,
            weight_init_scale=take_float("train_init_scale", 1.0),
        )

        embed_mode = take("embed_mode", "dsift_pooled")
        if embed_mode not in ("dsift_pooled", "external_file"):
            raise ConfigError(f"embed_mode: unknown value {embed_mode!r}")
        embed_file = take("embed_file")
        if embed_file is not None and not os.path.isabs(embed_file):
            embed_file = os.path.join(base, embed_file)
        if embed_mode == "external_file" and embed_file is None:
            raise ConfigError("embed_mode=external_file needs embed_file")
        crop_text = take("embed_crop")
        embed_crop = None
        if crop_text:
            parts = crop_text.split()
            if len(parts) != 4:
                raise ConfigError("embed_crop: expected 'x y w h'")
            embed_crop = tuple(int(p) for p in parts)

        nlm_channels = take("nlm_channels", "all")
        if nlm_channels not in ("all", "s0"):
            raise ConfigError(f"nlm_channels must be all or s0, got {nlm_channels!r}")

        workers = take_int("workers", 1)
        if workers_override is not None:
            workers = workers_override
        if workers < 1:
            raise ConfigError("workers must be >= 1")

        cfg = PipelineConfig(
            mode=mode,
            regions_file=regions_file,
            seed=seed,
            workers=workers,
            dsift=dsift,
            synth=synth,
            train=train,
            nlm_patch_radius=take_int("nlm_patch_radius", 3),
            nlm_search_radius=take_int("nlm_search_radius", 10),
            nlm_strength=take_float("nlm_strength", 0.12),
            nlm_channels=nlm_channels,
            nlm_at_inference=_parse_bool(take("nlm_at_inference", "false"),
                                         "nlm_at_inference"),
            embed_mode=embed_mode,
            embed_file=embed_file,
            embed_crop=embed_crop,
        )
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc

    if raw:
        raise ConfigError(f"{path}: unknown keys: {', '.join(sorted(raw))}")
    return cfg
