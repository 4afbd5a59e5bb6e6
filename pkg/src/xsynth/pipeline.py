"""Pipeline commands behind the CLI.

All three commands share one working directory (``--out``): training writes
``models/<region>.xcm`` and loss CSVs, synthesis writes ``synth/<subject>_
<condition>_synth.png`` plus per-image traces, evaluation writes score CSVs,
ROC reports and figures.  Every file write is atomic (temp file + rename)
and everything derives from the single config seed, so reruns are
byte-identical.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .crossmap import (
    CrossMap,
    FeaturePair,
    load_crossmap,
    save_crossmap,
    train_crossmap,
)
from .dsift import dsift_forward
from .errors import DataError
from .imaging import GrayImage, ThermalStack, load_image, nlm_filter, save_image
from .landmarks import read_landmarks
from .manifest import Manifest, ManifestEntry, PipelineConfig, load_manifest
from .metrics import (
    EmbeddingSource,
    build_score_matrix,
    embed,
    landmark_error,
    load_embedding_table,
    roc_auc_eer,
    save_embedding_table,
    ssim,
    write_score_csv,
)
from .regions import Region, RegionSet, build_weight_fields, crop_region, read_regions_file
from .synthesis import synthesize, thermal_features
from . import reporting

log = logging.getLogger("xsynth")


def _atomic_text(path: str, content: str) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(content)
    os.replace(tmp, path)


def _load_stack(entry: ManifestEntry, cfg: PipelineConfig,
                apply_nlm: bool = False) -> ThermalStack:
    """Entry's thermal stack in the configured mode, optionally NLM-filtered."""
    s0 = load_image(entry.s0_path)
    if cfg.mode == "polarimetric":
        s1 = load_image(entry.s1_path)
        s2 = load_image(entry.s2_path)
        stack = ThermalStack.from_stokes(s0, s1, s2, with_dolp=True)
        planes = {"S0": stack.plane("S0"), "DoLP": stack.plane("DoLP")}
    else:
        planes = {"S0": s0}
    if apply_nlm:
        for name in list(planes):
            if cfg.nlm_channels == "s0" and name != "S0":
                continue
            planes[name] = nlm_filter(planes[name], cfg.nlm_patch_radius,
                                      cfg.nlm_search_radius, cfg.nlm_strength)
    channels = cfg.channels
    return ThermalStack(channels, tuple(planes[c] for c in channels))


def _load_regions(cfg: PipelineConfig, dims: tuple[int, int]) -> RegionSet:
    locals_: list[Region] = []
    if cfg.regions_file is not None:
        locals_ = read_regions_file(cfg.regions_file)
    return build_weight_fields(dims, locals_)


def _check_dims(manifest: Manifest, dims: tuple[int, int]) -> None:
    for e in manifest.entries:
        img = load_image(e.visible_path)
        if img.shape != dims:
            raise DataError(
                f"{e.image_id}: image dims {img.shape} differ from {dims}"
            )


def _image_dims(manifest: Manifest) -> tuple[int, int]:
    first = load_image(manifest.entries[0].visible_path)
    return first.shape


def _map_parallel(fn, items, workers: int):
    """Run fn over items, preserving item order in the result list."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------------
# train
# --------------------------------------------------------------------------

def cmd_train(manifest_path: str, cfg: PipelineConfig, out_dir: str) -> dict:
    """Train one cross-spectrum mapping per region on the train split.

    For every region and training entry, the thermal crop's descriptors (raw
    and NLM-normalized copies, doubling the set) are paired with the visible
    crop's descriptors; pairs never cross regions.  Writes
    ``models/<region>.xcm``, per-region loss CSVs and a loss-curve figure.
    """
    manifest = load_manifest(manifest_path,
                             require_polar=cfg.mode == "polarimetric")
    train_entries = manifest.split("train")
    if not train_entries:
        raise DataError("manifest has no train entries")
    dims = _image_dims(manifest)
    regions = _load_regions(cfg, dims)
    _check_dims(manifest, dims)

    models_dir = os.path.join(out_dir, "models")
    os.makedirs(models_dir, exist_ok=True)

    def entry_features(entry: ManifestEntry):
        visible = load_image(entry.visible_path)
        stacks = [_load_stack(entry, cfg, apply_nlm=False),
                  _load_stack(entry, cfg, apply_nlm=True)]
        return visible, stacks

    log.info("extracting features for %d training images", len(train_entries))
    per_entry = _map_parallel(entry_features, train_entries, cfg.workers)

    histories: dict[str, list[float]] = {}
    model_paths: dict[str, str] = {}
    for region in regions.regions:
        pairs = []
        for visible, stacks in per_entry:
            target = dsift_forward(crop_region(visible, region), cfg.dsift)
            for stack in stacks:
                z = thermal_features(stack, region, cfg.dsift, cfg.channels)
                pairs.append(FeaturePair(region.id, z, target))
        log.info("training region %r on %d pairs", region.id, len(pairs))
        model, history = train_crossmap(pairs, cfg.train)
        path = os.path.join(models_dir, f"{region.id}.xcm")
        save_crossmap(model, path)
        model_paths[region.id] = path
        histories[region.id] = history
        _atomic_text(
            os.path.join(out_dir, f"train_loss_{region.id}.csv"),
            "epoch,mse\n" + "".join(
                f"{i + 1},{loss!r}\n" for i, loss in enumerate(history)),
        )
        log.info("region %r: loss %.6g -> %.6g", region.id, history[0],
                 history[-1])
    reporting.save_loss_curves(os.path.join(out_dir, "loss_curves.png"),
                               histories)
    return {"models": model_paths, "histories": histories}


def load_models(out_dir: str, regions: RegionSet) -> dict[str, CrossMap]:
    models_dir = os.path.join(out_dir, "models")
    models: dict[str, CrossMap] = {}
    for region in regions.regions:
        path = os.path.join(models_dir, f"{region.id}.xcm")
        if not os.path.isfile(path):
            raise DataError(f"missing model for region {region.id!r}: {path}")
        models[region.id] = load_crossmap(path)
    return models


# --------------------------------------------------------------------------
# synthesize
# --------------------------------------------------------------------------

def synth_image_path(out_dir: str, entry: ManifestEntry) -> str:
    return os.path.join(out_dir, "synth", f"{entry.image_id}_synth.png")


def cmd_synthesize(manifest_path: str, cfg: PipelineConfig,
                   out_dir: str) -> dict:
    """Invert the trained mappings for every eval entry.

    Writes ``synth/<subject>_<condition>_synth.png`` (16-bit), a trace CSV
    per image and one combined trace figure.
    """
    manifest = load_manifest(manifest_path,
                             require_polar=cfg.mode == "polarimetric")
    eval_entries = manifest.split("eval")
    if not eval_entries:
        raise DataError("manifest has no eval entries")
    dims = _image_dims(manifest)
    regions = _load_regions(cfg, dims)
    _check_dims(manifest, dims)
    models = load_models(out_dir, regions)
    for region in regions.regions:
        expected = cfg.dsift.descriptor_size * len(cfg.channels)
        m = models[region.id]
        if m.d_in != expected or m.d_out != cfg.dsift.descriptor_size:
            raise DataError(
                f"model for region {region.id!r} has dims {m.d_in}->{m.d_out}, "
                f"expected {expected}->{cfg.dsift.descriptor_size}"
            )

    synth_dir = os.path.join(out_dir, "synth")
    os.makedirs(synth_dir, exist_ok=True)

    def run_one(entry: ManifestEntry):
        stack = _load_stack(entry, cfg, apply_nlm=cfg.nlm_at_inference)
        image, trace = synthesize(stack, regions, models, cfg.dsift,
                                  cfg.synth, cfg.channels)
        save_image(image, synth_image_path(out_dir, entry), depth=16)
        trace.write_csv(os.path.join(synth_dir, f"{entry.image_id}_trace.csv"))
        log.info("synthesized %s", entry.image_id)
        return entry.image_id, trace

    results = _map_parallel(run_one, eval_entries, cfg.workers)
    traces = dict(results)
    reporting.save_trace_figure(os.path.join(synth_dir, "traces.png"), traces)
    return {"traces": traces}


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------

def _embedding_source(cfg: PipelineConfig) -> EmbeddingSource:
    if cfg.embed_mode == "external_file":
        return EmbeddingSource(mode="external_file",
                               table=load_embedding_table(cfg.embed_file))
    return EmbeddingSource(mode="dsift_pooled", dsift_cfg=cfg.dsift)


def _embed_image(img: GrayImage, entry_id: str, cfg: PipelineConfig,
                 src: EmbeddingSource) -> np.ndarray:
    if cfg.embed_crop is not None:
        x, y, w, h = cfg.embed_crop
        img = crop_region(img, Region("embed-crop", x, y, w, h))
    return embed(img, src, image_id=entry_id)


def cmd_evaluate(manifest_path: str, cfg: PipelineConfig, out_dir: str) -> dict:
    """Score synthesized probes against the visible gallery.

    Always also scores the raw S0 thermal probes through the same embedder
    as the no-synthesis baseline row.  Writes score CSVs, ROC points, a
    combined report, per-image SSIM, landmark errors where both ground-truth
    and detected landmark files exist, and figures.
    """
    manifest = load_manifest(manifest_path,
                             require_polar=cfg.mode == "polarimetric")
    eval_entries = manifest.split("eval")
    if not eval_entries:
        raise DataError("manifest has no eval entries")
    for entry in eval_entries:
        if not os.path.isfile(synth_image_path(out_dir, entry)):
            raise DataError(
                f"missing synthesized image for {entry.image_id}; "
                f"run synthesize first"
            )
    src = _embedding_source(cfg)

    def embeddings_for(kind: str):
        def one(entry: ManifestEntry):
            if kind == "gallery":
                img = load_image(entry.visible_path)
                eid = entry.image_id
            elif kind == "raw":
                img = load_image(entry.s0_path)
                eid = f"{entry.image_id}_s0"
            else:
                img = load_image(synth_image_path(out_dir, entry))
                eid = f"{entry.image_id}_synth"
            return eid, _embed_image(img, eid, cfg, src)
        return _map_parallel(one, eval_entries, cfg.workers)

    gallery = embeddings_for("gallery")
    probes_synth = embeddings_for("synth")
    probes_raw = embeddings_for("raw")
    labels = [e.subject_id for e in eval_entries]

    save_embedding_table(os.path.join(out_dir, "embeddings_gallery.f32t"),
                         [eid for eid, _ in gallery],
                         np.stack([v for _, v in gallery]))
    save_embedding_table(os.path.join(out_dir, "embeddings_probes.f32t"),
                         [eid for eid, _ in probes_synth],
                         np.stack([v for _, v in probes_synth]))

    reports = {}
    for tag, probes in (("synth", probes_synth), ("raw", probes_raw)):
        scores, rows = build_score_matrix(
            [v for _, v in gallery], [v for _, v in probes],
            labels, labels)
        ids_p = [pid for pid, _ in probes for _ in gallery]
        ids_g = [gid for _, _ in probes for gid, _ in gallery]
        suffix = "" if tag == "synth" else "_raw"
        write_score_csv(os.path.join(out_dir, f"scores{suffix}.csv"), rows,
                        probe_ids=ids_p, gallery_ids=ids_g)
        report = roc_auc_eer(scores)
        report.write_csv(os.path.join(out_dir, f"roc_points{suffix}.csv"))
        reports[tag] = (report, scores)

    # image quality vs ground truth
    ssim_rows = []
    for entry in eval_entries:
        value = ssim(load_image(synth_image_path(out_dir, entry)),
                     load_image(entry.visible_path))
        ssim_rows.append((entry.image_id, value))
    _atomic_text(os.path.join(out_dir, "ssim.csv"),
                 "image_id,ssim\n" + "".join(
                     f"{i},{v!r}\n" for i, v in ssim_rows))
    mean_ssim = float(np.mean([v for _, v in ssim_rows]))

    # landmark accuracy where both files exist
    lm_rows = []
    for entry in eval_entries:
        detected_path = os.path.join(
            out_dir, "synth", f"{entry.image_id}_synth_landmarks.txt")
        if entry.landmarks_path and os.path.isfile(detected_path):
            err = landmark_error(read_landmarks(detected_path),
                                 read_landmarks(entry.landmarks_path))
            lm_rows.append((entry.image_id, err))
    mean_lm = float(np.mean([v for _, v in lm_rows])) if lm_rows else None
    if lm_rows:
        _atomic_text(os.path.join(out_dir, "landmark_error.csv"),
                     "image_id,mean_px\n" + "".join(
                         f"{i},{v!r}\n" for i, v in lm_rows))

    lines = [
        "metric,value",
        f"auc_synth,{reports['synth'][0].auc!r}",
        f"eer_synth,{reports['synth'][0].eer!r}",
        f"auc_raw,{reports['raw'][0].auc!r}",
        f"eer_raw,{reports['raw'][0].eer!r}",
        f"mean_ssim,{mean_ssim!r}",
        f"mean_landmark_error_px,{mean_lm!r}" if mean_lm is not None
        else "mean_landmark_error_px,n/a",
    ]
    _atomic_text(os.path.join(out_dir, "report.csv"), "\n".join(lines) + "\n")
    _atomic_text(os.path.join(out_dir, "report.txt"), "\n".join([
        f"gallery: {len(gallery)} visible images; "
        f"probes: {len(probes_synth)} synthesized, {len(probes_raw)} raw S0",
        f"synthesized probes: AUC {reports['synth'][0].auc:.4f}  "
        f"EER {reports['synth'][0].eer:.4f}",
        f"raw thermal probes: AUC {reports['raw'][0].auc:.4f}  "
        f"EER {reports['raw'][0].eer:.4f}",
        f"mean SSIM vs ground truth: {mean_ssim:.4f}",
        "mean landmark error: " + (
            f"{mean_lm:.3f} px over {len(lm_rows)} images" if lm_rows
            else "n/a (no detected-landmark files)"),
    ]) + "\n")

    reporting.save_roc_figure(
        os.path.join(out_dir, "roc_curve.png"),
        {tag: rep for tag, (rep, _) in reports.items()})
    reporting.save_score_histogram(
        os.path.join(out_dir, "score_distributions.png"),
        reports["synth"][1], "synthesized probes vs visible gallery")
    log.info("evaluation report written to %s", out_dir)
    return {
        "auc_synth": reports["synth"][0].auc,
        "auc_raw": reports["raw"][0].auc,
        "eer_synth": reports["synth"][0].eer,
        "eer_raw": reports["raw"][0].eer,
        "mean_ssim": mean_ssim,
        "mean_landmark_error": mean_lm,
    }
