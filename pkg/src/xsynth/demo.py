"""Synthetic paired-band demo corpus.

The real polarimetric face dataset is distributed under a release agreement,
so the pipeline ships a generator that renders procedural face-like images
and derives the thermal bands from them with a fixed, subject-independent
nonlinearity (intensity inversion + gamma + blur for S0; smoothed gradient
magnitudes for S1/S2).  Because the band transform is the same for every
subject, the cross-spectrum mapping can learn it from the training split and
generalize to held-out subjects, which is all the end-to-end checks need.

Everything is deterministic for a fixed seed.  Images are 250 rows by 200
columns so the default region boxes apply unchanged.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.ndimage import gaussian_filter

from .imaging import GrayImage, save_image
from .landmarks import LandmarkSet, write_landmarks
from .manifest import ManifestEntry, write_manifest
from .regions import Region, write_regions_file

DEMO_SIZE = (250, 200)  # rows, cols

DEFAULT_REGIONS = [
    Region("right-eye", 30, 89, 64, 34, 0.95),
    Region("left-eye", 106, 89, 64, 34, 0.95),
    Region("nose-mouth", 70, 125, 65, 85, 0.75),
]


def _ellipse(uu, vv, cu, cv, ru, rv):
    return ((uu - cu) / ru) ** 2 + ((vv - cv) / rv) ** 2 <= 1.0


def render_face(subject_seed: int, expression: bool) -> tuple[np.ndarray, np.ndarray]:
    """One visible-band face; returns (image, landmarks as (u, v) rows).

    Geometry (face shape, eye spacing, feature sizes, skin texture) is a
    deterministic function of the subject seed; the expression condition
    opens the mouth and raises the brows without touching identity traits.
    """
    rng = np.random.default_rng(subject_seed)
    h, w = DEMO_SIZE
    uu, vv = np.mgrid[0:h, 0:w].astype(np.float64)

    skin = rng.uniform(0.55, 0.75)
    bg = rng.uniform(0.12, 0.25)
    tilt = rng.uniform(-0.05, 0.05)
    img = bg + tilt * (vv - w / 2) / w + 0.05 * (uu / h)

    face_cu, face_cv = 128.0 + rng.uniform(-4, 4), 100.0 + rng.uniform(-3, 3)
    face_ru, face_rv = rng.uniform(95, 110), rng.uniform(68, 80)
    face = _ellipse(uu, vv, face_cu, face_cv, face_ru, face_rv)
    img[face] = skin

    # identity-specific smooth texture, stable across conditions
    texture = gaussian_filter(rng.standard_normal((h, w)), sigma=6.0)
    texture *= 0.06 / max(np.abs(texture).max(), 1e-9)
    img[face] += texture[face]

    eye_row = 106.0 + rng.uniform(-4, 4)
    eye_dv = rng.uniform(34, 41)
    eye_rv = rng.uniform(7, 10)
    eye_ru = rng.uniform(4, 6)
    iris = rng.uniform(0.05, 0.2)
    brow_lift = 3.0 if expression else 0.0
    right_eye = (eye_row, 100.0 - eye_dv)
    left_eye = (eye_row, 100.0 + eye_dv)
    for cu, cv in (right_eye, left_eye):
        white = _ellipse(uu, vv, cu, cv, eye_ru + 2, eye_rv + 3)
        img[white] = 0.9
        pupil = _ellipse(uu, vv, cu, cv, eye_ru, eye_rv * 0.45)
        img[pupil] = iris
        brow = (np.abs(uu - (cu - 9 - brow_lift)) <= 1.5) \
            & (np.abs(vv - cv) <= eye_rv + 3)
        img[brow] = 0.25

    nose_tip_u = 152.0 + rng.uniform(-5, 5)
    nose_cv = 100.0 + rng.uniform(-2, 2)
    nose_w = rng.uniform(4, 7)
    ridge = (uu >= eye_row + 8) & (uu <= nose_tip_u) \
        & (np.abs(vv - nose_cv) <= nose_w * (uu - eye_row) / (nose_tip_u - eye_row + 1e-9))
    img[ridge] = skin * rng.uniform(0.75, 0.9)
    nostrils = _ellipse(uu, vv, nose_tip_u + 2, nose_cv, 2.5, nose_w + 2)
    img[nostrils] = skin * 0.6

    mouth_u = 183.0 + rng.uniform(-4, 4)
    mouth_rv = rng.uniform(12, 17)
    mouth_ru = (5.0 if expression else 2.5) + rng.uniform(0, 1.5)
    mouth_cv = 100.0 + rng.uniform(-2, 2)
    mouth = _ellipse(uu, vv, mouth_u, mouth_cv, mouth_ru, mouth_rv)
    img[mouth] = rng.uniform(0.25, 0.4)
    if expression:
        teeth = _ellipse(uu, vv, mouth_u - 1, mouth_cv, mouth_ru * 0.4, mouth_rv * 0.7)
        img[teeth] = 0.85

    chin_u = face_cu + face_ru * 0.97
    img = gaussian_filter(img, sigma=0.8)
    img = np.clip(img, 0.02, 0.98)

    landmarks = np.array([
        right_eye,
        left_eye,
        (nose_tip_u, nose_cv),
        (mouth_u, mouth_cv - mouth_rv),
        (mouth_u, mouth_cv + mouth_rv),
        (mouth_u, mouth_cv),
        (chin_u, face_cv),
    ])
    return img, landmarks


def thermal_bands(visible: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Fixed visible -> (S0, S1, S2) transform shared by all subjects.

    S0 inverts and gamma-warps the intensities with a mild blur (hot where
    the visible image is dark), so raw thermal gradients point the opposite
    way from visible ones; S1/S2 encode smoothed horizontal/vertical edge
    strength, standing in for surface-orientation polarization cues.
    """
    s0 = 0.15 + 0.7 * gaussian_filter((1.0 - visible) ** 1.3, sigma=1.2)
    du, dv = np.gradient(gaussian_filter(visible, sigma=1.0))
    s1 = np.clip(8.0 * np.abs(dv), 0.0, 1.0)
    s2 = np.clip(8.0 * np.abs(du), 0.0, 1.0)
    return np.clip(s0, 0.0, 1.0), s1, s2


def default_demo_config(seed: int) -> str:
    """Config tuned for the demo corpus: polarimetric inputs, noise init
    (a constant init is a stationary point of the feature term), and budgets
    sized so the full train/synthesize/evaluate round trip stays desk-scale."""
    return "\n".join([
        "mode = polarimetric",
        "regions_file = regions.txt",
        f"seed = {seed}",
        "synth_init = noise",
        "synth_iterations = 200",
        "synth_lambda = 1e-5",
        "train_epochs = 25",
        "train_learning_rate = 2e-3",
        "nlm_search_radius = 5",
        "",
    ])


def make_demo_data(out_dir: str, subjects: int = 8, seed: int = 7,
                   with_landmarks: bool = True) -> str:
    """Generate the corpus; returns the manifest path.

    Half the subjects (rounded up) go to the train split, the rest to eval,
    with two conditions (baseline ``b`` and expression ``e``) each.
    """
    if subjects < 2:
        raise ValueError("need at least 2 subjects for disjoint splits")
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    base_rng = np.random.default_rng(seed)
    subject_seeds = base_rng.integers(0, 2 ** 31 - 1, size=subjects)

    entries: list[ManifestEntry] = []
    for idx in range(subjects):
        sid = f"s{idx + 1:02d}"
        split = "train" if idx < (subjects + 1) // 2 else "eval"
        for cond, expression in (("b", False), ("e", True)):
            visible, lms = render_face(int(subject_seeds[idx]), expression)
            s0, s1, s2 = thermal_bands(visible)
            stem = f"{sid}_{cond}"
            paths = {}
            for name, arr in (("vis", visible), ("s0", s0), ("s1", s1), ("s2", s2)):
                rel = os.path.join("images", f"{stem}_{name}.png")
                save_image(GrayImage(arr), os.path.join(out_dir, rel), depth=16)
                paths[name] = rel
            lm_rel = None
            if with_landmarks:
                lm_rel = os.path.join("images", f"{stem}_landmarks.txt")
                write_landmarks(os.path.join(out_dir, lm_rel), LandmarkSet(lms))
            entries.append(ManifestEntry(
                subject_id=sid, condition=cond, split=split,
                visible_path=paths["vis"], s0_path=paths["s0"],
                s1_path=paths["s1"], s2_path=paths["s2"],
                landmarks_path=lm_rel,
            ))

    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest_path, entries)
    write_regions_file(os.path.join(out_dir, "regions.txt"), DEFAULT_REGIONS)
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="ascii") as fh:
        fh.write(default_demo_config(seed))
    return manifest_path
