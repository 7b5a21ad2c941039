"""Pose datasets: anchor gestures, synthetic generation, and file formats.

Dataset files are newline-delimited JSON records, either pre-normalized
({"label": ..., "features": [16 floats]}) or raw ({"label": ...,
"joints": [[x, y, confidence] x 18 or 25]}); raw records are gated and
normalized at load time.

The 8 anchor gestures are the rhyme's repertoire, laid out as plausible
2D skeletons in a 640x480 webcam frame (y grows downward).  Synthetic
datasets are Gaussian clusters around each anchor's feature vector.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .features import DEFAULT_REFERENCE_INDICES, Degenerate, normalize
from .gmm import LabeledDataset
from .skeleton import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    Keypoint,
    Rejection,
    SkeletonFrame,
    SkeletonModel,
    select_upper_body,
)

# Moderate spread: classes overlap slightly, accuracy lands in the mid-90s.
DEFAULT_SPREAD = 0.7
# Tight clusters: classes essentially never overlap.
WELL_SEPARATED_SPREAD = 0.05


class DatasetError(Exception):
    """Dataset file unreadable, or a raw record cannot be normalized."""


# Upper-body joints per gesture: neck, r_shoulder, r_elbow, r_wrist,
# l_shoulder, l_elbow, l_wrist, r_hip.  Trunk joints are shared; arms differ.
_TRUNK = {
    "neck": (320.0, 140.0),
    "r_shoulder": (270.0, 150.0),
    "l_shoulder": (370.0, 150.0),
    "r_hip": (290.0, 330.0),
}

ANCHOR_ARMS: dict[str, dict[str, tuple[float, float]]] = {
    "arms_up": {
        "r_elbow": (245.0, 95.0),
        "r_wrist": (250.0, 35.0),
        "l_elbow": (395.0, 95.0),
        "l_wrist": (390.0, 35.0),
    },
    "arms_crossed": {
        "r_elbow": (265.0, 235.0),
        "r_wrist": (355.0, 165.0),
        "l_elbow": (375.0, 235.0),
        "l_wrist": (285.0, 165.0),
    },
    "hands_on_head": {
        "r_elbow": (225.0, 115.0),
        "r_wrist": (300.0, 65.0),
        "l_elbow": (415.0, 115.0),
        "l_wrist": (340.0, 65.0),
    },
    "hands_on_hips": {
        "r_elbow": (220.0, 215.0),
        "r_wrist": (275.0, 290.0),
        "l_elbow": (420.0, 215.0),
        "l_wrist": (365.0, 290.0),
    },
    "spin_hands": {
        "r_elbow": (235.0, 245.0),
        "r_wrist": (305.0, 195.0),
        "l_elbow": (405.0, 245.0),
        "l_wrist": (335.0, 195.0),
    },
    "wave_right": {
        "r_elbow": (235.0, 120.0),
        "r_wrist": (210.0, 55.0),
        "l_elbow": (385.0, 235.0),
        "l_wrist": (390.0, 315.0),
    },
    "touch_shoulders": {
        "r_elbow": (255.0, 235.0),
        "r_wrist": (268.0, 158.0),
        "l_elbow": (385.0, 235.0),
        "l_wrist": (372.0, 158.0),
    },
    "airplane": {
        "r_elbow": (200.0, 120.0),
        "r_wrist": (140.0, 75.0),
        "l_elbow": (440.0, 185.0),
        "l_wrist": (495.0, 230.0),
    },
}

POSE_CLASSES: tuple[str, ...] = tuple(ANCHOR_ARMS)

_UPPER_ORDER = ("neck", "r_shoulder", "r_elbow", "r_wrist", "l_shoulder", "l_elbow", "l_wrist", "r_hip")

# The remaining coco-18 joints, shared across gestures: head and legs.
_EXTRA_COCO = {
    0: (320.0, 105.0),  # nose
    9: (285.0, 400.0),  # r_knee
    10: (283.0, 465.0),  # r_ankle
    11: (350.0, 330.0),  # l_hip
    12: (355.0, 400.0),  # l_knee
    13: (357.0, 465.0),  # l_ankle
    14: (308.0, 98.0),  # r_eye
    15: (332.0, 98.0),  # l_eye
    16: (297.0, 105.0),  # r_ear
    17: (343.0, 105.0),  # l_ear
}

_COCO_SLOT = {"neck": 1, "r_shoulder": 2, "r_elbow": 3, "r_wrist": 4,
              "l_shoulder": 5, "l_elbow": 6, "l_wrist": 7, "r_hip": 8}


def anchor_upper_body(label: str) -> np.ndarray:
    """(8, 2) joint positions for one gesture, in game joint order."""
    if label not in ANCHOR_ARMS:
        raise KeyError(f"unknown pose class {label!r}; known: {list(POSE_CLASSES)}")
    merged = dict(_TRUNK)
    merged.update(ANCHOR_ARMS[label])
    return np.array([merged[name] for name in _UPPER_ORDER], dtype=np.float64)


def anchor_features(label: str, reference_indices=DEFAULT_REFERENCE_INDICES) -> np.ndarray:
    pose = normalize(anchor_upper_body(label), reference_indices)
    if isinstance(pose, Degenerate):
        raise DatasetError(f"anchor {label!r} is degenerate: {pose.reason}")
    return pose.features


def anchor_coco_points(label: str) -> np.ndarray:
    """(18, 2) full coco skeleton for one gesture."""
    points = np.zeros((18, 2), dtype=np.float64)
    upper = anchor_upper_body(label)
    for slot, name in enumerate(_UPPER_ORDER):
        points[_COCO_SLOT[name]] = upper[slot]
    for idx, xy in _EXTRA_COCO.items():
        points[idx] = xy
    return points


def anchor_coco_triples(
    label: str,
    jitter_px: float = 0.0,
    rng: np.random.Generator | None = None,
    confidence: float = 0.9,
) -> list[float]:
    """Flat [x, y, c, ...] wire triples for one gesture, optionally jittered."""
    points = anchor_coco_points(label)
    if jitter_px > 0.0:
        if rng is None:
            rng = np.random.default_rng(0)
        points = points + rng.normal(0.0, jitter_px, points.shape)
    flat: list[float] = []
    for x, y in points:
        flat.extend((float(x), float(y), float(confidence)))
    return flat


def generate_synthetic(
    n_classes: int = 8,
    per_class: int = 30,
    spread: float = DEFAULT_SPREAD,
    seed: int = 0,
    reference_indices=DEFAULT_REFERENCE_INDICES,
) -> LabeledDataset:
    """Gaussian clusters in feature space around the first n_classes anchors."""
    if not 1 <= n_classes <= len(POSE_CLASSES):
        raise ValueError(f"n_classes must be in 1..{len(POSE_CLASSES)}, got {n_classes}")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    if spread < 0:
        raise ValueError("spread must be >= 0")
    rng = np.random.default_rng(seed)
    records = []
    for label in POSE_CLASSES[:n_classes]:
        center = anchor_features(label, reference_indices)
        noise = np.zeros((per_class, center.shape[0]))
        if spread > 0:
            noise = rng.normal(0.0, spread, (per_class, center.shape[0]))
        samples = center[None, :] + noise
        records.extend((label, samples[i]) for i in range(per_class))
    return LabeledDataset(records)


def save_dataset(data: LabeledDataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for label, vec in data.records:
            fh.write(json.dumps({"label": label, "features": vec.tolist()}) + "\n")


def load_dataset(
    path,
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
    reference_indices=DEFAULT_REFERENCE_INDICES,
) -> LabeledDataset:
    """Read a dataset file; raw joint records are gated and normalized here."""
    records = []
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "label" not in doc:
            raise DatasetError(f"{path}:{lineno}: record needs a 'label'")
        label = str(doc["label"])
        if "features" in doc:
            vec = np.asarray(doc["features"], dtype=np.float64)
            records.append((label, vec))
        elif "joints" in doc:
            records.append((label, _normalize_raw(doc["joints"], threshold, reference_indices, path, lineno)))
        else:
            raise DatasetError(f"{path}:{lineno}: record needs 'features' or 'joints'")
    return LabeledDataset(records)


def _normalize_raw(joints, threshold, reference_indices, path, lineno) -> np.ndarray:
    try:
        triples = [(float(x), float(y), float(c)) for x, y, c in joints]
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{path}:{lineno}: joints must be [x, y, confidence] triples") from exc
    if len(triples) not in (18, 25):
        raise DatasetError(f"{path}:{lineno}: {len(triples)} joints; expected 18 or 25")
    model = SkeletonModel.COCO_18 if len(triples) == 18 else SkeletonModel.BODY_25
    frame = SkeletonFrame(model, tuple(Keypoint(*t) for t in triples), timestamp_ms=0)
    selected = select_upper_body(frame, threshold)
    if isinstance(selected, Rejection):
        raise DatasetError(
            f"{path}:{lineno}: joint {selected.joint} confidence {selected.confidence} "
            f"not above threshold {threshold}"
        )
    pose = normalize(selected, reference_indices)
    if isinstance(pose, Degenerate):
        raise DatasetError(f"{path}:{lineno}: degenerate pose: {pose.reason}")
    return pose.features
