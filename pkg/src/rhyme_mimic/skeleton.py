"""Keypoint frame ingestion: wire-format parsing, confidence gating, joint selection.

The pose estimator is an external process; its per-frame output document is
the boundary.  A document is a JSON object with a ``people`` list, each
person carrying a flat ``pose_keypoints_2d`` list of (x, y, confidence)
triples, plus an optional top-level ``timestamp_ms``.  Streams are
newline-delimited documents, one frame per line.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Sequence

DEFAULT_CONFIDENCE_THRESHOLD = 0.5
FRAME_PERIOD_MS = 33  # default spacing for streams without timestamps (~30 fps)

# Upper-body joints in game order: the 8 joints every pose feature is built from.
UPPER_BODY_JOINT_NAMES = (
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
)

# Index of each upper-body joint inside the two skeleton layouts.
COCO18_UPPER_BODY = (1, 2, 3, 4, 5, 6, 7, 8)
BODY25_UPPER_BODY = (1, 2, 3, 4, 5, 6, 7, 9)


class MalformedDocument(ValueError):
    """Frame document is not parseable as the keypoint wire format."""


class BadJointCount(ValueError):
    """A person's triple count matches neither an 18- nor a 25-joint layout."""


class NonFiniteValue(ValueError):
    """A coordinate or confidence is NaN or infinite."""


class SkeletonModel(Enum):
    COCO_18 = 18
    BODY_25 = 25

    @property
    def joint_count(self) -> int:
        return self.value

    @property
    def upper_body_indices(self) -> tuple[int, ...]:
        return COCO18_UPPER_BODY if self is SkeletonModel.COCO_18 else BODY25_UPPER_BODY


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float


@dataclass(frozen=True)
class SkeletonFrame:
    """One detected person at one timestamp."""

    model: SkeletonModel
    joints: tuple[Keypoint, ...]
    timestamp_ms: int
    person_index: int = 0

    def __post_init__(self) -> None:
        if len(self.joints) != self.model.joint_count:
            raise ValueError(
                f"{self.model.name} frame needs {self.model.joint_count} joints, got {len(self.joints)}"
            )

    def bounding_box_area(self, min_confidence: float = 0.0) -> float:
        """Pixel area of the box around joints detected above min_confidence."""
        xs = [j.x for j in self.joints if j.confidence > min_confidence]
        ys = [j.y for j in self.joints if j.confidence > min_confidence]
        if not xs:
            return 0.0
        return (max(xs) - min(xs)) * (max(ys) - min(ys))


@dataclass(frozen=True)
class UpperBodyJoints:
    """The 8 feature joints, ordered as UPPER_BODY_JOINT_NAMES."""

    positions: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        if len(self.positions) != 8:
            raise ValueError(f"expected 8 upper-body joints, got {len(self.positions)}")


@dataclass(frozen=True)
class Rejection:
    """Frame skipped: the named joint (1..8, game numbering) failed the gate."""

    joint: int
    confidence: float


def _check_finite(value: float, what: str) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NonFiniteValue(f"{what} is not finite: {value!r}")
    return value


def frames_from_document(doc: dict, default_timestamp_ms: int = 0) -> list[SkeletonFrame]:
    """Unpack one already-decoded frame document into SkeletonFrames."""
    if not isinstance(doc, dict):
        raise MalformedDocument(f"frame document must be an object, got {type(doc).__name__}")
    people = doc.get("people")
    if not isinstance(people, list):
        raise MalformedDocument("frame document has no 'people' list")
    timestamp = doc.get("timestamp_ms", default_timestamp_ms)
    if not isinstance(timestamp, (int, float)) or isinstance(timestamp, bool):
        raise MalformedDocument(f"bad timestamp_ms: {timestamp!r}")
    timestamp = int(timestamp)

    frames = []
    for idx, person in enumerate(people):
        if not isinstance(person, dict) or "pose_keypoints_2d" not in person:
            raise MalformedDocument(f"person {idx} has no 'pose_keypoints_2d'")
        flat = person["pose_keypoints_2d"]
        if not isinstance(flat, list) or any(
            not isinstance(v, (int, float)) or isinstance(v, bool) for v in flat
        ):
            raise MalformedDocument(f"person {idx}: pose_keypoints_2d must be a list of numbers")
        if len(flat) % 3 != 0 or len(flat) // 3 not in (18, 25):
            raise BadJointCount(
                f"person {idx}: {len(flat)} values is {len(flat) / 3:g} triples; expected 18 or 25"
            )
        model = SkeletonModel.COCO_18 if len(flat) // 3 == 18 else SkeletonModel.BODY_25
        joints = []
        for j in range(model.joint_count):
            x = _check_finite(flat[3 * j], f"person {idx} joint {j} x")
            y = _check_finite(flat[3 * j + 1], f"person {idx} joint {j} y")
            c = _check_finite(flat[3 * j + 2], f"person {idx} joint {j} confidence")
            if not 0.0 <= c <= 1.0:
                raise MalformedDocument(f"person {idx} joint {j}: confidence {c} outside [0, 1]")
            joints.append(Keypoint(x, y, c))
        frames.append(SkeletonFrame(model, tuple(joints), timestamp, idx))
    return frames


def parse_frame(raw: bytes | str, default_timestamp_ms: int = 0) -> list[SkeletonFrame]:
    """Parse one wire-format document; one SkeletonFrame per detected person."""
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedDocument(f"not utf-8: {exc}") from exc
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"not valid JSON: {exc}") from exc
    return frames_from_document(doc, default_timestamp_ms)


def frame_to_document(frames: Sequence[SkeletonFrame], timestamp_ms: int | None = None) -> dict:
    """Re-pack frames (all persons of one instant) into a wire document."""
    if timestamp_ms is None and frames:
        timestamp_ms = frames[0].timestamp_ms
    people = []
    for frame in sorted(frames, key=lambda f: f.person_index):
        flat: list[float] = []
        for joint in frame.joints:
            flat.extend((joint.x, joint.y, joint.confidence))
        people.append({"pose_keypoints_2d": flat})
    return {"people": people, "timestamp_ms": int(timestamp_ms or 0)}


def serialize_frame(frames: Sequence[SkeletonFrame], timestamp_ms: int | None = None) -> str:
    return json.dumps(frame_to_document(frames, timestamp_ms))


def read_stream(lines: Iterable[str]) -> Iterator[list[SkeletonFrame]]:
    """Parse a newline-delimited stream of frame documents.

    Documents without a timestamp_ms get frame_index * 33 ms.  Timestamps
    must be nondecreasing across the stream.
    """
    last_ts = None
    index = 0
    for line in lines:
        line = line.strip()
        if not line:
            continue
        frames = parse_frame(line, default_timestamp_ms=index * FRAME_PERIOD_MS)
        if frames:
            ts = frames[0].timestamp_ms
            if last_ts is not None and ts < last_ts:
                raise MalformedDocument(
                    f"stream timestamps decrease at frame {index}: {ts} < {last_ts}"
                )
            last_ts = ts
        yield frames
        index += 1


def read_stream_file(path) -> list[list[SkeletonFrame]]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(read_stream(fh))


def select_upper_body(
    frame: SkeletonFrame, threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
) -> UpperBodyJoints | Rejection:
    """Extract the 8 feature joints iff each is strictly above the threshold.

    Returns a Rejection naming the first failing joint (1..8) otherwise;
    a rejection means "skip this frame", not a fault.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"confidence threshold must be in [0, 1], got {threshold}")
    positions = []
    for slot, joint_index in enumerate(frame.model.upper_body_indices):
        joint = frame.joints[joint_index]
        if not joint.confidence > threshold:
            return Rejection(joint=slot + 1, confidence=joint.confidence)
        positions.append((joint.x, joint.y))
    return UpperBodyJoints(tuple(positions))


def select_person(
    frames: Sequence[SkeletonFrame], min_confidence: float = 0.0
) -> SkeletonFrame | None:
    """Pick the person with the largest bounding box of detected joints.

    The game assumes one child in view; when the estimator reports several
    people, the one dominating the image wins.  Ties go to the lowest
    person index.  Returns None for an empty frame.
    """
    if not frames:
        return None
    return max(frames, key=lambda f: (f.bounding_box_area(min_confidence), -f.person_index))
