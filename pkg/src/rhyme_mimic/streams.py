"""Synthetic keypoint streams aligned to a rhyme script's timeline.

Builds the recorded camera input for an entire session: for each line, the
child either holds the target gesture long enough to register (a streak of
matching frames early in the wait window) or fidgets through every wait
until the engine gives up.  The timing model here is derived from the game
rules independently of the engine code, so a generated stream doubles as
ground truth for end-to-end runs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .datasets import POSE_CLASSES, anchor_coco_triples
from .game import RhymeScript
from .peripherals import LatencyModel
from .skeleton import FRAME_PERIOD_MS


@dataclass
class StreamPlan:
    records: list[tuple[int, dict]]  # (timestamp_ms, frame document)
    ground_truth: dict[int, bool]  # line index -> imitated

    def lines(self) -> list[str]:
        return [json.dumps(doc) for _, doc in self.records]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines():
                fh.write(line + "\n")


def _frame_doc(label: str, timestamp_ms: int, rng, jitter_px: float, confidence: float) -> dict:
    triples = anchor_coco_triples(label, jitter_px=jitter_px, rng=rng, confidence=confidence)
    return {"people": [{"pose_keypoints_2d": triples}], "timestamp_ms": int(timestamp_ms)}


def _distractor_for(target: str) -> str:
    idx = POSE_CLASSES.index(target) if target in POSE_CLASSES else 0
    return POSE_CLASSES[(idx + len(POSE_CLASSES) // 2) % len(POSE_CLASSES)]


def make_session_stream(
    script: RhymeScript,
    outcomes: list[bool],
    latency: LatencyModel | None = None,
    seed: int = 0,
    frame_period_ms: int = FRAME_PERIOD_MS,
    streak_pad: int = 3,
    jitter_px: float = 1.0,
    confidence: float = 0.9,
    distractor_gap_ms: int = 400,
) -> StreamPlan:
    """Plan a session's camera stream and its expected per-line outcomes.

    Timeline, by the game's rules: a line is sung for sing_duration_ms (the
    audio ack ends the singing), then the wait window opens.  A successful
    line shows match_streak consecutive target frames starting one frame
    into the window; detection lands at wait_start + match_streak * period,
    encouragement takes the tts latency, then the next line starts.  A
    failed line shows only off-target frames, burns every repeat
    (sing + full wait each time), and the engine then moves on.
    """
    latency = latency or LatencyModel()
    if len(outcomes) != len(script.lines):
        raise ValueError(f"need {len(script.lines)} outcomes, got {len(outcomes)}")
    for line in script.lines:
        needed = (script.match_streak + streak_pad + 1) * frame_period_ms
        if needed > line.wait_timeout_ms:
            raise ValueError(
                f"line {line.index}: wait_timeout_ms {line.wait_timeout_ms} too short for a "
                f"{script.match_streak}-frame streak at {frame_period_ms} ms/frame"
            )

    rng = np.random.default_rng(seed)
    records: list[tuple[int, dict]] = []
    t = 0
    for line, imitated in zip(script.lines, outcomes):
        if imitated:
            wait_start = t + line.sing_duration_ms
            for j in range(script.match_streak + streak_pad):
                ts = wait_start + frame_period_ms * (j + 1)
                records.append((ts, _frame_doc(line.pose_class, ts, rng, jitter_px, confidence)))
            success_at = wait_start + frame_period_ms * script.match_streak
            t = success_at + latency.tts_ms
        else:
            distractor = _distractor_for(line.pose_class)
            wait_start = t + line.sing_duration_ms
            for attempt in range(script.repeat_limit + 1):
                ts = wait_start + frame_period_ms
                end = wait_start + line.wait_timeout_ms - frame_period_ms
                flip = False
                while ts < end:
                    if flip:
                        # Low-confidence frame: gated out before classification.
                        records.append(
                            (ts, _frame_doc(distractor, ts, rng, jitter_px, confidence=0.3))
                        )
                    else:
                        records.append((ts, _frame_doc(distractor, ts, rng, jitter_px, confidence)))
                    flip = not flip
                    ts += distractor_gap_ms
                timeout_at = wait_start + line.wait_timeout_ms
                wait_start = timeout_at + line.sing_duration_ms
            t = timeout_at
    records.sort(key=lambda r: r[0])
    ground_truth = {line.index: imitated for line, imitated in zip(script.lines, outcomes)}
    return StreamPlan(records, ground_truth)
