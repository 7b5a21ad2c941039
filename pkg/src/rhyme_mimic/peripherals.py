"""Simulated robot peripherals and the camera stand-in.

Each peripheral node subscribes to its own command topic, models the time
the real device would take (tablet display, audio playback, speech, gesture)
and acks on peripheral/ack.  The replay node feeds recorded keypoint streams
onto pose/frames in place of the camera, and the pose node runs the
recognition pipeline from frames to classifications.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass

from . import bus as busmod
from .clock import EventLoop
from .features import Degenerate, normalize
from .gmm import Classification, GmmClassifier, Rejected, classify
from .skeleton import (
    DEFAULT_CONFIDENCE_THRESHOLD,
    FRAME_PERIOD_MS,
    MalformedDocument,
    Rejection,
    frames_from_document,
    select_person,
    select_upper_body,
)

PERIPHERAL_KINDS = ("display", "audio", "tts", "motion")

PERIPHERAL_TOPICS = {
    "display": busmod.TOPIC_PERIPHERAL_DISPLAY,
    "audio": busmod.TOPIC_PERIPHERAL_AUDIO,
    "tts": busmod.TOPIC_PERIPHERAL_TTS,
    "motion": busmod.TOPIC_PERIPHERAL_MOTION,
}


@dataclass(frozen=True)
class PeripheralAck:
    command_id: str
    status: str  # done | failed
    simulated_duration_ms: int

    def to_payload(self) -> dict:
        return {
            "command_id": self.command_id,
            "status": self.status,
            "simulated_duration_ms": self.simulated_duration_ms,
        }


@dataclass
class LatencyModel:
    """How long each simulated device takes to finish a command.

    Audio uses the command's own duration (the sung line's length); motion
    and the fixed-duration devices fall back to these defaults.  When
    known_resources is set, commands naming anything else fail.
    """

    display_ms: int = 300
    audio_default_ms: int = 3000
    tts_ms: int = 1200
    motion_ms: int = 2000
    known_resources: set[str] | None = None

    def duration_for(self, kind: str, payload: dict) -> int:
        if payload.get("duration_ms"):
            return int(payload["duration_ms"])
        return {
            "display": self.display_ms,
            "audio": self.audio_default_ms,
            "tts": self.tts_ms,
            "motion": self.motion_ms,
        }[kind]

    def resource_known(self, payload: dict) -> bool:
        if self.known_resources is None:
            return True
        resource = payload.get("resource")
        return resource is None or resource in self.known_resources


class PeripheralNode:
    """One simulated device: command in, modeled delay, ack out."""

    def __init__(
        self,
        kind: str,
        bus: busmod.Bus,
        loop: EventLoop,
        latency: LatencyModel | None = None,
        node_id: str | None = None,
    ) -> None:
        if kind not in PERIPHERAL_KINDS:
            raise ValueError(f"unknown peripheral kind {kind!r}")
        self.kind = kind
        self.loop = loop
        self.latency = latency or LatencyModel()
        self.handle = bus.register(node_id or f"peripheral-{kind}")
        self.handled: list[dict] = []
        self.handle.subscribe(PERIPHERAL_TOPICS[kind])
        self.handle.on_deliver = lambda: loop.call_threadsafe(self._drain)

    def _drain(self) -> None:
        while True:
            message = self.handle.try_recv()
            if message is None:
                return
            self._execute(message.payload)

    def _execute(self, payload: dict) -> None:
        self.handled.append(payload)
        command_id = str(payload.get("command_id", ""))
        if not self.latency.resource_known(payload):
            ack = PeripheralAck(command_id, "failed", 0)
            self.handle.publish(busmod.TOPIC_PERIPHERAL_ACK, ack.to_payload())
            return
        duration = self.latency.duration_for(self.kind, payload)
        ack = PeripheralAck(command_id, "done", duration)
        self.loop.call_later(
            duration, lambda: self.handle.publish(busmod.TOPIC_PERIPHERAL_ACK, ack.to_payload())
        )


def run_peripherals(
    bus: busmod.Bus, loop: EventLoop, latency: LatencyModel | None = None
) -> dict[str, PeripheralNode]:
    return {kind: PeripheralNode(kind, bus, loop, latency) for kind in PERIPHERAL_KINDS}


# ---------------------------------------------------------------------------
# camera stand-in


class MalformedStream(Exception):
    pass


@dataclass
class ReplaySource:
    """A recorded keypoint stream and how to play it back.

    rate is a speed multiplier over the recorded timestamps (2.0 plays twice
    as fast); rate 0 emits every frame back-to-back for batch tests.
    """

    records: list[tuple[int, dict]]  # (timestamp_ms, frame document)
    rate: float = 1.0
    loop: bool = False

    def __post_init__(self) -> None:
        if self.rate < 0:
            raise ValueError("rate must be >= 0")
        if self.rate == 0 and self.loop:
            raise ValueError("rate 0 with loop would spin forever")
        last = None
        for ts, _ in self.records:
            if last is not None and ts < last:
                raise MalformedStream(f"stream timestamps decrease: {ts} < {last}")
            last = ts

    @classmethod
    def from_file(cls, path, rate: float = 1.0, loop: bool = False) -> "ReplaySource":
        records = []
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for index, line in enumerate(fh):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        doc = json.loads(line)
                    except json.JSONDecodeError as exc:
                        raise MalformedStream(f"{path}:{index + 1}: {exc}") from exc
                    if not isinstance(doc, dict) or "people" not in doc:
                        raise MalformedStream(f"{path}:{index + 1}: not a frame document")
                    ts = int(doc.get("timestamp_ms", index * FRAME_PERIOD_MS))
                    doc["timestamp_ms"] = ts
                    records.append((ts, doc))
        except OSError as exc:
            raise MalformedStream(f"cannot read stream {path}: {exc}") from exc
        except MalformedDocument as exc:
            raise MalformedStream(str(exc)) from exc
        return cls(records, rate=rate, loop=loop)


class ReplayNode:
    """Publishes a recorded stream on pose/frames at its recorded pacing."""

    def __init__(
        self, source: ReplaySource, bus: busmod.Bus, loop: EventLoop, node_id: str = "camera-replay"
    ) -> None:
        self.source = source
        self.loop = loop
        self.handle = bus.register(node_id)
        self.published = 0
        self._timers = []

    def start(self) -> None:
        self._schedule_pass()

    def _schedule_pass(self) -> None:
        if not self.source.records:
            return
        now = self.loop.clock.now_ms()
        if self.source.rate == 0:
            for _, doc in self.source.records:
                self._timers.append(self.loop.call_soon(lambda d=doc: self._publish(d)))
            return
        # Recorded timestamps are relative to the start of the replay, so a
        # session-aligned recording stays aligned with a session started at
        # the same instant.
        last_due = now
        for ts, doc in self.source.records:
            due = now + int(round(ts / self.source.rate))
            last_due = due
            self._timers.append(self.loop.call_at(due, lambda d=doc: self._publish(d)))
        if self.source.loop:
            period = int(round(33 / self.source.rate)) or 1
            self._timers.append(self.loop.call_at(last_due + period, self._schedule_pass))

    def _publish(self, doc: dict) -> None:
        self.handle.publish(busmod.TOPIC_POSE_FRAMES, doc)
        self.published += 1

    def stop(self) -> None:
        for timer in self._timers:
            timer.cancel()


# ---------------------------------------------------------------------------
# recognition pipeline node


def classify_document(
    classifier: GmmClassifier, doc: dict, threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
):
    """Frames-to-label pipeline for one frame document.

    Returns a Classification, or a skip-reason string: "no_person",
    "low_confidence", "degenerate", "rejected".  The CLI and the pose node
    both run exactly this function.
    """
    frames = frames_from_document(doc)
    frame = select_person(frames)
    if frame is None:
        return "no_person"
    selected = select_upper_body(frame, threshold)
    if isinstance(selected, Rejection):
        return "low_confidence"
    pose = normalize(selected, classifier.reference_indices)
    if isinstance(pose, Degenerate):
        return "degenerate"
    result = classify(classifier, pose)
    if isinstance(result, Rejected):
        return "rejected"
    return result


class PoseNode:
    """Consumes pose/frames, publishes (label, score) on pose/classified."""

    def __init__(
        self,
        bus: busmod.Bus,
        loop: EventLoop,
        classifier: GmmClassifier,
        threshold: float = DEFAULT_CONFIDENCE_THRESHOLD,
        node_id: str = "pose-recognizer",
    ) -> None:
        self.classifier = classifier
        self.threshold = threshold
        self.handle = bus.register(node_id)
        self.skips: Counter = Counter()
        self.classified = 0
        self.handle.subscribe(busmod.TOPIC_POSE_FRAMES)
        self.handle.on_deliver = lambda: loop.call_threadsafe(self._drain)

    def _drain(self) -> None:
        while True:
            message = self.handle.try_recv()
            if message is None:
                return
            self._process(message.payload)

    def _process(self, doc: dict) -> None:
        try:
            result = classify_document(self.classifier, doc, self.threshold)
        except Exception:
            self.skips["unparseable"] += 1
            return
        if isinstance(result, str):
            self.skips[result] += 1
            return
        self.classified += 1
        self.handle.publish(
            busmod.TOPIC_POSE_CLASSIFIED,
            {
                "label": result.label,
                "score": result.score,
                "timestamp_ms": int(doc.get("timestamp_ms", 0)),
            },
        )
