"""The imitation-game engine.

The robot sings a line while gesturing and showing a picture, then waits for
the child to imitate the gesture.  A detected imitation (a streak of
consecutive matching pose classifications) earns encouragement and the next
line; a timeout re-sings the line to remind the child, and once the repeat
budget is spent the game moves on to keep the child's interest.  A hidden
operator can override any of this at will.

The core is a pure transition function, `step`: replaying a session log's
events from Idle reproduces the exact state and command trace.
"""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Sequence, Union


class GameError(Exception):
    pass


class SessionActive(GameError):
    """start() called while a session is already running."""


class IncompleteSession(GameError):
    """Summary requested for a log that never reached Finished."""


class Phase(Enum):
    IDLE = "idle"
    SINGING = "singing"
    WAITING = "waiting_for_imitation"
    ENCOURAGING = "encouraging"
    FINISHED = "finished"


class WozCommand(Enum):
    REPEAT_LINE = "RepeatLine"
    NEXT_LINE = "NextLine"
    MARK_SUCCESS = "MarkSuccess"
    PAUSE = "Pause"
    RESUME = "Resume"
    ABORT = "Abort"


# ---------------------------------------------------------------------------
# script


@dataclass(frozen=True)
class RhymeLine:
    index: int
    lyric_text: str
    pose_class: str
    audio_ref: str
    image_ref: str
    sing_duration_ms: int = 3000
    wait_timeout_ms: int = 10000
    encourage_text: str = "Well done!"

    def __post_init__(self) -> None:
        if self.sing_duration_ms <= 0 or self.wait_timeout_ms <= 0:
            raise ValueError(f"line {self.index}: durations must be positive")


@dataclass(frozen=True)
class RhymeScript:
    title: str
    lines: tuple[RhymeLine, ...]
    repeat_limit: int = 1
    match_streak: int = 5
    mobile_robot: bool = False  # forwarded to the motion peripheral

    def __post_init__(self) -> None:
        object.__setattr__(self, "lines", tuple(self.lines))
        if self.repeat_limit < 0:
            raise ValueError("repeat_limit must be >= 0")
        if self.match_streak < 1:
            raise ValueError("match_streak must be >= 1")
        for i, line in enumerate(self.lines):
            if line.index != i:
                raise ValueError(f"line indices must be contiguous from 0; got {line.index} at {i}")

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "repeat_limit": self.repeat_limit,
            "match_streak": self.match_streak,
            "mobile_robot": self.mobile_robot,
            "lines": [
                {
                    "index": l.index,
                    "lyric_text": l.lyric_text,
                    "pose_class": l.pose_class,
                    "audio_ref": l.audio_ref,
                    "image_ref": l.image_ref,
                    "sing_duration_ms": l.sing_duration_ms,
                    "wait_timeout_ms": l.wait_timeout_ms,
                    "encourage_text": l.encourage_text,
                }
                for l in self.lines
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RhymeScript":
        lines = tuple(RhymeLine(**entry) for entry in doc.get("lines", []))
        return cls(
            title=doc.get("title", "untitled"),
            lines=lines,
            repeat_limit=doc.get("repeat_limit", 1),
            match_streak=doc.get("match_streak", 5),
            mobile_robot=doc.get("mobile_robot", False),
        )


def load_script(path) -> RhymeScript:
    return RhymeScript.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_script(script: RhymeScript, path) -> None:
    Path(path).write_text(json.dumps(script.to_dict(), indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# state, events, commands


@dataclass(frozen=True)
class GameState:
    phase: Phase
    session_id: str
    started_at_ms: int
    line_index: int | None = None
    repeats_used: int = 0
    streak: int = 0
    paused: bool = False
    commands_issued: int = 0
    wait_started_ms: int | None = None  # first wait start for the current line

    def to_dict(self) -> dict:
        return {
            "phase": self.phase.value,
            "session_id": self.session_id,
            "started_at_ms": self.started_at_ms,
            "line_index": self.line_index,
            "repeats_used": self.repeats_used,
            "streak": self.streak,
            "paused": self.paused,
        }


@dataclass(frozen=True)
class Start:
    timestamp_ms: int


@dataclass(frozen=True)
class SingingDone:
    timestamp_ms: int
    line_index: int


@dataclass(frozen=True)
class PoseObserved:
    timestamp_ms: int
    label: str
    score: float = 0.0


@dataclass(frozen=True)
class Timeout:
    timestamp_ms: int
    line_index: int


@dataclass(frozen=True)
class EncourageDone:
    timestamp_ms: int
    line_index: int


@dataclass(frozen=True)
class Woz:
    timestamp_ms: int
    command: WozCommand


GameEvent = Union[Start, SingingDone, PoseObserved, Timeout, EncourageDone, Woz]


@dataclass(frozen=True)
class PeripheralCommand:
    kind: str  # display | audio | tts | motion
    command_id: str
    resource: str | None = None
    text: str | None = None
    duration_ms: int | None = None
    gesture: str | None = None
    mobile: bool = False

    def to_payload(self) -> dict:
        return {
            "kind": self.kind,
            "command_id": self.command_id,
            "resource": self.resource,
            "text": self.text,
            "duration_ms": self.duration_ms,
            "gesture": self.gesture,
            "mobile": self.mobile,
        }


@dataclass(frozen=True)
class LineOutcome:
    line_index: int
    imitated: bool
    latency_ms: int | None
    repeats_used: int
    woz_assisted: bool = False


@dataclass(frozen=True)
class LogRecord:
    timestamp_ms: int
    state_before: GameState
    event: GameEvent
    state_after: GameState
    commands: tuple[PeripheralCommand, ...]
    ignored: bool = False
    outcome: LineOutcome | None = None

    def to_dict(self) -> dict:
        event = {"type": type(self.event).__name__}
        event.update(
            {k: (v.value if isinstance(v, Enum) else v) for k, v in vars(self.event).items()}
        )
        return {
            "timestamp_ms": self.timestamp_ms,
            "state_before": self.state_before.to_dict(),
            "event": event,
            "state_after": self.state_after.to_dict(),
            "commands": [c.to_payload() for c in self.commands],
            "ignored": self.ignored,
            "outcome": vars(self.outcome) if self.outcome else None,
        }


# ---------------------------------------------------------------------------
# transitions


def _sing_commands(state: GameState, line: RhymeLine, script: RhymeScript):
    """Display the picture, play the line, make the gesture."""
    base = state.commands_issued
    sid = state.session_id
    commands = (
        PeripheralCommand("display", f"{sid}:{base}", resource=line.image_ref),
        PeripheralCommand(
            "audio", f"{sid}:{base + 1}", resource=line.audio_ref, duration_ms=line.sing_duration_ms
        ),
        PeripheralCommand(
            "motion", f"{sid}:{base + 2}", gesture=line.pose_class, mobile=script.mobile_robot
        ),
    )
    return commands, base + 3


def _tts_command(state: GameState, line: RhymeLine):
    command = PeripheralCommand(
        "tts", f"{state.session_id}:{state.commands_issued}", text=line.encourage_text
    )
    return (command,), state.commands_issued + 1


def _enter_singing(state: GameState, script: RhymeScript, line_index: int, same_line: bool):
    line = script.lines[line_index]
    commands, issued = _sing_commands(state, line, script)
    new = replace(
        state,
        phase=Phase.SINGING,
        line_index=line_index,
        streak=0,
        commands_issued=issued,
        repeats_used=state.repeats_used if same_line else 0,
        wait_started_ms=state.wait_started_ms if same_line else None,
    )
    return new, commands


def _advance(state: GameState, script: RhymeScript):
    """Move to the next line, or finish after the last one."""
    next_index = (state.line_index if state.line_index is not None else -1) + 1
    if next_index >= len(script.lines):
        return replace(state, phase=Phase.FINISHED, streak=0), ()
    return _enter_singing(state, script, next_index, same_line=False)


def _finalize(state: GameState, imitated: bool, now_ms: int, woz: bool = False) -> LineOutcome:
    latency = None
    if imitated and state.wait_started_ms is not None:
        latency = now_ms - state.wait_started_ms
    return LineOutcome(
        line_index=state.line_index,
        imitated=imitated,
        latency_ms=latency,
        repeats_used=state.repeats_used,
        woz_assisted=woz,
    )


def step(state: GameState, event: GameEvent, script: RhymeScript):
    """Apply one event; returns (new state, emitted commands, log record).

    Total over all states: events that make no sense in the current phase
    are ignored (state unchanged) but still logged.
    """
    now = event.timestamp_ms
    new_state, commands, outcome, ignored = _transition(state, event, script, now)
    record = LogRecord(now, state, event, new_state, tuple(commands), ignored, outcome)
    return new_state, tuple(commands), record


def _transition(state: GameState, event: GameEvent, script: RhymeScript, now: int):
    ignored = (state, (), None, True)
    phase = state.phase

    if isinstance(event, Start):
        if phase is not Phase.IDLE:
            return ignored
        if not script.lines:
            return replace(state, phase=Phase.FINISHED), (), None, False
        new, commands = _enter_singing(state, script, 0, same_line=False)
        return new, commands, None, False

    if phase in (Phase.IDLE, Phase.FINISHED):
        return ignored

    if isinstance(event, Woz):
        return _woz_transition(state, event, script, now)

    if state.paused:
        # Timers are frozen and observations are not judged while paused.
        return ignored

    line = script.lines[state.line_index]

    if isinstance(event, SingingDone):
        if phase is not Phase.SINGING or event.line_index != state.line_index:
            return ignored
        wait_started = state.wait_started_ms if state.wait_started_ms is not None else now
        new = replace(state, phase=Phase.WAITING, streak=0, wait_started_ms=wait_started)
        return new, (), None, False

    if isinstance(event, PoseObserved):
        if phase is not Phase.WAITING:
            return ignored
        if event.label != line.pose_class:
            return replace(state, streak=0), (), None, False
        streak = state.streak + 1
        if streak < script.match_streak:
            return replace(state, streak=streak), (), None, False
        outcome = _finalize(replace(state, streak=streak), imitated=True, now_ms=now)
        commands, issued = _tts_command(state, line)
        new = replace(state, phase=Phase.ENCOURAGING, streak=streak, commands_issued=issued)
        return new, commands, outcome, False

    if isinstance(event, Timeout):
        if phase is not Phase.WAITING or event.line_index != state.line_index:
            return ignored
        if state.repeats_used < script.repeat_limit:
            # Re-sing the line to remind the child.
            new, commands = _enter_singing(
                replace(state, repeats_used=state.repeats_used + 1), script, state.line_index, same_line=True
            )
            return new, commands, None, False
        # Budget spent: move on to keep the child engaged.
        outcome = _finalize(state, imitated=False, now_ms=now)
        new, commands = _advance(state, script)
        return new, commands, outcome, False

    if isinstance(event, EncourageDone):
        if phase is not Phase.ENCOURAGING or event.line_index != state.line_index:
            return ignored
        new, commands = _advance(state, script)
        return new, commands, None, False

    return ignored


def _woz_transition(state: GameState, event: Woz, script: RhymeScript, now: int):
    """Operator overrides: they bypass the automatic repeat budget entirely."""
    ignored = (state, (), None, True)
    command = event.command

    if state.paused and command not in (WozCommand.RESUME, WozCommand.ABORT):
        return ignored

    if command is WozCommand.ABORT:
        return replace(state, phase=Phase.FINISHED, paused=False), (), None, False

    if command is WozCommand.PAUSE:
        if state.paused:
            return ignored
        return replace(state, paused=True), (), None, False

    if command is WozCommand.RESUME:
        if not state.paused:
            return ignored
        return replace(state, paused=False), (), None, False

    if command is WozCommand.REPEAT_LINE:
        new, commands = _enter_singing(state, script, state.line_index, same_line=True)
        return new, commands, None, False

    if command is WozCommand.NEXT_LINE:
        outcome = None
        if state.phase in (Phase.SINGING, Phase.WAITING):
            # The line is being skipped before a detected imitation.
            outcome = _finalize(state, imitated=False, now_ms=now, woz=True)
        new, commands = _advance(state, script)
        return new, commands, outcome, False

    if command is WozCommand.MARK_SUCCESS:
        if state.phase not in (Phase.SINGING, Phase.WAITING):
            return ignored
        line = script.lines[state.line_index]
        outcome = _finalize(state, imitated=True, now_ms=now, woz=True)
        commands, issued = _tts_command(state, line)
        new = replace(state, phase=Phase.ENCOURAGING, commands_issued=issued)
        return new, commands, outcome, False

    return ignored


def idle_state(session_id: str, started_at_ms: int) -> GameState:
    return GameState(phase=Phase.IDLE, session_id=session_id, started_at_ms=started_at_ms)


def start_session(script: RhymeScript, session_id: str, now_ms: int):
    """Begin a session: (state, commands, record); empty scripts finish at once."""
    state = idle_state(session_id, now_ms)
    return step(state, Start(timestamp_ms=now_ms), script)


# ---------------------------------------------------------------------------
# session log


class SessionLog:
    """Append-only record of every step; replayable to the final state."""

    def __init__(self) -> None:
        self.records: list[LogRecord] = []

    def append(self, record: LogRecord) -> None:
        self.records.append(record)

    @property
    def outcomes(self) -> list[LineOutcome]:
        return [r.outcome for r in self.records if r.outcome is not None]

    @property
    def final_state(self) -> GameState | None:
        return self.records[-1].state_after if self.records else None

    def events(self) -> list[GameEvent]:
        return [r.event for r in self.records]

    def write_ndjson(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(record.to_dict()) + "\n")


def replay(events: Sequence[GameEvent], script: RhymeScript, session_id: str, started_at_ms: int):
    """Re-run an event sequence from Idle; returns the replayed SessionLog."""
    log = SessionLog()
    state = idle_state(session_id, started_at_ms)
    for event in events:
        state, _, record = step(state, event, script)
        log.append(record)
    return log


@dataclass
class SessionSummary:
    session_id: str
    lines_attempted: int
    imitated_count: int
    mean_latency_ms: float | None
    repeats_per_line: dict[int, int]
    woz_interventions: int
    duration_ms: int

    def to_dict(self) -> dict:
        return {
            "session_id": self.session_id,
            "lines_attempted": self.lines_attempted,
            "imitated_count": self.imitated_count,
            "mean_latency_ms": self.mean_latency_ms,
            "repeats_per_line": {str(k): v for k, v in self.repeats_per_line.items()},
            "woz_interventions": self.woz_interventions,
            "duration_ms": self.duration_ms,
        }


def session_summary(log: SessionLog) -> SessionSummary:
    final = log.final_state
    if final is None or final.phase is not Phase.FINISHED:
        raise IncompleteSession("session log does not end in Finished")
    outcomes = log.outcomes
    latencies = [o.latency_ms for o in outcomes if o.imitated and o.latency_ms is not None]
    woz_count = sum(
        1 for r in log.records if isinstance(r.event, Woz) and not r.ignored
    )
    attempted = {o.line_index for o in outcomes}
    # A line aborted mid-attempt still counts as attempted.
    for record in log.records:
        if record.state_after.line_index is not None and record.state_after.phase in (
            Phase.SINGING,
            Phase.WAITING,
            Phase.ENCOURAGING,
        ):
            attempted.add(record.state_after.line_index)
    first_ts = log.records[0].timestamp_ms
    last_ts = log.records[-1].timestamp_ms
    return SessionSummary(
        session_id=final.session_id,
        lines_attempted=len(attempted),
        imitated_count=sum(1 for o in outcomes if o.imitated),
        mean_latency_ms=(sum(latencies) / len(latencies)) if latencies else None,
        repeats_per_line={o.line_index: o.repeats_used for o in outcomes},
        woz_interventions=woz_count,
        duration_ms=last_ts - first_ts,
    )


# ---------------------------------------------------------------------------
# stateful wrapper used by the runtime


class GameSession:
    """Owns the live state and log; one instance per played session."""

    def __init__(self, script: RhymeScript, session_id: str | None = None) -> None:
        self.script = script
        self.session_id = session_id or uuid.uuid4().hex[:8]
        self.state = idle_state(self.session_id, 0)
        self.log = SessionLog()

    @property
    def active(self) -> bool:
        return self.state.phase not in (Phase.IDLE, Phase.FINISHED)

    def start(self, now_ms: int) -> tuple[PeripheralCommand, ...]:
        if self.active:
            raise SessionActive(f"session {self.session_id} already running")
        self.state = replace(idle_state(self.session_id, now_ms), started_at_ms=now_ms)
        return self.handle(Start(timestamp_ms=now_ms))

    def handle(self, event: GameEvent) -> tuple[PeripheralCommand, ...]:
        self.state, commands, record = step(self.state, event, self.script)
        self.log.append(record)
        return commands

    def summary(self) -> SessionSummary:
        return session_summary(self.log)
