"""Wires the node graph together: bus, pose pipeline, peripherals, engine.

The engine node is the master: it drives the game state machine from bus
traffic (classifications, acks, operator commands), owns the imitation
timeout timers, and publishes peripheral commands plus the live game state.
Everything runs on one event loop, so a virtual-clock session is fully
deterministic.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field

from . import bus as busmod
from . import game
from .clock import EventLoop, RealClock, VirtualClock
from .gmm import GmmClassifier
from .peripherals import LatencyModel, PeripheralNode, PoseNode, ReplayNode, ReplaySource, run_peripherals
from .skeleton import DEFAULT_CONFIDENCE_THRESHOLD

logger = logging.getLogger(__name__)


class EngineNode:
    """Game engine as a bus node; all inputs arrive serialized via the loop."""

    def __init__(
        self,
        bus: busmod.Bus,
        loop: EventLoop,
        script: game.RhymeScript,
        session_id: str | None = None,
        state_publish_interval_ms: int = 1000,
        on_finished=None,
    ) -> None:
        self.bus = bus
        self.loop = loop
        self.script = script
        self.session = game.GameSession(script, session_id)
        self.state_publish_interval_ms = state_publish_interval_ms
        self.on_finished = on_finished
        self.diagnostics: Counter = Counter()

        self.handle = bus.register("game-engine")
        for topic in (
            busmod.TOPIC_POSE_CLASSIFIED,
            busmod.TOPIC_PERIPHERAL_ACK,
            busmod.TOPIC_WOZ_COMMANDS,
        ):
            self.handle.subscribe(topic)
        self.handle.on_deliver = lambda: loop.call_threadsafe(self._drain)

        self._wait_timer = None
        self._wait_remaining_ms: int | None = None
        self._heartbeat_timer = None
        self._pending_audio: tuple[str, int] | None = None  # (command_id, line_index)
        self._pending_tts: tuple[str, int] | None = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        now = self.loop.clock.now_ms()
        commands = self.session.start(now)
        self._after_step(self.session.log.records[-1], commands)
        self._arm_heartbeat()

    def abort(self) -> None:
        self.loop.call_threadsafe(
            lambda: self._apply(game.Woz(self.loop.clock.now_ms(), game.WozCommand.ABORT))
        )

    # -- bus input ----------------------------------------------------------

    def _drain(self) -> None:
        while True:
            message = self.handle.try_recv()
            if message is None:
                return
            self._on_message(message)

    def _on_message(self, message: busmod.BusMessage) -> None:
        if self.session.state.phase is game.Phase.FINISHED:
            return
        now = self.loop.clock.now_ms()
        if message.topic == busmod.TOPIC_POSE_CLASSIFIED:
            # Observations only matter while actually waiting for the child.
            if self.session.state.phase is game.Phase.WAITING and not self.session.state.paused:
                self._apply(
                    game.PoseObserved(
                        now,
                        str(message.payload.get("label", "")),
                        float(message.payload.get("score", 0.0)),
                    )
                )
            else:
                self.diagnostics["pose_outside_wait"] += 1
        elif message.topic == busmod.TOPIC_PERIPHERAL_ACK:
            self._on_ack(message.payload, now)
        elif message.topic == busmod.TOPIC_WOZ_COMMANDS:
            self._on_woz(message.payload, now)

    def _on_ack(self, payload: dict, now: int) -> None:
        command_id = str(payload.get("command_id", ""))
        status = str(payload.get("status", "done"))
        if status != "done":
            self.diagnostics["failed_acks"] += 1
        if self._pending_audio and command_id == self._pending_audio[0]:
            line_index = self._pending_audio[1]
            self._pending_audio = None
            # A failed audio still ends the singing phase; stalling the game
            # on a broken speaker would be worse.
            self._apply(game.SingingDone(now, line_index))
        elif self._pending_tts and command_id == self._pending_tts[0]:
            line_index = self._pending_tts[1]
            self._pending_tts = None
            self._apply(game.EncourageDone(now, line_index))
        else:
            self.diagnostics["untracked_acks"] += 1

    def _on_woz(self, payload: dict, now: int) -> None:
        name = str(payload.get("command", ""))
        try:
            command = game.WozCommand(name)
        except ValueError:
            self.diagnostics["unknown_woz_commands"] += 1
            return
        self._apply(game.Woz(now, command))

    # -- stepping ------------------------------------------------------------

    def _apply(self, event: game.GameEvent) -> None:
        before = self.session.state
        commands = self.session.handle(event)
        record = self.session.log.records[-1]
        self._manage_timers(before, self.session.state)
        self._after_step(record, commands)

    def _after_step(self, record: game.LogRecord, commands) -> None:
        for command in commands:
            topic = f"peripheral/{command.kind}"
            self.handle.publish(topic, command.to_payload())
            if command.kind == "audio":
                self._pending_audio = (command.command_id, self.session.state.line_index)
            elif command.kind == "tts":
                self._pending_tts = (command.command_id, self.session.state.line_index)
        self.handle.publish(busmod.TOPIC_GAME_EVENTS, record.to_dict())
        self._publish_state()
        if self.session.state.phase is game.Phase.FINISHED:
            self._cancel_wait_timer()
            if self._heartbeat_timer is not None:
                self._heartbeat_timer.cancel()
            if self.on_finished is not None:
                self.on_finished()

    def _publish_state(self) -> None:
        state = self.session.state
        line = None
        if state.line_index is not None and state.line_index < len(self.script.lines):
            l = self.script.lines[state.line_index]
            line = {"index": l.index, "lyric_text": l.lyric_text, "pose_class": l.pose_class}
        outcomes = {str(o.line_index): o.imitated for o in self.session.log.outcomes}
        self.handle.publish(
            busmod.TOPIC_GAME_STATE,
            {
                "state": state.to_dict(),
                "line": line,
                "script_title": self.script.title,
                "total_lines": len(self.script.lines),
                "outcomes": outcomes,
            },
        )

    def _arm_heartbeat(self) -> None:
        if self.session.state.phase is game.Phase.FINISHED:
            return
        self._heartbeat_timer = self.loop.call_later(self.state_publish_interval_ms, self._heartbeat)

    def _heartbeat(self) -> None:
        self._publish_state()
        self._arm_heartbeat()

    # -- imitation timeout ----------------------------------------------------

    def _manage_timers(self, before: game.GameState, after: game.GameState) -> None:
        was_waiting = before.phase is game.Phase.WAITING and not before.paused
        now_waiting = after.phase is game.Phase.WAITING and not after.paused
        if was_waiting and not now_waiting:
            if after.phase is game.Phase.WAITING and after.paused:
                self._freeze_wait_timer()
            else:
                self._cancel_wait_timer()
        elif now_waiting and not was_waiting:
            if before.phase is game.Phase.WAITING and before.paused and self._wait_remaining_ms is not None:
                remaining = self._wait_remaining_ms
                self._wait_remaining_ms = None
            else:
                remaining = self.script.lines[after.line_index].wait_timeout_ms
            self._arm_wait_timer(after.line_index, remaining)

    def _arm_wait_timer(self, line_index: int, delay_ms: int) -> None:
        self._cancel_wait_timer()
        due = self.loop.clock.now_ms() + delay_ms
        self._wait_timer = (self.loop.call_at(due, lambda: self._fire_timeout(line_index)), due)

    def _freeze_wait_timer(self) -> None:
        if self._wait_timer is not None:
            timer, due = self._wait_timer
            timer.cancel()
            self._wait_remaining_ms = max(due - self.loop.clock.now_ms(), 0)
            self._wait_timer = None

    def _cancel_wait_timer(self) -> None:
        if self._wait_timer is not None:
            self._wait_timer[0].cancel()
            self._wait_timer = None
        self._wait_remaining_ms = None

    def _fire_timeout(self, line_index: int) -> None:
        self._wait_timer = None
        self._apply(game.Timeout(self.loop.clock.now_ms(), line_index))


@dataclass
class RuntimeConfig:
    script: game.RhymeScript
    classifier: GmmClassifier | None = None
    clock_mode: str = "virtual"  # virtual | real
    threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    latency: LatencyModel = field(default_factory=LatencyModel)
    stream: ReplaySource | None = None
    bus_address: tuple[str, int] | None = None
    ws_address: tuple[str, int] | None = None
    session_id: str | None = None
    stop_when_finished: bool = True
    state_publish_interval_ms: int = 1000
    autostart: bool = True

    def __post_init__(self) -> None:
        if self.clock_mode not in ("virtual", "real"):
            raise ValueError(f"clock_mode must be 'virtual' or 'real', got {self.clock_mode!r}")


class Runtime:
    """A full serve-mode node graph in one process."""

    def __init__(self, config: RuntimeConfig) -> None:
        self.config = config
        if config.classifier is not None:
            missing = {l.pose_class for l in config.script.lines} - set(config.classifier.labels)
            if missing:
                raise ValueError(f"classifier does not know the script's poses: {sorted(missing)}")
        self.clock = VirtualClock() if config.clock_mode == "virtual" else RealClock()
        self.loop = EventLoop(self.clock)
        self.bus = busmod.Bus(self.clock)
        self.peripherals: dict[str, PeripheralNode] = run_peripherals(
            self.bus, self.loop, config.latency
        )
        self.pose_node = None
        if config.classifier is not None:
            self.pose_node = PoseNode(self.bus, self.loop, config.classifier, config.threshold)
        self.engine = EngineNode(
            self.bus,
            self.loop,
            config.script,
            session_id=config.session_id,
            state_publish_interval_ms=config.state_publish_interval_ms,
            on_finished=self._on_finished,
        )
        self.replay = None
        if config.stream is not None:
            self.replay = ReplayNode(config.stream, self.bus, self.loop)
        self.tcp_server = None
        if config.bus_address is not None:
            self.tcp_server = busmod.serve_tcp(self.bus, *config.bus_address)
        self.ws_server = None
        if config.ws_address is not None:
            from .ws import WsBridgeServer

            self.ws_server = WsBridgeServer(self.bus, *config.ws_address)

    def _on_finished(self) -> None:
        if self.config.stop_when_finished:
            self.loop.stop()

    @property
    def session(self) -> game.GameSession:
        return self.engine.session

    def start(self) -> None:
        if self.replay is not None:
            self.replay.start()
        if self.config.autostart:
            self.engine.start()

    def run(self) -> None:
        """Start the graph and process events until the session ends.

        Serve mode (stop_when_finished=False, real clock) blocks until
        stop() or abort() is called.
        """
        self.start()
        block_forever = self.config.clock_mode == "real" and not self.config.stop_when_finished
        self.loop.run(until_idle=not block_forever)

    def abort(self) -> None:
        self.engine.abort()

    def stop(self) -> None:
        self.loop.stop()

    def close(self) -> None:
        if self.tcp_server is not None:
            self.tcp_server.close()
        if self.ws_server is not None:
            self.ws_server.close()
        self.bus.close()
