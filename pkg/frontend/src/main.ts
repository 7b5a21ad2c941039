// Console entry point: wires the socket, the view model, and the DOM.

import { WOZ_COMMANDS, WozCommand, WozSender } from "./commands.js";
import { ReconnectingSocket } from "./net.js";
import {
  applyEnvelope,
  appendLog,
  ConsoleState,
  imitatedCount,
  initialState,
  personVisible,
  setConnection,
} from "./state.js";
import { Canvas2D, drawSkeleton } from "./skeleton.js";

function wsUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("ws");
  return fromQuery ?? `ws://${window.location.hostname || "127.0.0.1"}:7002/`;
}

function element<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing element #${id}`);
  return node as T;
}

let state: ConsoleState = initialState();

const statusBanner = element<HTMLDivElement>("status");
const title = element<HTMLDivElement>("title");
const phaseBox = element<HTMLDivElement>("phase");
const lineBox = element<HTMLDivElement>("line");
const progressBox = element<HTMLDivElement>("progress");
const classificationsBox = element<HTMLUListElement>("classifications");
const logBox = element<HTMLUListElement>("log");
const personBox = element<HTMLDivElement>("person");
const canvas = element<HTMLCanvasElement>("skeleton");

function render(): void {
  statusBanner.textContent =
    state.connection === "open" ? "connected" : state.connection === "connecting" ? "connecting..." : "disconnected - retrying";
  statusBanner.className = `banner ${state.connection}`;

  title.textContent = state.scriptTitle ?? "waiting for session";
  if (state.game !== null) {
    const paused = state.game.paused ? " (paused)" : "";
    phaseBox.textContent = `${state.game.phase}${paused} - streak ${state.game.streak}, repeats ${state.game.repeats_used}`;
  } else {
    phaseBox.textContent = "-";
  }
  if (state.line !== null) {
    lineBox.textContent = `line ${state.line.index + 1}/${state.totalLines}: "${state.line.lyric_text}" -> ${state.line.pose_class}`;
  } else {
    lineBox.textContent = "-";
  }
  progressBox.textContent = `${imitatedCount(state)} imitated of ${Object.keys(state.outcomes).length} resolved`;

  classificationsBox.replaceChildren(
    ...state.classifications
      .slice(-12)
      .reverse()
      .map((c) => {
        const item = document.createElement("li");
        item.textContent = `${c.label} (${c.score.toFixed(1)})`;
        return item;
      }),
  );
  logBox.replaceChildren(
    ...state.log
      .slice(-12)
      .reverse()
      .map((entry) => {
        const item = document.createElement("li");
        item.textContent = entry;
        return item;
      }),
  );

  personBox.textContent = personVisible(state, Date.now()) ? "" : "no person";
  const ctx = canvas.getContext("2d") as unknown as Canvas2D | null;
  if (ctx !== null) {
    drawSkeleton(ctx, state.skeleton, { width: canvas.width, height: canvas.height });
  }
}

const socket = new ReconnectingSocket(wsUrl());
socket.onStatus = (status) => {
  state = setConnection(state, status);
  if (status !== "open") state = { ...state, skeleton: null };
  render();
};
socket.onEnvelope = (envelope) => {
  state = applyEnvelope(state, envelope, Date.now());
  render();
};

const sender = new WozSender((text) => socket.send(text));
for (const command of WOZ_COMMANDS) {
  const button = element<HTMLButtonElement>(`woz-${command}`);
  button.addEventListener("click", () => {
    const result = sender.send(command as WozCommand, state.game?.phase ?? null);
    state = appendLog(
      state,
      result.sent ? `sent ${command} (${result.commandId})` : result.reason ?? "not sent",
    );
    render();
  });
}

setInterval(render, 500); // keeps the no-person indicator honest
socket.connect();
render();
