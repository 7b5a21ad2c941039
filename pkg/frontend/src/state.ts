// Console view model.  The console is a pure observer: its state is just the
// most recent envelope per topic (last-write-wins), plus small rolling
// windows for the classification stream and the event log.

import { Envelope, TOPICS } from "./protocol.js";

export const CLASSIFICATION_WINDOW = 40;
export const LOG_WINDOW = 100;
export const NO_PERSON_AFTER_MS = 2000;

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface GameStateView {
  phase: string;
  line_index: number | null;
  streak: number;
  repeats_used: number;
  paused: boolean;
  session_id: string;
}

export interface LineView {
  index: number;
  lyric_text: string;
  pose_class: string;
}

export interface ClassificationView {
  label: string;
  score: number;
  timestamp_ms: number;
}

export interface KeypointView {
  x: number;
  y: number;
  score: number;
}

export interface ConsoleState {
  connection: ConnectionStatus;
  game: GameStateView | null;
  line: LineView | null;
  scriptTitle: string | null;
  totalLines: number;
  outcomes: Record<string, boolean>;
  classifications: ClassificationView[];
  skeleton: KeypointView[] | null;
  lastFrameAtMs: number | null; // console clock, for the no-person indicator
  lastAck: { command_id: string; status: string } | null;
  log: string[];
}

export function initialState(): ConsoleState {
  return {
    connection: "connecting",
    game: null,
    line: null,
    scriptTitle: null,
    totalLines: 0,
    outcomes: {},
    classifications: [],
    skeleton: null,
    lastFrameAtMs: null,
    lastAck: null,
    log: [],
  };
}

export function appendLog(state: ConsoleState, entry: string): ConsoleState {
  const log = [...state.log, entry];
  if (log.length > LOG_WINDOW) log.splice(0, log.length - LOG_WINDOW);
  return { ...state, log };
}

export function setConnection(state: ConsoleState, connection: ConnectionStatus): ConsoleState {
  return { ...state, connection };
}

function parseSkeleton(payload: Record<string, unknown>): KeypointView[] | null {
  const people = payload.people;
  if (!Array.isArray(people) || people.length === 0) return null;
  const first = people[0] as Record<string, unknown>;
  const flat = first?.pose_keypoints_2d;
  if (!Array.isArray(flat) || flat.length % 3 !== 0) return null;
  const points: KeypointView[] = [];
  for (let i = 0; i < flat.length; i += 3) {
    points.push({
      x: Number(flat[i]),
      y: Number(flat[i + 1]),
      score: Number(flat[i + 2]),
    });
  }
  return points;
}

export function applyEnvelope(state: ConsoleState, envelope: Envelope, nowMs: number): ConsoleState {
  switch (envelope.topic) {
    case TOPICS.gameState: {
      const payload = envelope.payload;
      return {
        ...state,
        game: (payload.state as GameStateView) ?? null,
        line: (payload.line as LineView | null) ?? null,
        scriptTitle: (payload.script_title as string) ?? state.scriptTitle,
        totalLines: (payload.total_lines as number) ?? state.totalLines,
        outcomes: (payload.outcomes as Record<string, boolean>) ?? state.outcomes,
      };
    }
    case TOPICS.poseClassified: {
      const entry: ClassificationView = {
        label: String(envelope.payload.label ?? ""),
        score: Number(envelope.payload.score ?? 0),
        timestamp_ms: Number(envelope.payload.timestamp_ms ?? 0),
      };
      const classifications = [...state.classifications, entry];
      if (classifications.length > CLASSIFICATION_WINDOW) {
        classifications.splice(0, classifications.length - CLASSIFICATION_WINDOW);
      }
      return { ...state, classifications };
    }
    case TOPICS.poseFrames: {
      const skeleton = parseSkeleton(envelope.payload);
      return { ...state, skeleton, lastFrameAtMs: skeleton ? nowMs : state.lastFrameAtMs };
    }
    case TOPICS.peripheralAck: {
      return {
        ...state,
        lastAck: {
          command_id: String(envelope.payload.command_id ?? ""),
          status: String(envelope.payload.status ?? ""),
        },
      };
    }
    default:
      return state;
  }
}

export function personVisible(state: ConsoleState, nowMs: number): boolean {
  return state.lastFrameAtMs !== null && nowMs - state.lastFrameAtMs <= NO_PERSON_AFTER_MS;
}

export function imitatedCount(state: ConsoleState): number {
  return Object.values(state.outcomes).filter(Boolean).length;
}
