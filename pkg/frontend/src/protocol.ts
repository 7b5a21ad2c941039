// Bus envelope schema shared with the websocket bridge: one JSON envelope
// per websocket text message.

export interface Envelope {
  topic: string;
  seq: number;
  timestamp_ms: number;
  node_id: string;
  payload: Record<string, unknown>;
}

export const TOPICS = {
  gameState: "game/state",
  poseClassified: "pose/classified",
  poseFrames: "pose/frames",
  peripheralAck: "peripheral/ack",
  wozCommands: "woz/commands",
  subscribe: "_bus/subscribe",
  welcome: "_bus/welcome",
} as const;

// What a live console watches: game state, the classification stream, the
// (bridge-downsampled) skeleton frames, and peripheral acks.
export const CONSOLE_SUBSCRIPTIONS: string[] = [
  TOPICS.gameState,
  TOPICS.poseClassified,
  TOPICS.poseFrames,
  TOPICS.peripheralAck,
];

export function parseEnvelope(text: string): Envelope | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== "object" || doc === null) return null;
  const record = doc as Record<string, unknown>;
  if (typeof record.topic !== "string" || record.topic.length === 0) return null;
  const payload = record.payload;
  if (typeof payload !== "object" || payload === null || Array.isArray(payload)) return null;
  return {
    topic: record.topic,
    seq: typeof record.seq === "number" ? record.seq : 0,
    timestamp_ms: typeof record.timestamp_ms === "number" ? record.timestamp_ms : 0,
    node_id: typeof record.node_id === "string" ? record.node_id : "",
    payload: payload as Record<string, unknown>,
  };
}

export function makeEnvelope(topic: string, payload: Record<string, unknown>): string {
  return JSON.stringify({ topic, seq: 0, timestamp_ms: 0, node_id: "console", payload });
}
