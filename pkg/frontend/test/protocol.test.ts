import { describe, expect, it } from "vitest";

import { makeEnvelope, parseEnvelope, TOPICS } from "../src/protocol.js";

describe("envelope codec", () => {
  it("round-trips through makeEnvelope", () => {
    const text = makeEnvelope(TOPICS.wozCommands, { command: "Pause", command_id: "k1" });
    const envelope = parseEnvelope(text);
    expect(envelope).not.toBeNull();
    expect(envelope!.topic).toBe("woz/commands");
    expect(envelope!.payload).toEqual({ command: "Pause", command_id: "k1" });
  });

  it("accepts bridge-shaped envelopes", () => {
    const envelope = parseEnvelope(
      JSON.stringify({
        topic: "game/state",
        seq: 7,
        timestamp_ms: 123,
        node_id: "game-engine",
        payload: { state: { phase: "singing" } },
      }),
    );
    expect(envelope!.seq).toBe(7);
    expect(envelope!.node_id).toBe("game-engine");
  });

  it("rejects garbage", () => {
    expect(parseEnvelope("not json")).toBeNull();
    expect(parseEnvelope("42")).toBeNull();
    expect(parseEnvelope(JSON.stringify({ payload: {} }))).toBeNull();
    expect(parseEnvelope(JSON.stringify({ topic: "t", payload: [] }))).toBeNull();
    expect(parseEnvelope(JSON.stringify({ topic: "", payload: {} }))).toBeNull();
  });
});
