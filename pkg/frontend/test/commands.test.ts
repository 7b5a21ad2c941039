import { describe, expect, it } from "vitest";

import { WozSender } from "../src/commands.js";
import { parseEnvelope } from "../src/protocol.js";

function harness(cooldownMs = 300) {
  const sent: string[] = [];
  let clock = 0;
  const sender = new WozSender((text) => (sent.push(text), true), cooldownMs, () => clock);
  return {
    sent,
    sender,
    tick: (ms: number) => {
      clock += ms;
    },
  };
}

describe("woz command sender", () => {
  it("one click produces exactly one envelope with a unique id", () => {
    const { sent, sender, tick } = harness();
    const first = sender.send("RepeatLine", "waiting_for_imitation");
    tick(400);
    const second = sender.send("RepeatLine", "waiting_for_imitation");
    expect(first.sent && second.sent).toBe(true);
    expect(sent.length).toBe(2);
    expect(first.commandId).not.toBe(second.commandId);
    const envelope = parseEnvelope(sent[0])!;
    expect(envelope.topic).toBe("woz/commands");
    expect(envelope.payload.command).toBe("RepeatLine");
    expect(envelope.payload.command_id).toBe(first.commandId);
  });

  it("suppresses rapid double clicks", () => {
    const { sent, sender, tick } = harness();
    expect(sender.send("NextLine", "singing").sent).toBe(true);
    tick(100); // inside the cooldown
    const dup = sender.send("NextLine", "singing");
    expect(dup.sent).toBe(false);
    expect(dup.reason).toContain("duplicate");
    expect(sent.length).toBe(1);
  });

  it("different commands are not cross-suppressed", () => {
    const { sent, sender, tick } = harness();
    sender.send("Pause", "singing");
    tick(10);
    expect(sender.send("Resume", "singing").sent).toBe(true);
    expect(sent.length).toBe(2);
  });

  it("rejects commands when no session is active", () => {
    const { sent, sender } = harness();
    const finished = sender.send("NextLine", "finished");
    const idle = sender.send("NextLine", null);
    expect(finished.sent || idle.sent).toBe(false);
    expect(finished.reason).toContain("no active session");
    expect(sent.length).toBe(0);
  });

  it("reports transport failure", () => {
    let clock = 0;
    const sender = new WozSender(() => false, 300, () => clock);
    const result = sender.send("Abort", "singing");
    expect(result.sent).toBe(false);
    expect(result.reason).toContain("socket closed");
  });
});
