// Wizard-of-Oz command path.  Buttons map one-to-one onto the engine's
// command repertoire; rapid double clicks are deduplicated client-side and
// every sent envelope carries a unique command_id.

import { makeEnvelope, TOPICS } from "./protocol.js";

export type WozCommand =
  | "RepeatLine"
  | "NextLine"
  | "MarkSuccess"
  | "Pause"
  | "Resume"
  | "Abort";

export const WOZ_COMMANDS: WozCommand[] = [
  "RepeatLine",
  "NextLine",
  "MarkSuccess",
  "Pause",
  "Resume",
  "Abort",
];

export interface SendResult {
  sent: boolean;
  reason?: string;
  commandId?: string;
}

export class WozSender {
  private lastSent = new Map<WozCommand, number>();
  private counter = 0;

  constructor(
    private transmit: (text: string) => boolean,
    private cooldownMs = 300,
    private now: () => number = () => Date.now(),
  ) {}

  send(command: WozCommand, gamePhase: string | null): SendResult {
    if (gamePhase === "finished" || gamePhase === null) {
      return { sent: false, reason: `${command} ignored: no active session` };
    }
    const at = this.now();
    const last = this.lastSent.get(command);
    if (last !== undefined && at - last < this.cooldownMs) {
      return { sent: false, reason: `${command} suppressed: duplicate click` };
    }
    this.counter += 1;
    const commandId = `console-${at}-${this.counter}`;
    const ok = this.transmit(
      makeEnvelope(TOPICS.wozCommands, { command, command_id: commandId }),
    );
    if (!ok) {
      return { sent: false, reason: `${command} not sent: socket closed` };
    }
    this.lastSent.set(command, at);
    return { sent: true, commandId };
  }
}
