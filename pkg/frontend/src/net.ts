// Websocket wrapper with automatic reconnect.  The console is stateless with
// respect to the session, so dropping and reopening the socket never needs
// recovery logic: it resubscribes and renders the next state publication.

import { CONSOLE_SUBSCRIPTIONS, Envelope, makeEnvelope, parseEnvelope, TOPICS } from "./protocol.js";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onerror: (() => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ReconnectingSocketOptions {
  factory?: SocketFactory;
  baseBackoffMs?: number;
  maxBackoffMs?: number;
  schedule?: (fn: () => void, delayMs: number) => unknown;
}

export class ReconnectingSocket {
  onEnvelope: ((envelope: Envelope) => void) | null = null;
  onStatus: ((status: "connecting" | "open" | "closed") => void) | null = null;

  private socket: SocketLike | null = null;
  private attempts = 0;
  private closed = false;
  private factory: SocketFactory;
  private baseBackoffMs: number;
  private maxBackoffMs: number;
  private schedule: (fn: () => void, delayMs: number) => unknown;

  constructor(private url: string, options: ReconnectingSocketOptions = {}) {
    this.factory = options.factory ?? ((u) => new WebSocket(u) as unknown as SocketLike);
    this.baseBackoffMs = options.baseBackoffMs ?? 500;
    this.maxBackoffMs = options.maxBackoffMs ?? 10000;
    this.schedule = options.schedule ?? ((fn, delay) => setTimeout(fn, delay));
  }

  connect(): void {
    if (this.closed) return;
    this.onStatus?.("connecting");
    const socket = this.factory(this.url);
    this.socket = socket;
    socket.onopen = () => {
      this.attempts = 0;
      for (const topic of CONSOLE_SUBSCRIPTIONS) {
        socket.send(makeEnvelope(TOPICS.subscribe, { topic }));
      }
      this.onStatus?.("open");
    };
    socket.onmessage = (event) => {
      const envelope = parseEnvelope(String(event.data));
      if (envelope !== null) this.onEnvelope?.(envelope);
    };
    socket.onerror = () => {
      // onclose follows; nothing to do here
    };
    socket.onclose = () => {
      this.socket = null;
      if (this.closed) return;
      this.onStatus?.("closed");
      const backoff = Math.min(this.baseBackoffMs * 2 ** this.attempts, this.maxBackoffMs);
      this.attempts += 1;
      this.schedule(() => this.connect(), backoff);
    };
  }

  send(text: string): boolean {
    if (this.socket === null) return false;
    try {
      this.socket.send(text);
      return true;
    } catch {
      return false;
    }
  }

  close(): void {
    this.closed = true;
    this.socket?.close();
    this.socket = null;
  }
}
