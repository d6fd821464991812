/**
 * Frame streamer: owns the /stream WebSocket, the reconnect loop, and the
 * send-rate governor.  The capture loop calls `offerFrame` as fast as it
 * likes; only the newest unsent frame is kept, so a stall never builds a
 * queue of stale frames.  The socket, clock, and timers are injectable,
 * which keeps every branch reachable from plain unit tests.
 */

import { Backoff } from "./backoff";
import type { ConnectionStatus } from "./state";
import { RateController } from "./throttle";
import { parseServerMessage, type FramePrediction } from "./types";

export interface SocketLike {
  binaryType: string;
  send(data: ArrayBuffer): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export function browserSocketFactory(url: string): SocketLike {
  const sock = new WebSocket(url);
  sock.binaryType = "arraybuffer";
  return sock as unknown as SocketLike;
}

export interface StreamerOptions {
  url: string;
  targetFps?: number;
  socketFactory?: SocketFactory;
  now?: () => number;
  schedule?: (fn: () => void, ms: number) => unknown;
  cancel?: (handle: unknown) => void;
  backoff?: Backoff;
  onPrediction: (p: FramePrediction) => void;
  onDrop?: (dropped: number) => void;
  onServerError?: (message: string) => void;
  onProtocolError?: (raw: string) => void;
  onStatus?: (status: ConnectionStatus) => void;
}

export class FrameStreamer {
  readonly controller: RateController;

  private readonly url: string;
  private readonly factory: SocketFactory;
  private readonly now: () => number;
  private readonly schedule: (fn: () => void, ms: number) => unknown;
  private readonly cancel: (handle: unknown) => void;
  private readonly backoff: Backoff;
  private readonly hooks: StreamerOptions;

  private socket: SocketLike | null = null;
  private open = false;
  private stopped = true;
  private pending: ArrayBuffer | null = null;
  private flushTimer: unknown = null;
  private reconnectTimer: unknown = null;

  constructor(options: StreamerOptions) {
    this.hooks = options;
    this.url = options.url;
    this.factory = options.socketFactory ?? browserSocketFactory;
    this.now = options.now ?? (() => Date.now());
    this.schedule = options.schedule ?? ((fn, ms) => setTimeout(fn, ms));
    this.cancel = options.cancel ?? ((h) => clearTimeout(h as number));
    this.backoff = options.backoff ?? new Backoff();
    this.controller = new RateController(options.targetFps ?? 10);
  }

  start(): void {
    if (!this.stopped) return;
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    this.clearTimers();
    this.pending = null;
    if (this.socket) {
      const sock = this.socket;
      this.socket = null;
      this.open = false;
      sock.onclose = null;
      sock.close();
    }
    this.setStatus("stopped");
  }

  /** Hand over a captured frame; it replaces any frame still waiting to go. */
  offerFrame(frame: ArrayBuffer): void {
    if (this.stopped) return;
    this.pending = frame;
    this.tryFlush();
  }

  private connect(): void {
    this.setStatus(this.backoff.attempts === 0 ? "connecting" : "reconnecting");
    const sock = this.factory(this.url);
    sock.binaryType = "arraybuffer";
    this.socket = sock;
    this.open = false;

    sock.onopen = () => {
      if (sock !== this.socket) return;
      this.open = true;
      this.backoff.reset();
      this.setStatus("live");
      this.tryFlush();
    };
    sock.onmessage = (ev) => {
      if (sock !== this.socket || typeof ev.data !== "string") return;
      this.handleText(ev.data);
    };
    sock.onerror = () => {
      // close always follows; reconnect logic lives there
    };
    sock.onclose = () => {
      if (sock !== this.socket) return;
      this.socket = null;
      this.open = false;
      this.controller.abandonInFlight();
      if (!this.stopped) this.scheduleReconnect();
    };
  }

  private handleText(raw: string): void {
    const msg = parseServerMessage(raw);
    if (msg === null) {
      this.hooks.onProtocolError?.(raw);
      return; // skip the frame; never let a bad payload into state
    }
    if (msg.kind === "prediction") {
      this.controller.markReply();
      this.hooks.onPrediction(msg.prediction);
      this.tryFlush();
    } else if (msg.kind === "drop") {
      this.controller.markDropped();
      this.hooks.onDrop?.(msg.dropped);
    } else {
      this.controller.markReply();
      this.hooks.onServerError?.(msg.message);
      this.tryFlush();
    }
  }

  private tryFlush(): void {
    if (this.stopped || !this.open || !this.socket || this.pending === null) {
      return;
    }
    const now = this.now();
    if (this.controller.shouldSend(now)) {
      const frame = this.pending;
      this.pending = null;
      try {
        this.socket.send(frame);
        this.controller.markSent(now);
      } catch {
        this.pending = frame; // socket died mid-send; onclose will reconnect
      }
      return;
    }
    if (!this.controller.inFlight && this.flushTimer === null) {
      const wait = Math.max(1, this.controller.msUntilReady(now));
      this.flushTimer = this.schedule(() => {
        this.flushTimer = null;
        this.tryFlush();
      }, wait);
    }
  }

  private scheduleReconnect(): void {
    this.setStatus("reconnecting");
    const delay = this.backoff.nextDelay();
    this.reconnectTimer = this.schedule(() => {
      this.reconnectTimer = null;
      if (!this.stopped) this.connect();
    }, delay);
  }

  private clearTimers(): void {
    if (this.flushTimer !== null) {
      this.cancel(this.flushTimer);
      this.flushTimer = null;
    }
    if (this.reconnectTimer !== null) {
      this.cancel(this.reconnectTimer);
      this.reconnectTimer = null;
    }
  }

  private setStatus(status: ConnectionStatus): void {
    this.hooks.onStatus?.(status);
  }
}
