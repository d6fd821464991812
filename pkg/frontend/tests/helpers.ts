/** Shared fakes: canned payloads, a scriptable socket, and a manual clock. */

import type { SocketLike } from "../src/stream";
import type { FramePrediction } from "../src/types";

export function makePrediction(
  overrides: Partial<FramePrediction> = {}
): FramePrediction {
  return {
    probabilities: [0.8, 0.05, 0.05, 0.02, 0.02, 0.02, 0.02, 0.01, 0.01],
    top1_class: "AOM",
    top1_probability: 0.8,
    latency_ms: 12.5,
    sharpness: 150.0,
    blurry: false,
    timestamp: 1_700_000_000.0,
    session: "s1",
    heatmap_png: null,
    ...overrides,
  };
}

export function predictionJson(
  overrides: Partial<FramePrediction> = {}
): string {
  return JSON.stringify(makePrediction(overrides));
}

export class FakeSocket implements SocketLike {
  binaryType = "";
  sent: ArrayBuffer[] = [];
  closeCalls = 0;
  /** Make the next send() throw, as a browser socket does mid-teardown. */
  failNextSend = false;
  private dead = false;

  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: ArrayBuffer): void {
    if (this.failNextSend) {
      this.failNextSend = false;
      throw new Error("socket is closing");
    }
    if (this.dead) throw new Error("socket is closed");
    this.sent.push(data);
  }

  close(): void {
    this.closeCalls += 1;
    this.dead = true;
    this.onclose?.();
  }

  /** Server side accepted the connection. */
  open(): void {
    this.onopen?.();
  }

  /** Server pushed one text frame. */
  receive(text: string): void {
    this.onmessage?.({ data: text });
  }

  /** Connection dropped without the client asking. */
  breakConnection(): void {
    this.dead = true;
    this.onerror?.();
    this.onclose?.();
  }
}

interface Task {
  at: number;
  fn: () => void;
  id: number;
}

/** Deterministic stand-in for setTimeout plus a monotonic clock. */
export class ManualClock {
  now = 0;
  private tasks: Task[] = [];
  private seq = 0;

  readonly nowFn = () => this.now;

  readonly schedule = (fn: () => void, ms: number): unknown => {
    const id = ++this.seq;
    this.tasks.push({ at: this.now + ms, fn, id });
    return id;
  };

  readonly cancel = (handle: unknown): void => {
    this.tasks = this.tasks.filter((t) => t.id !== handle);
  };

  /** Run due tasks in time order; tasks may schedule further tasks. */
  advance(ms: number): void {
    const target = this.now + ms;
    for (;;) {
      const due = this.tasks
        .filter((t) => t.at <= target)
        .sort((a, b) => a.at - b.at || a.id - b.id)[0];
      if (!due) break;
      this.tasks = this.tasks.filter((t) => t.id !== due.id);
      this.now = due.at;
      due.fn();
    }
    this.now = target;
  }

  get pendingCount(): number {
    return this.tasks.length;
  }
}

export function frameBytes(n = 4): ArrayBuffer {
  return new Uint8Array(Array.from({ length: n }, (_, i) => i + 1)).buffer;
}
