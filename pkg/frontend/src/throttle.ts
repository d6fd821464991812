/**
 * Send-rate governor for the frame stream.
 *
 * Two rules keep the client from flooding a slow model:
 *
 *  1. At most one frame is in flight at a time.  The next send is only
 *     allowed after the previous reply, so the send rate self-paces to
 *     whatever the server can actually sustain.
 *  2. A minimum interval between sends caps the rate at the target FPS
 *     even when replies are instant.  Server drop notices stretch that
 *     interval (the server told us it threw frames away); clean replies
 *     relax it back toward the target.
 *
 * A reply that never comes would otherwise wedge rule 1 forever, so an
 * in-flight frame older than `replyTimeoutMs` is written off.
 */
export class RateController {
  private minIntervalMs: number;
  private readonly floorMs: number;
  private lastSentAt = -Infinity;
  private inFlightSince: number | null = null;

  constructor(
    targetFps: number,
    private readonly maxIntervalMs = 2_000,
    private readonly replyTimeoutMs = 5_000
  ) {
    if (!(targetFps > 0)) {
      throw new Error(`target FPS must be positive, got ${targetFps}`);
    }
    this.floorMs = 1_000 / targetFps;
    this.minIntervalMs = this.floorMs;
  }

  get inFlight(): boolean {
    return this.inFlightSince !== null;
  }

  get currentIntervalMs(): number {
    return this.minIntervalMs;
  }

  shouldSend(nowMs: number): boolean {
    if (this.inFlightSince !== null) {
      if (nowMs - this.inFlightSince < this.replyTimeoutMs) {
        return false;
      }
      this.inFlightSince = null; // reply lost; do not wait forever
    }
    return nowMs - this.lastSentAt >= this.minIntervalMs;
  }

  /** Milliseconds until the interval rule would allow a send; 0 if now. */
  msUntilReady(nowMs: number): number {
    return Math.max(0, this.minIntervalMs - (nowMs - this.lastSentAt));
  }

  markSent(nowMs: number): void {
    this.lastSentAt = nowMs;
    this.inFlightSince = nowMs;
  }

  markReply(): void {
    this.inFlightSince = null;
    // Recover gently: a burst of drop notices should not pin us slow.
    this.minIntervalMs = Math.max(this.floorMs, this.minIntervalMs * 0.9);
  }

  markDropped(): void {
    this.minIntervalMs = Math.min(this.maxIntervalMs, this.minIntervalMs * 1.5);
  }

  /** The socket died; whatever was in flight will never be answered. */
  abandonInFlight(): void {
    this.inFlightSince = null;
  }
}
