import { describe, expect, it } from "vitest";

import { RateController } from "../src/throttle";

describe("rate controller", () => {
  it("enforces the target-FPS floor between sends", () => {
    const c = new RateController(10); // 100 ms floor
    expect(c.shouldSend(0)).toBe(true);
    c.markSent(0);
    c.markReply();
    expect(c.shouldSend(50)).toBe(false);
    expect(c.msUntilReady(50)).toBe(50);
    expect(c.shouldSend(100)).toBe(true);
  });

  it("blocks while one frame is in flight", () => {
    const c = new RateController(100); // floor far below the reply time
    c.markSent(0);
    expect(c.inFlight).toBe(true);
    expect(c.shouldSend(500)).toBe(false);
    c.markReply();
    expect(c.shouldSend(500)).toBe(true);
  });

  it("stretches the interval on drop notices and relaxes after clean replies", () => {
    const c = new RateController(10);
    expect(c.currentIntervalMs).toBe(100);
    c.markDropped();
    expect(c.currentIntervalMs).toBe(150);
    c.markDropped();
    expect(c.currentIntervalMs).toBe(225);
    for (let i = 0; i < 50; i++) c.markReply();
    expect(c.currentIntervalMs).toBe(100); // back at the floor, not below
  });

  it("caps how slow drop notices can push the rate", () => {
    const c = new RateController(10, 2_000);
    for (let i = 0; i < 30; i++) c.markDropped();
    expect(c.currentIntervalMs).toBe(2_000);
  });

  it("writes off an in-flight frame whose reply never comes", () => {
    const c = new RateController(10, 2_000, 5_000);
    c.markSent(0);
    expect(c.shouldSend(4_999)).toBe(false);
    expect(c.shouldSend(5_000)).toBe(true);
    expect(c.inFlight).toBe(false);
  });

  it("rejects a nonsensical target", () => {
    expect(() => new RateController(0)).toThrow(/positive/);
  });
});
