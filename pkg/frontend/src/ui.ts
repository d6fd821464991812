/** Small render helpers for the status line, staleness badge, and banners. */

import type { ConnectionStatus, UiSessionState } from "./state";

export const STALE_AFTER_MS = 1_000;

const STATUS_TEXT: Record<ConnectionStatus, string> = {
  idle: "idle",
  connecting: "connecting...",
  live: "live",
  reconnecting: "connection lost, retrying...",
  stopped: "stopped",
  "no-camera": "camera unavailable",
};

export function formatAge(ageMs: number): string {
  if (ageMs < STALE_AFTER_MS) return "live";
  const s = ageMs / 1_000;
  return s < 10 ? `${s.toFixed(1)}s ago` : `${Math.round(s)}s ago`;
}

export function renderStatus(el: HTMLElement, status: ConnectionStatus): void {
  el.textContent = STATUS_TEXT[status];
  el.dataset.status = status;
}

/**
 * The view never waits on the model: the latest prediction stays up and
 * this badge says how old it is once it passes the freshness window.
 */
export function renderStaleness(
  el: HTMLElement,
  state: UiSessionState,
  nowMs: number
): void {
  if (state.current === null) {
    el.textContent = "no prediction yet";
    el.classList.remove("stale");
    return;
  }
  const age = nowMs - state.currentAt;
  el.textContent = formatAge(age);
  el.classList.toggle("stale", age >= STALE_AFTER_MS);
}

export function renderHeadline(el: HTMLElement, state: UiSessionState): void {
  if (state.current === null) {
    el.textContent = "--";
    return;
  }
  const p = state.current;
  el.textContent = `${p.top1_class} ${(p.top1_probability * 100).toFixed(1)}%`;
}

export function renderBlurryBanner(el: HTMLElement, blurry: boolean): void {
  el.style.display = blurry ? "block" : "none";
}

export function renderCounters(el: HTMLElement, state: UiSessionState): void {
  const latency = state.current ? `${state.current.latency_ms.toFixed(0)} ms` : "--";
  el.textContent =
    `latency ${latency} | dropped ${state.droppedFrames}` +
    (state.protocolErrors ? ` | bad messages ${state.protocolErrors}` : "");
}
