/**
 * Session state for the live view, kept as one plain object mutated by a
 * handful of small transition functions.  Two invariants hold after every
 * transition: `history` stays ordered by payload timestamp, and `current`
 * is always the newest entry, so the headline diagnosis and the history
 * panel can never disagree even when the network reorders replies.
 */

import type { FramePrediction } from "./types";

export type ConnectionStatus =
  | "idle"
  | "connecting"
  | "live"
  | "reconnecting"
  | "stopped"
  | "no-camera";

export const HISTORY_LIMIT = 200;

export interface UiSessionState {
  status: ConnectionStatus;
  session: string | null;
  current: FramePrediction | null;
  /** Local clock (ms) when `current` arrived; drives the staleness badge. */
  currentAt: number;
  history: FramePrediction[];
  heatmapEnabled: boolean;
  overlayAlpha: number;
  droppedFrames: number;
  protocolErrors: number;
}

export function initialState(): UiSessionState {
  return {
    status: "idle",
    session: null,
    current: null,
    currentAt: 0,
    history: [],
    heatmapEnabled: false,
    overlayAlpha: 0.5,
    droppedFrames: 0,
    protocolErrors: 0,
  };
}

/**
 * Insert a prediction preserving timestamp order.  A late arrival lands in
 * the middle of history but does not displace a newer `current`.
 */
export function applyPrediction(
  state: UiSessionState,
  prediction: FramePrediction,
  nowMs: number
): void {
  let i = state.history.length;
  while (i > 0 && state.history[i - 1].timestamp > prediction.timestamp) {
    i -= 1;
  }
  state.history.splice(i, 0, prediction);
  if (state.history.length > HISTORY_LIMIT) {
    state.history.splice(0, state.history.length - HISTORY_LIMIT);
  }
  if (state.current === null || prediction.timestamp >= state.current.timestamp) {
    state.current = prediction;
    state.currentAt = nowMs;
  }
  state.session = prediction.session;
}

export function applyDrop(state: UiSessionState, dropped: number): void {
  state.droppedFrames += dropped;
}

export function noteProtocolError(state: UiSessionState): void {
  state.protocolErrors += 1;
}

export function setStatus(state: UiSessionState, status: ConnectionStatus): void {
  state.status = status;
}
