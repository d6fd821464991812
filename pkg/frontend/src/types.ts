/** Wire types for the diagnosis service. Field names match the JSON payloads exactly. */

export interface FramePrediction {
  probabilities: number[];
  top1_class: string;
  top1_probability: number;
  latency_ms: number;
  sharpness: number;
  blurry: boolean;
  timestamp: number;
  session: string;
  heatmap_png: string | null;
}

export interface HealthInfo {
  model: string;
  classes: string[];
  params: number;
  version: string;
}

export type ServerMessage =
  | { kind: "prediction"; prediction: FramePrediction }
  | { kind: "drop"; dropped: number }
  | { kind: "error"; message: string };

function isFiniteNumber(v: unknown): v is number {
  return typeof v === "number" && Number.isFinite(v);
}

function isPrediction(v: Record<string, unknown>): boolean {
  return (
    Array.isArray(v.probabilities) &&
    v.probabilities.length > 0 &&
    v.probabilities.every(isFiniteNumber) &&
    typeof v.top1_class === "string" &&
    isFiniteNumber(v.top1_probability) &&
    isFiniteNumber(v.latency_ms) &&
    isFiniteNumber(v.sharpness) &&
    typeof v.blurry === "boolean" &&
    isFiniteNumber(v.timestamp) &&
    typeof v.session === "string" &&
    (v.heatmap_png === null || v.heatmap_png === undefined ||
      typeof v.heatmap_png === "string")
  );
}

/**
 * Classify one text frame from the stream socket.  Returns null for
 * anything that is not valid JSON or does not match a known shape, so a
 * corrupt message can be logged and skipped without touching state.
 */
export function parseServerMessage(raw: string): ServerMessage | null {
  let value: unknown;
  try {
    value = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    return null;
  }
  const obj = value as Record<string, unknown>;
  if (isFiniteNumber(obj.dropped) && obj.dropped >= 0) {
    return { kind: "drop", dropped: obj.dropped };
  }
  if (typeof obj.error === "string") {
    return { kind: "error", message: obj.error };
  }
  if (isPrediction(obj)) {
    return {
      kind: "prediction",
      prediction: {
        ...(obj as unknown as FramePrediction),
        heatmap_png: (obj.heatmap_png as string | null | undefined) ?? null,
      },
    };
  }
  return null;
}
