/**
 * Entry point: wires the camera, the frame streamer, and the render
 * helpers around one state object.  All server values shown on screen are
 * taken from payloads untouched; this file only moves them into the DOM.
 */

import { renderBars } from "./bars";
import { captureFrame, openCamera, CameraError } from "./capture";
import { updateOverlay } from "./overlay";
import {
  applyDrop,
  applyPrediction,
  initialState,
  noteProtocolError,
  setStatus,
  type ConnectionStatus,
} from "./state";
import { FrameStreamer } from "./stream";
import {
  renderBlurryBanner,
  renderCounters,
  renderHeadline,
  renderStaleness,
  renderStatus,
} from "./ui";
import type { HealthInfo } from "./types";

const TARGET_FPS = 10;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

const video = el<HTMLVideoElement>("camera");
const overlayImg = el<HTMLImageElement>("overlay");
const canvas = document.createElement("canvas");

const startBtn = el<HTMLButtonElement>("start");
const stopBtn = el<HTMLButtonElement>("stop");
const heatmapToggle = el<HTMLInputElement>("heatmap-toggle");
const alphaSlider = el<HTMLInputElement>("alpha-slider");
const alphaValue = el<HTMLElement>("alpha-value");

const statusEl = el<HTMLElement>("status");
const stalenessEl = el<HTMLElement>("staleness");
const headlineEl = el<HTMLElement>("headline");
const blurryBanner = el<HTMLElement>("blurry-banner");
const errorBanner = el<HTMLElement>("error-banner");
const barsRoot = el<HTMLElement>("bars");
const countersEl = el<HTMLElement>("counters");
const historyEl = el<HTMLElement>("history");
const sessionEl = el<HTMLElement>("session-id");
const modelEl = el<HTMLElement>("model-info");

const state = initialState();
const session = crypto.randomUUID();
let labels: string[] = [];
let streamer: FrameStreamer | null = null;
let captureTimer: number | null = null;

function wsUrl(): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  const heatmap = state.heatmapEnabled ? 1 : 0;
  return `${scheme}://${location.host}/stream?heatmap=${heatmap}&session=${session}`;
}

function render(): void {
  renderStatus(statusEl, state.status);
  renderHeadline(headlineEl, state);
  renderCounters(countersEl, state);
  renderBlurryBanner(blurryBanner, state.current?.blurry ?? false);
  if (state.current) {
    renderBars(barsRoot, labels, state.current.probabilities);
    updateOverlay(
      overlayImg,
      state.current.heatmap_png,
      state.heatmapEnabled,
      state.overlayAlpha
    );
  }
  historyEl.innerHTML = state.history
    .slice(-8)
    .reverse()
    .map((p) => {
      const t = new Date(p.timestamp * 1_000).toLocaleTimeString();
      return `<li>${t} ${p.top1_class} ${(p.top1_probability * 100).toFixed(1)}%</li>`;
    })
    .join("");
}

function buildStreamer(): FrameStreamer {
  return new FrameStreamer({
    url: wsUrl(),
    targetFps: TARGET_FPS,
    onPrediction: (p) => {
      applyPrediction(state, p, performance.now());
      render();
    },
    onDrop: (n) => {
      applyDrop(state, n);
      render();
    },
    onStatus: (s: ConnectionStatus) => {
      setStatus(state, s);
      renderStatus(statusEl, s);
    },
    onProtocolError: (raw) => {
      noteProtocolError(state);
      console.warn("unparseable server message skipped:", raw.slice(0, 200));
      renderCounters(countersEl, state);
    },
    onServerError: (message) => {
      console.warn("server rejected a frame:", message);
    },
  });
}

async function start(): Promise<void> {
  errorBanner.style.display = "none";
  try {
    video.srcObject = await openCamera();
    await video.play();
  } catch (err) {
    setStatus(state, "no-camera");
    renderStatus(statusEl, state.status);
    errorBanner.textContent =
      err instanceof CameraError ? err.guidance : String(err);
    errorBanner.style.display = "block";
    return;
  }
  streamer = buildStreamer();
  streamer.start();
  captureTimer = window.setInterval(async () => {
    const frame = await captureFrame(video, canvas);
    if (frame) streamer?.offerFrame(frame);
  }, 1_000 / TARGET_FPS);
  startBtn.disabled = true;
  stopBtn.disabled = false;
}

function stop(): void {
  if (captureTimer !== null) {
    clearInterval(captureTimer);
    captureTimer = null;
  }
  streamer?.stop();
  streamer = null;
  const tracks = (video.srcObject as MediaStream | null)?.getTracks() ?? [];
  tracks.forEach((t) => t.stop());
  video.srcObject = null;
  startBtn.disabled = false;
  stopBtn.disabled = true;
}

/** Heatmap on/off changes the stream query, so flip means reconnect. */
function setHeatmap(enabled: boolean): void {
  state.heatmapEnabled = enabled;
  if (streamer) {
    streamer.stop();
    streamer = buildStreamer();
    streamer.start();
  }
  render();
}

startBtn.addEventListener("click", () => void start());
stopBtn.addEventListener("click", stop);
heatmapToggle.addEventListener("change", () => setHeatmap(heatmapToggle.checked));
alphaSlider.addEventListener("input", () => {
  state.overlayAlpha = Number(alphaSlider.value);
  alphaValue.textContent = state.overlayAlpha.toFixed(2);
  render();
});

sessionEl.textContent = session;
setInterval(() => renderStaleness(stalenessEl, state, performance.now()), 200);

fetch("/health")
  .then((r) => r.json())
  .then((info: HealthInfo) => {
    labels = info.classes;
    modelEl.textContent = `${info.model} (${info.params.toLocaleString()} params, v${info.version})`;
    renderBars(barsRoot, labels, labels.map(() => 0));
  })
  .catch(() => {
    modelEl.textContent = "service unreachable; start it and reload";
  });
