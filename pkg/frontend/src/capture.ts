/** Webcam access and JPEG frame capture via an offscreen canvas. */

export class CameraError extends Error {
  constructor(message: string, readonly guidance: string) {
    super(message);
    this.name = "CameraError";
  }
}

export async function openCamera(
  constraints: MediaStreamConstraints = { video: { width: 640, height: 480 } }
): Promise<MediaStream> {
  if (!navigator.mediaDevices?.getUserMedia) {
    throw new CameraError(
      "camera API unavailable",
      "This browser does not expose a camera. Use a recent Chrome or Firefox over localhost or HTTPS."
    );
  }
  try {
    return await navigator.mediaDevices.getUserMedia(constraints);
  } catch (err) {
    const name = err instanceof DOMException ? err.name : "";
    const guidance =
      name === "NotAllowedError"
        ? "Camera permission was denied. Allow camera access for this page and reload."
        : name === "NotFoundError" || name === "OverconstrainedError"
          ? "No camera was found. Plug one in or pick another device, then reload."
          : "The camera could not be started. Close other apps using it and reload.";
    throw new CameraError(String(err), guidance);
  }
}

/**
 * Grab the current video frame as JPEG bytes.  Quality 0.8 keeps frames a
 * few tens of kilobytes, small enough to stream at camera rate.
 */
export function captureFrame(
  video: HTMLVideoElement,
  canvas: HTMLCanvasElement,
  quality = 0.8
): Promise<ArrayBuffer | null> {
  if (video.videoWidth === 0 || video.videoHeight === 0) {
    return Promise.resolve(null);
  }
  canvas.width = video.videoWidth;
  canvas.height = video.videoHeight;
  const ctx = canvas.getContext("2d");
  if (!ctx) return Promise.resolve(null);
  ctx.drawImage(video, 0, 0, canvas.width, canvas.height);
  return new Promise((resolve) => {
    canvas.toBlob(
      (blob) => {
        if (!blob) return resolve(null);
        blob.arrayBuffer().then(resolve, () => resolve(null));
      },
      "image/jpeg",
      quality
    );
  });
}
