/**
 * Heatmap overlay control.  The service returns the explanation already
 * blended into the frame as base64 PNG; the client layers that image over
 * the live video at the slider's opacity.  Toggled off, the image is
 * hidden entirely and the raw video shows through.
 */

export function updateOverlay(
  img: HTMLImageElement,
  heatmapPng: string | null,
  enabled: boolean,
  alpha: number
): void {
  if (!enabled || heatmapPng === null) {
    img.style.display = "none";
    return;
  }
  const src = `data:image/png;base64,${heatmapPng}`;
  if (img.src !== src) img.src = src;
  img.style.display = "block";
  img.style.opacity = String(alpha);
}
