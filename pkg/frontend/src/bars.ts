/**
 * Probability bars.  Every class in the catalog gets a row in catalog
 * order; the three highest scores are emphasized.  Widths and printed
 * percentages come straight from the payload values, never re-normalized,
 * so what is on screen is exactly what the model reported.
 */

export function topIndices(probabilities: number[], k: number): number[] {
  return probabilities
    .map((p, i) => [p, i] as const)
    .sort((a, b) => b[0] - a[0] || a[1] - b[1])
    .slice(0, k)
    .map(([, i]) => i);
}

export function renderBars(
  root: HTMLElement,
  labels: string[],
  probabilities: number[],
  topK = 3
): void {
  const top = new Set(topIndices(probabilities, topK));
  root.innerHTML = probabilities
    .map((p, i) => {
      const pct = p * 100;
      const cls = top.has(i) ? "bar-row top" : "bar-row";
      const label = labels[i] ?? `class ${i}`;
      return `
        <div class="${cls}" data-class="${label}">
          <div class="bar-label">${label}</div>
          <div class="bar-track">
            <div class="bar-fill" style="width:${pct}%"></div>
          </div>
          <div class="bar-value">${pct.toFixed(1)}%</div>
        </div>
      `;
    })
    .join("");
}
