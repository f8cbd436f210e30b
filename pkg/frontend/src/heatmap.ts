/** Grounding heatmap rendering: server-normalized values in [0,1] mapped
 * through a fixed perceptually-uniform ramp (viridis control points). */

const VIRIDIS: Array<[number, number, number]> = [
  [68, 1, 84],
  [71, 44, 122],
  [59, 81, 139],
  [44, 113, 142],
  [33, 144, 141],
  [39, 173, 129],
  [92, 200, 99],
  [170, 220, 50],
  [253, 231, 37],
];

export function rampColor(value: number): [number, number, number] {
  const v = Math.min(1, Math.max(0, value));
  const pos = v * (VIRIDIS.length - 1);
  const lo = Math.floor(pos);
  const hi = Math.min(VIRIDIS.length - 1, lo + 1);
  const t = pos - lo;
  return [0, 1, 2].map((c) => Math.round(VIRIDIS[lo][c] * (1 - t) + VIRIDIS[hi][c] * t)) as [number, number, number];
}

/** Nearest-neighbor upscale of an SxS grid into RGBA pixels. */
export function heatmapPixels(grid: number[][], size: number, alpha = 160): Uint8ClampedArray<ArrayBuffer> {
  const s = grid.length;
  const out = new Uint8ClampedArray(new ArrayBuffer(size * size * 4));
  for (let y = 0; y < size; y++) {
    const gy = Math.min(s - 1, Math.floor((y * s) / size));
    for (let x = 0; x < size; x++) {
      const gx = Math.min(s - 1, Math.floor((x * s) / size));
      const [r, g, b] = rampColor(grid[gy][gx]);
      const o = (y * size + x) * 4;
      out[o] = r;
      out[o + 1] = g;
      out[o + 2] = b;
      out[o + 3] = alpha;
    }
  }
  return out;
}

export function drawHeatmap(canvas: HTMLCanvasElement, grid: number[][], size: number): void {
  canvas.width = size;
  canvas.height = size;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.putImageData(new ImageData(heatmapPixels(grid, size), size, size), 0, 0);
}
