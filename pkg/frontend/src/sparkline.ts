/** SVG polyline path for the optimization loss trace. */

export function sparklinePath(trace: number[], width: number, height: number, pad = 2): string {
  if (trace.length === 0) return "";
  const lo = Math.min(...trace);
  const hi = Math.max(...trace);
  const span = hi - lo || 1;
  const innerW = width - 2 * pad;
  const innerH = height - 2 * pad;
  const step = trace.length > 1 ? innerW / (trace.length - 1) : 0;
  return trace
    .map((v, i) => {
      const x = pad + i * step;
      const y = pad + innerH * (1 - (v - lo) / span);
      return `${i === 0 ? "M" : "L"}${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
}

/** True when the trace trends downward (first quarter mean vs last quarter). */
export function trendsDown(trace: number[]): boolean {
  if (trace.length < 4) return trace.length < 2 || trace[trace.length - 1] <= trace[0];
  const q = Math.max(1, Math.floor(trace.length / 4));
  const head = trace.slice(0, q).reduce((a, b) => a + b, 0) / q;
  const tail = trace.slice(-q).reduce((a, b) => a + b, 0) / q;
  return tail <= head;
}
