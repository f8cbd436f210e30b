/** Prefetched alpha-sweep frames with stale-response protection.
 *
 * One controller instance owns all sweep traffic: requests carry a sequence
 * number and any response that is not the latest is dropped. After a prefetch,
 * scrubbing is a pure cache lookup (zero network).
 */

import type { EditClient, EditRequest, SweepResponse } from "./api.js";

export interface SweepKey {
  image: string;
  kind: string;
  sourcePhrase: string;
  targetPhrase: string;
  sign: number;
  useOpt: boolean;
}

function keyOf(request: EditRequest): string {
  return JSON.stringify([
    request.image,
    request.kind,
    request.source_phrase,
    request.target_phrase,
    request.sign,
    request.use_opt,
  ]);
}

export class SweepController {
  private frames = new Map<number, string>();
  private cachedKey: string | null = null;
  private seq = 0;
  private applied = 0;
  private inFlight = false;

  constructor(
    private client: EditClient,
    private grid: number[],
  ) {}

  get hasFrames(): boolean {
    return this.frames.size > 0;
  }

  get busy(): boolean {
    return this.inFlight;
  }

  /** Nearest grid point; out-of-grid alphas snap. */
  snap(alpha: number): number {
    let best = this.grid[0];
    for (const a of this.grid) {
      if (Math.abs(a - alpha) < Math.abs(best - alpha)) best = a;
    }
    return best;
  }

  /** Cached frame for the snapped alpha; null means prefetch needed. */
  frameFor(request: EditRequest, alpha: number): string | null {
    if (this.cachedKey !== keyOf(request)) return null;
    return this.frames.get(this.snap(alpha)) ?? null;
  }

  /** Fetch the whole grid once; stale responses (superseded sequence numbers)
   * are dropped. Returns the response or null when it lost the race. */
  async prefetch(request: EditRequest): Promise<SweepResponse | null> {
    const mySeq = ++this.seq;
    this.inFlight = true;
    try {
      const response = await this.client.sweep({ ...request, grid: [...this.grid] });
      if (mySeq <= this.applied) return null; // a newer request already landed
      this.applied = mySeq;
      this.frames.clear();
      for (const frame of response.frames) this.frames.set(this.snap(frame.alpha), frame.image);
      this.cachedKey = keyOf(request);
      return response;
    } finally {
      if (mySeq === this.seq) this.inFlight = false;
    }
  }

  invalidate(): void {
    this.frames.clear();
    this.cachedKey = null;
  }
}
