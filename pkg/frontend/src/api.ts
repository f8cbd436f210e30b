/** Typed client for the edit service's /v1 JSON API.
 *
 * Every pixel the UI shows comes from these responses; the client never
 * computes model math. The fetch function is injectable so tests can mock the
 * service wholesale.
 */

export type EditKind = "change" | "remove" | "relative";

export interface EditRequest {
  image: string; // base64 PNG or corpus image id
  kind: EditKind;
  source_phrase: string;
  target_phrase: string;
  sign: number;
  alpha: number;
  use_opt: boolean;
  opt_steps?: number;
  session_id?: string;
  seed: number;
}

export interface EditResponse {
  image_out: string;
  reconstruction: string;
  grounding: number[][];
  loss_trace: number[] | null;
  warnings: string[];
  timing_ms: number;
}

export interface SweepFrame {
  alpha: number;
  image: string;
}

export interface SweepResponse {
  frames: SweepFrame[];
  loss_trace: number[] | null;
  warnings: string[];
  timing_ms: number;
  opt_ms: number;
}

export interface ErrorBody {
  code: string;
  message: string;
  field?: string;
}

export class ServiceError extends Error {
  constructor(
    public status: number,
    public body: ErrorBody,
  ) {
    super(body.message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function parseError(resp: Response): Promise<never> {
  let body: ErrorBody;
  try {
    body = (await resp.json()) as ErrorBody;
  } catch {
    body = { code: "unknown", message: `service returned ${resp.status}` };
  }
  throw new ServiceError(resp.status, body);
}

export class EditClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async post<T>(path: string, payload: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
    if (!resp.ok) await parseError(resp);
    return (await resp.json()) as T;
  }

  edit(request: EditRequest): Promise<EditResponse> {
    return this.post<EditResponse>("/v1/edit", request);
  }

  sweep(request: EditRequest & { grid: number[] }): Promise<SweepResponse> {
    return this.post<SweepResponse>("/v1/sweep", request);
  }

  async corpusIds(split: string): Promise<string[]> {
    const resp = await this.fetchFn(`${this.baseUrl}/v1/corpus/${split}`);
    if (!resp.ok) await parseError(resp);
    const body = (await resp.json()) as { ids: string[] };
    return body.ids;
  }

  corpusImageUrl(split: string, id: string): string {
    return `${this.baseUrl}/v1/corpus/${split}/${id}`;
  }
}
