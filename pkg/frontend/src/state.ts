/** UI state and its lossless mapping onto the wire format. */

import type { EditKind, EditRequest } from "./api.js";

export const ALPHA_MIN = 0;
export const ALPHA_MAX = 1.5;
export const ALPHA_STEP = 0.05;
/** Prefetch grid for slider scrubbing: 0.25 increments across the whole range. */
export const PREFETCH_GRID: number[] = (() => {
  const grid: number[] = [];
  for (let a = ALPHA_MIN; a <= ALPHA_MAX + 1e-9; a += 0.25) grid.push(Number(a.toFixed(2)));
  return grid;
})();

export interface InstructionDraft {
  kind: EditKind;
  sourcePhrase: string;
  targetPhrase: string;
  sign: 1 | -1;
}

export interface HistoryEntry {
  readonly instruction: Readonly<InstructionDraft>;
  readonly alpha: number;
  readonly useOpt: boolean;
  readonly imageOut: string;
}

export interface UiState {
  image: string | null; // base64 PNG or corpus id
  instruction: InstructionDraft;
  alpha: number;
  useOpt: boolean;
  sessionId: string;
  seed: number;
  history: ReadonlyArray<HistoryEntry>;
}

export function initialState(): UiState {
  return {
    image: null,
    instruction: { kind: "change", sourcePhrase: "", targetPhrase: "", sign: 1 },
    alpha: 1.0,
    useOpt: false,
    sessionId: `ui-${Math.random().toString(36).slice(2, 10)}`,
    seed: 0,
    history: [],
  };
}

/** Reasons the edit form cannot be submitted; empty array means valid. */
export function validationErrors(state: UiState): string[] {
  const problems: string[] = [];
  if (!state.image) problems.push("pick or upload an image");
  if (!state.instruction.sourcePhrase.trim()) problems.push("source phrase is required");
  if (state.instruction.kind === "change" && !state.instruction.targetPhrase.trim())
    problems.push("target phrase is required for change");
  if (state.instruction.kind !== "change" && state.instruction.targetPhrase.trim())
    problems.push(`${state.instruction.kind} takes no target phrase`);
  if (state.alpha < ALPHA_MIN || state.alpha > ALPHA_MAX) problems.push("alpha out of range");
  return problems;
}

/** The exact request JSON for the current form; serialization is lossless. */
export function toEditRequest(state: UiState, alphaOverride?: number): EditRequest {
  if (!state.image) throw new Error("no image selected");
  return {
    image: state.image,
    kind: state.instruction.kind,
    source_phrase: state.instruction.sourcePhrase.trim(),
    target_phrase: state.instruction.kind === "change" ? state.instruction.targetPhrase.trim() : "",
    sign: state.instruction.sign,
    alpha: alphaOverride ?? state.alpha,
    use_opt: state.useOpt,
    session_id: state.sessionId,
    seed: state.seed,
  };
}

/** Inverse of toEditRequest over the instruction fields (round-trip check). */
export function draftFromRequest(request: EditRequest): InstructionDraft {
  return {
    kind: request.kind,
    sourcePhrase: request.source_phrase,
    targetPhrase: request.target_phrase,
    sign: request.sign === -1 ? -1 : 1,
  };
}

export function recordHistory(state: UiState, imageOut: string): UiState {
  const entry: HistoryEntry = Object.freeze({
    instruction: Object.freeze({ ...state.instruction }),
    alpha: state.alpha,
    useOpt: state.useOpt,
    imageOut,
  });
  return { ...state, history: Object.freeze([...state.history, entry]) as ReadonlyArray<HistoryEntry> };
}
