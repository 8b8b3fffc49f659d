// Viewer state and the mutation queue. All server mutations flow through a
// single queue per session; responses for revisions older than the latest
// applied one are discarded, so the overlay never regresses or tears.

import type { PointJson, PromptJson } from "./api.js";

export type Tool = "point+" | "point-" | "box" | "brush" | "boundary";

export interface ViewerState {
  volumeId: string | null;
  dims: [number, number, number] | null;
  slice: number;
  window: { lo: number; hi: number };
  tool: Tool;
  boundaries: { bottom: number | null; top: number | null };
  sessionId: string | null;
  revision: number;
  overlayOpacity: number;
}

export interface EditRecord {
  slice: number;
  point: PointJson;
}

export function initialState(): ViewerState {
  return {
    volumeId: null,
    dims: null,
    slice: 0,
    window: { lo: -500, hi: 1000 },
    tool: "boundary",
    boundaries: { bottom: null, top: null },
    sessionId: null,
    revision: 0,
    overlayOpacity: 0.45,
  };
}

export function clampSlice(state: ViewerState, k: number): number {
  if (!state.dims) return 0;
  return Math.max(0, Math.min(k, state.dims[0] - 1));
}

export function setBoundary(state: ViewerState, k: number): ViewerState {
  // first click sets bottom, second sets top; order normalizes itself
  const b = state.boundaries;
  let next: { bottom: number | null; top: number | null };
  if (b.bottom === null) next = { bottom: k, top: b.top };
  else if (b.top === null) next = { bottom: b.bottom, top: k };
  else next = { bottom: k, top: null }; // third click restarts
  if (next.bottom !== null && next.top !== null && next.bottom > next.top) {
    next = { bottom: next.top, top: next.bottom };
  }
  return { ...state, boundaries: next };
}

export function boundariesReady(state: ViewerState): boolean {
  return state.boundaries.bottom !== null && state.boundaries.top !== null;
}

export function canPrompt(state: ViewerState): string | null {
  // null = allowed, otherwise a user-facing reason
  if (!state.volumeId) return "load a volume first";
  if (!boundariesReady(state)) return "set bottom and top boundaries before prompting";
  const { bottom, top } = state.boundaries;
  if (state.slice < (bottom as number) || state.slice > (top as number)) {
    return `slice ${state.slice} is outside boundaries [${bottom}, ${top}]`;
  }
  return null;
}

export function validatePrompt(prompt: PromptJson): string | null {
  const hasBox = prompt.box !== undefined;
  const hasPoints = (prompt.points?.length ?? 0) > 0;
  const hasMask = prompt.mask !== undefined && prompt.mask.runs.length > 0;
  if (prompt.mask !== undefined && prompt.mask.runs.length === 0) {
    return "brush mask is empty";
  }
  if (prompt.box) {
    const [r0, c0, r1, c1] = prompt.box;
    if (r0 === r1 || c0 === c1) return "box has zero area";
    if (r0 > r1 || c0 > c1) return "box corners are inverted";
  }
  if (!hasBox && !hasPoints && !hasMask) return "prompt is empty";
  return null;
}

/** Serialized mutation pipeline with stale-revision discard. */
export class MutationQueue {
  private chain: Promise<void> = Promise.resolve();
  private applied = 0;

  get lastApplied(): number {
    return this.applied;
  }

  /** Forget the applied revision (after a session rebuild restarts numbering). */
  reset(): void {
    this.applied = 0;
  }

  /** Enqueue a mutation; `run` resolves to the server's new revision. */
  submit(run: () => Promise<number>, onApply: (revision: number) => void): Promise<void> {
    this.chain = this.chain.then(async () => {
      const revision = await run();
      if (revision > this.applied) {
        this.applied = revision;
        onApply(revision);
      } // else: stale response, discard
    });
    // keep the chain alive after failures; callers observe their own errors
    const result = this.chain;
    this.chain = this.chain.catch(() => undefined);
    return result;
  }
}
