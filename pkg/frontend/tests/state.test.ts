import { describe, expect, it } from "vitest";

import {
  boundariesReady,
  canPrompt,
  clampSlice,
  initialState,
  MutationQueue,
  setBoundary,
  validatePrompt,
} from "../src/state.js";

function loaded() {
  return { ...initialState(), volumeId: "vol-1", dims: [12, 64, 64] as [number, number, number] };
}

describe("viewer state", () => {
  it("clamps scrolling past the last slice", () => {
    const s = loaded();
    expect(clampSlice(s, -3)).toBe(0);
    expect(clampSlice(s, 99)).toBe(11);
    expect(clampSlice(s, 5)).toBe(5);
  });

  it("orders boundaries regardless of click order", () => {
    let s = loaded();
    s = { ...s, slice: 9 };
    s = setBoundary(s, 9);
    s = setBoundary(s, 3);
    expect(s.boundaries).toEqual({ bottom: 3, top: 9 });
    expect(boundariesReady(s)).toBe(true);
  });

  it("third boundary click restarts the pair", () => {
    let s = loaded();
    s = setBoundary(s, 2);
    s = setBoundary(s, 8);
    s = setBoundary(s, 5);
    expect(s.boundaries).toEqual({ bottom: 5, top: null });
  });

  it("blocks prompting before boundaries are set", () => {
    const s = loaded();
    expect(canPrompt(s)).toMatch(/boundaries/);
    const ready = setBoundary(setBoundary(s, 2), 9);
    expect(canPrompt({ ...ready, slice: 5 })).toBeNull();
    expect(canPrompt({ ...ready, slice: 11 })).toMatch(/outside/);
  });

  it("rejects zero-area boxes and empty brushes", () => {
    expect(validatePrompt({ box: [3, 3, 3, 9] })).toMatch(/zero area/);
    expect(validatePrompt({ mask: { shape: [16, 16], runs: [] } })).toMatch(/empty/);
    expect(validatePrompt({})).toMatch(/empty/);
    expect(validatePrompt({ box: [2, 2, 6, 7] })).toBeNull();
    expect(validatePrompt({ points: [{ row: 1, col: 2, label: "positive" }] })).toBeNull();
  });
});

describe("mutation queue", () => {
  it("serializes mutations and applies revisions in order", async () => {
    const queue = new MutationQueue();
    const applied: number[] = [];
    const order: string[] = [];
    const first = queue.submit(
      async () => {
        order.push("first-start");
        await new Promise((r) => setTimeout(r, 20));
        order.push("first-end");
        return 1;
      },
      (rev) => applied.push(rev),
    );
    const second = queue.submit(
      async () => {
        order.push("second-start");
        return 2;
      },
      (rev) => applied.push(rev),
    );
    await Promise.all([first, second]);
    expect(order).toEqual(["first-start", "first-end", "second-start"]);
    expect(applied).toEqual([1, 2]);
  });

  it("discards stale revisions", async () => {
    const queue = new MutationQueue();
    const applied: number[] = [];
    await queue.submit(async () => 5, (rev) => applied.push(rev));
    await queue.submit(async () => 3, (rev) => applied.push(rev)); // stale
    await queue.submit(async () => 6, (rev) => applied.push(rev));
    expect(applied).toEqual([5, 6]);
    expect(queue.lastApplied).toBe(6);
  });

  it("keeps accepting work after a failed mutation", async () => {
    const queue = new MutationQueue();
    const applied: number[] = [];
    await expect(
      queue.submit(async () => {
        throw new Error("boom");
      }, () => undefined),
    ).rejects.toThrow("boom");
    await queue.submit(async () => 1, (rev) => applied.push(rev));
    expect(applied).toEqual([1]);
  });
});
