import { describe, expect, it } from "vitest";

import { countSet, decodeRle, encodeRle, type Runs } from "../src/rle.js";

describe("rle", () => {
  it("decodes known runs", () => {
    const mask = decodeRle([[0, 2], [4, 1]], 2, 3);
    expect(Array.from(mask)).toEqual([1, 1, 0, 0, 1, 0]);
  });

  it("round-trips random masks", () => {
    for (let trial = 0; trial < 25; trial++) {
      const h = 1 + Math.floor(Math.random() * 20);
      const w = 1 + Math.floor(Math.random() * 20);
      const mask = new Uint8Array(h * w).map(() => (Math.random() > 0.5 ? 1 : 0));
      const back = decodeRle(encodeRle(mask), h, w);
      expect(Array.from(back)).toEqual(Array.from(mask));
    }
  });

  it("handles empty and full", () => {
    expect(encodeRle(new Uint8Array(6))).toEqual([]);
    expect(encodeRle(new Uint8Array(6).fill(1))).toEqual([[0, 6]]);
  });

  it("rejects out-of-bounds runs", () => {
    expect(() => decodeRle([[7, 4]] as Runs, 3, 3)).toThrow(/out of bounds/);
  });

  it("counts set pixels", () => {
    expect(countSet(decodeRle([[1, 3]], 2, 3))).toBe(3);
  });
});
