// Run-length coding shared with the service: [start, length] runs of set
// pixels over row-major order.

export type Runs = [number, number][];

export function decodeRle(runs: Runs, height: number, width: number): Uint8Array {
  const mask = new Uint8Array(height * width);
  for (const [start, length] of runs) {
    if (start < 0 || length < 0 || start + length > mask.length) {
      throw new Error(`run (${start},${length}) out of bounds for ${height}x${width}`);
    }
    mask.fill(1, start, start + length);
  }
  return mask;
}

export function encodeRle(mask: Uint8Array): Runs {
  const runs: Runs = [];
  let start = -1;
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] && start < 0) start = i;
    if (!mask[i] && start >= 0) {
      runs.push([start, i - start]);
      start = -1;
    }
  }
  if (start >= 0) runs.push([start, mask.length - start]);
  return runs;
}

export function countSet(mask: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < mask.length; i++) n += mask[i];
  return n;
}
