// Pure pixel helpers for the canvas overlay: mask -> RGBA, and the
// canvas <-> slice-grid coordinate mapping (integer zoom).

export const MASK_COLOR: [number, number, number] = [64, 200, 96]; // green
export const MARK_COLOR: [number, number, number] = [230, 64, 64]; // red (prompts)

export function maskToRgba(
  mask: Uint8Array,
  width: number,
  height: number,
  alpha: number,
  color: [number, number, number] = MASK_COLOR,
): Uint8ClampedArray<ArrayBuffer> {
  if (mask.length !== width * height) {
    throw new Error(`mask length ${mask.length} != ${width}x${height}`);
  }
  const out = new Uint8ClampedArray(width * height * 4);
  const a = Math.round(alpha * 255);
  for (let i = 0; i < mask.length; i++) {
    if (!mask[i]) continue;
    const o = i * 4;
    out[o] = color[0];
    out[o + 1] = color[1];
    out[o + 2] = color[2];
    out[o + 3] = a;
  }
  return out;
}

/** Canvas pixel -> slice grid (integer zoom factor). */
export function canvasToGrid(x: number, y: number, zoom: number): { row: number; col: number } {
  return { row: Math.floor(y / zoom), col: Math.floor(x / zoom) };
}

/** Slice grid -> canvas pixel (center of the zoomed cell). */
export function gridToCanvas(row: number, col: number, zoom: number): { x: number; y: number } {
  return { x: col * zoom + zoom / 2, y: row * zoom + zoom / 2 };
}

/** Downsample a brush mask from the slice grid to the low-res prompt grid. */
export function downsampleBrush(
  mask: Uint8Array,
  height: number,
  width: number,
  lowres: number,
): Uint8Array {
  const out = new Uint8Array(lowres * lowres);
  for (let i = 0; i < lowres; i++) {
    const r = lowres > 1 ? Math.round((i * (height - 1)) / (lowres - 1)) : Math.floor(height / 2);
    for (let j = 0; j < lowres; j++) {
      const c = lowres > 1 ? Math.round((j * (width - 1)) / (lowres - 1)) : Math.floor(width / 2);
      out[i * lowres + j] = mask[r * width + c];
    }
  }
  return out;
}
