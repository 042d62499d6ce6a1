/**
 * Fixed diverging color scale for thinning heatmaps.
 *
 * The scale is pinned to [-0.4, 0.4] across all requests so what-if frames
 * stay visually comparable; masked-out pixels are fully transparent.
 */

export const SCALE_MIN = -0.4;
export const SCALE_MAX = 0.4;

export interface Rgba {
  r: number;
  g: number;
  b: number;
  a: number;
}

/** Blue (thickening) → white (neutral) → red (thinning). */
export function divergingColor(value: number): Rgba {
  const t = Math.min(1, Math.max(0, (value - SCALE_MIN) / (SCALE_MAX - SCALE_MIN)));
  if (t < 0.5) {
    const u = t / 0.5; // blue → white
    return { r: Math.round(33 + (255 - 33) * u), g: Math.round(102 + (255 - 102) * u), b: Math.round(172 + (255 - 172) * u), a: 255 };
  }
  const u = (t - 0.5) / 0.5; // white → red
  return { r: 255, g: Math.round(255 - (255 - 32) * u), b: Math.round(255 - (255 - 38) * u), a: 255 };
}

/**
 * Render a (n, n) thinning field into RGBA pixels; pixels with mask 0 are
 * transparent.
 */
export function renderHeatmap(
  field: Float32Array,
  mask: Float32Array,
  n: number,
): Uint8ClampedArray<ArrayBuffer> {
  if (field.length !== n * n || mask.length !== n * n) {
    throw new Error("field/mask size does not match the grid");
  }
  const out = new Uint8ClampedArray(new ArrayBuffer(4 * n * n));
  for (let i = 0; i < n * n; i++) {
    if (mask[i] === 0) {
      continue; // transparent
    }
    const { r, g, b, a } = divergingColor(field[i]);
    out[4 * i] = r;
    out[4 * i + 1] = g;
    out[4 * i + 2] = b;
    out[4 * i + 3] = a;
  }
  return out;
}
