/**
 * As-formed surface mesh built from the displacement response tensors.
 *
 * Mirrors the server-side reconstruction exactly: one vertex per in-mask
 * pixel at (pixel center + (dx, dy) * 120 mm, dz * 120 mm), one quad per
 * 2x2 all-in-mask pixel neighborhood. Displacements are normalized by the
 * 120 mm maximum design height.
 */

export const DISPLACEMENT_NORM_MM = 120;
export const FRAME_MM = 740;

export interface SurfaceMesh {
  /** xyz triples, one per in-mask pixel. */
  vertices: Float64Array;
  /** quad corner indices, counter-clockwise per 2x2 neighborhood. */
  faces: Uint32Array;
  /** per-vertex thinning fraction (for vertex colors). */
  thinning: Float32Array;
}

export function buildAsFormedMesh(
  displacement: Float32Array, // (3, n, n) flattened
  thinning: Float32Array, // (n, n) flattened
  mask: Float32Array, // (n, n) flattened, 0/1
  n: number,
): SurfaceMesh {
  if (displacement.length !== 3 * n * n || thinning.length !== n * n || mask.length !== n * n) {
    throw new Error("displacement, thinning and mask must share the grid");
  }
  const pitch = FRAME_MM / n;
  const vertexIndex = new Int32Array(n * n).fill(-1);
  let count = 0;
  for (let i = 0; i < n * n; i++) {
    if (mask[i] !== 0) vertexIndex[i] = count++;
  }
  if (count === 0) {
    throw new Error("empty mask: nothing to reconstruct");
  }
  const vertices = new Float64Array(3 * count);
  const vthin = new Float32Array(count);
  for (let row = 0; row < n; row++) {
    for (let col = 0; col < n; col++) {
      const p = row * n + col;
      const v = vertexIndex[p];
      if (v < 0) continue;
      const cx = (col + 0.5) * pitch;
      const cy = (row + 0.5) * pitch;
      vertices[3 * v] = cx + displacement[p] * DISPLACEMENT_NORM_MM;
      vertices[3 * v + 1] = cy + displacement[n * n + p] * DISPLACEMENT_NORM_MM;
      vertices[3 * v + 2] = displacement[2 * n * n + p] * DISPLACEMENT_NORM_MM;
      vthin[v] = thinning[p];
    }
  }
  const quads: number[] = [];
  for (let row = 0; row < n - 1; row++) {
    for (let col = 0; col < n - 1; col++) {
      const a = vertexIndex[row * n + col];
      const b = vertexIndex[row * n + col + 1];
      const c = vertexIndex[(row + 1) * n + col + 1];
      const d = vertexIndex[(row + 1) * n + col];
      if (a >= 0 && b >= 0 && c >= 0 && d >= 0) {
        quads.push(a, b, c, d);
      }
    }
  }
  return { vertices, faces: new Uint32Array(quads), thinning: vthin };
}

/** Quads split into triangles for WebGL index buffers. */
export function triangulate(faces: Uint32Array): Uint32Array {
  const tris = new Uint32Array((faces.length / 4) * 6);
  for (let q = 0; q < faces.length / 4; q++) {
    const [a, b, c, d] = [faces[4 * q], faces[4 * q + 1], faces[4 * q + 2], faces[4 * q + 3]];
    tris.set([a, b, c, a, c, d], 6 * q);
  }
  return tris;
}
