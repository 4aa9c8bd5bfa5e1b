/** Face adjacency, ring growth and segment borders — all index arithmetic. */

export type FaceList = ArrayLike<number>; // flat vertex-index triples

function edgeKey(a: number, b: number): number {
  // vertex ids fit comfortably in 2^26 at desk scale
  return a < b ? a * 0x4000000 + b : b * 0x4000000 + a;
}

/** Edge-sharing neighbor face ids, per face. */
export function buildAdjacency(faces: FaceList): number[][] {
  const nFaces = faces.length / 3;
  const byEdge = new Map<number, number[]>();
  for (let f = 0; f < nFaces; f++) {
    const [a, b, c] = [faces[f * 3], faces[f * 3 + 1], faces[f * 3 + 2]];
    for (const key of [edgeKey(a, b), edgeKey(b, c), edgeKey(c, a)]) {
      const list = byEdge.get(key);
      if (list) list.push(f);
      else byEdge.set(key, [f]);
    }
  }
  const adjacency: number[][] = Array.from({ length: nFaces }, () => []);
  for (const sharing of byEdge.values()) {
    for (const f of sharing) {
      for (const g of sharing) {
        if (g !== f && !adjacency[f].includes(g)) adjacency[f].push(g);
      }
    }
  }
  for (const list of adjacency) list.sort((x, y) => x - y);
  return adjacency;
}

/** Selection grown by one adjacency ring. */
export function expandSelection(
  selected: ReadonlySet<number>,
  adjacency: number[][],
): Set<number> {
  const out = new Set(selected);
  for (const f of selected) {
    for (const g of adjacency[f] ?? []) out.add(g);
  }
  return out;
}

/** Selection shrunk by one ring: boundary faces are peeled off. */
export function reduceSelection(
  selected: ReadonlySet<number>,
  adjacency: number[][],
): Set<number> {
  const out = new Set<number>();
  for (const f of selected) {
    const interior = (adjacency[f] ?? []).every((g) => selected.has(g));
    if (interior) out.add(f);
  }
  return out;
}

export interface BorderEdge {
  a: number; // vertex index
  b: number;
}

/**
 * Edges whose two incident faces carry different segment ids — the border
 * overlay. A strip of two segments yields exactly its shared edges.
 */
export function segmentBorderEdges(
  faces: FaceList,
  segments: ArrayLike<number>,
): BorderEdge[] {
  const nFaces = faces.length / 3;
  const byEdge = new Map<number, { a: number; b: number; faces: number[] }>();
  for (let f = 0; f < nFaces; f++) {
    const tri = [faces[f * 3], faces[f * 3 + 1], faces[f * 3 + 2]];
    for (let e = 0; e < 3; e++) {
      const a = tri[e];
      const b = tri[(e + 1) % 3];
      const key = edgeKey(a, b);
      const entry = byEdge.get(key);
      if (entry) entry.faces.push(f);
      else byEdge.set(key, { a, b, faces: [f] });
    }
  }
  const borders: BorderEdge[] = [];
  for (const { a, b, faces: sharing } of byEdge.values()) {
    if (sharing.length < 2) continue;
    const first = segments[sharing[0]];
    if (sharing.some((f) => segments[f] !== first)) {
      borders.push({ a, b });
    }
  }
  return borders;
}

/** Flat xyz line-segment endpoints for the border overlay geometry. */
export function borderLinePositions(
  edges: BorderEdge[],
  positions: ArrayLike<number>,
): Float32Array {
  const out = new Float32Array(edges.length * 6);
  edges.forEach(({ a, b }, i) => {
    for (let k = 0; k < 3; k++) {
      out[i * 6 + k] = positions[a * 3 + k];
      out[i * 6 + 3 + k] = positions[b * 3 + k];
    }
  });
  return out;
}

/** Face ids covered by a set of segment ids. */
export function facesOfSegments(
  segmentIds: Iterable<number>,
  segments: ArrayLike<number>,
): number[] {
  const wanted = new Set(segmentIds);
  const out: number[] = [];
  for (let f = 0; f < segments.length; f++) {
    if (wanted.has(segments[f])) out.push(f);
  }
  return out;
}
