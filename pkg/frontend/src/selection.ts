/**
 * Selection state and the screen-space lasso test.
 *
 * Geometry is resolved here on the client; what a selection *means* (labels,
 * partition changes) is always delegated to the service.
 */

export interface Point2 {
  x: number;
  y: number;
}

/** Ray-crossing point-in-polygon test; boundary points count as inside. */
export function pointInPolygon(p: Point2, polygon: Point2[]): boolean {
  let inside = false;
  for (let i = 0, j = polygon.length - 1; i < polygon.length; j = i++) {
    const a = polygon[i];
    const b = polygon[j];
    // on-edge check first: vertical ray logic misses exact boundary hits
    const cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    if (
      Math.abs(cross) < 1e-12 &&
      Math.min(a.x, b.x) - 1e-12 <= p.x &&
      p.x <= Math.max(a.x, b.x) + 1e-12 &&
      Math.min(a.y, b.y) - 1e-12 <= p.y &&
      p.y <= Math.max(a.y, b.y) + 1e-12
    ) {
      return true;
    }
    if (
      a.y > p.y !== b.y > p.y &&
      p.x < ((b.x - a.x) * (p.y - a.y)) / (b.y - a.y) + a.x
    ) {
      inside = !inside;
    }
  }
  return inside;
}

/**
 * Faces whose screen point falls inside the lasso polygon.
 *
 * `screenPoints[f]` is the face's projected reference point, or null when
 * the face is not visible (behind the camera, outside the viewport or
 * back-facing) — those can never be lassoed.
 */
export function lassoSelect(
  polygon: Point2[],
  screenPoints: (Point2 | null)[],
): number[] {
  if (polygon.length < 3) {
    throw new Error("lasso polygon needs at least 3 points");
  }
  const out: number[] = [];
  for (let f = 0; f < screenPoints.length; f++) {
    const p = screenPoints[f];
    if (p !== null && pointInPolygon(p, polygon)) out.push(f);
  }
  return out;
}

export type SelectionUpdate = "replace" | "add" | "remove";

/** Mutable face-id selection with set-style updates. */
export class Selection {
  private readonly faces = new Set<number>();

  get size(): number {
    return this.faces.size;
  }

  has(face: number): boolean {
    return this.faces.has(face);
  }

  toArray(): number[] {
    return [...this.faces].sort((a, b) => a - b);
  }

  toSet(): Set<number> {
    return new Set(this.faces);
  }

  clear(): void {
    this.faces.clear();
  }

  toggle(face: number): void {
    if (this.faces.has(face)) this.faces.delete(face);
    else this.faces.add(face);
  }

  update(faceIds: Iterable<number>, mode: SelectionUpdate = "replace"): void {
    if (mode === "replace") this.faces.clear();
    for (const f of faceIds) {
      if (mode === "remove") this.faces.delete(f);
      else this.faces.add(f);
    }
  }

  replaceWith(faces: Iterable<number>): void {
    this.update(faces, "replace");
  }

  /** Distinct segment ids the selection touches. */
  segmentIds(segments: ArrayLike<number>): number[] {
    const ids = new Set<number>();
    for (const f of this.faces) ids.add(segments[f]);
    return [...ids].sort((a, b) => a - b);
  }

  /** True when the selection covers every face of each touched segment. */
  coversWholeSegments(segments: ArrayLike<number>): boolean {
    const touched = new Set(this.segmentIds(segments));
    for (let f = 0; f < segments.length; f++) {
      if (touched.has(segments[f]) && !this.faces.has(f)) return false;
    }
    return true;
  }
}
