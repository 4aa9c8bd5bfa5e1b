/**
 * Typed client for the annotation service HTTP API.
 *
 * Every mutation resolves only after the server acknowledged it; there is no
 * optimistic state anywhere in this package — callers re-render from the
 * response (or from a fresh GET), so the server stays the single source of
 * truth for labels.
 */

export interface TilePayload {
  tile_id: string;
  positions: number[]; // flat xyz per vertex
  faces: number[]; // flat vertex-index triples
  labels: number[]; // class id per face, 0..6
  segments: number[]; // segment id per face
  confirmed: boolean[];
  face_colors: number[][]; // mean RGB 0..255 per face
  segment_probs: Record<string, number[] | null>; // 6 class probs or null
  segment_areas: Record<string, number>;
  progress: number;
}

/** Zero-copy views over the binary tile attachment. */
export interface MeshBuffers {
  positions: Float32Array;
  faces: Uint32Array;
  labels: Uint32Array;
  segments: Uint32Array;
  confirmed: Uint32Array;
}

export interface SegmentFilter {
  probMax?: number;
  areaMin?: number;
  areaMax?: number;
  klass?: number;
}

export interface LabelTarget {
  faces?: number[];
  segments?: number[];
}

export class ApiError extends Error {
  constructor(public readonly status: number, detail: string) {
    super(detail);
    this.name = "ApiError";
  }
}

const MAGIC = 0x4d54494c; // "MTIL" big-endian read of the 4 magic bytes

/**
 * Parse the length-prefixed binary tile payload.
 *
 * Layout: 4 magic bytes "MTIL", then five blocks, each a little-endian
 * uint32 element count followed by the elements: positions (3 × f32 per
 * vertex), faces (3 × u32), labels (u32 per face), segments (u32 per
 * face), confirmed (u32 per face).
 */
export function parseMeshPayload(buffer: ArrayBuffer): MeshBuffers {
  const view = new DataView(buffer);
  if (buffer.byteLength < 4 || view.getUint32(0, false) !== MAGIC) {
    throw new Error("tile payload missing MTIL magic");
  }
  let offset = 4;
  const widths = [3, 3, 1, 1, 1];
  const blocks: (Float32Array | Uint32Array)[] = [];
  for (let b = 0; b < widths.length; b++) {
    if (offset + 4 > buffer.byteLength) {
      throw new Error("tile payload truncated (missing block header)");
    }
    const count = view.getUint32(offset, true);
    offset += 4;
    const elements = count * widths[b];
    if (offset + elements * 4 > buffer.byteLength) {
      throw new Error(`tile payload truncated in block ${b}`);
    }
    blocks.push(
      b === 0
        ? new Float32Array(buffer, offset, elements)
        : new Uint32Array(buffer, offset, elements),
    );
    offset += elements * 4;
  }
  if (offset !== buffer.byteLength) {
    throw new Error("tile payload has trailing bytes");
  }
  const [positions, faces, labels, segments, confirmed] = blocks;
  const nFaces = faces.length / 3;
  if (labels.length !== nFaces || segments.length !== nFaces ||
      confirmed.length !== nFaces) {
    throw new Error("tile payload block sizes disagree");
  }
  return {
    positions: positions as Float32Array,
    faces: faces as Uint32Array,
    labels: labels as Uint32Array,
    segments: segments as Uint32Array,
    confirmed: confirmed as Uint32Array,
  };
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  private async request(path: string, init?: RequestInit): Promise<Response> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(0, `service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = `${response.status} ${response.statusText}`;
      try {
        const body = await response.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body: keep the status line
      }
      throw new ApiError(response.status, detail);
    }
    return response;
  }

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    return (await this.request(path, init)).json() as Promise<T>;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.json<T>(path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  async listTiles(): Promise<string[]> {
    return (await this.json<{ tiles: string[] }>("/tiles")).tiles;
  }

  getTile(tileId: string): Promise<TilePayload> {
    return this.json(`/tiles/${encodeURIComponent(tileId)}`);
  }

  async getMeshBuffers(tileId: string): Promise<MeshBuffers> {
    const response = await this.request(
      `/tiles/${encodeURIComponent(tileId)}/mesh.bin`,
    );
    return parseMeshPayload(await response.arrayBuffer());
  }

  /** Label faces and/or whole segments; resolves after the server ack. */
  label(
    tileId: string,
    target: LabelTarget,
    cls: number,
  ): Promise<{ segments: number[]; progress: number }> {
    return this.post(`/tiles/${encodeURIComponent(tileId)}/label`, {
      ...target,
      class: cls,
    });
  }

  splitPlanar(
    tileId: string,
    segmentId: number,
    maxDistance: number,
    maxAngle: number,
    minRegionFaces = 1,
  ): Promise<{ segment: number; progress: number }> {
    return this.post(`/tiles/${encodeURIComponent(tileId)}/split_planar`, {
      segment_id: segmentId,
      max_distance: maxDistance,
      max_angle: maxAngle,
      min_region_faces: minRegionFaces,
    });
  }

  splitStroke(
    tileId: string,
    faces: number[],
    maxDistance: number,
  ): Promise<{ progress: number }> {
    return this.post(`/tiles/${encodeURIComponent(tileId)}/split_stroke`, {
      faces,
      max_distance: maxDistance,
    });
  }

  /** Server-side segment filter; mirrors the review sliders. */
  async filterSegments(
    tileId: string,
    filter: SegmentFilter = {},
  ): Promise<number[]> {
    const params = new URLSearchParams();
    if (filter.probMax !== undefined) {
      params.set("prob_max", String(filter.probMax));
    }
    if (filter.areaMin !== undefined) {
      params.set("area_min", String(filter.areaMin));
    }
    if (filter.areaMax !== undefined) {
      params.set("area_max", String(filter.areaMax));
    }
    if (filter.klass !== undefined) params.set("klass", String(filter.klass));
    const query = params.toString();
    const path =
      `/tiles/${encodeURIComponent(tileId)}/segments` +
      (query ? `?${query}` : "");
    return (await this.json<{ segments: number[] }>(path)).segments;
  }

  progress(tileId: string): Promise<{
    progress: number;
    confirmed_area: number;
    total_area: number;
  }> {
    return this.json(`/tiles/${encodeURIComponent(tileId)}/progress`);
  }

  save(tileId: string): Promise<{ saved: boolean }> {
    return this.post(`/tiles/${encodeURIComponent(tileId)}/save`, {});
  }
}
