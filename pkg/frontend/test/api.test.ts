import { describe, expect, it } from "vitest";
import { ApiClient, ApiError, parseMeshPayload } from "../src/api.js";

/**
 * Independent writer for the binary tile layout; the parser must invert it.
 * (The same bytes are checked against the live service in the e2e suite.)
 */
function mtil(
  positions: number[],
  faces: number[],
  labels: number[],
  segments: number[],
  confirmed: number[],
): ArrayBuffer {
  const counts = [
    positions.length / 3,
    faces.length / 3,
    labels.length,
    segments.length,
    confirmed.length,
  ];
  const blocks = [positions, faces, labels, segments, confirmed];
  let bytes = 4;
  for (const b of blocks) bytes += 4 + b.length * 4;
  const buf = new ArrayBuffer(bytes);
  const view = new DataView(buf);
  view.setUint8(0, 0x4d); // M
  view.setUint8(1, 0x54); // T
  view.setUint8(2, 0x49); // I
  view.setUint8(3, 0x4c); // L
  let off = 4;
  blocks.forEach((block, i) => {
    view.setUint32(off, counts[i], true);
    off += 4;
    for (const v of block) {
      if (i === 0) view.setFloat32(off, v, true);
      else view.setUint32(off, v, true);
      off += 4;
    }
  });
  return buf;
}

describe("parseMeshPayload", () => {
  const positions = [0, 0, 0, 1, 0, 0, 0, 1, 0, 1, 1, 0.5];
  const faces = [0, 1, 2, 1, 3, 2];
  const labels = [3, 0];
  const segments = [7, 9];
  const confirmed = [1, 0];

  it("round-trips a hand-built payload", () => {
    const buffers = parseMeshPayload(
      mtil(positions, faces, labels, segments, confirmed),
    );
    expect([...buffers.positions]).toEqual(positions);
    expect([...buffers.faces]).toEqual(faces);
    expect([...buffers.labels]).toEqual(labels);
    expect([...buffers.segments]).toEqual(segments);
    expect([...buffers.confirmed]).toEqual(confirmed);
  });

  it("rejects a wrong magic", () => {
    const buf = mtil(positions, faces, labels, segments, confirmed);
    new DataView(buf).setUint8(0, 0x58);
    expect(() => parseMeshPayload(buf)).toThrow(/MTIL magic/);
  });

  it("rejects an empty buffer", () => {
    expect(() => parseMeshPayload(new ArrayBuffer(0))).toThrow(/MTIL magic/);
  });

  it("rejects a missing block header", () => {
    // magic alone: the first count word is absent
    const buf = mtil(positions, faces, labels, segments, confirmed).slice(0, 4);
    expect(() => parseMeshPayload(buf)).toThrow(/missing block header/);
  });

  it("rejects data cut mid-block", () => {
    const full = mtil(positions, faces, labels, segments, confirmed);
    const buf = full.slice(0, full.byteLength - 2);
    expect(() => parseMeshPayload(buf)).toThrow(/truncated in block 4/);
  });

  it("rejects trailing bytes", () => {
    const full = mtil(positions, faces, labels, segments, confirmed);
    const padded = new ArrayBuffer(full.byteLength + 4);
    new Uint8Array(padded).set(new Uint8Array(full));
    expect(() => parseMeshPayload(padded)).toThrow(/trailing bytes/);
  });

  it("rejects per-face blocks of different lengths", () => {
    // two faces but only one label
    const buf = mtil(positions, faces, [3], segments, confirmed);
    expect(() => parseMeshPayload(buf)).toThrow(/block sizes disagree/);
  });
});

interface Reply {
  status?: number;
  statusText?: string;
  body?: unknown;
  raw?: string;
}

function fakeFetch(reply: Reply | ((url: string) => Reply)) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const impl = async (url: string, init?: RequestInit): Promise<Response> => {
    calls.push({ url, init });
    const r = typeof reply === "function" ? reply(url) : reply;
    const body = r.raw ?? JSON.stringify(r.body ?? {});
    return new Response(body, {
      status: r.status ?? 200,
      statusText: r.statusText ?? "",
      headers: { "Content-Type": "application/json" },
    });
  };
  return { impl, calls };
}

describe("ApiClient", () => {
  it("builds tile URLs and strips trailing slashes", async () => {
    const { impl, calls } = fakeFetch({ body: { tiles: ["a", "b"] } });
    const client = new ApiClient("http://host:9/", impl);
    expect(await client.listTiles()).toEqual(["a", "b"]);
    expect(calls[0].url).toBe("http://host:9/tiles");
  });

  it("posts label targets with the class key", async () => {
    const { impl, calls } = fakeFetch({ body: { segments: [4], progress: 0.5 } });
    const client = new ApiClient("http://h", impl);
    const out = await client.label("t1", { faces: [1, 2] }, 5);
    expect(out).toEqual({ segments: [4], progress: 0.5 });
    expect(calls[0].url).toBe("http://h/tiles/t1/label");
    expect(calls[0].init?.method).toBe("POST");
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      faces: [1, 2],
      class: 5,
    });
  });

  it("posts planar split parameters in snake case", async () => {
    const { impl, calls } = fakeFetch({ body: { segment: 12, progress: 0 } });
    const client = new ApiClient("http://h", impl);
    await client.splitPlanar("t1", 3, 0.25, 40);
    expect(JSON.parse(String(calls[0].init?.body))).toEqual({
      segment_id: 3,
      max_distance: 0.25,
      max_angle: 40,
      min_region_faces: 1,
    });
  });

  it("encodes segment filters as query parameters", async () => {
    const { impl, calls } = fakeFetch({ body: { segments: [1, 2] } });
    const client = new ApiClient("http://h", impl);
    await client.filterSegments("t1", {
      probMax: 0.5,
      areaMin: 1,
      areaMax: 2.5,
      klass: 3,
    });
    expect(calls[0].url).toBe(
      "http://h/tiles/t1/segments?prob_max=0.5&area_min=1&area_max=2.5&klass=3",
    );
    await client.filterSegments("t1");
    expect(calls[1].url).toBe("http://h/tiles/t1/segments");
  });

  it("surfaces the server detail on rejection", async () => {
    const { impl } = fakeFetch({
      status: 409,
      body: { detail: "tile is locked by another session" },
    });
    const client = new ApiClient("http://h", impl);
    const err = await client.save("t1").catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(409);
    expect(err.message).toBe("tile is locked by another session");
  });

  it("falls back to the status line for non-JSON errors", async () => {
    const { impl } = fakeFetch({
      status: 500,
      statusText: "Internal Server Error",
      raw: "<html>boom</html>",
    });
    const client = new ApiClient("http://h", impl);
    const err = await client.listTiles().catch((e) => e);
    expect(err.status).toBe(500);
    expect(err.message).toBe("500 Internal Server Error");
  });

  it("wraps network failures", async () => {
    const impl = async (): Promise<Response> => {
      throw new TypeError("fetch failed");
    };
    const client = new ApiClient("http://h", impl);
    const err = await client.listTiles().catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(0);
    expect(err.message).toMatch(/service unreachable/);
  });
});
