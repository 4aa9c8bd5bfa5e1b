/** Fixed class palette and the per-face color modes of the viewer. */

export const CLASS_NAMES = [
  "unclassified",
  "terrain",
  "high_vegetation",
  "building",
  "water",
  "vehicle",
  "boat",
] as const;

export type ClassId = 0 | 1 | 2 | 3 | 4 | 5 | 6;

// RGB 0..255, one row per class id
export const CLASS_COLORS: ReadonlyArray<readonly [number, number, number]> = [
  [96, 96, 96], // unclassified: dark gray
  [170, 125, 75], // terrain: earth brown
  [60, 160, 60], // high vegetation: leaf green
  [230, 150, 70], // building: ochre
  [60, 110, 220], // water: blue
  [220, 60, 60], // vehicle: red
  [245, 245, 245], // boat: near-white
];

/** Segments at or below the probability threshold light up in this color. */
export const LOW_CONFIDENCE_COLOR: readonly [number, number, number] = [
  255, 60, 180,
];

export function cssColor(cls: number): string {
  const c = CLASS_COLORS[cls] ?? CLASS_COLORS[0];
  return `rgb(${c[0]}, ${c[1]}, ${c[2]})`;
}

export type ColorMode = "semantic" | "probability" | "blend";

export interface ColorModeInputs {
  labels: ArrayLike<number>; // class per face (read-only)
  segments: ArrayLike<number>; // segment id per face (read-only)
  faceColors?: number[][]; // mean RGB per face, for blend mode
  segmentProbs?: Record<string, number[] | null>;
  /** blend: weight of the semantic overlay, 0 = pure face color. */
  overlayAlpha?: number;
  /** probability: flag segments with top prob <= this. */
  probThreshold?: number;
}

function topProb(probs: number[] | null | undefined): number {
  // no vector means "not predicted": treated as fully confident, the same
  // convention the server filter uses
  if (!probs || probs.length === 0) return 1.0;
  return Math.max(...probs);
}

/**
 * Per-face RGB (normalized 0..1, 3 floats per face) for a color mode.
 *
 * Pure function of its inputs: label data is never mutated, so switching
 * modes can never change annotation state.
 */
export function faceColorArray(
  mode: ColorMode,
  inputs: ColorModeInputs,
): Float32Array {
  const n = inputs.labels.length;
  const out = new Float32Array(n * 3);
  const alpha = inputs.overlayAlpha ?? 0.6;
  const threshold = inputs.probThreshold ?? 0.0;

  for (let f = 0; f < n; f++) {
    const semantic = CLASS_COLORS[inputs.labels[f]] ?? CLASS_COLORS[0];
    let rgb: readonly [number, number, number];
    if (mode === "semantic") {
      rgb = semantic;
    } else if (mode === "blend") {
      const base = inputs.faceColors?.[f] ?? [128, 128, 128];
      rgb = [
        base[0] * (1 - alpha) + semantic[0] * alpha,
        base[1] * (1 - alpha) + semantic[1] * alpha,
        base[2] * (1 - alpha) + semantic[2] * alpha,
      ];
    } else {
      const p = topProb(inputs.segmentProbs?.[String(inputs.segments[f])]);
      if (p <= threshold) {
        rgb = LOW_CONFIDENCE_COLOR;
      } else {
        // confident faces fade from mid-gray (p=0) to white (p=1)
        const v = 120 + 135 * p;
        rgb = [v, v, v];
      }
    }
    out[f * 3] = rgb[0] / 255;
    out[f * 3 + 1] = rgb[1] / 255;
    out[f * 3 + 2] = rgb[2] / 255;
  }
  return out;
}
