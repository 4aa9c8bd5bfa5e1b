import { describe, expect, it } from "vitest";
import {
  CLASS_COLORS,
  CLASS_NAMES,
  cssColor,
  faceColorArray,
  LOW_CONFIDENCE_COLOR,
  type ColorModeInputs,
} from "../src/palette.js";

function rgbOf(out: Float32Array, face: number): number[] {
  return [...out.slice(face * 3, face * 3 + 3)].map((v) => v * 255);
}

// buffer colors are float32; compare with a sub-channel tolerance
function expectRgb(got: number[], want: readonly number[]): void {
  want.forEach((w, c) => expect(got[c]).toBeCloseTo(w, 3));
}

function isColor(got: number[], want: readonly number[]): boolean {
  return want.every((w, c) => Math.abs(got[c] - w) < 1e-3);
}

describe("class palette", () => {
  it("has one color and name per class id", () => {
    expect(CLASS_NAMES).toHaveLength(7);
    expect(CLASS_COLORS).toHaveLength(7);
    expect(CLASS_NAMES[0]).toBe("unclassified");
    expect(CLASS_NAMES[3]).toBe("building");
    expect(CLASS_NAMES[6]).toBe("boat");
  });

  it("formats css colors", () => {
    const [r, g, b] = CLASS_COLORS[4];
    expect(cssColor(4)).toBe(`rgb(${r}, ${g}, ${b})`);
  });
});

describe("semantic mode", () => {
  it("maps labels straight onto the palette", () => {
    const out = faceColorArray("semantic", {
      labels: [0, 3, 6],
      segments: [0, 0, 0],
    });
    expectRgb(rgbOf(out, 0), CLASS_COLORS[0]);
    expectRgb(rgbOf(out, 1), CLASS_COLORS[3]);
    expectRgb(rgbOf(out, 2), CLASS_COLORS[6]);
  });
});

describe("blend mode", () => {
  it("mixes mesh color and class color by alpha", () => {
    const out = faceColorArray("blend", {
      labels: [1],
      segments: [0],
      faceColors: [[100, 200, 50]],
      overlayAlpha: 0.25,
    });
    const semantic = CLASS_COLORS[1];
    const expected = [100, 200, 50].map((base, c) =>
      base * 0.75 + semantic[c] * 0.25,
    );
    const got = rgbOf(out, 0);
    expected.forEach((e, c) => expect(got[c]).toBeCloseTo(e, 3));
  });

  it("substitutes gray when the mesh has no color", () => {
    const out = faceColorArray("blend", {
      labels: [2],
      segments: [0],
      overlayAlpha: 0,
    });
    const got = rgbOf(out, 0);
    got.forEach((v) => expect(v).toBeCloseTo(128, 3));
  });
});

describe("probability mode", () => {
  const inputs: ColorModeInputs = {
    labels: [1, 1, 1],
    segments: [10, 11, 12],
    segmentProbs: {
      "10": [0.1, 0.1, 0.55, 0.1, 0.1, 0.05],
      "11": [0.0, 0.0, 0.0, 0.95, 0.05, 0.0],
      "12": null, // never predicted: treated as confident
    },
  };

  it("flags exactly the segments at or below the threshold", () => {
    const out = faceColorArray("probability", {
      ...inputs,
      probThreshold: 0.6,
    });
    expectRgb(rgbOf(out, 0), LOW_CONFIDENCE_COLOR);
    expect(isColor(rgbOf(out, 1), LOW_CONFIDENCE_COLOR)).toBe(false);
    expect(isColor(rgbOf(out, 2), LOW_CONFIDENCE_COLOR)).toBe(false);
  });

  it("treats the threshold as inclusive", () => {
    const out = faceColorArray("probability", {
      ...inputs,
      probThreshold: 0.55,
    });
    expectRgb(rgbOf(out, 0), LOW_CONFIDENCE_COLOR);
  });

  it("flags nothing at threshold zero", () => {
    const out = faceColorArray("probability", {
      ...inputs,
      probThreshold: 0,
    });
    for (let f = 0; f < 3; f++) {
      expect(isColor(rgbOf(out, f), LOW_CONFIDENCE_COLOR)).toBe(false);
    }
  });

  it("shades confident segments by their top probability", () => {
    const out = faceColorArray("probability", { ...inputs, probThreshold: 0 });
    const g0 = rgbOf(out, 0)[0]; // top 0.55
    const g1 = rgbOf(out, 1)[0]; // top 0.95
    const g2 = rgbOf(out, 2)[0]; // null -> 1.0
    expect(g0).toBeLessThan(g1);
    expect(g1).toBeLessThan(g2);
    expect(g2).toBeCloseTo(255, 3);
  });
});

describe("color modes never touch annotation data", () => {
  it("leaves every input untouched in all modes", () => {
    const labels = [0, 3, 5];
    const segments = [1, 1, 2];
    const faceColors = [
      [10, 20, 30],
      [40, 50, 60],
      [70, 80, 90],
    ];
    const segmentProbs = {
      "1": [0.2, 0.2, 0.2, 0.2, 0.1, 0.1],
      "2": null,
    };
    const frozen = JSON.stringify({ labels, segments, faceColors, segmentProbs });
    for (const mode of ["semantic", "probability", "blend"] as const) {
      faceColorArray(mode, {
        labels,
        segments,
        faceColors,
        segmentProbs,
        overlayAlpha: 0.4,
        probThreshold: 0.5,
      });
    }
    expect(JSON.stringify({ labels, segments, faceColors, segmentProbs })).toBe(
      frozen,
    );
  });
});
