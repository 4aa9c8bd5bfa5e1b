import { describe, expect, it } from "vitest";
import {
  cameraPosition,
  defaultViewState,
  orbit,
  pan,
  zoom,
  type CameraState,
} from "../src/viewstate.js";

const base: CameraState = {
  pivot: { x: 0, y: 0, z: 0 },
  theta: 0,
  phi: 0,
  distance: 10,
};

describe("orbit", () => {
  it("accumulates azimuth and clamps inclination short of the poles", () => {
    const turned = orbit(base, 0.5, 0);
    expect(turned.theta).toBeCloseTo(0.5, 12);
    const up = orbit(base, 0, 10);
    expect(up.phi).toBeLessThan(Math.PI / 2);
    expect(up.phi).toBeGreaterThan(Math.PI / 2 - 0.01);
    const down = orbit(base, 0, -10);
    expect(down.phi).toBeGreaterThan(-Math.PI / 2);
  });

  it("does not move the pivot or the distance", () => {
    const turned = orbit(base, 1, 0.3);
    expect(turned.pivot).toEqual(base.pivot);
    expect(turned.distance).toBe(base.distance);
  });
});

describe("zoom", () => {
  it("scales the distance and never collapses to zero", () => {
    expect(zoom(base, 2).distance).toBeCloseTo(20, 12);
    expect(zoom(base, 0).distance).toBeGreaterThan(0);
    expect(zoom(zoom(base, 1e-9), 1).distance).toBeGreaterThan(0);
  });
});

describe("cameraPosition", () => {
  it("sits on the orbit sphere around the pivot", () => {
    const cam: CameraState = {
      pivot: { x: 1, y: 2, z: 3 },
      theta: 0,
      phi: 0,
      distance: 5,
    };
    const eye = cameraPosition(cam);
    expect(eye.x).toBeCloseTo(6, 12);
    expect(eye.y).toBeCloseTo(2, 12);
    expect(eye.z).toBeCloseTo(3, 12);
    const top = cameraPosition({ ...cam, phi: Math.PI / 2 - 1e-9 });
    expect(top.z).toBeCloseTo(8, 6);
  });
});

describe("pan", () => {
  it("moves the pivot in the screen plane", () => {
    // camera on +x looking at origin: screen-right is +y, screen-up is +z
    const panned = pan(base, 2, 3);
    expect(panned.pivot.x).toBeCloseTo(0, 12);
    expect(panned.pivot.y).toBeCloseTo(2, 12);
    expect(panned.pivot.z).toBeCloseTo(3, 12);
  });

  it("keeps the viewing direction and distance", () => {
    const panned = pan(base, 2, 3);
    expect(panned.theta).toBe(base.theta);
    expect(panned.phi).toBe(base.phi);
    expect(panned.distance).toBe(base.distance);
  });

  it("pan distance is preserved for tilted cameras", () => {
    const cam = orbit(base, 0.7, 0.4);
    const panned = pan(cam, 1, 1);
    const d = Math.hypot(
      panned.pivot.x - cam.pivot.x,
      panned.pivot.y - cam.pivot.y,
      panned.pivot.z - cam.pivot.z,
    );
    expect(d).toBeCloseTo(Math.SQRT2, 9);
  });
});

describe("camera operations are pure", () => {
  it("never mutates the input state", () => {
    const before = JSON.stringify(base);
    orbit(base, 1, 1);
    zoom(base, 3);
    pan(base, 5, -5);
    expect(JSON.stringify(base)).toBe(before);
  });
});

describe("view state", () => {
  it("holds only camera and display settings, no annotation data", () => {
    const view = defaultViewState();
    expect(Object.keys(view).sort()).toEqual([
      "camera",
      "colorMode",
      "overlayAlpha",
      "probThreshold",
      "showBorders",
    ]);
  });

  it("display changes leave the camera untouched", () => {
    const view = defaultViewState();
    const recolored = { ...view, colorMode: "probability" as const };
    expect(recolored.camera).toBe(view.camera);
    const threshold = { ...view, probThreshold: 0.8 };
    expect(threshold.camera).toBe(view.camera);
  });
});
