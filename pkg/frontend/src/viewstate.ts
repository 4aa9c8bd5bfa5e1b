/** Camera and display state. Holds no label data by construction. */

import type { ColorMode } from "./palette.js";

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}

export interface CameraState {
  pivot: Vec3;
  /** azimuth around +z, radians */
  theta: number;
  /** inclination from the xy plane, radians */
  phi: number;
  distance: number;
}

const PHI_LIMIT = Math.PI / 2 - 1e-3;
const MIN_DISTANCE = 0.05;

export function orbit(
  camera: CameraState,
  dTheta: number,
  dPhi: number,
): CameraState {
  return {
    ...camera,
    theta: camera.theta + dTheta,
    phi: Math.max(-PHI_LIMIT, Math.min(PHI_LIMIT, camera.phi + dPhi)),
  };
}

export function zoom(camera: CameraState, factor: number): CameraState {
  return {
    ...camera,
    distance: Math.max(MIN_DISTANCE, camera.distance * factor),
  };
}

/** Camera position implied by the orbit state (z-up). */
export function cameraPosition(camera: CameraState): Vec3 {
  const r = camera.distance * Math.cos(camera.phi);
  return {
    x: camera.pivot.x + r * Math.cos(camera.theta),
    y: camera.pivot.y + r * Math.sin(camera.theta),
    z: camera.pivot.z + camera.distance * Math.sin(camera.phi),
  };
}

/** Move the pivot in the camera's right/up screen plane. */
export function pan(camera: CameraState, dx: number, dy: number): CameraState {
  const position = cameraPosition(camera);
  const forward = normalize({
    x: camera.pivot.x - position.x,
    y: camera.pivot.y - position.y,
    z: camera.pivot.z - position.z,
  });
  const right = normalize(cross(forward, { x: 0, y: 0, z: 1 }));
  const up = cross(right, forward);
  return {
    ...camera,
    pivot: {
      x: camera.pivot.x + right.x * dx + up.x * dy,
      y: camera.pivot.y + right.y * dx + up.y * dy,
      z: camera.pivot.z + right.z * dx + up.z * dy,
    },
  };
}

export function setPivot(camera: CameraState, pivot: Vec3): CameraState {
  return { ...camera, pivot: { ...pivot } };
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return {
    x: a.y * b.z - a.z * b.y,
    y: a.z * b.x - a.x * b.z,
    z: a.x * b.y - a.y * b.x,
  };
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v.x, v.y, v.z) || 1;
  return { x: v.x / n, y: v.y / n, z: v.z / n };
}

export interface ViewState {
  camera: CameraState;
  colorMode: ColorMode;
  showBorders: boolean;
  /** probability mode: flag segments with top prob <= this */
  probThreshold: number;
  /** blend mode: semantic overlay weight */
  overlayAlpha: number;
}

export function defaultViewState(): ViewState {
  return {
    camera: {
      pivot: { x: 0, y: 0, z: 0 },
      theta: Math.PI / 4,
      phi: Math.PI / 5,
      distance: 30,
    },
    colorMode: "semantic",
    showBorders: true,
    probThreshold: 0.6,
    overlayAlpha: 0.6,
  };
}
