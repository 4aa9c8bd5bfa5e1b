/** Tile viewer: three.js rendering plus the annotation toolbar.
 *
 * All label state lives on the server.  Every edit goes through the HTTP
 * client and the mesh is re-read from the response before anything is
 * redrawn, so a rejected edit changes nothing on screen.
 */

import * as THREE from "three";
import { ApiClient, ApiError, type MeshBuffers, type TilePayload } from "./api.js";
import {
  CLASS_NAMES,
  cssColor,
  faceColorArray,
  type ColorMode,
} from "./palette.js";
import {
  buildAdjacency,
  borderLinePositions,
  expandSelection,
  facesOfSegments,
  reduceSelection,
  segmentBorderEdges,
} from "./geometry.js";
import { lassoSelect, Selection, type Point2 } from "./selection.js";
import {
  cameraPosition,
  defaultViewState,
  orbit,
  pan,
  zoom,
  type ViewState,
} from "./viewstate.js";

type Tool = "orbit" | "brush" | "lasso";

const SELECTION_TINT = new THREE.Color(1.0, 0.95, 0.2);

export class TileViewer {
  private readonly client: ApiClient;
  private readonly tileId: string;
  private readonly container: HTMLElement;

  private payload!: TilePayload;
  private buffers!: MeshBuffers;
  private adjacency: number[][] = [];
  private readonly selection = new Selection();
  private view: ViewState = defaultViewState();
  private tool: Tool = "orbit";
  private activeClass = 3;

  private renderer!: THREE.WebGLRenderer;
  private scene!: THREE.Scene;
  private camera!: THREE.PerspectiveCamera;
  private mesh!: THREE.Mesh;
  private borderLines: THREE.LineSegments | null = null;
  private readonly raycaster = new THREE.Raycaster();

  private lassoCanvas!: HTMLCanvasElement;
  private lassoPath: Point2[] = [];
  private progressFill!: HTMLElement;
  private progressText!: HTMLElement;
  private toastBox!: HTMLElement;
  private dragButton = -1;
  private lastPointer: Point2 = { x: 0, y: 0 };

  constructor(container: HTMLElement, client: ApiClient, tileId: string) {
    this.container = container;
    this.client = client;
    this.tileId = tileId;
  }

  async start(): Promise<void> {
    this.payload = await this.client.getTile(this.tileId);
    this.buffers = await this.client.getMeshBuffers(this.tileId);
    this.adjacency = buildAdjacency(this.buffers.faces);
    this.buildDom();
    this.buildScene();
    this.frameMesh();
    this.refreshColors();
    this.refreshBorders();
    this.refreshProgress();
    this.renderLoop();
  }

  // ------------------------------------------------------------------ scene

  private buildScene(): void {
    const canvasHost = this.container.querySelector(".mv-canvas") as HTMLElement;
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(canvasHost.clientWidth, canvasHost.clientHeight);
    canvasHost.appendChild(this.renderer.domElement);

    this.scene = new THREE.Scene();
    this.scene.background = new THREE.Color(0x181a1f);
    this.camera = new THREE.PerspectiveCamera(
      50,
      canvasHost.clientWidth / canvasHost.clientHeight,
      0.1,
      5000,
    );

    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute(
      "position",
      new THREE.BufferAttribute(this.unindexedPositions(), 3),
    );
    const colors = new Float32Array(this.faceCount() * 9);
    geometry.setAttribute("color", new THREE.BufferAttribute(colors, 3));
    geometry.computeVertexNormals();
    const material = new THREE.MeshLambertMaterial({
      vertexColors: true,
      side: THREE.DoubleSide,
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);

    this.scene.add(new THREE.AmbientLight(0xffffff, 0.75));
    const sun = new THREE.DirectionalLight(0xffffff, 1.4);
    sun.position.set(1, 2, 3);
    this.scene.add(sun);

    this.bindPointerEvents(canvasHost);
  }

  private faceCount(): number {
    return this.buffers.faces.length / 3;
  }

  /** Per-face vertex triples so each face can carry a flat color. */
  private unindexedPositions(): Float32Array {
    const faces = this.buffers.faces;
    const pos = this.buffers.positions;
    const out = new Float32Array(faces.length * 3);
    for (let i = 0; i < faces.length; i++) {
      const v = faces[i] * 3;
      out[i * 3] = pos[v];
      out[i * 3 + 1] = pos[v + 1];
      out[i * 3 + 2] = pos[v + 2];
    }
    return out;
  }

  private frameMesh(): void {
    this.mesh.geometry.computeBoundingSphere();
    const sphere = this.mesh.geometry.boundingSphere;
    if (!sphere) return;
    this.view = {
      ...this.view,
      camera: {
        ...this.view.camera,
        pivot: { x: sphere.center.x, y: sphere.center.y, z: sphere.center.z },
        distance: Math.max(sphere.radius * 2.2, 1),
      },
    };
  }

  private renderLoop(): void {
    const tick = () => {
      const eye = cameraPosition(this.view.camera);
      this.camera.position.set(eye.x, eye.y, eye.z);
      this.camera.up.set(0, 0, 1);
      const pivot = this.view.camera.pivot;
      this.camera.lookAt(pivot.x, pivot.y, pivot.z);
      this.renderer.render(this.scene, this.camera);
      requestAnimationFrame(tick);
    };
    tick();
  }

  // ----------------------------------------------------------------- colors

  private refreshColors(): void {
    const perFace = faceColorArray(this.view.colorMode, {
      labels: this.payload.labels,
      segments: this.payload.segments,
      faceColors: this.payload.face_colors,
      segmentProbs: this.payload.segment_probs,
      overlayAlpha: this.view.overlayAlpha,
      probThreshold: this.view.probThreshold,
    });
    const attr = this.mesh.geometry.getAttribute("color") as THREE.BufferAttribute;
    const out = attr.array as Float32Array;
    const tint = SELECTION_TINT;
    for (let f = 0; f < this.faceCount(); f++) {
      const selected = this.selection.has(f);
      for (let v = 0; v < 3; v++) {
        for (let c = 0; c < 3; c++) {
          const base = perFace[f * 3 + c];
          const channel = tint.toArray()[c] as number;
          out[f * 9 + v * 3 + c] = selected ? base * 0.35 + channel * 0.65 : base;
        }
      }
    }
    attr.needsUpdate = true;
  }

  private refreshBorders(): void {
    if (this.borderLines) {
      this.scene.remove(this.borderLines);
      this.borderLines.geometry.dispose();
      this.borderLines = null;
    }
    if (!this.view.showBorders) return;
    const edges = segmentBorderEdges(this.buffers.faces, this.payload.segments);
    const positions = borderLinePositions(edges, this.buffers.positions);
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(positions, 3));
    const material = new THREE.LineBasicMaterial({ color: 0x10ffe0 });
    this.borderLines = new THREE.LineSegments(geometry, material);
    this.scene.add(this.borderLines);
  }

  private refreshProgress(): void {
    const pct = (this.payload.progress * 100).toFixed(1);
    this.progressFill.style.width = `${pct}%`;
    this.progressText.textContent = `${pct}% confirmed`;
  }

  // ------------------------------------------------------------ server sync

  /** Re-read the tile so the screen always shows server truth. */
  private async refresh(): Promise<void> {
    this.payload = await this.client.getTile(this.tileId);
    this.buffers = await this.client.getMeshBuffers(this.tileId);
    this.adjacency = buildAdjacency(this.buffers.faces);
    this.refreshColors();
    this.refreshBorders();
    this.refreshProgress();
  }

  private async commitLabel(cls: number): Promise<void> {
    const faces = this.selection.toArray();
    if (!faces.length) {
      this.toast("nothing selected");
      return;
    }
    const target = this.selection.coversWholeSegments(this.payload.segments)
      ? { segments: this.selection.segmentIds(this.payload.segments) }
      : { faces };
    try {
      await this.client.label(this.tileId, target, cls);
    } catch (err) {
      this.toast(this.describe(err));
      return;
    }
    this.selection.clear();
    await this.refresh();
  }

  private async splitPlanarSelected(): Promise<void> {
    const segs = this.selection.segmentIds(this.payload.segments);
    if (segs.length !== 1) {
      this.toast("planar split needs exactly one selected segment");
      return;
    }
    try {
      await this.client.splitPlanar(this.tileId, segs[0], 0.25, 40);
    } catch (err) {
      this.toast(this.describe(err));
      return;
    }
    this.selection.clear();
    await this.refresh();
  }

  private async selectByClass(cls: number): Promise<void> {
    let ids: number[];
    try {
      ids = await this.client.filterSegments(this.tileId, { klass: cls });
    } catch (err) {
      this.toast(this.describe(err));
      return;
    }
    this.selection.replaceWith(facesOfSegments(ids, this.payload.segments));
    this.refreshColors();
  }

  private async selectUncertain(): Promise<void> {
    let ids: number[];
    try {
      ids = await this.client.filterSegments(this.tileId, {
        probMax: this.view.probThreshold,
      });
    } catch (err) {
      this.toast(this.describe(err));
      return;
    }
    this.selection.replaceWith(facesOfSegments(ids, this.payload.segments));
    this.refreshColors();
  }

  private async save(): Promise<void> {
    try {
      await this.client.save(this.tileId);
      this.toast("saved");
    } catch (err) {
      this.toast(this.describe(err));
    }
  }

  private describe(err: unknown): string {
    if (err instanceof ApiError) return err.message;
    return String(err);
  }

  // ---------------------------------------------------------------- picking

  private pickFace(px: number, py: number): number | null {
    const rect = this.renderer.domElement.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((px - rect.left) / rect.width) * 2 - 1,
      -((py - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    const hits = this.raycaster.intersectObject(this.mesh);
    if (!hits.length || hits[0].faceIndex === undefined) return null;
    return hits[0].faceIndex ?? null;
  }

  /**
   * Screen coordinates of each face centroid; null when the face is behind
   * the camera, outside the viewport, or back-facing.  Occlusion by nearer
   * geometry is deliberately ignored, matching how the lasso feels in other
   * mesh editors.
   */
  private faceScreenPoints(): (Point2 | null)[] {
    const rect = this.renderer.domElement.getBoundingClientRect();
    const faces = this.buffers.faces;
    const pos = this.buffers.positions;
    const eye = this.camera.position;
    const out: (Point2 | null)[] = [];
    const centroid = new THREE.Vector3();
    const a = new THREE.Vector3();
    const b = new THREE.Vector3();
    const c = new THREE.Vector3();
    const normal = new THREE.Vector3();
    const toEye = new THREE.Vector3();
    for (let f = 0; f < this.faceCount(); f++) {
      a.fromArray(pos, faces[f * 3] * 3);
      b.fromArray(pos, faces[f * 3 + 1] * 3);
      c.fromArray(pos, faces[f * 3 + 2] * 3);
      centroid.copy(a).add(b).add(c).multiplyScalar(1 / 3);
      normal.copy(b).sub(a).cross(c.sub(a));
      toEye.copy(eye).sub(centroid);
      if (normal.dot(toEye) <= 0) {
        out.push(null);
        continue;
      }
      centroid.project(this.camera);
      if (
        centroid.z < -1 ||
        centroid.z > 1 ||
        Math.abs(centroid.x) > 1 ||
        Math.abs(centroid.y) > 1
      ) {
        out.push(null);
        continue;
      }
      out.push({
        x: ((centroid.x + 1) / 2) * rect.width,
        y: ((1 - centroid.y) / 2) * rect.height,
      });
    }
    return out;
  }

  private bindPointerEvents(host: HTMLElement): void {
    const el = this.renderer.domElement;
    el.addEventListener("pointerdown", (ev) => {
      this.dragButton = ev.button;
      this.lastPointer = { x: ev.clientX, y: ev.clientY };
      if (this.tool === "lasso" && ev.button === 0) {
        const rect = el.getBoundingClientRect();
        this.lassoPath = [
          { x: ev.clientX - rect.left, y: ev.clientY - rect.top },
        ];
      } else if (this.tool === "brush" && ev.button === 0) {
        this.brushAt(ev.clientX, ev.clientY, ev.shiftKey);
      }
    });
    el.addEventListener("pointermove", (ev) => {
      const dx = ev.clientX - this.lastPointer.x;
      const dy = ev.clientY - this.lastPointer.y;
      this.lastPointer = { x: ev.clientX, y: ev.clientY };
      if (this.dragButton === -1) return;
      if (this.tool === "lasso" && this.dragButton === 0) {
        const rect = el.getBoundingClientRect();
        this.lassoPath.push({
          x: ev.clientX - rect.left,
          y: ev.clientY - rect.top,
        });
        this.drawLasso();
        return;
      }
      if (this.tool === "brush" && this.dragButton === 0) {
        this.brushAt(ev.clientX, ev.clientY, ev.shiftKey);
        return;
      }
      if (this.dragButton === 2 || (this.dragButton === 0 && ev.shiftKey)) {
        const scale = this.view.camera.distance * 0.002;
        this.view = {
          ...this.view,
          camera: pan(this.view.camera, -dx * scale, dy * scale),
        };
      } else if (this.dragButton === 0) {
        this.view = {
          ...this.view,
          camera: orbit(this.view.camera, -dx * 0.008, dy * 0.008),
        };
      }
    });
    el.addEventListener("pointerup", (ev) => {
      if (this.tool === "lasso" && this.dragButton === 0) {
        this.finishLasso(ev.shiftKey);
      }
      this.dragButton = -1;
    });
    el.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.view = {
        ...this.view,
        camera: zoom(this.view.camera, ev.deltaY > 0 ? 1.12 : 1 / 1.12),
      };
    });
    el.addEventListener("contextmenu", (ev) => ev.preventDefault());
    host.appendChild(this.lassoCanvas);
  }

  private brushAt(px: number, py: number, remove: boolean): void {
    const face = this.pickFace(px, py);
    if (face === null) return;
    const seg = this.payload.segments[face];
    this.selection.update(
      facesOfSegments([seg], this.payload.segments),
      remove ? "remove" : "add",
    );
    this.refreshColors();
  }

  private drawLasso(): void {
    const ctx = this.lassoCanvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.lassoCanvas.width, this.lassoCanvas.height);
    if (this.lassoPath.length < 2) return;
    ctx.strokeStyle = "#ffe94a";
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(this.lassoPath[0].x, this.lassoPath[0].y);
    for (const p of this.lassoPath.slice(1)) ctx.lineTo(p.x, p.y);
    ctx.closePath();
    ctx.stroke();
  }

  private finishLasso(remove: boolean): void {
    const ctx = this.lassoCanvas.getContext("2d");
    ctx?.clearRect(0, 0, this.lassoCanvas.width, this.lassoCanvas.height);
    const polygon = this.lassoPath;
    this.lassoPath = [];
    let faces: number[];
    try {
      faces = lassoSelect(polygon, this.faceScreenPoints());
    } catch (err) {
      this.toast(this.describe(err));
      return;
    }
    this.selection.update(faces, remove ? "remove" : "add");
    this.refreshColors();
  }

  // --------------------------------------------------------------------- ui

  private buildDom(): void {
    this.container.innerHTML = "";
    this.container.classList.add("mv-root");

    const bar = document.createElement("div");
    bar.className = "mv-toolbar";

    for (const t of ["orbit", "brush", "lasso"] as Tool[]) {
      const btn = this.button(t, () => {
        this.tool = t;
        bar
          .querySelectorAll(".mv-tool")
          .forEach((e) => e.classList.remove("mv-active"));
        btn.classList.add("mv-active");
      });
      btn.classList.add("mv-tool");
      if (t === this.tool) btn.classList.add("mv-active");
      bar.appendChild(btn);
    }

    bar.appendChild(this.button("grow", async () => {
      this.selection.replaceWith(
        expandSelection(this.selection.toSet(), this.adjacency),
      );
      this.refreshColors();
    }));
    bar.appendChild(this.button("shrink", async () => {
      this.selection.replaceWith(
        reduceSelection(this.selection.toSet(), this.adjacency),
      );
      this.refreshColors();
    }));
    bar.appendChild(this.button("split planar", () => this.splitPlanarSelected()));
    bar.appendChild(this.button("uncertain", () => this.selectUncertain()));
    bar.appendChild(this.button("clear", async () => {
      this.selection.clear();
      this.refreshColors();
    }));
    bar.appendChild(this.button("save", () => this.save()));

    const modes = document.createElement("select");
    for (const m of ["semantic", "probability", "blend"] as ColorMode[]) {
      const opt = document.createElement("option");
      opt.value = m;
      opt.textContent = m;
      modes.appendChild(opt);
    }
    modes.addEventListener("change", () => {
      this.view = { ...this.view, colorMode: modes.value as ColorMode };
      this.refreshColors();
    });
    bar.appendChild(modes);

    const borders = document.createElement("label");
    const check = document.createElement("input");
    check.type = "checkbox";
    check.checked = this.view.showBorders;
    check.addEventListener("change", () => {
      this.view = { ...this.view, showBorders: check.checked };
      this.refreshBorders();
    });
    borders.appendChild(check);
    borders.appendChild(document.createTextNode(" borders"));
    bar.appendChild(borders);

    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "1";
    slider.step = "0.01";
    slider.value = String(this.view.probThreshold);
    slider.title = "probability threshold";
    slider.addEventListener("input", () => {
      this.view = { ...this.view, probThreshold: Number(slider.value) };
      if (this.view.colorMode === "probability") this.refreshColors();
    });
    bar.appendChild(slider);

    const classRow = document.createElement("div");
    classRow.className = "mv-classes";
    CLASS_NAMES.forEach((name, cls) => {
      const btn = this.button(`${cls} ${name}`, () => this.commitLabel(cls));
      btn.style.borderBottom = `3px solid ${cssColor(cls)}`;
      if (cls === this.activeClass) btn.classList.add("mv-active");
      btn.addEventListener("contextmenu", (ev) => {
        ev.preventDefault();
        this.selectByClass(cls);
      });
      classRow.appendChild(btn);
    });

    const progress = document.createElement("div");
    progress.className = "mv-progress";
    this.progressFill = document.createElement("div");
    this.progressFill.className = "mv-progress-fill";
    progress.appendChild(this.progressFill);
    this.progressText = document.createElement("span");
    this.progressText.className = "mv-progress-text";
    progress.appendChild(this.progressText);

    const canvasHost = document.createElement("div");
    canvasHost.className = "mv-canvas";

    this.lassoCanvas = document.createElement("canvas");
    this.lassoCanvas.className = "mv-lasso";

    this.toastBox = document.createElement("div");
    this.toastBox.className = "mv-toast";

    this.container.appendChild(bar);
    this.container.appendChild(classRow);
    this.container.appendChild(progress);
    this.container.appendChild(canvasHost);
    this.container.appendChild(this.toastBox);

    const size = () => {
      this.lassoCanvas.width = canvasHost.clientWidth;
      this.lassoCanvas.height = canvasHost.clientHeight;
    };
    window.addEventListener("resize", size);
    size();

    window.addEventListener("keydown", (ev) => {
      const cls = Number(ev.key);
      if (!Number.isNaN(cls) && cls >= 0 && cls <= 6) {
        this.activeClass = cls;
        this.commitLabel(cls);
      }
    });
  }

  private button(label: string, onClick: () => void | Promise<void>): HTMLButtonElement {
    const btn = document.createElement("button");
    btn.textContent = label;
    btn.addEventListener("click", () => {
      void onClick();
    });
    return btn;
  }

  private toast(message: string): void {
    this.toastBox.textContent = message;
    this.toastBox.classList.add("mv-visible");
    setTimeout(() => this.toastBox.classList.remove("mv-visible"), 3500);
  }
}
