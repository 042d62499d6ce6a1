/**
 * Design explorer: 9 parameter sliders (bounds from /meta), live thinning
 * heatmap, as-formed 3D view, summary readouts, and a pin slot for A/B
 * what-if comparison.
 */
import * as THREE from "three";

import { fetchMeta, fetchPrediction, ServiceError, violationFields, type Meta, type PredictResponse } from "./api";
import { renderHeatmap, SCALE_MAX, SCALE_MIN } from "./colormap";
import { DebouncedRequester } from "./debounce";
import { decodeBase64Fqt, FqtDecodeError } from "./fqt";
import { formatMillimetres, formatPercent } from "./format";
import { buildAsFormedMesh, triangulate } from "./mesh";

const BASE_URL = "";
const DEBOUNCE_MS = 150;

interface DecodedView {
  thinning: Float32Array;
  displacement: Float32Array;
  mask: Float32Array;
  n: number;
  response: PredictResponse;
}

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function showError(message: string): void {
  const panel = el<HTMLDivElement>("error-panel");
  panel.textContent = message;
  panel.hidden = false;
}

function clearError(): void {
  el<HTMLDivElement>("error-panel").hidden = true;
}

function decodeResponse(response: PredictResponse, n: number): DecodedView {
  const thinning = decodeBase64Fqt(response.thinning);
  const displacement = decodeBase64Fqt(response.displacement);
  const mask = decodeBase64Fqt(response.mask);
  return {
    thinning: thinning.data,
    displacement: displacement.data,
    mask: mask.data,
    n,
    response,
  };
}

function paintHeatmap(canvas: HTMLCanvasElement, view: DecodedView): void {
  const { n } = view;
  canvas.width = n;
  canvas.height = n;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const pixels = renderHeatmap(view.thinning, view.mask, n);
  ctx.putImageData(new ImageData(pixels, n, n), 0, 0);
}

function updateSummary(prefix: string, view: DecodedView): void {
  const s = view.response.summary;
  el(`${prefix}-max-thinning`).textContent = formatPercent(s.max_thinning);
  el(`${prefix}-wrinkle`).textContent = formatMillimetres(s.max_wrinkle_height_mm);
  el(`${prefix}-latency`).textContent = `${view.response.latency_ms.toFixed(0)} ms`;
}

class SurfaceView {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private mesh: THREE.Mesh | null = null;

  constructor(canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(40, 1, 1, 5000);
    this.camera.position.set(900, -700, 700);
    this.camera.up.set(0, 0, 1);
    this.camera.lookAt(370, 370, 0);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.6));
    const sun = new THREE.DirectionalLight(0xffffff, 0.8);
    sun.position.set(500, -500, 800);
    this.scene.add(sun);
  }

  update(view: DecodedView): void {
    const built = buildAsFormedMesh(view.displacement, view.thinning, view.mask, view.n);
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.Float32BufferAttribute(Float32Array.from(built.vertices), 3));
    geometry.setIndex(new THREE.Uint32BufferAttribute(triangulate(built.faces), 1));
    geometry.computeVertexNormals();
    const colors = new Float32Array(built.thinning.length * 3);
    for (let i = 0; i < built.thinning.length; i++) {
      const t = Math.min(1, Math.max(0, (built.thinning[i] - SCALE_MIN) / (SCALE_MAX - SCALE_MIN)));
      colors[3 * i] = t;
      colors[3 * i + 1] = 0.2;
      colors[3 * i + 2] = 1 - t;
    }
    geometry.setAttribute("color", new THREE.Float32BufferAttribute(colors, 3));
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
    }
    this.mesh = new THREE.Mesh(
      geometry,
      new THREE.MeshLambertMaterial({ vertexColors: true, side: THREE.DoubleSide }),
    );
    this.scene.add(this.mesh);
    this.renderer.render(this.scene, this.camera);
  }
}

async function boot(): Promise<void> {
  let meta: Meta;
  try {
    meta = await fetchMeta(BASE_URL);
  } catch (err) {
    showError(`service unreachable: ${String(err)}`);
    return;
  }
  const fields = Object.keys(meta.bounds);
  const sliders = new Map<string, HTMLInputElement>();
  const form = el<HTMLDivElement>("sliders");
  for (const field of fields) {
    const [lo, hi] = meta.bounds[field];
    const row = document.createElement("label");
    row.className = "slider-row";
    const value = document.createElement("span");
    const input = document.createElement("input");
    input.type = "range";
    input.min = String(lo);
    input.max = String(hi);
    input.step = String((hi - lo) / 200);
    input.value = String((lo + hi) / 2);
    input.dataset.field = field;
    value.textContent = input.value;
    row.append(`${field} `, input, value);
    form.append(row);
    sliders.set(field, input);
    input.addEventListener("input", () => {
      value.textContent = input.value;
      requester.update(currentParams());
    });
  }

  function currentParams(): Record<string, number> {
    const params: Record<string, number> = {};
    for (const [field, input] of sliders) params[field] = Number(input.value);
    return params;
  }

  const surface = new SurfaceView(el<HTMLCanvasElement>("surface"));
  const heatmap = el<HTMLCanvasElement>("heatmap");

  function applyResponse(response: PredictResponse): void {
    clearError();
    for (const input of sliders.values()) input.classList.remove("violation");
    let view: DecodedView;
    try {
      view = decodeResponse(response, meta.resolution);
    } catch (err) {
      if (err instanceof FqtDecodeError) {
        showError(`tensor decode failed: ${err.message}`);
        return;
      }
      throw err;
    }
    paintHeatmap(heatmap, view);
    surface.update(view);
    updateSummary("live", view);
    lastView = view;
  }

  let lastView: DecodedView | null = null;

  const requester = new DebouncedRequester<Record<string, number>, PredictResponse>(
    (params) => fetchPrediction(BASE_URL, params),
    applyResponse,
    DEBOUNCE_MS,
    undefined,
    (err) => {
      if (err instanceof ServiceError && err.violations.length) {
        const bad = violationFields(err.violations, fields);
        for (const field of bad) sliders.get(field)?.classList.add("violation");
        showError(err.violations.join("; "));
      } else {
        showError(`request failed: ${String(err)}`); // last good view retained
      }
    },
  );

  el<HTMLButtonElement>("pin").addEventListener("click", () => {
    if (!lastView) return;
    paintHeatmap(el<HTMLCanvasElement>("pinned-heatmap"), lastView);
    updateSummary("pinned", lastView);
  });

  el("scale-legend").textContent = `scale ${SCALE_MIN} … ${SCALE_MAX}`;
  requester.update(currentParams());
}

if (typeof document !== "undefined" && document.getElementById("sliders")) {
  void boot();
}
