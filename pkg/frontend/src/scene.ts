import type { ViewPayload } from "./types.js";

// Okabe-Ito palette: distinguishable for most color-vision deficiencies.
export const CLASS_COLORS = [
  "#0072B2",
  "#E69F00",
  "#009E73",
  "#CC79A7",
  "#56B4E9",
  "#D55E00",
  "#F0E442",
  "#999933",
];
export const UNLABELED_COLOR = "#9e9e9e";

export class SceneError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SceneError";
  }
}

export interface SceneDot {
  sampleId: number;
  cx: number;
  cy: number;
  fill: string;
  shape: "circle" | "triangle"; // triangles mark support samples
  emphasized: boolean; // pending label query
  cluster: number;
  predictedClass: number | null;
}

export interface SceneMean {
  cluster: number;
  cx: number;
  cy: number;
  fill: string;
}

export interface Scene {
  width: number;
  height: number;
  dots: SceneDot[];
  means: SceneMean[];
  complete: boolean;
  pending: number[];
  fallbackProjection: boolean;
}

function checkPayload(view: ViewPayload): void {
  if (!Array.isArray(view.points) || !Array.isArray(view.cluster_means)) {
    throw new SceneError("view payload is missing points or cluster means");
  }
  if (!Array.isArray(view.pending_queries) || !Array.isArray(view.class_names)) {
    throw new SceneError("view payload is missing query or class metadata");
  }
  for (const p of view.points) {
    if (
      typeof p.sample_id !== "number" ||
      typeof p.x !== "number" ||
      typeof p.y !== "number" ||
      typeof p.cluster !== "number"
    ) {
      throw new SceneError(`malformed point for sample ${String(p.sample_id)}`);
    }
  }
}

export function classColor(classId: number | null): string {
  if (classId === null || classId < 0) return UNLABELED_COLOR;
  return CLASS_COLORS[classId % CLASS_COLORS.length]!;
}

/** Map a view payload to screen-space dots; no prediction logic lives here. */
export function buildScene(view: ViewPayload, width = 720, height = 520, pad = 28): Scene {
  checkPayload(view);
  const xs = view.points.map((p) => p.x).concat(view.cluster_means.map((m) => m.x));
  const ys = view.points.map((p) => p.y).concat(view.cluster_means.map((m) => m.y));
  const xMin = Math.min(...xs, 0);
  const xMax = Math.max(...xs, 1e-9);
  const yMin = Math.min(...ys, 0);
  const yMax = Math.max(...ys, 1e-9);
  const sx = (x: number) => pad + ((x - xMin) / Math.max(xMax - xMin, 1e-12)) * (width - 2 * pad);
  const sy = (y: number) => height - pad - ((y - yMin) / Math.max(yMax - yMin, 1e-12)) * (height - 2 * pad);

  const pending = new Set(view.pending_queries);
  const dots = view.points.map((p) => ({
    sampleId: p.sample_id,
    cx: sx(p.x),
    cy: sy(p.y),
    fill: classColor(p.predicted_class),
    shape: (p.is_support ? "triangle" : "circle") as "triangle" | "circle",
    emphasized: p.is_query && pending.has(p.sample_id),
    cluster: p.cluster,
    predictedClass: p.predicted_class,
  }));
  const means = view.cluster_means.map((m) => ({
    cluster: m.cluster,
    cx: sx(m.x),
    cy: sy(m.y),
    fill: classColor(m.class_id),
  }));
  return {
    width,
    height,
    dots,
    means,
    complete: view.status === "complete",
    pending: [...view.pending_queries],
    fallbackProjection: view.projection_fallback,
  };
}

function triangle(cx: number, cy: number, r: number): string {
  const h = r * 1.4;
  return `${cx},${cy - h} ${cx - h * 0.9},${cy + h * 0.7} ${cx + h * 0.9},${cy + h * 0.7}`;
}

/** Serialize a scene to SVG markup; the emphasized ring marks label queries. */
export function sceneToSvg(scene: Scene): string {
  const parts: string[] = [
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${scene.width} ${scene.height}" width="${scene.width}" height="${scene.height}">`,
  ];
  for (const mean of scene.means) {
    parts.push(
      `<path class="mean" data-cluster="${mean.cluster}" fill="${mean.fill}" stroke="#222" ` +
        `d="M ${mean.cx} ${mean.cy - 9} L ${mean.cx + 9} ${mean.cy} L ${mean.cx} ${mean.cy + 9} L ${mean.cx - 9} ${mean.cy} Z"/>`,
    );
  }
  for (const dot of scene.dots) {
    if (dot.emphasized) {
      parts.push(
        `<circle class="query-ring" data-sample="${dot.sampleId}" cx="${dot.cx}" cy="${dot.cy}" r="11" ` +
          `fill="none" stroke="#d32f2f" stroke-width="2.5"/>`,
      );
    }
    const common = `class="dot${dot.emphasized ? " query" : ""}" data-sample="${dot.sampleId}" data-cluster="${dot.cluster}" fill="${dot.fill}" stroke="#333" stroke-width="0.6"`;
    if (dot.shape === "triangle") {
      parts.push(`<polygon ${common} points="${triangle(dot.cx, dot.cy, 5)}"/>`);
    } else {
      parts.push(`<circle ${common} cx="${dot.cx}" cy="${dot.cy}" r="4.5"/>`);
    }
  }
  parts.push("</svg>");
  return parts.join("");
}
