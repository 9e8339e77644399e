import { SessionApi } from "./api.js";
import { AppController } from "./controller.js";
import { buildScene, classColor, SceneError, sceneToSvg } from "./scene.js";
import type { UiSessionState } from "./controller.js";

const DEFAULT_BASE_URL = "http://127.0.0.1:8321";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function renderView(state: UiSessionState): void {
  const banner = el<HTMLDivElement>("banner");
  const plot = el<HTMLDivElement>("plot");
  const classes = el<HTMLDivElement>("classes");
  const toast = el<HTMLDivElement>("toast");
  const retryBtn = el<HTMLButtonElement>("retry");

  toast.textContent = state.toast ?? "";
  toast.style.display = state.toast ? "block" : "none";
  retryBtn.style.display = state.retry ? "inline-block" : "none";

  if (state.errorBanner) {
    banner.textContent = state.errorBanner;
    banner.className = "banner error";
    return;
  }
  if (!state.view) {
    banner.textContent = "no session - paste a task and press Start";
    banner.className = "banner idle";
    plot.innerHTML = "";
    classes.innerHTML = "";
    return;
  }

  try {
    const scene = buildScene(state.view);
    plot.innerHTML = sceneToSvg(scene);
    banner.textContent = scene.complete
      ? "session complete - every sample is labeled"
      : `awaiting labels for sample(s) ${scene.pending.join(", ")}` +
        (scene.fallbackProjection ? " (flat projection fallback)" : "");
    banner.className = scene.complete ? "banner complete" : "banner awaiting";
  } catch (error) {
    if (error instanceof SceneError) {
      banner.textContent = `cannot render view: ${error.message}`;
      banner.className = "banner error";
      return;
    }
    throw error;
  }

  classes.innerHTML = "";
  state.view.class_names.forEach((name, classId) => {
    const button = document.createElement("button");
    button.textContent = name;
    button.style.borderColor = classColor(classId);
    button.disabled = state.selectedSample === null || state.busy;
    button.onclick = () => {
      if (state.selectedSample !== null) {
        void controller.submitLabel(state.selectedSample, classId);
      }
    };
    classes.appendChild(button);
  });

  const selected = el<HTMLSpanElement>("selected");
  selected.textContent =
    state.selectedSample === null
      ? "click a highlighted sample, then pick its class"
      : `sample ${state.selectedSample} selected - pick a class`;

  for (const dot of plot.querySelectorAll<SVGElement>(".dot.query")) {
    dot.style.cursor = "pointer";
    dot.addEventListener("click", () => {
      controller.selectSample(Number(dot.dataset.sample));
    });
  }
}

const api = new SessionApi(
  new URLSearchParams(window.location.search).get("service") ?? DEFAULT_BASE_URL,
);
const controller = new AppController(api);

window.addEventListener("DOMContentLoaded", () => {
  controller.onChange(renderView);
  renderView(controller.state);

  el<HTMLButtonElement>("start").onclick = () => {
    try {
      const task = JSON.parse(el<HTMLTextAreaElement>("task-json").value);
      const seed = Number(el<HTMLInputElement>("seed").value || "0");
      const acquisition = el<HTMLSelectElement>("acquisition").value;
      void controller.createSession({ task, seed, acquisition });
    } catch {
      controller.showSchemaError("task JSON does not parse");
    }
  };
  el<HTMLButtonElement>("refresh").onclick = () => void controller.refresh();
  el<HTMLButtonElement>("retry").onclick = () => void controller.retryLast();
});
