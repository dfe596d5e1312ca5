// DOM layer: binds the store/controller to the page.  All planning state
// lives in the store; this file only reads elements, dispatches controller
// calls, and repaints.  Metrics are rendered verbatim from the snapshot.

import { ApiClient } from "./api.js";
import { Controller } from "./controller.js";
import {
  AXES,
  axisIndex,
  canvasToWorld,
  clampIndex,
  fitTransform,
  zoomAbout,
} from "./geometry.js";
import { buildExportFiles, triggerDownload } from "./download.js";
import {
  canAdvance,
  canExport,
  canPlace,
  overlayQuery,
  setAxis,
  setDiameter,
  stepIndex,
  toggleOverlay,
  type ViewState,
} from "./state.js";
import type { Axis, Snapshot } from "./types.js";
import { SliceViewer } from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

export class App {
  readonly controller: Controller;
  private viewer: SliceViewer;
  private canvas: HTMLCanvasElement;

  private banner = el<HTMLDivElement>("banner");
  private caseList = el<HTMLDivElement>("case-list");
  private metrics = el<HTMLDListElement>("metrics");
  private sessionTitle = el<HTMLSpanElement>("session-title");
  private axisSelect = el<HTMLSelectElement>("axis-select");
  private sliceSlider = el<HTMLInputElement>("slice-slider");
  private sliceLabel = el<HTMLSpanElement>("slice-label");
  private diameterSlider = el<HTMLInputElement>("diameter-slider");
  private diameterLabel = el<HTMLSpanElement>("diameter-label");
  private noiseToggle = el<HTMLInputElement>("noise-toggle");
  private seedInput = el<HTMLInputElement>("seed-input");
  private advanceBtn = el<HTMLButtonElement>("advance-btn");
  private exportBtn = el<HTMLButtonElement>("export-btn");
  private plannerSelect = el<HTMLSelectElement>("planner-select");
  private suggestBtn = el<HTMLButtonElement>("suggest-btn");
  private acceptBtn = el<HTMLButtonElement>("accept-btn");
  private clearGhostsBtn = el<HTMLButtonElement>("clear-ghosts-btn");
  private retryBtn = el<HTMLButtonElement>("retry-slice-btn");
  private budgetLabel = el<HTMLSpanElement>("budget-label");

  // Slice cache key: refetch only when one of these moves.
  private lastSnap: Snapshot | null = null;
  private lastAxis = "";
  private lastIndex = -1;
  private lastOverlays = "";
  private fetchEpoch = 0;
  private fittedFor = "";
  private spaceDown = false;

  constructor(apiBase: string) {
    this.controller = new Controller(new ApiClient(apiBase));
    this.canvas = el<HTMLCanvasElement>("slice-canvas");
    this.viewer = new SliceViewer(this.canvas);
    this.bindControls();
    this.bindCanvas();
    this.controller.store.subscribe(() => this.render());
  }

  async start(): Promise<void> {
    await this.refreshCases();
    this.render();
  }

  private get store() {
    return this.controller.store;
  }

  // ------------------------------------------------------------ cases

  private async refreshCases(): Promise<void> {
    const cases = await this.controller.loadCases();
    this.caseList.replaceChildren();
    if (cases.length === 0) {
      const empty = document.createElement("p");
      empty.className = "empty-state";
      empty.textContent = this.store.get().error
        ? "Backend unreachable."
        : "No cases available. Generate a dataset and restart the server.";
      const retry = document.createElement("button");
      retry.textContent = "Reload cases";
      retry.addEventListener("click", () => void this.refreshCases());
      this.caseList.append(empty, retry);
      return;
    }
    for (const info of cases) {
      const btn = document.createElement("button");
      btn.className = "case-row";
      btn.dataset.caseId = info.id;
      const dims = info.dims.join("×");
      const spacing = info.spacing_mm.map((s) => s.toFixed(2)).join("×");
      btn.innerHTML =
        `<strong>${info.id}</strong>` +
        `<small>${dims} vox · ${spacing} mm · tumour ${info.tumour_voxels} vox</small>`;
      btn.addEventListener("click", () => void this.openCase(info.id));
      this.caseList.append(btn);
    }
  }

  private async openCase(caseId: string): Promise<void> {
    const seed = Number.parseInt(this.seedInput.value, 10) || 0;
    await this.controller.startSession(caseId, this.noiseToggle.checked, seed);
  }

  // ------------------------------------------------------------ controls

  private bindControls(): void {
    this.axisSelect.addEventListener("change", () => {
      this.store.update((s) => setAxis(s, this.axisSelect.value as Axis));
    });
    this.sliceSlider.addEventListener("input", () => {
      this.store.update((s) => {
        if (!s.session) return s;
        const count = s.session.dims[axisIndex(s.axis)];
        return { ...s, index: clampIndex(Number(this.sliceSlider.value), count) };
      });
    });
    this.diameterSlider.addEventListener("input", () => {
      this.store.update((s) => setDiameter(s, Number(this.diameterSlider.value)));
    });
    for (const key of ["gland", "tumour", "ablation", "suggestions"] as const) {
      el<HTMLInputElement>(`ov-${key}`).addEventListener("change", () => {
        this.store.update((s) => toggleOverlay(s, key));
      });
    }
    this.advanceBtn.addEventListener("click", () => void this.controller.advance());
    this.exportBtn.addEventListener("click", () => void this.exportPlan());
    this.suggestBtn.addEventListener("click", () => void this.suggest());
    this.acceptBtn.addEventListener("click", () => void this.controller.acceptSuggestion());
    this.clearGhostsBtn.addEventListener("click", () => this.controller.clearSuggestion());
    this.retryBtn.addEventListener("click", () => {
      this.lastSnap = null; // force refetch
      void this.syncSlice(this.store.get());
    });
    el<HTMLButtonElement>("banner-dismiss").addEventListener("click", () => {
      this.store.update((s) => ({ ...s, error: null }));
    });

    window.addEventListener("keydown", (ev) => {
      if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) return;
      if (ev.key === " ") {
        this.spaceDown = true;
        ev.preventDefault();
        return;
      }
      const steps: Record<string, number> = {
        ArrowUp: 1, ArrowDown: -1, PageUp: 5, PageDown: -5,
      };
      if (ev.key in steps) {
        this.store.update((s) => stepIndex(s, steps[ev.key]!));
        ev.preventDefault();
      } else if (ev.key === "x" || ev.key === "y" || ev.key === "z") {
        this.store.update((s) => setAxis(s, ev.key as Axis));
      } else if (ev.key === "+" || ev.key === "=") {
        this.zoomCentre(1.25);
      } else if (ev.key === "-") {
        this.zoomCentre(1 / 1.25);
      } else if (ev.key === "0") {
        this.fitView();
      }
    });
    window.addEventListener("keyup", (ev) => {
      if (ev.key === " ") this.spaceDown = false;
    });
  }

  private bindCanvas(): void {
    const canvas = this.canvas;
    let dragging = false;
    let moved = false;
    let lastX = 0;
    let lastY = 0;

    canvas.addEventListener("pointerdown", (ev) => {
      if (ev.button === 1 || (ev.button === 0 && this.spaceDown)) {
        dragging = true;
        moved = false;
        lastX = ev.offsetX;
        lastY = ev.offsetY;
        canvas.setPointerCapture(ev.pointerId);
        ev.preventDefault();
      }
    });
    canvas.addEventListener("pointermove", (ev) => {
      if (!dragging) return;
      const t = this.viewer.transform;
      this.viewer.transform = {
        ...t,
        panX: t.panX + ev.offsetX - lastX,
        panY: t.panY + ev.offsetY - lastY,
      };
      lastX = ev.offsetX;
      lastY = ev.offsetY;
      moved = true;
      this.drawMarks();
    });
    canvas.addEventListener("pointerup", (ev) => {
      if (dragging) {
        dragging = false;
        canvas.releasePointerCapture(ev.pointerId);
        return;
      }
      if (ev.button === 0 && !moved) void this.placeAt(ev.offsetX, ev.offsetY);
    });
    canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      if (ev.ctrlKey) {
        const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
        this.viewer.transform = zoomAbout(this.viewer.transform, factor, ev.offsetX, ev.offsetY);
        this.drawMarks();
      } else {
        this.store.update((s) => stepIndex(s, ev.deltaY < 0 ? 1 : -1));
      }
    }, { passive: false });

    new ResizeObserver(() => this.resizeCanvas()).observe(canvas.parentElement!);
    this.resizeCanvas();
  }

  private resizeCanvas(): void {
    const parent = this.canvas.parentElement!;
    const w = parent.clientWidth;
    const h = parent.clientHeight;
    if (w > 0 && h > 0 && (this.canvas.width !== w || this.canvas.height !== h)) {
      this.canvas.width = w;
      this.canvas.height = h;
      this.fittedFor = "";
      this.maybeFit();
      this.drawMarks();
    }
  }

  private zoomCentre(factor: number): void {
    this.viewer.transform = zoomAbout(
      this.viewer.transform, factor, this.canvas.width / 2, this.canvas.height / 2);
    this.drawMarks();
  }

  private fitView(): void {
    this.fittedFor = "";
    this.maybeFit(true);
    this.drawMarks();
  }

  private maybeFit(force = false): void {
    const geo = this.viewer.geometry;
    const state = this.store.get();
    if (!geo || !state.session) return;
    const key = `${state.session.session_id}:${state.axis}`;
    if (!force && key === this.fittedFor) return;
    this.viewer.transform = fitTransform(geo.rows, geo.cols, this.canvas.width, this.canvas.height);
    this.fittedFor = key;
  }

  private async placeAt(px: number, py: number): Promise<void> {
    const state = this.store.get();
    const geo = this.viewer.geometry;
    if (!geo || !canPlace(state)) return;
    const world = canvasToWorld(geo, this.viewer.transform, px, py);
    await this.controller.place(world);
  }

  // ------------------------------------------------------------ actions

  private async suggest(): Promise<void> {
    const planner = this.plannerSelect.value;
    const got = await this.controller.suggest(planner);
    if (got === null && this.store.get().error?.startsWith("checkpoint_missing")) {
      const option = this.plannerSelect.querySelector<HTMLOptionElement>('option[value="rl"]');
      if (option) {
        option.disabled = true;
        option.textContent = "rl (no checkpoint)";
      }
      if (this.plannerSelect.value === "rl") this.plannerSelect.value = "geometric";
    }
  }

  private async exportPlan(): Promise<void> {
    const snap = this.store.get().session;
    const result = await this.controller.exportSession();
    if (!snap || !result) return;
    for (const file of buildExportFiles(snap, result, new Date())) triggerDownload(file);
  }

  // ------------------------------------------------------------ rendering

  private render(): void {
    const state = this.store.get();
    this.renderBanner(state);
    this.renderMetrics(state.session);
    this.renderControls(state);
    void this.syncSlice(state);
    this.drawMarks();
  }

  private renderBanner(state: ViewState): void {
    this.banner.hidden = state.error === null;
    el<HTMLSpanElement>("banner-text").textContent = state.error ?? "";
  }

  private metricRows(snap: Snapshot): [string, string][] {
    return [
      ["Dice", String(snap.dice)],
      ["Coverage", String(snap.coverage)],
      ["Tumour left", `${snap.remaining_tumour_voxels} / ${snap.initial_tumour_voxels} vox`],
      ["Visit", `${snap.t} / ${snap.visits}`],
      ["Probes this visit", `${snap.probes_placed_this_visit} / ${snap.probes_per_visit}`],
      ["Noise", snap.noise ? "on" : "off"],
      ["Status", snap.finished ? "complete" : "planning"],
    ];
  }

  private renderMetrics(snap: Snapshot | null): void {
    this.metrics.replaceChildren();
    if (!snap) {
      this.sessionTitle.textContent = "no session";
      return;
    }
    this.sessionTitle.textContent = snap.case_id;
    for (const [label, value] of this.metricRows(snap)) {
      const dt = document.createElement("dt");
      dt.textContent = label;
      const dd = document.createElement("dd");
      dd.textContent = value;
      this.metrics.append(dt, dd);
    }
  }

  private renderControls(state: ViewState): void {
    const snap = state.session;
    const axisDim = snap ? snap.dims[axisIndex(state.axis)] : 1;
    this.axisSelect.value = state.axis;
    this.sliceSlider.max = String(axisDim - 1);
    this.sliceSlider.value = String(state.index);
    this.sliceSlider.disabled = !snap;
    this.sliceLabel.textContent = snap ? `${state.axis} = ${state.index} / ${axisDim - 1}` : "—";

    if (snap) {
      this.diameterSlider.min = String(snap.d_min);
      this.diameterSlider.max = String(snap.d_max);
      this.diameterSlider.step = "0.5";
      this.diameterSlider.value = String(state.diameter);
    }
    this.diameterSlider.disabled = !snap;
    this.diameterLabel.textContent = snap ? `${state.diameter.toFixed(1)} mm` : "—";

    this.advanceBtn.disabled = !canAdvance(state);
    this.exportBtn.disabled = !canExport(state);
    this.suggestBtn.disabled = !snap || state.busy;
    this.acceptBtn.disabled = !state.ghosts || !canPlace(state);
    this.clearGhostsBtn.disabled = !state.ghosts;

    if (!snap) {
      this.budgetLabel.textContent = "select a case to begin";
    } else if (snap.finished) {
      this.budgetLabel.textContent = "plan complete — export to save";
    } else if (!canPlace(state)) {
      this.budgetLabel.textContent = "visit budget spent — advance to continue";
    } else {
      this.budgetLabel.textContent = "click the slice to place a probe";
    }
    this.canvas.classList.toggle("placeable", canPlace(state));

    for (const key of ["gland", "tumour", "ablation", "suggestions"] as const) {
      el<HTMLInputElement>(`ov-${key}`).checked = state.overlays[key];
    }
  }

  private async syncSlice(state: ViewState): Promise<void> {
    const snap = state.session;
    if (!snap) {
      this.viewer.clear();
      this.lastSnap = null;
      return;
    }
    const ov = overlayQuery(state.overlays);
    if (
      snap === this.lastSnap &&
      state.axis === this.lastAxis &&
      state.index === this.lastIndex &&
      ov === this.lastOverlays
    ) {
      return;
    }
    this.lastSnap = snap;
    this.lastAxis = state.axis;
    this.lastIndex = state.index;
    this.lastOverlays = ov;
    const epoch = ++this.fetchEpoch;
    try {
      const slice = await this.controller.api.fetchSlice(snap.session_id, state.axis, state.index, ov);
      if (epoch !== this.fetchEpoch) return;
      this.viewer.axisSpacingMm = snap.spacing_mm[axisIndex(state.axis)];
      await this.viewer.setSlice(slice.image, slice.geometry);
      this.retryBtn.hidden = true;
      this.maybeFit();
      this.drawMarks();
    } catch (err) {
      if (epoch !== this.fetchEpoch) return;
      // Keep the cache key so the failure does not refetch in a render loop;
      // the retry button clears it explicitly.
      this.retryBtn.hidden = false;
      this.store.update((s) => ({ ...s, error: `slice fetch failed: ${String(err)}` }));
    }
  }

  private drawMarks(): void {
    const state = this.store.get();
    const ghosts = state.overlays.suggestions && state.ghosts ? state.ghosts.probes : [];
    this.viewer.draw(state.placed, ghosts, state.session?.noise ?? false);
  }
}
