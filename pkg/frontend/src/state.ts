// View state and its pure transitions.  The store never computes metrics:
// dice/coverage/remaining all come from backend snapshots verbatim.

import { clamp, clampIndex, axisIndex } from "./geometry.js";
import type { Axis, ProbePayload, Snapshot, Suggestion } from "./types.js";

export interface Overlays {
  gland: boolean;
  tumour: boolean;
  ablation: boolean;
  suggestions: boolean;
}

export interface ProbeMark {
  nominal: ProbePayload;
  realized: ProbePayload;
  visit: number;
}

export interface ViewState {
  session: Snapshot | null;
  axis: Axis;
  index: number;
  zoom: number;
  panX: number;
  panY: number;
  diameter: number;
  overlays: Overlays;
  placed: ProbeMark[];
  ghosts: Suggestion | null;
  busy: boolean; // one mutating request in flight at a time
  error: string | null;
}

export function initialState(): ViewState {
  return {
    session: null,
    axis: "z",
    index: 0,
    zoom: 1,
    panX: 0,
    panY: 0,
    diameter: 0,
    overlays: { gland: true, tumour: true, ablation: true, suggestions: false },
    placed: [],
    ghosts: null,
    busy: false,
    error: null,
  };
}

export function applySnapshot(state: ViewState, snap: Snapshot): ViewState {
  const fresh = state.session === null || state.session.session_id !== snap.session_id;
  const axis = state.axis;
  const dims = snap.dims;
  return {
    ...state,
    session: snap,
    index: fresh ? Math.floor(dims[axisIndex(axis)] / 2) : clampIndex(state.index, dims[axisIndex(axis)]),
    diameter: fresh
      ? (snap.d_min + snap.d_max) / 2
      : clamp(state.diameter, snap.d_min, snap.d_max),
    placed: fresh ? [] : state.placed,
    ghosts: fresh ? null : state.ghosts,
    error: null,
  };
}

export function recordPlacement(
  state: ViewState,
  nominal: ProbePayload,
  realized: ProbePayload,
  visit: number,
): ViewState {
  return { ...state, placed: [...state.placed, { nominal, realized, visit }] };
}

export function setAxis(state: ViewState, axis: Axis): ViewState {
  if (!state.session) return { ...state, axis };
  const count = state.session.dims[axisIndex(axis)];
  return { ...state, axis, index: Math.floor(count / 2) };
}

export function stepIndex(state: ViewState, delta: number): ViewState {
  if (!state.session) return state;
  const count = state.session.dims[axisIndex(state.axis)];
  return { ...state, index: clampIndex(state.index + delta, count) };
}

export function setDiameter(state: ViewState, diameter: number): ViewState {
  if (!state.session) return state;
  return { ...state, diameter: clamp(diameter, state.session.d_min, state.session.d_max) };
}

export function toggleOverlay(state: ViewState, key: keyof Overlays): ViewState {
  return { ...state, overlays: { ...state.overlays, [key]: !state.overlays[key] } };
}

/** Overlay selector for the slice endpoint: comma list or "none". */
export function overlayQuery(overlays: Overlays): string {
  const names = (["gland", "tumour", "ablation"] as const).filter((k) => overlays[k]);
  return names.length === 0 ? "none" : names.join(",");
}

export function canPlace(state: ViewState): boolean {
  const s = state.session;
  return (
    s !== null &&
    !s.finished &&
    !state.busy &&
    s.probes_placed_this_visit < s.probes_per_visit
  );
}

export function canAdvance(state: ViewState): boolean {
  const s = state.session;
  return s !== null && !s.finished && !state.busy && s.t < s.visits;
}

export function canExport(state: ViewState): boolean {
  return state.session !== null && !state.busy;
}

/** Listener-based store; state objects are replaced, never mutated. */
export class Store {
  private state: ViewState = initialState();
  private listeners = new Set<(s: ViewState) => void>();

  get(): ViewState {
    return this.state;
  }

  set(next: ViewState): void {
    this.state = next;
    for (const fn of this.listeners) fn(next);
  }

  update(fn: (s: ViewState) => ViewState): void {
    this.set(fn(this.state));
  }

  subscribe(fn: (s: ViewState) => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }
}
