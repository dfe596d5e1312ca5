import type { PlaceResult, ProbePayload, Snapshot } from "../src/types.js";

export function snap(overrides: Partial<Snapshot> = {}): Snapshot {
  return {
    session_id: "s-1",
    case_id: "case-000",
    t: 1,
    visits: 2,
    probes_per_visit: 3,
    probes_placed_this_visit: 0,
    finished: false,
    noise: false,
    d_min: 8,
    d_max: 12,
    dims: [32, 40, 24],
    spacing_mm: [1, 1, 1.5],
    origin_mm: [0, 0, 0],
    world_min_mm: [0, 0, 0],
    world_max_mm: [31, 39, 34.5],
    dice: 0,
    coverage: 0,
    remaining_tumour_voxels: 500,
    initial_tumour_voxels: 500,
    ...overrides,
  };
}

export function placeResult(probe: ProbePayload, overrides: Partial<Snapshot> = {}): PlaceResult {
  return {
    ...snap(overrides),
    changed: {
      new_ablated_voxels: 40,
      new_tumour_voxels: 25,
      bbox: { lo: [0, 0, 0], hi: [5, 5, 5] },
    },
    realized: probe,
  };
}

export interface Deferred<T> {
  promise: Promise<T>;
  resolve: (value: T) => void;
  reject: (err: unknown) => void;
}

export function deferred<T>(): Deferred<T> {
  let resolve!: (value: T) => void;
  let reject!: (err: unknown) => void;
  const promise = new Promise<T>((res, rej) => {
    resolve = res;
    reject = rej;
  });
  return { promise, resolve, reject };
}
