// JSON shapes of the /api/v1 backend, mirrored field for field.

export type Axis = "x" | "y" | "z";

export interface CaseInfo {
  id: string;
  dims: [number, number, number];
  spacing_mm: [number, number, number];
  tumour_voxels: number;
}

export interface Snapshot {
  session_id: string;
  case_id: string;
  t: number;
  visits: number;
  probes_per_visit: number;
  probes_placed_this_visit: number;
  finished: boolean;
  noise: boolean;
  d_min: number;
  d_max: number;
  dims: [number, number, number];
  spacing_mm: [number, number, number];
  origin_mm: [number, number, number];
  world_min_mm: [number, number, number];
  world_max_mm: [number, number, number];
  dice: number;
  coverage: number;
  remaining_tumour_voxels: number;
  initial_tumour_voxels: number;
}

export interface ProbePayload {
  centre: [number, number, number];
  diameter: number;
}

export interface PlaceChange {
  new_ablated_voxels: number;
  new_tumour_voxels: number;
  bbox: { lo: [number, number, number]; hi: [number, number, number] } | Record<string, never>;
}

export interface PlaceResult extends Snapshot {
  changed: PlaceChange;
  realized: ProbePayload;
}

export interface SliceGeometry {
  axis: Axis;
  index: number;
  row_axis: Axis;
  col_axis: Axis;
  rows: number;
  cols: number;
  row_spacing_mm: number;
  col_spacing_mm: number;
  row_origin_mm: number;
  col_origin_mm: number;
  slice_world_mm: number;
}

export interface Suggestion {
  planner: string;
  seed: number;
  probes: ProbePayload[];
}

export interface ExportResult {
  traj_path: string;
  results_path: string;
  dice: number;
  nominal_dice: number;
  coverage: number;
  healthy_mm3: number;
  plan_time_s: number;
}

export interface HealthInfo {
  status: string;
  cases: number;
}
