// Pure geometry shared by the viewer and its tests.
//
// Coordinate chain: canvas px/py -> continuous image units (u along columns,
// v along rows) -> world mm via the X-Slice-Geometry header.  Slice pixel
// (r, c) covers voxel (r, c) along the header's row/col axes, so the pixel's
// centre sits at image units (c + 0.5, r + 0.5) and world conversion
// subtracts the half-pixel before scaling by spacing.  The backend owns this
// contract; nothing here re-derives geometry from the volume itself.

import type { Axis, SliceGeometry } from "./types.js";

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export const AXES: readonly Axis[] = ["x", "y", "z"];

export function axisIndex(axis: Axis): 0 | 1 | 2 {
  const i = AXES.indexOf(axis);
  if (i < 0) throw new Error(`unknown axis ${axis}`);
  return i as 0 | 1 | 2;
}

export function canvasToImage(t: ViewTransform, px: number, py: number): { u: number; v: number } {
  return { u: (px - t.panX) / t.zoom, v: (py - t.panY) / t.zoom };
}

export function imageToCanvas(t: ViewTransform, u: number, v: number): { x: number; y: number } {
  return { x: t.panX + u * t.zoom, y: t.panY + v * t.zoom };
}

export function imageToWorld(geo: SliceGeometry, u: number, v: number): [number, number, number] {
  const world: [number, number, number] = [0, 0, 0];
  world[axisIndex(geo.axis)] = geo.slice_world_mm;
  world[axisIndex(geo.row_axis)] = geo.row_origin_mm + (v - 0.5) * geo.row_spacing_mm;
  world[axisIndex(geo.col_axis)] = geo.col_origin_mm + (u - 0.5) * geo.col_spacing_mm;
  return world;
}

export function canvasToWorld(
  geo: SliceGeometry,
  t: ViewTransform,
  px: number,
  py: number,
): [number, number, number] {
  const { u, v } = canvasToImage(t, px, py);
  return imageToWorld(geo, u, v);
}

export function worldToImage(
  geo: SliceGeometry,
  world: readonly [number, number, number],
): { u: number; v: number; offAxisMm: number } {
  return {
    u: (world[axisIndex(geo.col_axis)] - geo.col_origin_mm) / geo.col_spacing_mm + 0.5,
    v: (world[axisIndex(geo.row_axis)] - geo.row_origin_mm) / geo.row_spacing_mm + 0.5,
    offAxisMm: world[axisIndex(geo.axis)] - geo.slice_world_mm,
  };
}

export interface SliceCircle {
  u: number;
  v: number;
  radiusU: number; // image units along columns
  radiusV: number; // image units along rows
}

/** Cross-section of a probe sphere on the current slice, or null when the
 *  plane misses the sphere entirely. */
export function probeCircle(
  geo: SliceGeometry,
  centre: readonly [number, number, number],
  diameter: number,
): SliceCircle | null {
  const { u, v, offAxisMm } = worldToImage(geo, centre);
  const half = diameter / 2;
  if (Math.abs(offAxisMm) > half) return null;
  const radiusMm = Math.sqrt(half * half - offAxisMm * offAxisMm);
  return {
    u,
    v,
    radiusU: radiusMm / geo.col_spacing_mm,
    radiusV: radiusMm / geo.row_spacing_mm,
  };
}

export function clampIndex(index: number, count: number): number {
  if (!Number.isFinite(index)) return 0;
  return Math.min(Math.max(Math.round(index), 0), count - 1);
}

export function clamp(value: number, lo: number, hi: number): number {
  return Math.min(Math.max(value, lo), hi);
}

/** Zoom about a fixed canvas point so the content under the cursor stays put. */
export function zoomAbout(
  t: ViewTransform,
  factor: number,
  px: number,
  py: number,
  minZoom = 0.25,
  maxZoom = 32,
): ViewTransform {
  const zoom = clamp(t.zoom * factor, minZoom, maxZoom);
  const scale = zoom / t.zoom;
  return {
    zoom,
    panX: px - (px - t.panX) * scale,
    panY: py - (py - t.panY) * scale,
  };
}

/** Transform that letterboxes rows x cols into a canvas, centred. */
export function fitTransform(
  rows: number,
  cols: number,
  canvasW: number,
  canvasH: number,
): ViewTransform {
  const zoom = Math.min(canvasW / cols, canvasH / rows) || 1;
  return {
    zoom,
    panX: (canvasW - cols * zoom) / 2,
    panY: (canvasH - rows * zoom) / 2,
  };
}
