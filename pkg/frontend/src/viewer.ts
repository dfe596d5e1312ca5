// Canvas slice viewer: draws the backend PNG plus client-side probe marks.
// Tissue tints live in the PNG; the canvas only adds geometry (committed
// probe cross-sections, centre dots, ghost suggestions) so the pixels under
// a mark stay authoritative.

import { imageToCanvas, probeCircle, worldToImage, type ViewTransform } from "./geometry.js";
import type { ProbeMark } from "./state.js";
import type { ProbePayload, SliceGeometry } from "./types.js";

export const COMMITTED_STYLE = "#ffe34d";
export const NOMINAL_STYLE = "#ff9d2e";
export const GHOST_STYLE = "#4dd7ff";

export class SliceViewer {
  private ctx: CanvasRenderingContext2D;
  private bitmap: ImageBitmap | null = null;
  geometry: SliceGeometry | null = null;
  transform: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
  /** Slice thickness along the viewing axis; gates centre-dot visibility. */
  axisSpacingMm = 1;

  constructor(readonly canvas: HTMLCanvasElement) {
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas unsupported");
    this.ctx = ctx;
  }

  async setSlice(image: Blob, geometry: SliceGeometry): Promise<void> {
    const next = await createImageBitmap(image);
    this.bitmap?.close();
    this.bitmap = next;
    this.geometry = geometry;
  }

  clear(): void {
    this.bitmap?.close();
    this.bitmap = null;
    this.geometry = null;
    this.ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
  }

  draw(placed: readonly ProbeMark[], ghosts: readonly ProbePayload[], noise: boolean): void {
    const { ctx, canvas, transform: t } = this;
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.fillStyle = "#10141a";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
    if (!this.bitmap || !this.geometry) return;

    ctx.setTransform(t.zoom, 0, 0, t.zoom, t.panX, t.panY);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(this.bitmap, 0, 0);
    ctx.setTransform(1, 0, 0, 1, 0, 0);

    for (const mark of placed) {
      // Scoring follows the realized sphere; the planned centre only differs
      // (and is only worth showing) under noise.
      this.drawProbe(mark.realized, COMMITTED_STYLE, false);
      if (noise) this.drawCentreDot(mark.nominal.centre, NOMINAL_STYLE);
    }
    for (const probe of ghosts) this.drawProbe(probe, GHOST_STYLE, true);
  }

  private drawProbe(probe: ProbePayload, style: string, dashed: boolean): void {
    const geo = this.geometry;
    if (!geo) return;
    const circle = probeCircle(geo, probe.centre, probe.diameter);
    if (circle) {
      const { ctx, transform: t } = this;
      const c = imageToCanvas(t, circle.u, circle.v);
      ctx.beginPath();
      ctx.ellipse(c.x, c.y, circle.radiusU * t.zoom, circle.radiusV * t.zoom, 0, 0, 2 * Math.PI);
      ctx.strokeStyle = style;
      ctx.lineWidth = dashed ? 1.5 : 2;
      ctx.setLineDash(dashed ? [6, 4] : []);
      ctx.stroke();
      ctx.setLineDash([]);
    }
    this.drawCentreDot(probe.centre, style);
  }

  private drawCentreDot(centre: readonly [number, number, number], style: string): void {
    const geo = this.geometry;
    if (!geo) return;
    const { u, v, offAxisMm } = worldToImage(geo, centre);
    if (Math.abs(offAxisMm) > 0.5 * this.axisSpacingMm) return;
    const { ctx, transform: t } = this;
    const c = imageToCanvas(t, u, v);
    ctx.beginPath();
    ctx.arc(c.x, c.y, 3, 0, 2 * Math.PI);
    ctx.fillStyle = style;
    ctx.fill();
  }
}
