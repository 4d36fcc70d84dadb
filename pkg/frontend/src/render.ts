/** Canvas drawing for the annotation editor (browser only).

Overlays come straight from server payloads: bud masks are the PNG the
service rasterized, region grids are the rects it sampled. The client
never re-rasterizes, so the screen shows exactly what is stored.
*/

import type { View } from "./geometry.js";
import type { TracePreview } from "./session.js";
import type { AnnotationRecord, RectJson } from "./types.js";
import { budDerived, regionDerived } from "./types.js";

const BUD_FILL = [255, 92, 64] as const;
const SELECTED_FILL = [64, 160, 255] as const;

export interface SceneOverlays {
  records: AnnotationRecord[];
  selectedId: string | null;
  previewRects: RectJson[] | null;
  trace: TracePreview;
}

/** Decoded, tinted mask bitmaps keyed by record id and version. */
export class MaskCache {
  private readonly tinted = new Map<string, HTMLCanvasElement>();
  private readonly loading = new Set<string>();

  constructor(private readonly onReady: () => void) {}

  get(record: AnnotationRecord, selected: boolean): HTMLCanvasElement | null {
    const derived = budDerived(record);
    if (derived === null) return null;
    const key = `${record.id}@${record.version}:${selected ? "s" : "p"}`;
    const hit = this.tinted.get(key);
    if (hit !== undefined) return hit;
    if (!this.loading.has(key)) {
      this.loading.add(key);
      void this.decode(key, derived.mask_png, selected ? SELECTED_FILL : BUD_FILL);
    }
    return null;
  }

  private async decode(
    key: string,
    maskPng: string,
    tint: readonly [number, number, number],
  ): Promise<void> {
    const image = new Image();
    image.src = `data:image/png;base64,${maskPng}`;
    await image.decode();
    const canvas = document.createElement("canvas");
    canvas.width = image.naturalWidth;
    canvas.height = image.naturalHeight;
    const ctx = canvas.getContext("2d")!;
    ctx.drawImage(image, 0, 0);
    const data = ctx.getImageData(0, 0, canvas.width, canvas.height);
    const px = data.data;
    for (let i = 0; i < px.length; i += 4) {
      const on = px[i] > 127;
      px[i] = tint[0];
      px[i + 1] = tint[1];
      px[i + 2] = tint[2];
      px[i + 3] = on ? 110 : 0;
    }
    ctx.putImageData(data, 0, 0);
    this.tinted.set(key, canvas);
    this.loading.delete(key);
    this.onReady();
  }
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  image: HTMLImageElement | null,
  view: View,
  overlays: SceneOverlays,
  masks: MaskCache,
): void {
  const canvas = ctx.canvas;
  ctx.setTransform(1, 0, 0, 1, 0, 0);
  ctx.fillStyle = "#14161a";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (image === null) return;

  ctx.setTransform(view.scale, 0, 0, view.scale, view.tx, view.ty);
  ctx.imageSmoothingEnabled = view.scale < 1;
  ctx.drawImage(image, 0, 0);

  for (const record of overlays.records) {
    drawRecord(ctx, record, record.id === overlays.selectedId, view, masks);
  }
  if (overlays.previewRects !== null) {
    drawRects(ctx, overlays.previewRects, "#ffd24d", view);
  }
  drawTrace(ctx, overlays.trace, view);
}

function drawRecord(
  ctx: CanvasRenderingContext2D,
  record: AnnotationRecord,
  selected: boolean,
  view: View,
  masks: MaskCache,
): void {
  const bud = budDerived(record);
  if (bud !== null) {
    const tinted = masks.get(record, selected);
    if (tinted !== null) {
      ctx.drawImage(tinted, bud.rect.x, bud.rect.y, bud.rect.w, bud.rect.h);
    }
    strokeRect(ctx, bud.rect, selected ? "#40a0ff" : "#ff5c40", view, selected ? 2 : 1);
    return;
  }
  outlinePolygon(ctx, record, selected, view);
  const region = regionDerived(record);
  if (region !== null) {
    drawRects(ctx, region.rects, selected ? "#40a0ff" : "#7fe07f", view);
  }
}

function outlinePolygon(
  ctx: CanvasRenderingContext2D,
  record: AnnotationRecord,
  selected: boolean,
  view: View,
): void {
  if (record.points.length < 2) return;
  ctx.beginPath();
  ctx.moveTo(record.points[0][0], record.points[0][1]);
  for (const [x, y] of record.points.slice(1)) ctx.lineTo(x, y);
  ctx.closePath();
  ctx.lineWidth = (selected ? 2 : 1) / view.scale;
  ctx.strokeStyle = selected ? "#40a0ff" : "#7fe07f";
  ctx.stroke();
}

function drawRects(
  ctx: CanvasRenderingContext2D,
  rects: RectJson[],
  color: string,
  view: View,
): void {
  ctx.lineWidth = 1 / view.scale;
  ctx.strokeStyle = color;
  for (const r of rects) ctx.strokeRect(r.x, r.y, r.w, r.h);
}

function strokeRect(
  ctx: CanvasRenderingContext2D,
  rect: RectJson,
  color: string,
  view: View,
  width: number,
): void {
  ctx.lineWidth = width / view.scale;
  ctx.strokeStyle = color;
  ctx.strokeRect(rect.x, rect.y, rect.w, rect.h);
}

function drawTrace(
  ctx: CanvasRenderingContext2D,
  trace: TracePreview,
  view: View,
): void {
  if (trace.points.length === 0) return;
  ctx.beginPath();
  ctx.moveTo(trace.points[0][0], trace.points[0][1]);
  for (const [x, y] of trace.points.slice(1)) ctx.lineTo(x, y);
  if (trace.closed) {
    ctx.closePath();
    ctx.fillStyle = "rgba(255, 210, 77, 0.25)";
    ctx.fill();
  }
  ctx.lineWidth = 1.5 / view.scale;
  ctx.strokeStyle = "#ffd24d";
  ctx.stroke();
  if (trace.bounds !== null) {
    ctx.setLineDash([6 / view.scale, 4 / view.scale]);
    strokeRect(ctx, trace.bounds, "#ffd24d", view, 1);
    ctx.setLineDash([]);
  }
}
