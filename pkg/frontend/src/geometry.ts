/** Pure canvas-space math: view transforms and polygon bounds. */

import type { Point, RectJson } from "./types.js";

/** Image-to-screen mapping: screen = image * scale + (tx, ty). */
export interface View {
  scale: number;
  tx: number;
  ty: number;
}

export const MIN_SCALE = 0.05;
export const MAX_SCALE = 40;

/** Center the image in the canvas with a small margin around it. */
export function fitView(
  imageDims: [number, number],
  canvasDims: [number, number],
  margin = 0.95,
): View {
  const [iw, ih] = imageDims;
  const [cw, ch] = canvasDims;
  const scale = clampScale(margin * Math.min(cw / iw, ch / ih));
  return {
    scale,
    tx: (cw - iw * scale) / 2,
    ty: (ch - ih * scale) / 2,
  };
}

function clampScale(scale: number): number {
  return Math.min(MAX_SCALE, Math.max(MIN_SCALE, scale));
}

export function toScreen(view: View, p: Point): Point {
  return [p[0] * view.scale + view.tx, p[1] * view.scale + view.ty];
}

export function toImage(view: View, p: Point): Point {
  return [(p[0] - view.tx) / view.scale, (p[1] - view.ty) / view.scale];
}

/** Rescale around a fixed screen point, so the pixel under the cursor stays put. */
export function zoomAt(view: View, anchor: Point, factor: number): View {
  const scale = clampScale(view.scale * factor);
  const f = scale / view.scale;
  return {
    scale,
    tx: anchor[0] - (anchor[0] - view.tx) * f,
    ty: anchor[1] - (anchor[1] - view.ty) * f,
  };
}

export function panBy(view: View, dx: number, dy: number): View {
  return { scale: view.scale, tx: view.tx + dx, ty: view.ty + dy };
}

/**
 * Integer bounding rect of a polygon, clipped to the image, or null when
 * it collapses below one pixel. Matches the rect the service derives, so
 * the pre-submission preview box equals the stored one.
 */
export function polygonBounds(
  points: readonly Point[],
  imageDims: [number, number],
): RectJson | null {
  if (points.length === 0) return null;
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const [x, y] of points) {
    minX = Math.min(minX, x);
    minY = Math.min(minY, y);
    maxX = Math.max(maxX, x);
    maxY = Math.max(maxY, y);
  }
  const x0 = Math.floor(minX);
  const y0 = Math.floor(minY);
  const x1 = Math.min(Math.ceil(maxX), imageDims[0]);
  const y1 = Math.min(Math.ceil(maxY), imageDims[1]);
  if (x1 - x0 < 1 || y1 - y0 < 1) return null;
  return { x: x0, y: y0, w: x1 - x0, h: y1 - y0 };
}

export function dist(a: Point, b: Point): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}
