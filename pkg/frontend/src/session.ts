/** Editor state machine, free of DOM and network concerns.

The session tracks the active image, the view transform, the in-progress
pointer trace, the selected tool and tag, and the sampling parameters.
Invariants: trace points keep draw order, and the zoom stays positive.
Everything the user sees is otherwise server state; reloading rebuilds
the view purely from service responses.
*/

import {
  MIN_SCALE,
  View,
  dist,
  fitView,
  panBy,
  polygonBounds,
  zoomAt,
} from "./geometry.js";
import type { Point, RectJson, SamplingParams, Subcategory } from "./types.js";
import { KIND_BUD, KIND_REGION, type Kind } from "./types.js";

export type Tool = "bud-outline" | "nonbud-region";

export function toolKind(tool: Tool): Kind {
  return tool === "bud-outline" ? KIND_BUD : KIND_REGION;
}

export interface TracePreview {
  points: Point[];
  closed: boolean;
  bounds: RectJson | null;
}

export class CanvasSession {
  imageId: string | null = null;
  imageDims: [number, number] | null = null;
  view: View = { scale: 1, tx: 0, ty: 0 };
  tool: Tool = "bud-outline";
  subcategory: Subcategory | null = null;
  sampling: SamplingParams | null = null;
  selectedId: string | null = null;
  message: string | null = null;

  private trace: Point[] = [];
  private traceClosed = false;

  openImage(id: string, dims: [number, number], canvasDims: [number, number]): void {
    this.imageId = id;
    this.imageDims = dims;
    this.view = fitView(dims, canvasDims);
    this.selectedId = null;
    this.message = null;
    this.resetTrace();
  }

  setTool(tool: Tool): void {
    if (tool === this.tool) return;
    this.tool = tool;
    this.resetTrace();
  }

  /** Append a pointer sample in image coordinates, keeping draw order.

  Points closer than minDist to the last one are dropped, which thins
  dense pointer traces without reordering anything. Returns whether the
  point was kept.
  */
  addPoint(p: Point, minDist = 0): boolean {
    if (this.imageId === null || this.imageDims === null) {
      this.message = "load an image before drawing";
      return false;
    }
    if (this.traceClosed) return false;
    const [w, h] = this.imageDims;
    const clipped: Point = [
      Math.min(Math.max(p[0], 0), w),
      Math.min(Math.max(p[1], 0), h),
    ];
    const last = this.trace[this.trace.length - 1];
    if (last !== undefined && dist(last, clipped) < minDist) return false;
    this.trace.push(clipped);
    return true;
  }

  /** Close the trace into a polygon; fewer than 3 points is blocked. */
  closeTrace(): boolean {
    if (this.trace.length < 3) {
      this.message = `a polygon needs at least 3 points, got ${this.trace.length}`;
      return false;
    }
    if (polygonBounds(this.trace, this.imageDims!) === null) {
      this.message = "the outline collapses below one pixel";
      return false;
    }
    this.traceClosed = true;
    this.message = null;
    return true;
  }

  resetTrace(): void {
    this.trace = [];
    this.traceClosed = false;
  }

  tracePreview(): TracePreview {
    const bounds =
      this.traceClosed && this.imageDims !== null
        ? polygonBounds(this.trace, this.imageDims)
        : null;
    return { points: [...this.trace], closed: this.traceClosed, bounds };
  }

  get traceLength(): number {
    return this.trace.length;
  }

  get traceIsClosed(): boolean {
    return this.traceClosed;
  }

  /** Validate and store sampling params; non-positive values are rejected. */
  setSampling(step: number, w: number, h: number): string | null {
    for (const [name, value] of [
      ["step", step],
      ["width", w],
      ["height", h],
    ] as const) {
      if (!Number.isInteger(value) || value <= 0) {
        this.message = `sampling ${name} must be a positive integer`;
        return this.message;
      }
    }
    this.sampling = { step, dims: [w, h] };
    this.message = null;
    return null;
  }

  zoomAt(anchor: Point, factor: number): void {
    this.view = zoomAt(this.view, anchor, factor);
    if (!(this.view.scale > 0)) this.view.scale = MIN_SCALE;
  }

  panBy(dx: number, dy: number): void {
    this.view = panBy(this.view, dx, dy);
  }
}
