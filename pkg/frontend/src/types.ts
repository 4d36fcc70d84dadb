/** Wire types of the annotation service, mirrored verbatim. */

export const KIND_BUD = "bud-polygon";
export const KIND_REGION = "nonbud-region";
export type Kind = typeof KIND_BUD | typeof KIND_REGION;

/** Closed tag vocabulary for non-bud records; the picker offers exactly these. */
export const SUBCATEGORIES = [
  "out-of-focus",
  "branch-edge",
  "branch-internal",
  "wire",
  "tendril",
  "trunk-with-bark",
  "dry-leaves",
  "dry-bunches",
  "bud-neighborhood",
  "knot",
] as const;
export type Subcategory = (typeof SUBCATEGORIES)[number];

export const QUALITY_FLAGS = ["ok", "blurred", "overexposed", "underexposed"] as const;
export type Quality = (typeof QUALITY_FLAGS)[number];

export type Point = [number, number];

export interface RectJson {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface ImageInfo {
  id: string;
  width: number;
  height: number;
  thumb: string;
}

export interface SamplingParams {
  step: number;
  dims: [number, number];
}

/** Server-rasterized geometry of a stored bud polygon. */
export interface BudDerived {
  rect: RectJson;
  area: number;
  mask_png: string;
}

/** Sampled patch grid of a region whose sampling params are set. */
export interface RegionDerived {
  rects: RectJson[];
  count: number;
}

export interface AnnotationRecord {
  id: string;
  image: string;
  kind: Kind;
  points: Point[];
  subcategory: Subcategory | null;
  quality: Quality;
  sampling: SamplingParams | null;
  created_at: string;
  version: number;
  derived: BudDerived | RegionDerived | null;
}

export function budDerived(record: AnnotationRecord): BudDerived | null {
  if (record.kind !== KIND_BUD || record.derived === null) return null;
  return record.derived as BudDerived;
}

export function regionDerived(record: AnnotationRecord): RegionDerived | null {
  if (record.kind !== KIND_REGION || record.derived === null) return null;
  return record.derived as RegionDerived;
}

export interface SampleResponse {
  rects: RectJson[];
  count: number;
  version: number;
  preview: boolean;
}

export interface ExportSummary {
  path: string;
  patches: number;
  images: number;
  copied_images: number;
}
