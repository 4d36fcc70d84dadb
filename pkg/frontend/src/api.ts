/** Typed client for the annotation service HTTP API. */

import type {
  AnnotationRecord,
  ExportSummary,
  ImageInfo,
  Kind,
  Point,
  Quality,
  SampleResponse,
  SamplingParams,
  Subcategory,
} from "./types.js";

/** Non-2xx response, carrying the server's machine-readable code. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }
}

/** Stale-version write rejected by the server (HTTP 409). */
export class VersionConflictError extends ApiError {}

export interface AnnotationDraft {
  image: string;
  kind: Kind;
  points: Point[];
  subcategory?: Subcategory | null;
  quality?: Quality;
  id?: string;
  version?: number;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class AnnotClient {
  private readonly fetchFn: FetchLike;

  constructor(
    readonly base = "",
    fetchFn?: FetchLike,
  ) {
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.base + path, init);
    if (!response.ok) {
      let code = `http-${response.status}`;
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { code?: string; detail?: string };
        if (typeof body.code === "string") code = body.code;
        if (typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the status fallbacks
      }
      const cls = response.status === 409 ? VersionConflictError : ApiError;
      throw new cls(response.status, code, detail);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  /** Image ids may contain slashes; escape everything else. */
  private imagePath(id: string): string {
    return id.split("/").map(encodeURIComponent).join("/");
  }

  imageUrl(id: string): string {
    return `${this.base}/images/${this.imagePath(id)}`;
  }

  thumbUrl(id: string): string {
    return `${this.imageUrl(id)}/thumb`;
  }

  async listImages(): Promise<ImageInfo[]> {
    const data = await this.request<{ images: ImageInfo[] }>("/images");
    return data.images;
  }

  async listAnnotations(image?: string): Promise<AnnotationRecord[]> {
    const query = image === undefined ? "" : `?${new URLSearchParams({ image })}`;
    const data = await this.request<{ annotations: AnnotationRecord[] }>(
      `/annotations${query}`,
    );
    return data.annotations;
  }

  /** Create a record, or update one when draft.id and draft.version are set. */
  putAnnotation(draft: AnnotationDraft): Promise<AnnotationRecord> {
    return this.post<AnnotationRecord>("/annotations", draft);
  }

  sampleRegion(
    id: string,
    params: SamplingParams,
    preview: boolean,
  ): Promise<SampleResponse> {
    return this.post<SampleResponse>(`/annotations/${encodeURIComponent(id)}/sample`, {
      step: params.step,
      dims: params.dims,
      preview,
    });
  }

  exportCorpus(path: string, includeFlagged = false): Promise<ExportSummary> {
    return this.post<ExportSummary>("/export", {
      path,
      include_flagged: includeFlagged,
    });
  }
}
