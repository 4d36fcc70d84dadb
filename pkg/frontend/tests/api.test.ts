import { describe, expect, it } from "vitest";

import { AnnotClient, ApiError, VersionConflictError } from "../src/api.js";
import { KIND_BUD, KIND_REGION } from "../src/types.js";

interface Call {
  url: string;
  method: string;
  body: unknown;
}

/** Client over a canned fetch, recording every request it makes. */
function cannedClient(
  status: number,
  payload: unknown,
  raw = false,
): { client: AnnotClient; calls: Call[] } {
  const calls: Call[] = [];
  const client = new AnnotClient("http://svc:9", (url, init) => {
    calls.push({
      url,
      method: init?.method ?? "GET",
      body: init?.body === undefined ? undefined : JSON.parse(String(init.body)),
    });
    const body = raw ? String(payload) : JSON.stringify(payload);
    return Promise.resolve(
      new Response(body, {
        status,
        headers: { "content-type": raw ? "text/plain" : "application/json" },
      }),
    );
  });
  return { client, calls };
}

describe("request shapes", () => {
  it("lists images from the catalog endpoint", async () => {
    const catalog = [{ id: "a.png", width: 320, height: 240, thumb: "/images/a.png/thumb" }];
    const { client, calls } = cannedClient(200, { images: catalog });
    expect(await client.listImages()).toEqual(catalog);
    expect(calls).toEqual([{ url: "http://svc:9/images", method: "GET", body: undefined }]);
  });

  it("filters annotations by image id in the query string", async () => {
    const { client, calls } = cannedClient(200, { annotations: [] });
    await client.listAnnotations("vines/row1.png");
    expect(calls[0].url).toBe("http://svc:9/annotations?image=vines%2Frow1.png");
    await client.listAnnotations();
    expect(calls[1].url).toBe("http://svc:9/annotations");
  });

  it("posts creation drafts without id or version keys", async () => {
    const { client, calls } = cannedClient(200, { id: "a-000001" });
    await client.putAnnotation({
      image: "a.png",
      kind: KIND_BUD,
      points: [
        [1, 2],
        [3, 4],
        [5, 6],
      ],
    });
    expect(calls[0].method).toBe("POST");
    expect(calls[0].url).toBe("http://svc:9/annotations");
    expect(calls[0].body).toEqual({
      image: "a.png",
      kind: "bud-polygon",
      points: [
        [1, 2],
        [3, 4],
        [5, 6],
      ],
    });
  });

  it("carries id and version on updates", async () => {
    const { client, calls } = cannedClient(200, { id: "a-000002" });
    await client.putAnnotation({
      image: "a.png",
      kind: KIND_REGION,
      points: [
        [0, 0],
        [9, 0],
        [9, 9],
      ],
      subcategory: "wire",
      quality: "blurred",
      id: "a-000002",
      version: 3,
    });
    expect(calls[0].body).toMatchObject({
      id: "a-000002",
      version: 3,
      subcategory: "wire",
      quality: "blurred",
    });
  });

  it("posts sampling params to the record's sample endpoint", async () => {
    const { client, calls } = cannedClient(200, {
      rects: [],
      count: 0,
      version: 1,
      preview: true,
    });
    await client.sampleRegion("a-000002", { step: 50, dims: [40, 30] }, true);
    expect(calls[0].url).toBe("http://svc:9/annotations/a-000002/sample");
    expect(calls[0].body).toEqual({ step: 50, dims: [40, 30], preview: true });
  });

  it("posts export requests with the flagged switch", async () => {
    const { client, calls } = cannedClient(200, {
      path: "/tmp/out",
      patches: 3,
      images: 1,
      copied_images: 1,
    });
    await client.exportCorpus("out", true);
    expect(calls[0].body).toEqual({ path: "out", include_flagged: true });
  });

  it("escapes image ids but keeps their slashes as path separators", () => {
    const client = new AnnotClient("http://svc:9");
    expect(client.imageUrl("plot a/row#1.png")).toBe(
      "http://svc:9/images/plot%20a/row%231.png",
    );
    expect(client.thumbUrl("a.png")).toBe("http://svc:9/images/a.png/thumb");
  });
});

describe("error mapping", () => {
  it("raises ApiError with the server's machine-readable code", async () => {
    const { client } = cannedClient(422, {
      code: "validation",
      detail: "polygon needs >= 3 points, got 2",
    });
    const err = await client.listImages().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err).not.toBeInstanceOf(VersionConflictError);
    expect((err as ApiError).status).toBe(422);
    expect((err as ApiError).code).toBe("validation");
    expect((err as ApiError).message).toMatch(/3 points/);
  });

  it("maps 409 onto VersionConflictError", async () => {
    const { client } = cannedClient(409, {
      code: "version-conflict",
      detail: "annotation 'a-000001' is at version 4",
    });
    const err = await client
      .putAnnotation({ image: "a.png", kind: KIND_BUD, points: [], id: "a-000001", version: 1 })
      .catch((e: unknown) => e);
    expect(err).toBeInstanceOf(VersionConflictError);
    expect((err as ApiError).code).toBe("version-conflict");
  });

  it("falls back to an http-status code for non-JSON error bodies", async () => {
    const { client } = cannedClient(500, "boom", true);
    const err = await client.listImages().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("http-500");
  });
});
