/** End-to-end flow against the real annotation service.

Spawns the Python backend on a scratch corpus, fronts it with the dev
server's static-plus-proxy origin, and drives the whole annotation
workflow through the same client the page uses: draw, store, tag, flag,
sample, resolve a stale write, export. Skipped when the backend is not
installed next to this package.
*/

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { existsSync, mkdirSync, mkdtempSync, rmSync, writeFileSync } from "node:fs";
import type http from "node:http";
import net, { type AddressInfo } from "node:net";
import { tmpdir } from "node:os";
import { dirname, join, resolve } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { AnnotClient, ApiError, VersionConflictError } from "../src/api.js";
import { polygonBounds } from "../src/geometry.js";
import { createDevServer } from "../src/devserver.js";
import {
  KIND_BUD,
  KIND_REGION,
  budDerived,
  regionDerived,
  type AnnotationRecord,
  type Point,
  type Subcategory,
} from "../src/types.js";
import { FIXTURE_DIMS, fixtureBytes, pngDims } from "./fixture.js";

const FRONTEND_ROOT = resolve(dirname(fileURLToPath(import.meta.url)), "..");
const IMAGE_ID = "vines/row1.png";

const PY_SERVER = [
  "import sys",
  "import uvicorn",
  "from vinebud.service import create_app",
  "uvicorn.run(create_app(sys.argv[1]), host='127.0.0.1',",
  "            port=int(sys.argv[2]), log_level='warning')",
].join("\n");

const probe = spawnSync("python3", ["-c", "import uvicorn, vinebud"], { stdio: "ignore" });
const backendAvailable = probe.status === 0;
if (!backendAvailable) {
  console.warn("skipping service round trip: python3 with the backend package not found");
}

function freePort(): Promise<number> {
  return new Promise((resolvePort, reject) => {
    const probe = net.createServer();
    probe.once("error", reject);
    probe.listen(0, "127.0.0.1", () => {
      const port = (probe.address() as AddressInfo).port;
      probe.close(() => resolvePort(port));
    });
  });
}

function sleep(ms: number): Promise<void> {
  return new Promise((r) => setTimeout(r, ms));
}

/** Deterministic 32-bit RNG so the randomized regions are reproducible. */
function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function rectPolygon(x0: number, y0: number, x1: number, y1: number): Point[] {
  return [
    [x0, y0],
    [x1, y0],
    [x1, y1],
    [x0, y1],
  ];
}

describe.runIf(backendAvailable)("service round trip", () => {
  let corpusRoot: string;
  let backend: ChildProcess;
  let backendErr = "";
  let devServer: http.Server;
  let client: AnnotClient;
  let base: string;

  let budRecord: AnnotationRecord;
  let storedOkPatches = 0;

  beforeAll(async () => {
    expect(
      existsSync(join(FRONTEND_ROOT, "dist", "app.js")),
      "dist/app.js missing; run `npm run build` before the tests",
    ).toBe(true);

    corpusRoot = mkdtempSync(join(tmpdir(), "annot-ui-"));
    mkdirSync(join(corpusRoot, "vines"));
    writeFileSync(join(corpusRoot, IMAGE_ID), fixtureBytes());

    const backendPort = await freePort();
    backend = spawn("python3", ["-c", PY_SERVER, corpusRoot, String(backendPort)], {
      stdio: ["ignore", "ignore", "pipe"],
    });
    backend.stderr!.on("data", (chunk: Buffer) => {
      backendErr += chunk.toString();
    });

    const backendBase = `http://127.0.0.1:${backendPort}`;
    let up = false;
    for (let i = 0; i < 120 && !up; i++) {
      if (backend.exitCode !== null) break;
      up = await fetch(`${backendBase}/images`, { signal: AbortSignal.timeout(1000) })
        .then((r) => r.ok)
        .catch(() => false);
      if (!up) await sleep(250);
    }
    if (!up) throw new Error(`backend did not come up:\n${backendErr}`);

    devServer = createDevServer({ root: FRONTEND_ROOT, apiBase: backendBase });
    await new Promise<void>((r) => devServer.listen(0, "127.0.0.1", r));
    base = `http://127.0.0.1:${(devServer.address() as AddressInfo).port}`;
    client = new AnnotClient(base);
  });

  afterAll(async () => {
    if (devServer !== undefined) {
      await new Promise((r) => devServer.close(r));
    }
    if (backend !== undefined && backend.exitCode === null) {
      backend.kill("SIGTERM");
      await new Promise((r) => backend.once("exit", r));
    }
    if (corpusRoot !== undefined) rmSync(corpusRoot, { recursive: true, force: true });
  });

  it("serves the page and proxies the image catalog", async () => {
    const page = await fetch(`${base}/`);
    expect(page.ok).toBe(true);
    expect(await page.text()).toContain("bud annotation");
    expect((await fetch(`${base}/dist/app.js`)).ok).toBe(true);
    expect((await fetch(`${base}/no-such-file.css`)).status).toBe(404);

    const images = await client.listImages();
    expect(images).toEqual([
      {
        id: IMAGE_ID,
        width: FIXTURE_DIMS[0],
        height: FIXTURE_DIMS[1],
        thumb: `/images/${IMAGE_ID}/thumb`,
      },
    ]);

    const full = await fetch(client.imageUrl(IMAGE_ID));
    expect(full.headers.get("content-type")).toBe("image/png");
    expect((await full.arrayBuffer()).byteLength).toBe(fixtureBytes().length);
    const thumb = await fetch(client.thumbUrl(IMAGE_ID));
    expect(thumb.ok).toBe(true);
    expect(thumb.headers.get("content-type")).toBe("image/png");
  });

  it("stores a drawn bud polygon whose geometry matches the preview box", async () => {
    const quad: Point[] = [
      [40, 30],
      [150, 35],
      [145, 140],
      [50, 130],
    ];
    budRecord = await client.putAnnotation({ image: IMAGE_ID, kind: KIND_BUD, points: quad });
    expect(budRecord.id).toMatch(/^a-\d{6}$/);
    expect(budRecord.version).toBe(1);
    expect(budRecord.subcategory).toBeNull();
    expect(budRecord.quality).toBe("ok");

    const derived = budDerived(budRecord);
    expect(derived).not.toBeNull();
    expect(derived!.rect).toEqual(polygonBounds(quad, FIXTURE_DIMS));
    expect(derived!.area).toBeGreaterThan(0);
    expect(derived!.area).toBeLessThanOrEqual(derived!.rect.w * derived!.rect.h);

    const mask = Uint8Array.from(Buffer.from(derived!.mask_png, "base64"));
    expect(pngDims(mask)).toEqual([derived!.rect.w, derived!.rect.h]);

    const reloaded = await client.listAnnotations(IMAGE_ID);
    expect(reloaded).toHaveLength(1);
    expect(reloaded[0]).toEqual(budRecord);
  });

  it("round-trips sampling with the preview equal to what gets stored", async () => {
    const region = await client.putAnnotation({
      image: IMAGE_ID,
      kind: KIND_REGION,
      points: rectPolygon(20, 20, 300, 220),
      subcategory: "wire",
    });
    expect(region.version).toBe(1);
    expect(region.derived).toBeNull();

    const params = { step: 50, dims: [40, 40] as [number, number] };
    const preview = await client.sampleRegion(region.id, params, true);
    expect(preview.preview).toBe(true);
    expect(preview.version).toBe(1);
    expect(preview.count).toBe(preview.rects.length);
    expect(preview.count).toBeGreaterThan(0);
    for (const r of preview.rects) {
      expect(r.w).toBe(40);
      expect(r.h).toBe(40);
      expect(r.x).toBeGreaterThanOrEqual(20);
      expect(r.y).toBeGreaterThanOrEqual(20);
      expect(r.x + r.w).toBeLessThanOrEqual(300);
      expect(r.y + r.h).toBeLessThanOrEqual(220);
    }

    const stored = await client.sampleRegion(region.id, params, false);
    expect(stored.preview).toBe(false);
    expect(stored.version).toBe(2);
    expect(stored.rects).toEqual(preview.rects);

    const [refetched] = (await client.listAnnotations(IMAGE_ID)).filter(
      (r) => r.id === region.id,
    );
    expect(refetched.sampling).toEqual({ step: 50, dims: [40, 40] });
    const derived = regionDerived(refetched);
    expect(derived!.count).toBe(preview.count);
    expect(derived!.rects).toEqual(preview.rects);
    storedOkPatches += preview.count;
  });

  it("agrees with the server on preview counts for randomized regions", async () => {
    const rand = mulberry32(42);
    for (let i = 0; i < 20; i++) {
      const x0 = 1 + Math.floor(rand() * 160);
      const y0 = 1 + Math.floor(rand() * 120);
      const x1 = x0 + 15 + Math.floor(rand() * (318 - x0 - 15));
      const y1 = y0 + 15 + Math.floor(rand() * (238 - y0 - 15));
      const params = {
        step: 10 + Math.floor(rand() * 70),
        dims: [10 + Math.floor(rand() * 50), 10 + Math.floor(rand() * 50)] as [number, number],
      };
      const region = await client.putAnnotation({
        image: IMAGE_ID,
        kind: KIND_REGION,
        points: rectPolygon(x0, y0, x1, y1),
        subcategory: (i % 2 === 0 ? "branch-edge" : "dry-leaves") as Subcategory,
      });
      const preview = await client.sampleRegion(region.id, params, true);
      const stored = await client.sampleRegion(region.id, params, false);
      const [refetched] = (await client.listAnnotations(IMAGE_ID)).filter(
        (r) => r.id === region.id,
      );
      const derived = regionDerived(refetched);
      expect(preview.count).toBe(preview.rects.length);
      expect(stored.count).toBe(preview.count);
      expect(stored.rects).toEqual(preview.rects);
      expect(derived!.count).toBe(preview.count);
      expect(derived!.rects).toEqual(preview.rects);
      storedOkPatches += preview.count;
    }
  });

  it("rejects stale writes and lets the client retry after a refetch", async () => {
    const region = await client.putAnnotation({
      image: IMAGE_ID,
      kind: KIND_REGION,
      points: rectPolygon(30, 30, 120, 120),
    });
    const fields = { image: region.image, kind: region.kind, points: region.points };

    const first = await client.putAnnotation({
      ...fields,
      subcategory: "tendril",
      id: region.id,
      version: region.version,
    });
    expect(first.version).toBe(2);

    const stale = await client
      .putAnnotation({ ...fields, subcategory: "knot", id: region.id, version: region.version })
      .catch((e: unknown) => e);
    expect(stale).toBeInstanceOf(VersionConflictError);
    expect((stale as ApiError).status).toBe(409);
    expect((stale as ApiError).code).toBe("version-conflict");

    const [refetched] = (await client.listAnnotations(IMAGE_ID)).filter(
      (r) => r.id === region.id,
    );
    expect(refetched.version).toBe(2);
    expect(refetched.subcategory).toBe("tendril");

    const retried = await client.putAnnotation({
      ...fields,
      subcategory: "knot",
      id: region.id,
      version: refetched.version,
    });
    expect(retried.version).toBe(3);
    expect(retried.subcategory).toBe("knot");
  });

  it("surfaces validation failures with machine-readable codes", async () => {
    const expectValidation = async (posting: Promise<unknown>) => {
      const err = await posting.catch((e: unknown) => e);
      expect(err).toBeInstanceOf(ApiError);
      expect((err as ApiError).status).toBe(422);
      expect((err as ApiError).code).toBe("validation");
      return err as ApiError;
    };

    const short = await expectValidation(
      client.putAnnotation({
        image: IMAGE_ID,
        kind: KIND_BUD,
        points: [
          [10, 10],
          [60, 60],
        ],
      }),
    );
    expect(short.message).toMatch(/3 points/);

    await expectValidation(
      client.putAnnotation({
        image: IMAGE_ID,
        kind: KIND_BUD,
        points: rectPolygon(10, 10, 50, 50),
        subcategory: "knot",
      }),
    );

    await expectValidation(
      client.putAnnotation({
        image: IMAGE_ID,
        kind: KIND_REGION,
        points: rectPolygon(10, 10, 50, 50),
        subcategory: "weeds" as Subcategory,
      }),
    );

    await expectValidation(
      client.sampleRegion(budRecord.id, { step: 50, dims: [40, 40] }, true),
    );

    const missing = await client
      .putAnnotation({ image: "vines/nope.png", kind: KIND_BUD, points: rectPolygon(1, 1, 9, 9) })
      .catch((e: unknown) => e);
    expect((missing as ApiError).status).toBe(404);
    expect((missing as ApiError).code).toBe("not-found");
  });

  it("treats zero-rect sampling params as a valid empty grid", async () => {
    const region = await client.putAnnotation({
      image: IMAGE_ID,
      kind: KIND_REGION,
      points: rectPolygon(10, 10, 40, 40),
      subcategory: "trunk-with-bark",
    });
    const params = { step: 50, dims: [100, 100] as [number, number] };
    const preview = await client.sampleRegion(region.id, params, true);
    expect(preview.count).toBe(0);
    expect(preview.rects).toEqual([]);

    const stored = await client.sampleRegion(region.id, params, false);
    expect(stored.count).toBe(0);
    const [refetched] = (await client.listAnnotations(IMAGE_ID)).filter(
      (r) => r.id === region.id,
    );
    expect(regionDerived(refetched)!.count).toBe(0);
  });

  it("excludes flagged records from the default export", async () => {
    const flagged = await client.putAnnotation({
      image: budRecord.image,
      kind: budRecord.kind,
      points: budRecord.points,
      quality: "blurred",
      id: budRecord.id,
      version: budRecord.version,
    });
    expect(flagged.quality).toBe("blurred");

    const plain = await client.exportCorpus("out-a");
    expect(plain.patches).toBe(storedOkPatches);
    expect(plain.images).toBe(1);
    expect(plain.copied_images).toBe(1);
    expect(existsSync(join(corpusRoot, "out-a", "manifest"))).toBe(true);
    expect(existsSync(join(corpusRoot, "out-a", IMAGE_ID))).toBe(true);
    expect(existsSync(join(corpusRoot, "out-a", "masks", `${budRecord.id}.png`))).toBe(false);

    const withFlagged = await client.exportCorpus("out-b", true);
    expect(withFlagged.patches).toBe(storedOkPatches + 1);
    expect(existsSync(join(corpusRoot, "out-b", "masks", `${budRecord.id}.png`))).toBe(true);
  });
});
