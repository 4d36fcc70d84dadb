/** Single-page annotation editor wired to the service API.

The page holds no authoritative state: every overlay, count and record
shown is (re)built from server responses, and a reload reproduces the
view. Writes are optimistic with server confirmation; a stale write gets
a 409, after which the record is refetched and the change can be retried.
*/

import { AnnotClient, ApiError, VersionConflictError } from "./api.js";
import { toImage } from "./geometry.js";
import { MaskCache, drawScene } from "./render.js";
import { CanvasSession, Tool, toolKind } from "./session.js";
import {
  AnnotationRecord,
  ImageInfo,
  KIND_REGION,
  Point,
  QUALITY_FLAGS,
  Quality,
  RectJson,
  SUBCATEGORIES,
  Subcategory,
  regionDerived,
} from "./types.js";

function must<T>(el: T | null): T {
  if (el === null) throw new Error("page is missing a required element");
  return el;
}

const apiBase = new URLSearchParams(location.search).get("api") ?? "";
const client = new AnnotClient(apiBase);
const session = new CanvasSession();

const canvas = must(document.querySelector<HTMLCanvasElement>("#canvas"));
const ctx = must(canvas.getContext("2d"));
const imageList = must(document.querySelector<HTMLUListElement>("#image-list"));
const recordList = must(document.querySelector<HTMLUListElement>("#record-list"));
const traceStatus = must(document.querySelector<HTMLElement>("#trace-status"));
const submitBtn = must(document.querySelector<HTMLButtonElement>("#submit-trace"));
const discardBtn = must(document.querySelector<HTMLButtonElement>("#discard-trace"));
const newTagSelect = must(document.querySelector<HTMLSelectElement>("#subcategory"));
const recordPanel = must(document.querySelector<HTMLElement>("#record-panel"));
const recordTitle = must(document.querySelector<HTMLElement>("#record-title"));
const recordTag = must(document.querySelector<HTMLSelectElement>("#record-tag"));
const recordQuality = must(document.querySelector<HTMLSelectElement>("#record-quality"));
const samplePanel = must(document.querySelector<HTMLElement>("#sample-panel"));
const sampleStep = must(document.querySelector<HTMLInputElement>("#sample-step"));
const sampleW = must(document.querySelector<HTMLInputElement>("#sample-w"));
const sampleH = must(document.querySelector<HTMLInputElement>("#sample-h"));
const sampleCount = must(document.querySelector<HTMLElement>("#sample-count"));
const previewBtn = must(document.querySelector<HTMLButtonElement>("#sample-preview"));
const applyBtn = must(document.querySelector<HTMLButtonElement>("#sample-apply"));
const exportPath = must(document.querySelector<HTMLInputElement>("#export-path"));
const exportFlagged = must(document.querySelector<HTMLInputElement>("#export-flagged"));
const exportBtn = must(document.querySelector<HTMLButtonElement>("#export-btn"));
const zoomLabel = must(document.querySelector<HTMLElement>("#zoom-label"));
const messageLine = must(document.querySelector<HTMLElement>("#message"));
const statusLine = must(document.querySelector<HTMLElement>("#status"));

let images: ImageInfo[] = [];
let records: AnnotationRecord[] = [];
let htmlImage: HTMLImageElement | null = null;
let previewRects: RectJson[] | null = null;
let drawing = false;
let panning: Point | null = null;
let spaceHeld = false;
let framePending = false;

const masks = new MaskCache(scheduleDraw);

function scheduleDraw(): void {
  if (framePending) return;
  framePending = true;
  requestAnimationFrame(() => {
    framePending = false;
    draw();
  });
}

function draw(): void {
  drawScene(
    ctx,
    htmlImage,
    session.view,
    {
      records,
      selectedId: session.selectedId,
      previewRects,
      trace: session.tracePreview(),
    },
    masks,
  );
  zoomLabel.textContent = `${Math.round(session.view.scale * 100)}%`;
  messageLine.textContent = session.message ?? "";
  traceStatus.textContent = session.traceIsClosed
    ? `closed polygon, ${session.traceLength} points`
    : session.traceLength > 0
      ? `${session.traceLength} points...`
      : "drag on the image to draw";
  const ready = session.traceIsClosed;
  submitBtn.disabled = !ready;
  discardBtn.disabled = session.traceLength === 0;
}

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function fail(err: unknown): void {
  if (err instanceof ApiError) {
    session.message = `${err.code}: ${err.message}`;
  } else {
    session.message = String(err);
  }
  scheduleDraw();
}

// -- images ------------------------------------------------------------

async function refreshImages(): Promise<void> {
  images = await client.listImages();
  imageList.replaceChildren(
    ...images.map((info) => {
      const li = document.createElement("li");
      const img = document.createElement("img");
      img.src = client.base + info.thumb;
      img.alt = info.id;
      const label = document.createElement("span");
      label.textContent = `${info.id} (${info.width}x${info.height})`;
      li.append(img, label);
      li.classList.toggle("active", info.id === session.imageId);
      li.addEventListener("click", () => void openImage(info));
      return li;
    }),
  );
}

async function openImage(info: ImageInfo): Promise<void> {
  const img = new Image();
  img.src = client.imageUrl(info.id);
  await img.decode();
  htmlImage = img;
  fitCanvas();
  session.openImage(info.id, [info.width, info.height], [canvas.width, canvas.height]);
  previewRects = null;
  renderRecordPanel(null);
  await refreshRecords();
  await refreshImages();
  setStatus(`viewing ${info.id}`);
}

// -- records -----------------------------------------------------------

async function refreshRecords(): Promise<void> {
  if (session.imageId === null) {
    records = [];
  } else {
    records = await client.listAnnotations(session.imageId);
  }
  if (!records.some((r) => r.id === session.selectedId)) {
    session.selectedId = null;
  }
  recordList.replaceChildren(
    ...records.map((record) => {
      const li = document.createElement("li");
      const tag = record.subcategory === null ? "" : ` ${record.subcategory}`;
      const quality = record.quality === "ok" ? "" : ` [${record.quality}]`;
      li.textContent = `${record.id} ${record.kind}${tag}${quality} v${record.version}`;
      li.classList.toggle("active", record.id === session.selectedId);
      li.addEventListener("click", () => selectRecord(record.id));
      return li;
    }),
  );
  renderRecordPanel(selectedRecord());
  scheduleDraw();
}

function selectedRecord(): AnnotationRecord | null {
  return records.find((r) => r.id === session.selectedId) ?? null;
}

function selectRecord(id: string | null): void {
  session.selectedId = id;
  previewRects = null;
  for (const li of recordList.children) {
    li.classList.toggle(
      "active",
      li.textContent !== null && id !== null && li.textContent.startsWith(`${id} `),
    );
  }
  renderRecordPanel(selectedRecord());
  scheduleDraw();
}

function renderRecordPanel(record: AnnotationRecord | null): void {
  recordPanel.hidden = record === null;
  if (record === null) return;
  recordTitle.textContent = `${record.id} (${record.kind}, v${record.version})`;
  recordQuality.value = record.quality;
  const isRegion = record.kind === KIND_REGION;
  recordTag.parentElement!.hidden = !isRegion;
  samplePanel.hidden = !isRegion;
  if (isRegion) {
    recordTag.value = record.subcategory ?? "";
    if (record.sampling !== null) {
      sampleStep.value = String(record.sampling.step);
      sampleW.value = String(record.sampling.dims[0]);
      sampleH.value = String(record.sampling.dims[1]);
    }
    const derived = regionDerived(record);
    sampleCount.textContent =
      derived === null ? "no samples yet" : `${derived.count} stored rects`;
  }
}

/** Push one changed field, then adopt the server's view of the record. */
async function updateRecord(
  record: AnnotationRecord,
  change: { subcategory?: Subcategory | null; quality?: Quality },
): Promise<void> {
  try {
    const updated = await client.putAnnotation({
      image: record.image,
      kind: record.kind,
      points: record.points,
      subcategory: change.subcategory !== undefined ? change.subcategory : record.subcategory,
      quality: change.quality ?? record.quality,
      id: record.id,
      version: record.version,
    });
    records = records.map((r) => (r.id === updated.id ? updated : r));
    setStatus(`saved ${updated.id} v${updated.version}`);
  } catch (err) {
    if (err instanceof VersionConflictError) {
      setStatus(`${record.id} changed on the server; reloaded, apply again`);
    } else {
      fail(err);
    }
  }
  await refreshRecords();
}

// -- trace submission ----------------------------------------------------

async function submitTrace(): Promise<void> {
  const preview = session.tracePreview();
  if (!preview.closed || session.imageId === null) return;
  const kind = toolKind(session.tool);
  const subcategory =
    kind === KIND_REGION && newTagSelect.value !== ""
      ? (newTagSelect.value as Subcategory)
      : undefined;
  try {
    const record = await client.putAnnotation({
      image: session.imageId,
      kind,
      points: preview.points,
      subcategory,
    });
    session.resetTrace();
    await refreshRecords();
    selectRecord(record.id);
    setStatus(`stored ${record.id}`);
  } catch (err) {
    fail(err);
  }
}

// -- sampling ------------------------------------------------------------

function samplingInputs(): { step: number; w: number; h: number } {
  return {
    step: Number(sampleStep.value),
    w: Number(sampleW.value),
    h: Number(sampleH.value),
  };
}

async function runSampling(preview: boolean): Promise<void> {
  const record = selectedRecord();
  if (record === null || record.kind !== KIND_REGION) return;
  const { step, w, h } = samplingInputs();
  if (session.setSampling(step, w, h) !== null) {
    scheduleDraw();
    return;
  }
  try {
    const result = await client.sampleRegion(record.id, session.sampling!, preview);
    previewRects = result.rects;
    sampleCount.textContent = `${result.count} rects${preview ? " (preview)" : " stored"}`;
    if (!preview) {
      await refreshRecords();
      setStatus(`sampling stored on ${record.id} v${result.version}`);
    }
    scheduleDraw();
  } catch (err) {
    fail(err);
  }
}

// -- canvas input ----------------------------------------------------------

function fitCanvas(): void {
  const wrap = canvas.parentElement!;
  canvas.width = wrap.clientWidth;
  canvas.height = wrap.clientHeight;
}

function pointerImagePos(ev: PointerEvent): Point {
  const box = canvas.getBoundingClientRect();
  return toImage(session.view, [ev.clientX - box.left, ev.clientY - box.top]);
}

canvas.addEventListener("pointerdown", (ev) => {
  canvas.setPointerCapture(ev.pointerId);
  if (ev.button === 1 || ev.button === 2 || spaceHeld) {
    panning = [ev.clientX, ev.clientY];
    return;
  }
  if (htmlImage === null) return;
  if (session.traceIsClosed) session.resetTrace();
  drawing = true;
  session.addPoint(pointerImagePos(ev));
  scheduleDraw();
});

canvas.addEventListener("pointermove", (ev) => {
  if (panning !== null) {
    session.panBy(ev.clientX - panning[0], ev.clientY - panning[1]);
    panning = [ev.clientX, ev.clientY];
    scheduleDraw();
    return;
  }
  if (!drawing) return;
  session.addPoint(pointerImagePos(ev), 2.5 / session.view.scale);
  scheduleDraw();
});

canvas.addEventListener("pointerup", () => {
  panning = null;
  if (!drawing) return;
  drawing = false;
  if (session.traceLength >= 3) session.closeTrace();
  else if (session.traceLength > 0)
    session.message = `a polygon needs at least 3 points, got ${session.traceLength}`;
  scheduleDraw();
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const box = canvas.getBoundingClientRect();
  const factor = Math.exp(-ev.deltaY * 0.0015);
  session.zoomAt([ev.clientX - box.left, ev.clientY - box.top], factor);
  scheduleDraw();
});

canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());

window.addEventListener("keydown", (ev) => {
  if (ev.key === " ") spaceHeld = true;
  if (ev.key === "Escape") {
    session.resetTrace();
    scheduleDraw();
  }
});
window.addEventListener("keyup", (ev) => {
  if (ev.key === " ") spaceHeld = false;
});

new ResizeObserver(() => {
  fitCanvas();
  scheduleDraw();
}).observe(must(canvas.parentElement));

// -- controls ---------------------------------------------------------------

for (const radio of document.querySelectorAll<HTMLInputElement>("input[name=tool]")) {
  radio.addEventListener("change", () => {
    session.setTool(radio.value as Tool);
    newTagSelect.disabled = radio.value !== "nonbud-region";
    scheduleDraw();
  });
}

function fillSelect(select: HTMLSelectElement, values: readonly string[], blank: boolean) {
  if (blank) select.append(new Option("(untagged)", ""));
  for (const value of values) select.append(new Option(value, value));
}
fillSelect(newTagSelect, SUBCATEGORIES, true);
fillSelect(recordTag, SUBCATEGORIES, true);
fillSelect(recordQuality, QUALITY_FLAGS, false);
newTagSelect.disabled = true;

submitBtn.addEventListener("click", () => void submitTrace());
discardBtn.addEventListener("click", () => {
  session.resetTrace();
  scheduleDraw();
});

recordTag.addEventListener("change", () => {
  const record = selectedRecord();
  if (record === null) return;
  const value = recordTag.value === "" ? null : (recordTag.value as Subcategory);
  void updateRecord(record, { subcategory: value });
});
recordQuality.addEventListener("change", () => {
  const record = selectedRecord();
  if (record === null) return;
  void updateRecord(record, { quality: recordQuality.value as Quality });
});

previewBtn.addEventListener("click", () => void runSampling(true));
applyBtn.addEventListener("click", () => void runSampling(false));

exportBtn.addEventListener("click", () => {
  void (async () => {
    try {
      const summary = await client.exportCorpus(exportPath.value, exportFlagged.checked);
      setStatus(
        `exported ${summary.patches} patches from ${summary.images} images to ${summary.path}`,
      );
    } catch (err) {
      fail(err);
    }
  })();
});

// -- boot ---------------------------------------------------------------------

fitCanvas();
refreshImages()
  .then(() => setStatus(images.length === 0 ? "no images in the corpus" : "pick an image"))
  .catch(fail);
scheduleDraw();
