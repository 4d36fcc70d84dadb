"""HTTP backend for the bud annotation workflow.

Serves source images, stores free-hand polygon annotations, samples
rectangular patches inside non-bud regions, and exports everything as a
corpus manifest. State lives in an append-only JSONL log next to the
images (`annotations.jsonl`); every mutation appends a full-record
snapshot, so replay is last-write-wins and a torn final line (crash mid
write) is ignored. The log is compacted on startup once stale snapshots
pile up.

Endpoints (JSON in/out; errors carry {"code", "detail"}):

    GET  /images                       catalog: id, width, height, thumb
    GET  /images/{id}                  original bytes, immutable cache
    GET  /images/{id}/thumb            PNG thumbnail, longest side 256
    GET  /annotations?image=ID         stored records (+ derived geometry)
    POST /annotations                  create; or update when id+version
                                       given (stale version -> 409)
    POST /annotations/{id}/sample      {step, dims, preview}: rects fully
                                       inside the region; preview skips
                                       persisting the sampling params
    POST /export                       {path, include_flagged}: write a
                                       loadable corpus manifest + masks,
                                       copying referenced images

A record is {id, image, kind: bud-polygon | nonbud-region, points,
subcategory, quality, sampling, created_at, version}. Bud polygons
materialize their bounding rect and rasterized mask (returned base64
PNG-encoded under "derived"); regions report their sampled rects once
sampling params are set. Export skips records whose quality flag is not
"ok" unless asked otherwise.
"""

from __future__ import annotations

import base64
import io
import json
import logging
import os
import shutil
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel

from .corpus import (
    LABEL_BUD,
    LABEL_NON_BUD,
    QUALITY_FLAGS,
    SUBCATEGORIES,
    Corpus,
    Patch,
    rasterize_polygon,
    sample_region_patches,
    save_manifest,
)
from .errors import FormatError, VinebudError
from .imaging import Rect

log = logging.getLogger(__name__)

KIND_BUD = "bud-polygon"
KIND_REGION = "nonbud-region"
KINDS = (KIND_BUD, KIND_REGION)

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
_THUMB_SIDE = 256
_LOG_NAME = "annotations.jsonl"


class ServiceError(VinebudError):
    status = 500
    code = "service-error"


class ValidationFailure(ServiceError):
    status = 422
    code = "validation"


class NotFound(ServiceError):
    status = 404
    code = "not-found"


class VersionConflict(ServiceError):
    status = 409
    code = "version-conflict"


@dataclass(frozen=True)
class Annotation:
    """One stored annotation; full snapshots of these land in the log."""

    id: str
    image: str
    kind: str
    points: tuple[tuple[float, float], ...]
    subcategory: str | None
    quality: str
    sampling: tuple[int, tuple[int, int]] | None
    created_at: str
    version: int

    def to_json(self) -> dict:
        sampling = None
        if self.sampling is not None:
            step, dims = self.sampling
            sampling = {"step": step, "dims": list(dims)}
        return {
            "id": self.id,
            "image": self.image,
            "kind": self.kind,
            "points": [list(p) for p in self.points],
            "subcategory": self.subcategory,
            "quality": self.quality,
            "sampling": sampling,
            "created_at": self.created_at,
            "version": self.version,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Annotation":
        sampling = None
        if data.get("sampling") is not None:
            sampling = (
                int(data["sampling"]["step"]),
                tuple(int(v) for v in data["sampling"]["dims"]),
            )
        return cls(
            id=data["id"],
            image=data["image"],
            kind=data["kind"],
            points=tuple((float(x), float(y)) for x, y in data["points"]),
            subcategory=data.get("subcategory"),
            quality=data.get("quality", "ok"),
            sampling=sampling,
            created_at=data["created_at"],
            version=int(data["version"]),
        )


def _polygon_geometry(points, image_dims: tuple[int, int]) -> tuple[Rect, np.ndarray]:
    """Integer bounding rect plus the rasterized mask of a polygon."""
    pts = np.asarray(points, np.float64)
    x0 = int(np.floor(pts[:, 0].min()))
    y0 = int(np.floor(pts[:, 1].min()))
    x1 = min(int(np.ceil(pts[:, 0].max())), image_dims[0])
    y1 = min(int(np.ceil(pts[:, 1].max())), image_dims[1])
    if x1 - x0 < 1 or y1 - y0 < 1:
        raise ValidationFailure("polygon collapses to a degenerate rect")
    rect = Rect(x0, y0, x1 - x0, y1 - y0)
    mask = rasterize_polygon(pts, rect)
    if not mask.any():
        raise ValidationFailure("polygon rasterizes to an empty mask")
    return rect, mask


def _mask_png(mask: np.ndarray) -> bytes:
    img = Image.fromarray(mask.astype(np.uint8) * 255, mode="L").convert("1")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _rect_json(rect: Rect) -> dict:
    return {"x": rect.x, "y": rect.y, "w": rect.w, "h": rect.h}


class AnnotationStore:
    """Log-backed store; the service is the only writer."""

    def __init__(self, root):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ServiceError(f"corpus root {self.root} is not a directory")
        self._lock = threading.RLock()
        self._records: dict[str, Annotation] = {}
        self._dims: dict[str, tuple[int, int]] = {}
        self._thumbs: dict[str, bytes] = {}
        self._seq = 0
        self._log_path = self.root / _LOG_NAME
        entries = self._replay()
        if entries > max(64, 4 * len(self._records)):
            self.compact()

    # -- image catalog ----------------------------------------------------

    def _iter_image_files(self):
        for path in sorted(self.root.rglob("*")):
            rel = path.relative_to(self.root)
            if any(part.startswith(".") or part == "masks" for part in rel.parts):
                continue
            if path.is_file() and path.suffix.lower() in _IMAGE_SUFFIXES:
                yield rel.as_posix(), path

    def list_images(self) -> list[dict]:
        out = []
        for image_id, path in self._iter_image_files():
            try:
                dims = self.image_dims(image_id)
            except NotFound:
                log.warning("skipping undecodable image file %s", path)
                continue
            out.append(
                {
                    "id": image_id,
                    "width": dims[0],
                    "height": dims[1],
                    "thumb": f"/images/{image_id}/thumb",
                }
            )
        return out

    def image_path(self, image_id: str) -> Path:
        path = (self.root / image_id).resolve()
        if not path.is_relative_to(self.root.resolve()) or not path.is_file():
            raise NotFound(f"no image {image_id!r}")
        return path

    def image_dims(self, image_id: str) -> tuple[int, int]:
        with self._lock:
            if image_id in self._dims:
                return self._dims[image_id]
        path = self.image_path(image_id)
        try:
            with Image.open(path) as img:
                dims = img.size
        except Exception as exc:
            raise NotFound(f"image {image_id!r} is not decodable: {exc}")
        with self._lock:
            self._dims[image_id] = dims
        return dims

    def thumbnail(self, image_id: str) -> bytes:
        with self._lock:
            if image_id in self._thumbs:
                return self._thumbs[image_id]
        path = self.image_path(image_id)
        try:
            with Image.open(path) as img:
                img.thumbnail((_THUMB_SIDE, _THUMB_SIDE))
                buf = io.BytesIO()
                img.save(buf, format="PNG")
        except Exception as exc:
            raise NotFound(f"image {image_id!r} is not decodable: {exc}")
        data = buf.getvalue()
        with self._lock:
            self._thumbs[image_id] = data
        return data

    # -- log persistence ---------------------------------------------------

    def _replay(self) -> int:
        if not self._log_path.is_file():
            return 0
        raw = self._log_path.read_bytes()
        entries = 0
        lines = raw.split(b"\n")
        for i, line in enumerate(lines):
            if not line:
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError:
                if i == len(lines) - 1:
                    log.warning("ignoring torn final log line (%d bytes)", len(line))
                    break
                raise FormatError(f"annotation log corrupt at line {i + 1}")
            if data.get("op") != "put":
                raise FormatError(f"unknown log op {data.get('op')!r} at line {i + 1}")
            record = Annotation.from_json(data["record"])
            self._records[record.id] = record
            entries += 1
        for rid in self._records:
            head, _, tail = rid.partition("-")
            if head == "a" and tail.isdigit():
                self._seq = max(self._seq, int(tail))
        return entries

    def _append(self, record: Annotation) -> None:
        line = json.dumps({"op": "put", "record": record.to_json()}, sort_keys=True)
        with open(self._log_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def compact(self) -> None:
        """Rewrite the log as one snapshot per live record, atomically."""
        with self._lock:
            tmp = self._log_path.with_suffix(".jsonl.tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                for rid in sorted(self._records):
                    entry = {"op": "put", "record": self._records[rid].to_json()}
                    fh.write(json.dumps(entry, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, self._log_path)

    # -- annotation records -------------------------------------------------

    def _validate(self, payload: dict) -> dict:
        image = payload.get("image")
        if not image:
            raise ValidationFailure("record needs an image id")
        dims = self.image_dims(image)
        kind = payload.get("kind")
        if kind not in KINDS:
            raise ValidationFailure(f"kind must be one of {KINDS}, got {kind!r}")
        points = payload.get("points") or []
        if len(points) < 3:
            raise ValidationFailure(f"polygon needs >= 3 points, got {len(points)}")
        pts = []
        for p in points:
            x, y = float(p[0]), float(p[1])
            if not (0.0 <= x <= dims[0] and 0.0 <= y <= dims[1]):
                raise ValidationFailure(
                    f"point ({x}, {y}) outside image bounds {dims[0]}x{dims[1]}"
                )
            pts.append((x, y))
        subcategory = payload.get("subcategory")
        if subcategory is not None:
            if kind == KIND_BUD:
                raise ValidationFailure("bud polygons take no subcategory tag")
            if subcategory not in SUBCATEGORIES:
                raise ValidationFailure(f"unknown subcategory {subcategory!r}")
        quality = payload.get("quality", "ok")
        if quality not in QUALITY_FLAGS:
            raise ValidationFailure(f"unknown quality flag {quality!r}")
        if kind == KIND_BUD:
            _polygon_geometry(pts, dims)
        return {
            "image": image,
            "kind": kind,
            "points": tuple(pts),
            "subcategory": subcategory,
            "quality": quality,
        }

    def put(self, payload: dict) -> Annotation:
        """Create a record, or update one when id + version are given."""
        with self._lock:
            fields = self._validate(payload)
            rid = payload.get("id")
            if rid is None:
                self._seq += 1
                record = Annotation(
                    id=f"a-{self._seq:06d}",
                    created_at=datetime.now(timezone.utc).isoformat(
                        timespec="seconds"
                    ),
                    sampling=None,
                    version=1,
                    **fields,
                )
            else:
                current = self._records.get(rid)
                if current is None:
                    raise NotFound(f"no annotation {rid!r}")
                if payload.get("version") != current.version:
                    raise VersionConflict(
                        f"annotation {rid!r} is at version {current.version}"
                    )
                for frozen in ("image", "kind"):
                    if fields[frozen] != getattr(current, frozen):
                        raise ValidationFailure(f"field {frozen!r} is immutable")
                sampling = current.sampling
                if fields["points"] != current.points:
                    sampling = None  # moved region invalidates its samples
                record = replace(
                    current,
                    version=current.version + 1,
                    sampling=sampling,
                    **fields,
                )
            self._append(record)
            self._records[record.id] = record
            return record

    def get(self, rid: str) -> Annotation:
        with self._lock:
            record = self._records.get(rid)
        if record is None:
            raise NotFound(f"no annotation {rid!r}")
        return record

    def list(self, image: str | None = None) -> list[Annotation]:
        with self._lock:
            records = sorted(self._records.values(), key=lambda r: r.id)
        if image is not None:
            records = [r for r in records if r.image == image]
        return records

    def sample(self, rid: str, step: int, dims: tuple[int, int], preview=False):
        """Rects fully inside the region; persists params unless preview."""
        with self._lock:
            record = self.get(rid)
            if record.kind != KIND_REGION:
                raise ValidationFailure(
                    f"annotation {rid!r} is a {record.kind}, not a {KIND_REGION}"
                )
            rects = sample_region_patches(record.points, step, dims)
            if not preview:
                record = replace(
                    record,
                    sampling=(step, (dims[0], dims[1])),
                    version=record.version + 1,
                )
                self._append(record)
                self._records[rid] = record
            return rects, record

    def describe(self, record: Annotation) -> dict:
        """Public JSON form: stored fields plus derived geometry."""
        data = record.to_json()
        if record.kind == KIND_BUD:
            rect, mask = _polygon_geometry(
                record.points, self.image_dims(record.image)
            )
            data["derived"] = {
                "rect": _rect_json(rect),
                "area": int(mask.sum()),
                "mask_png": base64.b64encode(_mask_png(mask)).decode(),
            }
        elif record.sampling is not None:
            step, dims = record.sampling
            rects = sample_region_patches(record.points, step, dims)
            data["derived"] = {
                "rects": [_rect_json(r) for r in rects],
                "count": len(rects),
            }
        else:
            data["derived"] = None
        return data

    # -- export --------------------------------------------------------------

    def export(self, path, include_flagged: bool = False) -> dict:
        """Write a corpus manifest (+ masks, + image copies) under path."""
        out_root = Path(path)
        if not out_root.is_absolute():
            out_root = self.root / out_root
        with self._lock:
            records = sorted(self._records.values(), key=lambda r: r.id)
        patches = []
        images: dict[str, tuple[int, int]] = {}
        for record in records:
            if record.quality != "ok" and not include_flagged:
                continue
            dims = self.image_dims(record.image)
            if record.kind == KIND_BUD:
                rect, mask = _polygon_geometry(record.points, dims)
                patches.append(
                    Patch(
                        id=record.id,
                        source_image=record.image,
                        rect=rect,
                        label=LABEL_BUD,
                        mask=mask,
                        quality=record.quality,
                    )
                )
                images[record.image] = dims
            elif record.sampling is not None:
                step, sample_dims = record.sampling
                rects = sample_region_patches(record.points, step, sample_dims)
                for k, rect in enumerate(rects):
                    patches.append(
                        Patch(
                            id=f"{record.id}-s{k:03d}",
                            source_image=record.image,
                            rect=rect,
                            label=LABEL_NON_BUD,
                            subcategory=record.subcategory,
                            quality=record.quality,
                        )
                    )
                if rects:
                    images[record.image] = dims
        out_root.mkdir(parents=True, exist_ok=True)
        corp = Corpus(patches=patches, images=images)
        save_manifest(corp, out_root)
        copied = 0
        for name in sorted(images):
            src = self.image_path(name)
            dst = out_root / name
            if src != dst.resolve():
                dst.parent.mkdir(parents=True, exist_ok=True)
                shutil.copy2(src, dst)
                copied += 1
        return {
            "path": str(out_root),
            "patches": len(patches),
            "images": len(images),
            "copied_images": copied,
        }


class AnnotationIn(BaseModel):
    image: str
    kind: str
    points: list[tuple[float, float]]
    subcategory: str | None = None
    quality: str = "ok"
    id: str | None = None
    version: int | None = None


class SampleIn(BaseModel):
    step: int
    dims: tuple[int, int]
    preview: bool = False


class ExportIn(BaseModel):
    path: str
    include_flagged: bool = False


def create_app(root):
    """FastAPI app over one AnnotationStore."""
    store = AnnotationStore(root)
    app = FastAPI(title="vinebud annotation service", version="1")
    app.state.store = store

    @app.exception_handler(ServiceError)
    def _service_error(request, exc: ServiceError):
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "detail": str(exc)}
        )

    @app.get("/images")
    def list_images():
        return {"images": store.list_images()}

    @app.get("/images/{image_id:path}/thumb")
    def image_thumb(image_id: str):
        return Response(content=store.thumbnail(image_id), media_type="image/png")

    @app.get("/images/{image_id:path}")
    def image_bytes(image_id: str):
        path = store.image_path(image_id)
        media = "image/jpeg" if path.suffix.lower() in (".jpg", ".jpeg") else "image/png"
        return Response(
            content=path.read_bytes(),
            media_type=media,
            headers={"Cache-Control": "public, max-age=31536000, immutable"},
        )

    @app.get("/annotations")
    def list_annotations(image: str | None = None):
        return {"annotations": [store.describe(r) for r in store.list(image)]}

    @app.post("/annotations")
    def post_annotation(body: AnnotationIn):
        record = store.put(body.model_dump(exclude_none=True))
        return store.describe(record)

    @app.post("/annotations/{rid}/sample")
    def sample_region(rid: str, body: SampleIn):
        rects, record = store.sample(rid, body.step, body.dims, body.preview)
        return {
            "rects": [_rect_json(r) for r in rects],
            "count": len(rects),
            "version": record.version,
            "preview": body.preview,
        }

    @app.post("/export")
    def export(body: ExportIn):
        return store.export(body.path, body.include_flagged)

    return app
