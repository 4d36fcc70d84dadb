"""Corpus data model: labeled patches, masks, sampling, balancing, splits.

Directory layout of a stored corpus:

    <root>/images/    source images (PNG/JPEG)
    <root>/masks/     1-bit PNG masks, one per masked patch
    <root>/manifest   line-delimited JSON

The manifest's first line is a header naming the format, its version, and
the source-image catalog (path -> [width, height]); every following line
is one patch record:

    {"id": ..., "image": ..., "rect": [x, y, w, h], "label": "bud",
     "subcategory": null, "quality": "ok", "mask": "masks/<id>.png"}
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ArgumentError, CorpusError
from .imaging import Rect, crop, load_gray

LABEL_BUD = "bud"
LABEL_NON_BUD = "non-bud"

SUBCATEGORIES = (
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
)

QUALITY_FLAGS = ("ok", "blurred", "overexposed", "underexposed")

_FORMAT = "vinebud-corpus"
_VERSION = 1
_BUD_SIDE_RANGE = (100, 1600)


@dataclass
class Patch:
    """One labeled rectangular region of a source image."""

    id: str
    source_image: str
    rect: Rect
    label: str
    mask: np.ndarray | None = None  # bool (h, w), 1 = bud pixel
    subcategory: str | None = None
    quality: str = "ok"

    def __post_init__(self):
        if not self.id:
            raise ArgumentError("patch id must be non-empty")
        if self.label not in (LABEL_BUD, LABEL_NON_BUD):
            raise ArgumentError(f"unknown label {self.label!r}")
        if self.subcategory is not None and self.subcategory not in SUBCATEGORIES:
            raise ArgumentError(f"unknown subcategory {self.subcategory!r}")
        if self.quality not in QUALITY_FLAGS:
            raise ArgumentError(f"unknown quality flag {self.quality!r}")
        if self.label == LABEL_BUD and self.mask is None:
            raise ArgumentError(f"bud patch {self.id!r} has no mask")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, bool)
            if self.mask.shape != (self.rect.h, self.rect.w):
                raise ArgumentError(
                    f"mask shape {self.mask.shape} does not match rect "
                    f"{self.rect.w}x{self.rect.h} of patch {self.id!r}"
                )
        if self.label == LABEL_BUD:
            lo, hi = _BUD_SIDE_RANGE
            if not (lo <= self.rect.w <= hi and lo <= self.rect.h <= hi):
                warnings.warn(
                    f"bud patch {self.id!r} side {self.rect.w}x{self.rect.h} "
                    f"outside the [{lo}, {hi}] px operating range",
                    stacklevel=2,
                )


@dataclass
class Corpus:
    """Immutable set of patches plus the source-image catalog."""

    patches: list[Patch]
    images: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for p in self.patches:
            if p.id in seen:
                raise CorpusError(f"duplicate patch id {p.id!r}")
            seen.add(p.id)
            dims = self.images.get(p.source_image)
            if dims is None:
                raise CorpusError(
                    f"patch {p.id!r} references unknown image {p.source_image!r}"
                )
            w, h = dims
            if p.rect.x < 0 or p.rect.y < 0 or p.rect.x2 > w or p.rect.y2 > h:
                raise CorpusError(
                    f"patch {p.id!r} rect {p.rect} exceeds image "
                    f"{p.source_image!r} ({w}x{h})"
                )

    @property
    def stats(self) -> dict:
        by_label = {LABEL_BUD: 0, LABEL_NON_BUD: 0}
        by_sub: dict[str, int] = {}
        for p in self.patches:
            by_label[p.label] += 1
            if p.subcategory is not None:
                by_sub[p.subcategory] = by_sub.get(p.subcategory, 0) + 1
        return {"labels": by_label, "subcategories": by_sub}


@dataclass(frozen=True)
class BalanceConfig:
    """Target per-class size R * patches_bud."""

    R: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.R < 1:
            raise ArgumentError(f"balance rate R must be >= 1, got {self.R}")


def rasterize_polygon(points, frame: Rect) -> np.ndarray:
    """Even-odd fill of a closed polygon over a pixel frame.

    A pixel is set when its center lies inside the polygon. Points are
    (x, y) in the same coordinate system as the frame.
    """
    pts = np.asarray(points, np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ArgumentError(
            f"polygon needs at least 3 (x, y) points, got shape {pts.shape}"
        )
    xc = frame.x + np.arange(frame.w) + 0.5
    yc = frame.y + np.arange(frame.h) + 0.5
    inside = np.zeros((frame.h, frame.w), bool)
    x1, y1 = pts[:, 0], pts[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    for ex1, ey1, ex2, ey2 in zip(x1, y1, x2, y2):
        if ey1 == ey2:
            continue
        spans = (ey1 > yc) != (ey2 > yc)  # (h,) rows whose ray crosses this edge
        xcross = ex1 + (yc - ey1) * (ex2 - ex1) / (ey2 - ey1)
        inside ^= spans[:, None] & (xc[None, :] < xcross[:, None])
    return inside


def mask_pixel_counts(patch: Patch) -> tuple[int, int]:
    """(bud_pixels, nonbud_pixels); the two always sum to the rect area."""
    if patch.mask is None:
        raise ArgumentError(f"patch {patch.id!r} has no mask")
    bud = int(patch.mask.sum())
    return bud, patch.rect.area - bud


def sample_region_patches(region, step: int, dims: tuple[int, int]) -> list[Rect]:
    """Grid-scan rects of the given dims fully inside a polygonal region.

    The scan walks the region's bounding box at the given step; a rect is
    kept only if every one of its pixels lies inside the polygon.
    """
    if step < 1:
        raise ArgumentError(f"step must be >= 1, got {step}")
    w, h = dims
    if w < 1 or h < 1:
        raise ArgumentError(f"dims must be positive, got {dims}")
    pts = np.asarray(region, np.float64)
    if pts.ndim != 2 or pts.shape[0] < 3 or pts.shape[1] != 2:
        raise ArgumentError(
            f"region needs at least 3 (x, y) points, got shape {pts.shape}"
        )
    x0 = int(np.floor(pts[:, 0].min()))
    y0 = int(np.floor(pts[:, 1].min()))
    x1 = int(np.ceil(pts[:, 0].max()))
    y1 = int(np.ceil(pts[:, 1].max()))
    bw, bh = x1 - x0, y1 - y0
    if bw < w or bh < h:
        return []
    mask = rasterize_polygon(pts, Rect(x0, y0, bw, bh))
    ii = np.zeros((bh + 1, bw + 1), np.int64)
    ii[1:, 1:] = mask.cumsum(0).cumsum(1)
    out = []
    for ry in range(0, bh - h + 1, step):
        for rx in range(0, bw - w + 1, step):
            total = (
                ii[ry + h, rx + w] - ii[ry, rx + w] - ii[ry + h, rx] + ii[ry, rx]
            )
            if total == w * h:
                out.append(Rect(x0 + rx, y0 + ry, w, h))
    return out


def balance_indices(is_bud, cfg: BalanceConfig) -> np.ndarray:
    """Indices of a balanced set: R*n_bud per class.

    Buds keep every original once, then duplicate random picks up to size
    (with replacement); non-buds are undersampled without replacement.
    """
    is_bud = np.asarray(is_bud, bool)
    bud_idx = np.flatnonzero(is_bud)
    non_idx = np.flatnonzero(~is_bud)
    if bud_idx.size == 0:
        raise ArgumentError("cannot balance a set with no bud elements")
    target = cfg.R * bud_idx.size
    if non_idx.size < target:
        raise ArgumentError(
            f"need {target} non-bud elements for R={cfg.R}, have {non_idx.size}"
        )
    rng = np.random.default_rng(cfg.seed)
    extra = rng.integers(0, bud_idx.size, size=target - bud_idx.size)
    keep = rng.permutation(non_idx.size)[:target]
    return np.concatenate([bud_idx, bud_idx[extra], non_idx[np.sort(keep)]])


def balance(patches: list[Patch], cfg: BalanceConfig) -> list[Patch]:
    """Balanced patch list built from balance_indices over labels."""
    is_bud = np.array([p.label == LABEL_BUD for p in patches])
    return [patches[i] for i in balance_indices(is_bud, cfg)]


def split(
    corpus: Corpus, seed: int, test_counts: dict[str, int]
) -> tuple[list[Patch], list[Patch]]:
    """Disjoint uniform train/test split with per-class test counts."""
    rng = np.random.default_rng(seed)
    test_pos: set[int] = set()
    for label in sorted(test_counts):
        count = test_counts[label]
        idx = [i for i, p in enumerate(corpus.patches) if p.label == label]
        if len(idx) < count:
            raise ArgumentError(
                f"cannot reserve {count} test patches of {label!r}, "
                f"corpus has {len(idx)}"
            )
        pick = rng.permutation(len(idx))[:count]
        test_pos.update(idx[k] for k in pick)
    train = [p for i, p in enumerate(corpus.patches) if i not in test_pos]
    test = [p for i, p in enumerate(corpus.patches) if i in test_pos]
    return train, test


def _save_mask(mask: np.ndarray, path: Path) -> None:
    img = Image.fromarray((mask.astype(np.uint8) * 255), mode="L").convert("1")
    img.save(path, format="PNG")


def _load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img.convert("1"), bool)


def save_manifest(corpus: Corpus, root) -> None:
    """Write manifest plus 1-bit PNG masks under the corpus root."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    lines = [
        json.dumps(
            {
                "format": _FORMAT,
                "version": _VERSION,
                "images": {k: list(v) for k, v in sorted(corpus.images.items())},
            },
            sort_keys=True,
        )
    ]
    for p in corpus.patches:
        mask_ref = None
        if p.mask is not None:
            mask_ref = f"masks/{p.id}.png"
            _save_mask(p.mask, root / mask_ref)
        lines.append(
            json.dumps(
                {
                    "id": p.id,
                    "image": p.source_image,
                    "rect": [p.rect.x, p.rect.y, p.rect.w, p.rect.h],
                    "label": p.label,
                    "subcategory": p.subcategory,
                    "quality": p.quality,
                    "mask": mask_ref,
                },
                sort_keys=True,
            )
        )
    (root / "manifest").write_text("\n".join(lines) + "\n")


def load_manifest(root) -> Corpus:
    """Read a stored corpus; any schema violation names the bad record."""
    root = Path(root)
    manifest = root / "manifest"
    if not manifest.is_file():
        raise CorpusError(f"no manifest at {manifest}")
    lines = manifest.read_text().splitlines()
    if not lines:
        raise CorpusError("manifest is empty (missing header)")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise CorpusError(f"manifest header is not valid JSON: {e}") from e
    if head.get("format") != _FORMAT:
        raise CorpusError(f"unknown manifest format {head.get('format')!r}")
    if head.get("version") != _VERSION:
        raise CorpusError(f"unsupported manifest version {head.get('version')!r}")
    images = {k: (int(v[0]), int(v[1])) for k, v in head.get("images", {}).items()}

    patches = []
    for n, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise CorpusError(f"manifest line {n} is not valid JSON: {e}") from e
        try:
            rect = Rect(*rec["rect"])
            mask = None
            if rec.get("mask") is not None:
                mask = _load_mask(root / rec["mask"])
            patches.append(
                Patch(
                    id=rec["id"],
                    source_image=rec["image"],
                    rect=rect,
                    label=rec["label"],
                    mask=mask,
                    subcategory=rec.get("subcategory"),
                    quality=rec.get("quality", "ok"),
                )
            )
        except (KeyError, TypeError) as e:
            raise CorpusError(f"manifest line {n} is missing fields: {e}") from e
        except ArgumentError as e:
            raise CorpusError(f"manifest line {n}: {e}") from e
        except FileNotFoundError as e:
            raise CorpusError(f"manifest line {n}: missing mask file {e}") from e
    return Corpus(patches=patches, images=images)


def patch_pixels(root, patch: Patch) -> np.ndarray:
    """Grayscale pixels of a patch, cropped from its source image."""
    img = load_gray(Path(root) / patch.source_image)
    return crop(img, patch.rect)
