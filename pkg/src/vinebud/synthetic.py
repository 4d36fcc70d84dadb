"""Desk-scale synthetic corpus: textured stand-in patches with masks.

Bud patches are irregular blob regions filled with a dense dot lattice;
non-bud patches cycle through stripe, flat-gradient, and sparse-dot
textures. Sparse dots sit close to the decision boundary on purpose, so
re-drawn training subsets produce measurably different classifiers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .corpus import (
    Corpus,
    LABEL_BUD,
    LABEL_NON_BUD,
    Patch,
    SUBCATEGORIES,
    save_manifest,
)
from .errors import ArgumentError
from .imaging import Rect

_CELL = 100
_STEP = 110
_MARGIN = 10
_GRID = 6  # cells per canvas row/column


@dataclass(frozen=True)
class DeskCorpusConfig:
    n_bud: int = 80
    n_nonbud: int = 140
    seed: int = 0

    def __post_init__(self):
        if self.n_bud < 1 or self.n_nonbud < 1:
            raise ArgumentError("corpus needs at least one patch per class")


def _blob_mask(rng: np.random.Generator) -> np.ndarray:
    """Wobbly radial blob, never rectangular, centered in the cell."""
    r0 = rng.uniform(32.0, 40.0)
    amps = rng.uniform(0.08, 0.16, size=3)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=3)
    yy, xx = np.mgrid[0:_CELL, 0:_CELL]
    dx, dy = xx - 49.5, yy - 49.5
    theta = np.arctan2(dy, dx)
    radius = r0 * (
        1.0
        + sum(a * np.cos((k + 2) * theta + p) for k, (a, p) in enumerate(zip(amps, phases)))
    )
    return dx**2 + dy**2 <= radius**2


def _dot_lattice(rng, spacing, sigma, amp_range, keep=1.0, mask=None):
    cell = np.zeros((_CELL, _CELL))
    yy, xx = np.mgrid[0:_CELL, 0:_CELL]
    n = int(np.ceil(_CELL / spacing))
    for gy in range(n):
        for gx in range(n):
            cx = spacing / 2 + gx * spacing + rng.uniform(-2.5, 2.5)
            cy = spacing / 2 + gy * spacing + rng.uniform(-2.5, 2.5)
            if rng.uniform() > keep:
                continue
            if mask is not None:
                ix = min(max(int(round(cx)), 0), _CELL - 1)
                iy = min(max(int(round(cy)), 0), _CELL - 1)
                if not mask[iy, ix]:
                    continue
            amp = rng.uniform(*amp_range)
            cell += amp * np.exp(
                -((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma**2)
            )
    return cell


def _bud_cell(rng) -> tuple[np.ndarray, np.ndarray]:
    mask = _blob_mask(rng)
    density = rng.uniform(0.5, 1.0)
    dots = _dot_lattice(
        rng, spacing=11.0, sigma=2.0, amp_range=(0.30, 0.50), keep=density, mask=mask
    )
    base = np.full((_CELL, _CELL), 0.36) + rng.uniform(-0.02, 0.02)
    return np.clip(base + dots, 0.0, 1.0), mask


def _stripe_cell(rng) -> np.ndarray:
    yy, xx = np.mgrid[0:_CELL, 0:_CELL]
    period = rng.uniform(9.0, 15.0)
    slope = rng.uniform(-0.5, 0.5)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    return 0.45 + 0.18 * np.sin(2.0 * np.pi * (xx + slope * yy) / period + phase)


def _flat_cell(rng) -> np.ndarray:
    yy, xx = np.mgrid[0:_CELL, 0:_CELL]
    gx, gy = rng.uniform(-0.12, 0.12, size=2)
    img = 0.38 + gx * (xx / _CELL) + gy * (yy / _CELL)
    return np.clip(img + rng.normal(0.0, 0.004, (_CELL, _CELL)), 0.0, 1.0)


def _sparse_cell(rng) -> np.ndarray:
    spacing = rng.uniform(12.0, 20.0)
    dots = _dot_lattice(
        rng,
        spacing=spacing,
        sigma=2.0,
        amp_range=(0.22, 0.40),
        keep=rng.uniform(0.5, 0.85),
    )
    base = np.full((_CELL, _CELL), 0.38) + rng.uniform(-0.02, 0.02)
    return np.clip(base + dots, 0.0, 1.0)


def make_desk_corpus(root, cfg: DeskCorpusConfig | None = None) -> Corpus:
    """Generate images plus manifest under root and return the corpus."""
    cfg = cfg or DeskCorpusConfig()
    rng = np.random.default_rng(cfg.seed)
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)

    total = cfg.n_bud + cfg.n_nonbud
    per_image = _GRID * _GRID
    n_images = int(np.ceil(total / per_image))
    side = _MARGIN + _GRID * _STEP
    canvases = []
    for i in range(n_images):
        yy, xx = np.mgrid[0:side, 0:side]
        grad = 0.35 + 0.05 * (xx + yy) / (2.0 * side)
        canvases.append(grad + rng.normal(0.0, 0.002, (side, side)))

    nonbud_kinds = [_stripe_cell, _flat_cell, _sparse_cell]
    patches = []
    for i in range(total):
        img_i, cell_i = divmod(i, per_image)
        col, row = cell_i % _GRID, cell_i // _GRID
        x0 = _MARGIN + col * _STEP
        y0 = _MARGIN + row * _STEP
        rect = Rect(x0, y0, _CELL, _CELL)
        name = f"images/desk-{img_i:02d}.png"
        if i < cfg.n_bud:
            cell, mask = _bud_cell(rng)
            patches.append(
                Patch(
                    id=f"bud-{i:03d}",
                    source_image=name,
                    rect=rect,
                    label=LABEL_BUD,
                    mask=mask,
                )
            )
        else:
            j = i - cfg.n_bud
            cell = nonbud_kinds[j % len(nonbud_kinds)](rng)
            patches.append(
                Patch(
                    id=f"non-{j:03d}",
                    source_image=name,
                    rect=rect,
                    label=LABEL_NON_BUD,
                    subcategory=SUBCATEGORIES[j % len(SUBCATEGORIES)],
                )
            )
        canvases[img_i][y0 : y0 + _CELL, x0 : x0 + _CELL] = cell

    images = {}
    for i, canvas in enumerate(canvases):
        name = f"images/desk-{i:02d}.png"
        data = (np.clip(canvas, 0.0, 1.0) * 255).round().astype(np.uint8)
        Image.fromarray(data, mode="L").save(root / name)
        images[name] = (side, side)

    corp = Corpus(patches=patches, images=images)
    save_manifest(corp, root)
    return corp
