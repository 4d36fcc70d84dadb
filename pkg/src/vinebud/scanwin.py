"""Sliding-window classification over full images.

Features are extracted once per image; every proposed window is encoded
from the keypoints whose centers fall inside its rect, then classified.
This trades exactness at window borders (keypoints near an edge lack the
full descriptor support the per-patch path would see) for one shared
extraction pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import bof, sift, svm
from .bof import Vocabulary
from .corpus import LABEL_BUD, LABEL_NON_BUD
from .errors import ArgumentError
from .imaging import Rect
from .svm import BUD, SvmModel


@dataclass(frozen=True)
class ScanConfig:
    window: tuple[int, int] = (100, 100)  # (w, h) px
    stride: tuple[int, int] = (50, 50)  # (dx, dy) px
    scales: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        if self.window[0] < 1 or self.window[1] < 1:
            raise ArgumentError(f"window must be positive, got {self.window}")
        if self.stride[0] < 1 or self.stride[1] < 1:
            raise ArgumentError(f"stride must be >= 1, got {self.stride}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ArgumentError(f"scales must be positive, got {self.scales}")

    def window_at(self, scale: float) -> tuple[int, int]:
        return (
            max(1, int(round(self.window[0] * scale))),
            max(1, int(round(self.window[1] * scale))),
        )


@dataclass(frozen=True)
class ClassifiedWindow:
    rect: Rect
    label: str
    decision: float
    keypoint_count: int


def _axis_positions(dim: int, win: int, step: int) -> list[int]:
    pos = list(range(0, dim - win + 1, step))
    if pos[-1] + win < dim:
        pos.append(dim - win)  # clamp the last window to the image edge
    return pos


def propose_windows(image_dims: tuple[int, int], cfg: ScanConfig) -> list[Rect]:
    """Row-major grid per scale, last row/column clamped so coverage is total."""
    img_w, img_h = image_dims
    out = []
    for scale in cfg.scales:
        w, h = cfg.window_at(scale)
        if w > img_w or h > img_h:
            raise ArgumentError(
                f"window {w}x{h} (scale {scale}) exceeds image {img_w}x{img_h}"
            )
        for y in _axis_positions(img_h, h, cfg.stride[1]):
            for x in _axis_positions(img_w, w, cfg.stride[0]):
                out.append(Rect(x, y, w, h))
    return out


def scan_classify(
    image: np.ndarray,
    vocab: Vocabulary,
    model: SvmModel,
    cfg: ScanConfig,
    sift_cfg: sift.SiftConfig | None = None,
) -> list[ClassifiedWindow]:
    """Classify every proposed window from one shared extraction pass.

    A keypoint belongs to a window when its center lies inside the rect;
    `keypoint_count` counts the oriented descriptors so assigned. Output
    order matches proposal order.
    """
    h, w = image.shape
    descriptors = sift.extract(image, sift_cfg)
    if descriptors:
        xs = np.array([d.keypoint.x for d in descriptors])
        ys = np.array([d.keypoint.y for d in descriptors])
        vectors = np.stack([d.vector for d in descriptors])
    else:
        xs = ys = np.zeros(0)
        vectors = np.zeros((0, 128))

    out = []
    for rect in propose_windows((w, h), cfg):
        sel = (
            (xs >= rect.x) & (xs < rect.x2) & (ys >= rect.y) & (ys < rect.y2)
        )
        hist = bof.encode(vocab, vectors[sel])
        decision = svm.decision_value(model, hist.bins)
        out.append(
            ClassifiedWindow(
                rect=rect,
                label=LABEL_BUD if decision > 0.0 else LABEL_NON_BUD,
                decision=float(decision),
                keypoint_count=int(sel.sum()),
            )
        )
    return out
