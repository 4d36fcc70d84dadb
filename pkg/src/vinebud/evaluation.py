"""Classification experiments over a patch corpus.

Covers the full quantitative protocol: confusion counting and the four
derived metrics, grid-search hyperparameter tuning by 5-fold stratified
cross validation, repeated training with re-drawn non-bud undersamples,
per-subcategory recall, and the perturbed-patch recall heatmap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bof, sift, svm
from .bof import KMeansConfig, Vocabulary
from .corpus import (
    BalanceConfig,
    Corpus,
    LABEL_BUD,
    Patch,
    SUBCATEGORIES,
    balance_indices,
    split,
)
from .errors import ArgumentError
from .imaging import Rect, crop, load_gray
from .svm import BUD, NON_BUD, SvmConfig, SvmModel

DEFAULT_GAMMAS = tuple(2.0**e for e in range(-14, -6))
DEFAULT_CS = tuple(float(2**e) for e in range(5, 15))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ArgumentError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class Metrics:
    """Accuracy, precision, recall, f-measure in [0, 1].

    A zero-denominator ratio is reported as 0.0 with its degenerate flag
    set, so result tables stay total.
    """

    accuracy: float
    precision: float
    recall: float
    f_measure: float
    degenerate_precision: bool = False
    degenerate_recall: bool = False
    degenerate_f: bool = False

    def as_dict(self) -> dict[str, float]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f_measure": self.f_measure,
        }


METRIC_NAMES = ("accuracy", "precision", "recall", "f_measure")


def confusion(predictions, labels) -> ConfusionCounts:
    """Counts with the bud class (+1) as positive."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise ArgumentError(
            f"got {pred.shape[0] if pred.ndim else 0} predictions for "
            f"{lab.shape[0] if lab.ndim else 0} labels"
        )
    pos_p, pos_l = pred == BUD, lab == BUD
    return ConfusionCounts(
        tp=int((pos_p & pos_l).sum()),
        tn=int((~pos_p & ~pos_l).sum()),
        fp=int((pos_p & ~pos_l).sum()),
        fn=int((~pos_p & pos_l).sum()),
    )


def metrics(c: ConfusionCounts) -> Metrics:
    if c.total == 0:
        raise ArgumentError("cannot compute metrics of zero evaluated patches")
    accuracy = (c.tp + c.tn) / c.total
    deg_p = (c.tp + c.fp) == 0
    deg_r = (c.tp + c.fn) == 0
    precision = 0.0 if deg_p else c.tp / (c.tp + c.fp)
    recall = 0.0 if deg_r else c.tp / (c.tp + c.fn)
    deg_f = (precision + recall) == 0.0
    f = 0.0 if deg_f else 2.0 * precision * recall / (precision + recall)
    return Metrics(
        accuracy=accuracy,
        precision=precision,
        recall=recall,
        f_measure=f,
        degenerate_precision=deg_p,
        degenerate_recall=deg_r,
        degenerate_f=deg_f,
    )


@dataclass(frozen=True)
class TuningGrid:
    gammas: tuple[float, ...] = DEFAULT_GAMMAS
    cs: tuple[float, ...] = DEFAULT_CS
    folds: int = 5

    def __post_init__(self):
        if not self.gammas or not self.cs:
            raise ArgumentError("tuning grid must have at least one cell")
        if self.folds < 2:
            raise ArgumentError(f"need at least 2 folds, got {self.folds}")

    @property
    def size(self) -> int:
        return len(self.gammas) * len(self.cs)


@dataclass
class GridSearchResult:
    gammas: tuple[float, ...]
    cs: tuple[float, ...]
    errors: np.ndarray  # (len(gammas), len(cs)) mean validation error
    best_gamma: float
    best_c: float


def stratified_folds(labels, folds: int, seed: int) -> np.ndarray:
    """Fold id per element; each class is dealt round-robin after a shuffle."""
    lab = np.asarray(labels)
    rng = np.random.default_rng(seed)
    fold_id = np.empty(lab.shape[0], np.int64)
    for value in np.unique(lab):
        idx = np.flatnonzero(lab == value)
        if idx.size < folds:
            raise ArgumentError(
                f"class {value} has {idx.size} elements, fewer than "
                f"{folds} folds"
            )
        fold_id[rng.permutation(idx)] = np.arange(idx.size) % folds
    return fold_id


def _predict_batch(model: SvmModel, x: np.ndarray) -> np.ndarray:
    return np.array([svm.predict(model, row) for row in x])


def _fold_error(x_tr, y_tr, x_val, y_val, cfg: SvmConfig) -> float:
    model = svm.train(x_tr, y_tr, cfg)
    m = metrics(confusion(_predict_batch(model, x_val), y_val))
    return 1.0 - m.f_measure


def cross_validate_grid(
    histograms,
    labels,
    grid: TuningGrid | None = None,
    seed: int = 0,
    balance: BalanceConfig | None = None,
) -> GridSearchResult:
    """Mean validation error per (gamma, C); error is 1 - bud f-measure.

    Folds are stratified by class. When a balance config is given, each
    fold's training portion is balanced internally (validation folds are
    left as drawn), so oversampling duplicates never straddle the
    train/validation boundary. Ties in the argmin go to the smaller C,
    then the smaller gamma.
    """
    grid = grid or TuningGrid()
    x = np.asarray(histograms, np.float64)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise ArgumentError(
            f"got {x.shape[0]} histograms for {y.shape[0]} labels"
        )
    if not ((y == BUD).any() and (y == NON_BUD).any()):
        raise ArgumentError("tuning needs both classes present")
    fold_id = stratified_folds(y, grid.folds, seed)

    splits = []
    for f in range(grid.folds):
        tr = np.flatnonzero(fold_id != f)
        val = np.flatnonzero(fold_id == f)
        if balance is not None:
            fold_seed = int(
                np.random.default_rng([balance.seed, f]).integers(2**31)
            )
            sel = balance_indices(
                y[tr] == BUD, BalanceConfig(R=balance.R, seed=fold_seed)
            )
            tr = tr[sel]
        splits.append((tr, val))

    errors = np.empty((len(grid.gammas), len(grid.cs)))
    for gi, gamma in enumerate(grid.gammas):
        for ci, c in enumerate(grid.cs):
            cfg = SvmConfig(C=c, gamma=gamma)
            errs = [
                _fold_error(x[tr], y[tr], x[val], y[val], cfg)
                for tr, val in splits
            ]
            errors[gi, ci] = float(np.mean(errs))

    best = min(
        (
            (errors[gi, ci], c, gamma)
            for gi, gamma in enumerate(grid.gammas)
            for ci, c in enumerate(grid.cs)
        ),
        key=lambda t: t,
    )
    return GridSearchResult(
        gammas=grid.gammas,
        cs=grid.cs,
        errors=errors,
        best_gamma=best[2],
        best_c=best[1],
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Knobs of the repeated-training protocol."""

    vocab_size: int = 25
    balance_rate: int = 1
    repetitions: int = 10
    seed: int = 0
    rep_seeds: tuple[int, ...] | None = None  # per-repetition undersample seeds
    test_counts: tuple[tuple[str, int], ...] | None = None
    grid: TuningGrid = field(default_factory=TuningGrid)
    tuning: tuple[float, float] | None = None  # fixed (gamma, C) skips the grid
    kmeans_max_iterations: int = 100
    kmeans_epsilon: float = 1e-3

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ArgumentError(f"vocabulary size must be >= 2, got {self.vocab_size}")
        if self.balance_rate < 1:
            raise ArgumentError(f"balance rate must be >= 1, got {self.balance_rate}")
        if self.repetitions < 2:
            raise ArgumentError(f"need >= 2 repetitions, got {self.repetitions}")
        if self.rep_seeds is not None and len(self.rep_seeds) != self.repetitions:
            raise ArgumentError(
                f"got {len(self.rep_seeds)} seeds for {self.repetitions} repetitions"
            )


@dataclass
class ExperimentResult:
    per_rep: list[Metrics]
    models: list[SvmModel]
    vocab: Vocabulary
    gamma: float
    c: float
    grid_result: GridSearchResult | None
    train_ids: list[str]
    test_ids: list[str]

    def summary(self) -> dict[str, tuple[float, float]]:
        """Per metric: (mean, sample SD) over the repetitions.

        Identical repetitions report exactly 0.0: the roundoff of the
        mean would otherwise leak in as a spurious ~1e-16 spread.
        """
        out = {}
        for name in METRIC_NAMES:
            vals = np.array([getattr(m, name) for m in self.per_rep])
            if vals.size < 2 or (vals == vals[0]).all():
                sd = 0.0
            else:
                sd = float(vals.std(ddof=1))
            out[name] = (float(vals.mean()), sd)
        return out


def extract_patch_descriptors(
    root, patches: list[Patch], cfg: sift.SiftConfig | None = None
) -> dict[str, np.ndarray]:
    """SIFT descriptor matrix per patch id; each source image loads once."""
    root = Path(root)
    images: dict[str, np.ndarray] = {}
    out: dict[str, np.ndarray] = {}
    for p in patches:
        if p.source_image not in images:
            images[p.source_image] = load_gray(root / p.source_image)
        pixels = crop(images[p.source_image], p.rect)
        descs = sift.extract(pixels, cfg)
        if descs:
            out[p.id] = np.stack([d.vector for d in descs])
        else:
            out[p.id] = np.zeros((0, 128))
    return out


def encode_patches(
    vocab: Vocabulary, descriptors: dict[str, np.ndarray], patches: list[Patch]
) -> np.ndarray:
    return np.stack(
        [bof.encode(vocab, descriptors[p.id]).bins for p in patches]
    )


def patch_labels(patches: list[Patch]) -> np.ndarray:
    return np.array([BUD if p.label == LABEL_BUD else NON_BUD for p in patches])


def _default_test_counts(patches: list[Patch]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for p in patches:
        counts[p.label] = counts.get(p.label, 0) + 1
    return {label: max(1, n // 4) for label, n in counts.items()}


def repeated_training(
    root, corp: Corpus, cfg: ExperimentConfig | None = None
) -> ExperimentResult:
    """Train `repetitions` classifiers on re-drawn balanced subsets.

    The split, the vocabulary (built from the first repetition's balanced
    training patches), and the tuned (gamma, C) are shared across
    repetitions; only the balancing draw changes. Every classifier is
    evaluated on the same held-out test set.
    """
    cfg = cfg or ExperimentConfig()
    test_counts = (
        dict(cfg.test_counts)
        if cfg.test_counts is not None
        else _default_test_counts(corp.patches)
    )
    train_p, test_p = split(corp, cfg.seed, test_counts)
    if not train_p or not test_p:
        raise ArgumentError("split produced an empty train or test set")

    descriptors = extract_patch_descriptors(root, train_p + test_p)
    is_bud = np.array([p.label == LABEL_BUD for p in train_p])
    if cfg.rep_seeds is not None:
        rep_seeds = cfg.rep_seeds
    else:
        draws = np.random.default_rng([cfg.seed, 1]).integers(
            2**31, size=cfg.repetitions
        )
        rep_seeds = tuple(int(s) for s in draws)

    sel0 = balance_indices(is_bud, BalanceConfig(cfg.balance_rate, rep_seeds[0]))
    pool_ids = dict.fromkeys(train_p[i].id for i in sel0)
    pool = np.vstack([descriptors[pid] for pid in pool_ids])
    vocab, _ = bof.kmeans(
        pool,
        KMeansConfig(
            k=cfg.vocab_size,
            max_iterations=cfg.kmeans_max_iterations,
            epsilon=cfg.kmeans_epsilon,
            seed=cfg.seed,
        ),
    )

    train_x = encode_patches(vocab, descriptors, train_p)
    train_y = patch_labels(train_p)
    test_x = encode_patches(vocab, descriptors, test_p)
    test_y = patch_labels(test_p)

    grid_result = None
    if cfg.tuning is not None:
        gamma, c = cfg.tuning
    else:
        grid_result = cross_validate_grid(
            train_x,
            train_y,
            cfg.grid,
            seed=cfg.seed,
            balance=BalanceConfig(cfg.balance_rate, rep_seeds[0]),
        )
        gamma, c = grid_result.best_gamma, grid_result.best_c

    per_rep, models = [], []
    for rep_seed in rep_seeds:
        sel = balance_indices(is_bud, BalanceConfig(cfg.balance_rate, rep_seed))
        model = svm.train(train_x[sel], train_y[sel], SvmConfig(C=c, gamma=gamma))
        models.append(model)
        per_rep.append(metrics(confusion(_predict_batch(model, test_x), test_y)))

    return ExperimentResult(
        per_rep=per_rep,
        models=models,
        vocab=vocab,
        gamma=gamma,
        c=c,
        grid_result=grid_result,
        train_ids=[p.id for p in train_p],
        test_ids=[p.id for p in test_p],
    )


def subcategory_recall(
    model: SvmModel, histograms, tags
) -> dict[str, float]:
    """Non-bud recall tn/(tn+fp) per subcategory tag."""
    x = np.asarray(histograms, np.float64)
    if x.shape[0] != len(tags):
        raise ArgumentError(f"got {x.shape[0]} histograms for {len(tags)} tags")
    for t in tags:
        if t not in SUBCATEGORIES:
            raise ArgumentError(f"untagged or unknown subcategory {t!r}")
    preds = _predict_batch(model, x)
    out = {}
    for tag in sorted(set(tags)):
        idx = [i for i, t in enumerate(tags) if t == tag]
        tn = int((preds[idx] == NON_BUD).sum())
        out[tag] = tn / len(idx)
    return out


@dataclass(frozen=True)
class PerturbationCell:
    """Half-open (lo, hi] percent ranges for kept and relative bud pixels."""

    kept_range: tuple[float, float]
    relative_range: tuple[float, float]

    def __post_init__(self):
        for lo, hi in (self.kept_range, self.relative_range):
            if not (0.0 <= lo < hi <= 100.0):
                raise ArgumentError(f"cell range ({lo}, {hi}] not within (0, 100]")

    def contains(self, kept: float, relative: float) -> bool:
        return (
            self.kept_range[0] < kept <= self.kept_range[1]
            and self.relative_range[0] < relative <= self.relative_range[1]
        )


@dataclass(frozen=True)
class RealisticPatch:
    source_id: str
    rect: Rect
    kept: float  # percent of the source bud pixels inside rect
    relative: float  # percent of rect pixels that are bud


def measure_rect(patch: Patch, rect: Rect) -> tuple[float, float]:
    """Exact (kept, relative) percentages of a rect against a bud mask."""
    if patch.mask is None:
        raise ArgumentError(f"patch {patch.id!r} has no mask")
    total = int(patch.mask.sum())
    if total == 0:
        raise ArgumentError(f"patch {patch.id!r} mask has no bud pixels")
    x0 = max(rect.x, patch.rect.x)
    y0 = max(rect.y, patch.rect.y)
    x1 = min(rect.x2, patch.rect.x2)
    y1 = min(rect.y2, patch.rect.y2)
    inside = 0
    if x0 < x1 and y0 < y1:
        sub = patch.mask[
            y0 - patch.rect.y : y1 - patch.rect.y,
            x0 - patch.rect.x : x1 - patch.rect.x,
        ]
        inside = int(sub.sum())
    return 100.0 * inside / total, 100.0 * inside / rect.area


def generate_realistic_patch(
    patch: Patch,
    image_dims: tuple[int, int],
    cell: PerturbationCell,
    rng: np.random.Generator,
    max_attempts: int = 200,
) -> RealisticPatch | None:
    """Rejection-sample a perturbed rect landing in the target cell.

    Each attempt picks target percentages inside the cell, derives the
    rect area they imply, and jitters the placement around the bud
    centroid (wider for low kept targets). Acceptance is decided by the
    exact mask recount; None signals the cell was not reached.
    """
    if patch.mask is None:
        raise ArgumentError(f"patch {patch.id!r} has no mask")
    total = int(patch.mask.sum())
    if total == 0:
        raise ArgumentError(f"patch {patch.id!r} mask has no bud pixels")
    img_w, img_h = image_dims
    ys, xs = np.nonzero(patch.mask)
    cx = patch.rect.x + float(xs.mean()) + 0.5
    cy = patch.rect.y + float(ys.mean()) + 0.5
    aspect = patch.rect.w / patch.rect.h

    for _ in range(max_attempts):
        kept_t = rng.uniform(*cell.kept_range)
        rel_t = rng.uniform(*cell.relative_range)
        area = (kept_t / 100.0 * total) / (rel_t / 100.0)
        w = int(round(np.sqrt(area * aspect)))
        h = int(round(area / max(w, 1)))
        # floor at the feature extractor's minimum image side
        w, h = max(w, 16), max(h, 16)
        if w > img_w or h > img_h:
            continue
        spread = 0.05 + 1.4 * (1.0 - kept_t / 100.0)
        dx = rng.uniform(-1.0, 1.0) * spread * 0.5 * (patch.rect.w + w)
        dy = rng.uniform(-1.0, 1.0) * spread * 0.5 * (patch.rect.h + h)
        x = int(round(cx + dx - w / 2.0))
        y = int(round(cy + dy - h / 2.0))
        x = min(max(x, 0), img_w - w)
        y = min(max(y, 0), img_h - h)
        rect = Rect(x, y, w, h)
        kept, rel = measure_rect(patch, rect)
        if cell.contains(kept, rel):
            return RealisticPatch(
                source_id=patch.id, rect=rect, kept=kept, relative=rel
            )
    return None


@dataclass
class Heatmap:
    """10x10 grid of mean recalls; [i, j] = kept band i, relative band j."""

    kept_edges: np.ndarray  # 11 band edges, 0..100
    relative_edges: np.ndarray
    recall: np.ndarray  # mean recall across models; NaN where discarded
    counts: np.ndarray  # generated patches per cell
    discarded: np.ndarray  # bool; count fell short of the per-cell quota


def heatmap_experiment(
    root,
    models: list[SvmModel],
    vocab: Vocabulary,
    bud_patches: list[Patch],
    per_cell: int = 4,
    seed: int = 0,
    max_attempts: int = 200,
    sift_cfg: sift.SiftConfig | None = None,
) -> Heatmap:
    """Recall of perturbed bud patches over the 10x10 percentage grid.

    Every cell asks for per_cell realistic patches from each bud; a cell
    missing any of its quota is flagged discarded and carries no recall.
    Populated cells report the per-model recall averaged across models.
    """
    if not models:
        raise ArgumentError("need at least one trained model")
    if per_cell < 1:
        raise ArgumentError(f"per_cell must be >= 1, got {per_cell}")
    if not bud_patches:
        raise ArgumentError("need at least one bud patch")
    root = Path(root)
    images: dict[str, np.ndarray] = {}
    source_of = {p.id: p.source_image for p in bud_patches}
    for p in bud_patches:
        if p.source_image not in images:
            images[p.source_image] = load_gray(root / p.source_image)

    edges = np.arange(0, 101, 10, dtype=np.float64)
    recall = np.full((10, 10), np.nan)
    counts = np.zeros((10, 10), np.int64)
    discarded = np.zeros((10, 10), bool)
    quota = per_cell * len(bud_patches)
    rng = np.random.default_rng(seed)

    for i in range(10):
        for j in range(10):
            cell = PerturbationCell(
                kept_range=(edges[i], edges[i + 1]),
                relative_range=(edges[j], edges[j + 1]),
            )
            generated: list[RealisticPatch] = []
            for p in bud_patches:
                img = images[p.source_image]
                dims = (img.shape[1], img.shape[0])
                for _ in range(per_cell):
                    rp = generate_realistic_patch(
                        p, dims, cell, rng, max_attempts
                    )
                    if rp is not None:
                        generated.append(rp)
            counts[i, j] = len(generated)
            if len(generated) < quota:
                discarded[i, j] = True
                continue
            hists = np.stack(
                [
                    bof.encode(
                        vocab,
                        _rect_descriptors(
                            images[source_of[rp.source_id]], rp.rect, sift_cfg
                        ),
                    ).bins
                    for rp in generated
                ]
            )
            per_model = [
                float((_predict_batch(m, hists) == BUD).mean()) for m in models
            ]
            recall[i, j] = float(np.mean(per_model))
    return Heatmap(
        kept_edges=edges,
        relative_edges=edges.copy(),
        recall=recall,
        counts=counts,
        discarded=discarded,
    )


def _rect_descriptors(image, rect: Rect, cfg) -> np.ndarray:
    descs = sift.extract(crop(image, rect), cfg)
    if not descs:
        return np.zeros((0, 128))
    return np.stack([d.vector for d in descs])
