"""Soft-margin binary SVM with an RBF kernel.

Training solves the C-SVC dual with pairwise working-set steps on the
maximal violating pair until the KKT gap closes below tolerance. Labels
are +1 (bud) and -1 (non-bud) throughout.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError, TrainingError

BUD = 1
NON_BUD = -1

_MAGIC = b"VBSM"
_VERSION = 1
_ALPHA_EPS = 1e-12


@dataclass(frozen=True)
class SvmConfig:
    """C-SVC knobs: penalty C, RBF gamma, KKT stopping tolerance."""

    C: float
    gamma: float
    kkt_tolerance: float = 1e-3
    max_passes: int = 1_000_000
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ArgumentError(f"C must be > 0, got {self.C}")
        if not self.gamma > 0:
            raise ArgumentError(f"gamma must be > 0, got {self.gamma}")
        if not self.kkt_tolerance > 0:
            raise ArgumentError(
                f"kkt_tolerance must be > 0, got {self.kkt_tolerance}"
            )


@dataclass
class SvmModel:
    """Support vectors with their signed dual coefficients alpha_i * y_i."""

    support_vectors: np.ndarray  # (m, d) float64
    dual_coefs: np.ndarray  # (m,) float64
    bias: float
    gamma: float
    classes: tuple[int, int] = (BUD, NON_BUD)

    @property
    def dimension(self) -> int:
        return self.support_vectors.shape[1]


def rbf_kernel(x, y, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2)."""
    a = np.asarray(x, np.float64)
    b = np.asarray(y, np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.exp(-gamma * ((a - b) ** 2).sum()))


class _RowCache:
    """LRU cache of kernel rows, bounded by a memory budget."""

    def __init__(self, x: np.ndarray, gamma: float, budget_mb: float):
        self.x = x
        self.gamma = gamma
        row_bytes = 8 * x.shape[0]
        self.capacity = max(2, int(budget_mb * 2**20 / row_bytes))
        self.rows: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        hit = self.rows.get(i)
        if hit is not None:
            self.rows.move_to_end(i)
            return hit
        r = np.exp(-self.gamma * ((self.x - self.x[i]) ** 2).sum(axis=1))
        self.rows[i] = r
        if len(self.rows) > self.capacity:
            self.rows.popitem(last=False)
        return r


def train(
    x,
    y,
    cfg: SvmConfig,
    objective_trace: list | None = None,
    cache_mb: float = 64.0,
) -> SvmModel:
    """Fit the dual by maximal-violating-pair updates.

    Deterministic: the working set is chosen by gradient extrema, no
    shuffling. Raises a training error if the KKT gap has not closed
    after cfg.max_passes pair updates.
    """
    x = np.asarray(x, np.float64)
    y = np.asarray(y, np.float64).ravel()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ArgumentError(
            f"expected (n, d) data with n labels, got {x.shape} and {y.shape}"
        )
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ArgumentError("labels must be +1 or -1")
    if (y > 0).all() or (y < 0).all():
        raise ArgumentError("training data must contain both classes")

    n = x.shape[0]
    C = cfg.C
    alpha = np.zeros(n)
    grad = np.full(n, -1.0)  # gradient of the dual objective at alpha=0
    cache = _RowCache(x, cfg.gamma, cache_mb)

    pos = y > 0
    gap = np.inf
    for _ in range(cfg.max_passes):
        if objective_trace is not None:
            objective_trace.append(0.5 * float((alpha * (1.0 - grad)).sum()))
        yg = y * grad
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (~pos & (alpha < C)) | (pos & (alpha > 0))
        m_val = np.max(-yg[up])
        big_m = np.min(-yg[low])
        gap = m_val - big_m
        if gap <= cfg.kkt_tolerance:
            break
        i = int(np.flatnonzero(up)[np.argmax(-yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(-yg[low])])

        ki = cache.row(i)
        kj = cache.row(j)
        old_i, old_j = alpha[i], alpha[j]
        # K_ii + K_jj - 2 K_ij: squared feature-space distance, RBF diagonal 1
        quad = max(2.0 - 2.0 * ki[j], _ALPHA_EPS)
        if y[i] != y[j]:
            delta = (-grad[i] - grad[j]) / quad
            diff = old_i - old_j  # conserved along the update direction
            ai, aj = old_i + delta, old_j + delta
            if diff > 0:
                if aj < 0:
                    ai, aj = diff, 0.0
                if ai > C:
                    ai, aj = C, C - diff
            else:
                if ai < 0:
                    ai, aj = 0.0, -diff
                if aj > C:
                    ai, aj = C + diff, C
        else:
            delta = (grad[i] - grad[j]) / quad
            total = old_i + old_j  # conserved along the update direction
            ai, aj = old_i - delta, old_j + delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    ai, aj = total - C, C
            else:
                if aj < 0:
                    ai, aj = total, 0.0
                if ai < 0:
                    ai, aj = 0.0, total
        alpha[i], alpha[j] = ai, aj
        grad += (y[i] * (ai - old_i)) * (y * ki) + (y[j] * (aj - old_j)) * (y * kj)
    else:
        raise TrainingError(
            f"no convergence after {cfg.max_passes} pair updates, "
            f"residual KKT violation {gap:.3e}"
        )
    if objective_trace is not None:
        objective_trace.append(0.5 * float((alpha * (1.0 - grad)).sum()))

    yg = y * grad
    free = (alpha > _ALPHA_EPS) & (alpha < C - _ALPHA_EPS)
    if free.any():
        bias = float((-yg[free]).mean())
    else:
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (~pos & (alpha < C)) | (pos & (alpha > 0))
        bias = float((np.max(-yg[up]) + np.min(-yg[low])) / 2.0)

    keep = alpha > _ALPHA_EPS
    return SvmModel(
        support_vectors=x[keep].copy(),
        dual_coefs=(alpha * y)[keep].copy(),
        bias=bias,
        gamma=cfg.gamma,
    )


def decision_value(model: SvmModel, v) -> float:
    """sum_i coef_i * rbf(sv_i, v) + bias."""
    vec = np.asarray(v, np.float64)
    if vec.shape != (model.dimension,):
        raise ArgumentError(
            f"vector dimension {vec.shape} does not match model "
            f"dimension {model.dimension}"
        )
    if model.support_vectors.shape[0] == 0:
        return float(model.bias)
    k = np.exp(-model.gamma * ((model.support_vectors - vec) ** 2).sum(axis=1))
    return float(model.dual_coefs @ k + model.bias)


def predict(model: SvmModel, v) -> int:
    """Sign of the decision value; exactly zero maps to non-bud."""
    return BUD if decision_value(model, v) > 0.0 else NON_BUD


def save_model(model: SvmModel, path) -> None:
    """Versioned binary dump, little-endian float64 payload."""
    m, d = model.support_vectors.shape
    header = struct.pack(
        "<4sIddbbII",
        _MAGIC,
        _VERSION,
        model.gamma,
        model.bias,
        model.classes[0],
        model.classes[1],
        m,
        d,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(model.dual_coefs.astype("<f8").tobytes())
        fh.write(model.support_vectors.astype("<f8").tobytes())


def load_model(path) -> SvmModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sIddbbII")
    if len(blob) < head_size:
        raise FormatError(f"model file truncated at {len(blob)} bytes")
    magic, version, gamma, bias, c_pos, c_neg, m, d = struct.unpack(
        "<4sIddbbII", blob[:head_size]
    )
    if magic != _MAGIC:
        raise FormatError(f"bad model magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported model version {version}")
    expected = m * 8 + m * d * 8
    if len(blob) - head_size != expected:
        raise FormatError(
            f"expected {expected} payload bytes for {m} vectors of "
            f"dimension {d}, got {len(blob) - head_size}"
        )
    coefs = np.frombuffer(blob[head_size : head_size + m * 8], "<f8").copy()
    svs = (
        np.frombuffer(blob[head_size + m * 8 :], "<f8").reshape(m, d).copy()
    )
    return SvmModel(
        support_vectors=svs,
        dual_coefs=coefs,
        bias=bias,
        gamma=gamma,
        classes=(int(c_pos), int(c_neg)),
    )
