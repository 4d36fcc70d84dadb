"""Bag-of-features encoding over local descriptors.

A visual vocabulary is the set of k-means centers fitted to a training
pool of 128-d SIFT descriptors (seeded with k-means++); a patch is then
represented by the histogram of its descriptors' nearest centers.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, FormatError

_MAGIC = b"VBVO"
_VERSION = 1
_ASSIGN_CHUNK = 2048


@dataclass(frozen=True)
class KMeansConfig:
    """Clustering knobs: vocabulary size k, iteration cap, movement epsilon."""

    k: int
    max_iterations: int = 100
    epsilon: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ArgumentError(f"k must be >= 1, got {self.k}")
        if self.max_iterations < 1:
            raise ArgumentError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if not self.epsilon > 0:
            raise ArgumentError(f"epsilon must be > 0, got {self.epsilon}")


@dataclass
class Vocabulary:
    """k cluster centers plus the config and data fingerprint that built them."""

    centers: np.ndarray  # (k, d) float64
    config: KMeansConfig
    provenance: str = ""

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def dimension(self) -> int:
        return self.centers.shape[1]


@dataclass
class BofHistogram:
    """Per-center descriptor counts, L1-normalized unless the patch is empty."""

    bins: np.ndarray
    descriptor_count: int


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, np.float64)
    if pts.ndim != 2:
        raise ArgumentError(f"expected an (n, d) point array, got shape {pts.shape}")
    return pts


def fingerprint(points: np.ndarray) -> str:
    """sha256 over the row-major float64 bytes of the training pool."""
    pts = np.ascontiguousarray(np.asarray(points, np.float64))
    h = hashlib.sha256()
    h.update(str(pts.shape).encode())
    h.update(pts.tobytes())
    return h.hexdigest()


def _assign(points: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, float]:
    """Exact nearest-center labels and summed squared distance.

    Distances use the same (p - c)**2 form as nearest_center so bulk
    assignment and the public scan can never disagree on ties.
    """
    n = points.shape[0]
    labels = np.empty(n, np.int64)
    total = 0.0
    for lo in range(0, n, _ASSIGN_CHUNK):
        hi = min(lo + _ASSIGN_CHUNK, n)
        d2 = ((points[lo:hi, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels[lo:hi] = np.argmin(d2, axis=1)
        total += float(d2[np.arange(hi - lo), labels[lo:hi]].sum())
    return labels, total


def kmeans_init_pp(points, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, the rest D^2-weighted.

    Duplicate points carry zero selection mass once their value is chosen,
    so seeds are always distinct; if fewer than k distinct points exist the
    seeding cannot proceed.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n < k:
        raise ArgumentError(f"need at least k={k} points, got {n}")
    centers = np.empty((k, pts.shape[1]))
    centers[0] = pts[int(rng.integers(n))]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        mass = d2.sum()
        if mass <= 0.0:
            raise ArgumentError(
                f"only {i} distinct points available for k={k} seeds"
            )
        u = rng.random() * mass
        j = int(np.searchsorted(np.cumsum(d2), u, side="right"))
        j = min(j, n - 1)
        centers[i] = pts[j]
        d2 = np.minimum(d2, ((pts - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans(
    points,
    cfg: KMeansConfig,
    rng: np.random.Generator | None = None,
    initial_centers: np.ndarray | None = None,
    objective_trace: list | None = None,
) -> tuple[Vocabulary, float]:
    """Lloyd iterations from k-means++ seeds.

    Stops when every center moves less than cfg.epsilon or at
    cfg.max_iterations. An emptied cluster is re-seeded to the point
    farthest from its assigned center. Returns the vocabulary and the
    final summed squared distance to nearest centers.
    """
    pts = _as_points(points)
    if pts.shape[0] < cfg.k:
        raise ArgumentError(f"need at least k={cfg.k} points, got {pts.shape[0]}")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if initial_centers is not None:
        centers = np.asarray(initial_centers, np.float64).copy()
        if centers.shape != (cfg.k, pts.shape[1]):
            raise ArgumentError(
                f"initial centers shape {centers.shape} does not match "
                f"(k={cfg.k}, d={pts.shape[1]})"
            )
    else:
        centers = kmeans_init_pp(pts, cfg.k, rng)

    labels, obj = _assign(pts, centers)
    for _ in range(cfg.max_iterations):
        if objective_trace is not None:
            objective_trace.append(obj)
        new_centers = centers.copy()
        fit = None
        for c in range(cfg.k):
            mask = labels == c
            if mask.any():
                new_centers[c] = pts[mask].mean(axis=0)
            else:
                if fit is None:
                    fit = ((pts - centers[labels]) ** 2).sum(axis=1)
                worst = int(np.argmax(fit))
                fit[worst] = -1.0  # a second empty cluster takes the runner-up
                new_centers[c] = pts[worst]
        movement = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        labels, obj = _assign(pts, centers)
        if movement < cfg.epsilon:
            break
    if objective_trace is not None:
        objective_trace.append(obj)
    vocab = Vocabulary(centers=centers, config=cfg, provenance=fingerprint(pts))
    return vocab, obj


def nearest_center(vocab: Vocabulary, v) -> int:
    """Index of the closest center; exact scan, ties to the lowest index."""
    vec = np.asarray(v, np.float64)
    if vec.shape != (vocab.dimension,):
        raise ArgumentError(
            f"vector dimension {vec.shape} does not match vocabulary "
            f"dimension {vocab.dimension}"
        )
    d2 = ((vocab.centers - vec) ** 2).sum(axis=1)
    return int(np.argmin(d2))


def encode(vocab: Vocabulary, descriptors, normalize: bool = True) -> BofHistogram:
    """Histogram of nearest-center counts over a patch's descriptors.

    An empty descriptor list encodes to the all-zero histogram with
    descriptor_count 0 (textureless patches stay classifiable).
    """
    if len(descriptors) == 0:
        return BofHistogram(bins=np.zeros(vocab.k), descriptor_count=0)
    pts = _as_points(descriptors)
    if pts.shape[1] != vocab.dimension:
        raise ArgumentError(
            f"descriptor dimension {pts.shape[1]} does not match vocabulary "
            f"dimension {vocab.dimension}"
        )
    labels, _ = _assign(pts, vocab.centers)
    counts = np.bincount(labels, minlength=vocab.k).astype(np.float64)
    if normalize:
        counts /= pts.shape[0]
    return BofHistogram(bins=counts, descriptor_count=pts.shape[0])


def save_vocabulary(vocab: Vocabulary, path) -> None:
    """Versioned binary dump; centers as little-endian float64, row-major."""
    prov = vocab.provenance.encode()
    header = struct.pack(
        "<4sIIIIdqI",
        _MAGIC,
        _VERSION,
        vocab.k,
        vocab.dimension,
        vocab.config.max_iterations,
        vocab.config.epsilon,
        vocab.config.seed,
        len(prov),
    )
    body = vocab.centers.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(prov)
        fh.write(body)


def load_vocabulary(path) -> Vocabulary:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sIIIIdqI")
    if len(blob) < head_size:
        raise FormatError(f"vocabulary file truncated at {len(blob)} bytes")
    magic, version, k, dim, max_iter, eps, seed, prov_len = struct.unpack(
        "<4sIIIIdqI", blob[:head_size]
    )
    if magic != _MAGIC:
        raise FormatError(f"bad vocabulary magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported vocabulary version {version}")
    offset = head_size + prov_len
    if len(blob) < offset:
        raise FormatError("vocabulary file truncated inside provenance")
    prov = blob[head_size:offset].decode()
    expected = k * dim * 8
    if len(blob) - offset != expected:
        raise FormatError(
            f"expected {expected} bytes of centers for k={k} d={dim}, "
            f"got {len(blob) - offset}"
        )
    centers = np.frombuffer(blob[offset:], "<f8").reshape(k, dim).copy()
    cfg = KMeansConfig(k=k, max_iterations=max_iter, epsilon=eps, seed=seed)
    return Vocabulary(centers=centers, config=cfg, provenance=prov)


_DESC_MAGIC = b"VBDS"


def save_descriptor_sets(sets: dict[str, np.ndarray], path) -> None:
    """Versioned binary dump of per-id descriptor matrices.

    Entry order is preserved; every matrix must share one column count so
    a vocabulary built later fits all of them. Zero-row matrices are kept
    (textureless patches still need an entry).
    """
    dims = {int(np.asarray(v).shape[1]) for v in sets.values()}
    if len(dims) > 1:
        raise ArgumentError(f"descriptor sets mix dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _DESC_MAGIC, _VERSION, len(sets), dim))
        for key, value in sets.items():
            ident = key.encode()
            rows = np.ascontiguousarray(np.asarray(value, np.float64))
            fh.write(struct.pack("<II", len(ident), rows.shape[0]))
            fh.write(ident)
            fh.write(rows.astype("<f8").tobytes())


def load_descriptor_sets(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    head_size = struct.calcsize("<4sIII")
    if len(blob) < head_size:
        raise FormatError(f"descriptor file truncated at {len(blob)} bytes")
    magic, version, count, dim = struct.unpack("<4sIII", blob[:head_size])
    if magic != _DESC_MAGIC:
        raise FormatError(f"bad descriptor-set magic {magic!r}")
    if version != _VERSION:
        raise FormatError(f"unsupported descriptor-set version {version}")
    out: dict[str, np.ndarray] = {}
    offset = head_size
    entry_size = struct.calcsize("<II")
    for _ in range(count):
        if len(blob) < offset + entry_size:
            raise FormatError("descriptor file truncated inside entry header")
        id_len, rows = struct.unpack("<II", blob[offset : offset + entry_size])
        offset += entry_size
        body = id_len + rows * dim * 8
        if len(blob) < offset + body:
            raise FormatError("descriptor file truncated inside entry body")
        key = blob[offset : offset + id_len].decode()
        offset += id_len
        data = np.frombuffer(blob[offset : offset + rows * dim * 8], "<f8")
        out[key] = data.reshape(rows, dim).copy()
        offset += rows * dim * 8
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes in descriptor file")
    return out
