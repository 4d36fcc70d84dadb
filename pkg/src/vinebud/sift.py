"""Scale-Invariant Feature Transform.

Pipeline stages: Gaussian scale-space construction, difference-of-Gaussians
pyramid, 26-neighbor extrema detection, sub-pixel keypoint refinement with
contrast and edge rejection, orientation assignment, and 128-d descriptor
computation. `extract` composes all five stages and is a pure function of
(image, config).

Keypoint coordinates and scales are reported in the frame of the input
image. When the base image is doubled for processing, internal working
coordinates are twice the reported ones; the working-frame sigma schedule
is what `ScaleSpace.sigmas` stores.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError
from .imaging import gaussian_blur, resample

# Assumed blur of the raw photograph, in input pixels.
_CAMERA_SIGMA = 0.5
# Descriptor geometry: 4x4 spatial cells, 8 orientation bins, 3*sigma cell width.
_DESC_CELLS = 4
_DESC_BINS = 8
_DESC_CELL_SIGMAS = 3.0
_DESC_CLAMP = 0.2
# Orientation histogram: 36 bins, Gaussian window 1.5*sigma, radius 3x that.
_ORI_BINS = 36
_ORI_SIGMA_FACTOR = 1.5
_ORI_RADIUS_FACTOR = 3.0
_ORI_PEAK_RATIO = 0.8

_MIN_DIM = 16
_MAX_REFINE_STEPS = 5


@dataclass(frozen=True)
class SiftConfig:
    """Detector and descriptor parameters.

    octaves: number of pyramid octaves; derived from the image size when
        None (top octave keeps a min dimension of at least 16 pixels).
    scales_per_octave: DoG levels probed per octave (S).
    base_sigma: blur of pyramid level 0 in working pixels.
    contrast_threshold: DoG magnitude floor; the effective cutoff applied
        during refinement is contrast_threshold / scales_per_octave.
    edge_ratio_threshold: principal-curvature ratio r; candidates with
        trace^2/det >= (r+1)^2/r are rejected as edges.
    double_base_image: process a 2x upsampled copy of the input.
    """

    octaves: int | None = None
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.04
    edge_ratio_threshold: float = 10.0
    double_base_image: bool = True

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise ArgumentError("scales_per_octave must be >= 1")
        if self.base_sigma <= 0 or self.contrast_threshold <= 0:
            raise ArgumentError("thresholds and sigmas must be > 0")
        if self.edge_ratio_threshold <= 0:
            raise ArgumentError("edge_ratio_threshold must be > 0")
        if self.octaves is not None and self.octaves < 1:
            raise ArgumentError("octaves must be >= 1")


@dataclass
class ScaleSpace:
    """Per octave, progressively blurred images with their absolute sigmas.

    `images[o][l]` has working-frame blur `sigmas[o][l]` =
    base_sigma * 2**(o + l / scales_per_octave). `input_scale` converts
    working coordinates to input-image coordinates (0.5 when the base
    image was doubled, else 1.0).
    """

    images: list[list[np.ndarray]]
    sigmas: list[list[float]]
    input_scale: float
    cfg: SiftConfig
    _gradients: dict = field(default_factory=dict, repr=False)

    def gradient_maps(self, octave: int, level: int):
        """Cached (magnitude, angle) central-difference maps of one image."""
        key = (octave, level)
        if key not in self._gradients:
            img = self.images[octave][level]
            dx = np.zeros_like(img)
            dy = np.zeros_like(img)
            dx[:, 1:-1] = (img[:, 2:] - img[:, :-2]) * np.float32(0.5)
            dy[1:-1, :] = (img[2:, :] - img[:-2, :]) * np.float32(0.5)
            mag = np.hypot(dx, dy)
            ang = np.arctan2(dy, dx) % np.float32(2 * np.pi)
            self._gradients[key] = (mag, ang)
        return self._gradients[key]


@dataclass
class DogPyramid:
    """Difference-of-Gaussians images, one (levels, H, W) stack per octave."""

    octaves: list[np.ndarray]
    octaves_f32: list[np.ndarray] | None = None


class CandidateKeypoint(NamedTuple):
    octave: int
    level: int
    row: int
    col: int
    value: float


@dataclass(frozen=True)
class Keypoint:
    """A refined scale-space extremum.

    x, y, scale are in the input-image frame. The *_octave fields locate
    the keypoint on its octave's pixel grid for the later stages; `level`
    is the interpolated (fractional) scale-space level.
    """

    x: float
    y: float
    octave: int
    scale: float
    dog_value: float
    col_octave: float
    row_octave: float
    level: float
    sigma_octave: float


@dataclass(frozen=True)
class KeypointDescriptor:
    keypoint: Keypoint
    orientation: float
    vector: np.ndarray


def n_octaves_for(height: int, width: int) -> int:
    """Octave count keeping the top octave's min dimension >= 16."""
    return max(1, int(np.floor(np.log2(min(height, width) / _MIN_DIM))) + 1)


def build_scale_space(img: np.ndarray, cfg: SiftConfig) -> ScaleSpace:
    """Construct the Gaussian pyramid.

    Level sigmas follow base_sigma * 2**(o + l/S); each next octave starts
    from a 2x decimation of the previous octave's level-S image.
    """
    img = np.asarray(img)
    if img.ndim != 2:
        raise ArgumentError(f"expected a 2-D gray image, got shape {img.shape}")
    if min(img.shape) < _MIN_DIM:
        raise ArgumentError(
            f"image min dimension must be >= {_MIN_DIM}, got {img.shape[1]}x{img.shape[0]}"
        )
    base = img.astype(np.float32, copy=True)
    if cfg.double_base_image:
        base = resample(base, "up2x-linear")
        initial_sigma = 2.0 * _CAMERA_SIGMA
        input_scale = 0.5
    else:
        initial_sigma = _CAMERA_SIGMA
        input_scale = 1.0

    s = cfg.scales_per_octave
    n_oct = n_octaves_for(*base.shape)
    if cfg.octaves is not None:
        n_oct = min(cfg.octaves, n_oct)

    # octave-relative schedule, identical for every octave
    rel = [cfg.base_sigma * 2.0 ** (l / s) for l in range(s + 3)]
    first_delta = float(np.sqrt(max(cfg.base_sigma**2 - initial_sigma**2, 1e-8)))
    deltas = [float(np.sqrt(rel[l] ** 2 - rel[l - 1] ** 2)) for l in range(1, s + 3)]

    images, sigmas = [], []
    for o in range(n_oct):
        if o == 0:
            level0 = gaussian_blur(base, first_delta)
        else:
            level0 = resample(images[o - 1][s], "down2x-decimate")
        levels = [level0]
        for delta in deltas:
            levels.append(gaussian_blur(levels[-1], delta))
        images.append(levels)
        sigmas.append([r * 2.0**o for r in rel])
    return ScaleSpace(images=images, sigmas=sigmas, input_scale=input_scale, cfg=cfg)


def build_dog(ss: ScaleSpace) -> DogPyramid:
    """dog[o][l] = ss[o][l+1] - ss[o][l], stacked per octave.

    Differences are taken in float64 so adding a DoG image back to its
    scale-space level reconstructs the next level bit-exactly.  A float32
    twin of each stack is kept for the extrema prefilter; since float32
    differences are representable in float64, the twin equals the float64
    stack rounded to float32.
    """
    octaves, twins = [], []
    for levels in ss.images:
        n = len(levels) - 1
        h, w = levels[0].shape
        stack = np.empty((n, h, w))
        twin = np.empty((n, h, w), np.float32)
        for l in range(n):
            np.subtract(levels[l + 1], levels[l], out=stack[l], dtype=np.float64)
            np.subtract(levels[l + 1], levels[l], out=twin[l])
        octaves.append(stack)
        twins.append(twin)
    return DogPyramid(octaves=octaves, octaves_f32=twins)


def _slide_extreme(a: np.ndarray, op) -> np.ndarray:
    """3x3 neighborhood max or min (center included), on the interior grid."""
    c = op(op(a[:, :-2], a[:, 1:-1]), a[:, 2:])
    return op(op(c[:-2], c[1:-1]), c[2:])


def _ring8(a: np.ndarray, op) -> np.ndarray:
    """Extreme over the 8 same-level neighbors (center excluded), interior grid."""
    c = op(op(a[:, :-2], a[:, 1:-1]), a[:, 2:])
    return op(op(c[:-2], c[2:]), op(a[1:-1, :-2], a[1:-1, 2:]))


def _confirm_extrema(stack: np.ndarray, l: int, rows, cols):
    """Exact strict-extremum test on sparse lattice points of one level."""
    v = stack[l, rows, cols]
    ok_max = np.ones(rows.size, bool)
    ok_min = np.ones(rows.size, bool)
    for dl in (-1, 0, 1):
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dl == 0 and dr == 0 and dc == 0:
                    continue
                n = stack[l + dl, rows + dr, cols + dc]
                ok_max &= v > n
                ok_min &= v < n
    return ok_max | ok_min


def detect_extrema(dog: DogPyramid) -> list[CandidateKeypoint]:
    """All interior pixels strictly above or below their 26 neighbors.

    Border pixels and the first/last DoG level of each octave never
    qualify. Output is ordered by (octave, level, row, col).

    A float32 prefilter proposes candidates: the cast is monotone, so every
    float64 extremum weakly dominates its 3x3 slabs in float32. A strict
    extremum also cannot equal its right-hand neighbor, and that one exact
    float64 comparison removes the tie plateaus of flat regions, which
    would otherwise flood the confirmation pass. The sparse survivors then
    get the exact strict 26-neighbor test on the float64 stack.
    """
    out = []
    for o, stack in enumerate(dog.octaves):
        n_levels = stack.shape[0]
        if n_levels < 3:
            raise ArgumentError("need at least 3 DoG levels per octave")
        if dog.octaves_f32 is not None:
            s32 = dog.octaves_f32[o]
        else:
            s32 = stack.astype(np.float32)
        max3 = [_slide_extreme(s32[l], np.maximum) for l in range(n_levels)]
        min3 = [_slide_extreme(s32[l], np.minimum) for l in range(n_levels)]
        for l in range(1, n_levels - 1):
            interior = s32[l][1:-1, 1:-1]
            cand = (
                (interior >= max3[l])
                & (interior >= max3[l - 1])
                & (interior >= max3[l + 1])
            ) | (
                (interior <= min3[l])
                & (interior <= min3[l - 1])
                & (interior <= min3[l + 1])
            )
            cand &= stack[l, 1:-1, 1:-1] != stack[l, 1:-1, 2:]
            wr, wc = np.nonzero(cand)
            if wr.size == 0:
                continue
            ok = _confirm_extrema(stack, l, wr + 1, wc + 1)
            rows, cols = wr[ok] + 1, wc[ok] + 1
            vals = stack[l, rows, cols]
            for r, c, v in zip(rows, cols, vals):
                out.append(CandidateKeypoint(o, l, int(r), int(c), float(v)))
    return out


def _gather_derivatives(stack: np.ndarray, l, r, c):
    """Batched gradient and Hessian of the DoG stack at lattice points."""
    D = stack
    v = D[l, r, c]
    dx = 0.5 * (D[l, r, c + 1] - D[l, r, c - 1])
    dy = 0.5 * (D[l, r + 1, c] - D[l, r - 1, c])
    ds = 0.5 * (D[l + 1, r, c] - D[l - 1, r, c])
    dxx = D[l, r, c + 1] + D[l, r, c - 1] - 2 * v
    dyy = D[l, r + 1, c] + D[l, r - 1, c] - 2 * v
    dss = D[l + 1, r, c] + D[l - 1, r, c] - 2 * v
    dxy = 0.25 * (
        D[l, r + 1, c + 1] - D[l, r + 1, c - 1] - D[l, r - 1, c + 1] + D[l, r - 1, c - 1]
    )
    dxs = 0.25 * (
        D[l + 1, r, c + 1] - D[l + 1, r, c - 1] - D[l - 1, r, c + 1] + D[l - 1, r, c - 1]
    )
    dys = 0.25 * (
        D[l + 1, r + 1, c] - D[l + 1, r - 1, c] - D[l - 1, r + 1, c] + D[l - 1, r - 1, c]
    )
    grad = np.stack([dx, dy, ds], axis=-1).astype(np.float64)
    hess = np.empty(grad.shape[:-1] + (3, 3), np.float64)
    hess[..., 0, 0] = dxx
    hess[..., 1, 1] = dyy
    hess[..., 2, 2] = dss
    hess[..., 0, 1] = hess[..., 1, 0] = dxy
    hess[..., 0, 2] = hess[..., 2, 0] = dxs
    hess[..., 1, 2] = hess[..., 2, 1] = dys
    return v.astype(np.float64), grad, hess


def refine_keypoints(
    cands: list[CandidateKeypoint], dog: DogPyramid, cfg: SiftConfig
) -> list[Keypoint]:
    """Sub-pixel 3-D quadratic refinement with contrast and edge rejection.

    Re-localizes each candidate for at most 5 steps; discards candidates
    that leave the interior, fail |interpolated DoG| >= threshold, or fail
    the Hessian trace^2/det edge test.
    """
    s = cfg.scales_per_octave
    threshold = cfg.contrast_threshold / s
    r_edge = cfg.edge_ratio_threshold
    edge_bound = (r_edge + 1.0) ** 2 / r_edge

    keypoints: list[tuple[int, Keypoint]] = []
    by_octave: dict[int, list[tuple[int, CandidateKeypoint]]] = {}
    for i, cand in enumerate(cands):
        by_octave.setdefault(cand.octave, []).append((i, cand))

    for o, members in sorted(by_octave.items()):
        stack = dog.octaves[o]
        n_levels, h, w = stack.shape
        order = np.array([i for i, _ in members])
        l = np.array([c.level for _, c in members])
        r = np.array([c.row for _, c in members])
        c_ = np.array([c.col for _, c in members])
        alive = np.ones(len(members), bool)
        offset = np.zeros((len(members), 3))
        value = np.zeros(len(members))
        grad_fin = np.zeros((len(members), 3))
        settled = np.zeros(len(members), bool)

        for _ in range(_MAX_REFINE_STEPS):
            idx = np.nonzero(alive & ~settled)[0]
            if idx.size == 0:
                break
            v, g, hh = _gather_derivatives(stack, l[idx], r[idx], c_[idx])
            det = np.linalg.det(hh)
            solvable = np.abs(det) > 1e-30
            off = np.zeros((idx.size, 3))
            if solvable.any():
                off[solvable] = np.linalg.solve(
                    hh[solvable], -g[solvable][..., None]
                )[..., 0]
            alive[idx[~solvable]] = False
            idx = idx[solvable]
            off = off[solvable]
            v, g = v[solvable], g[solvable]
            done = np.all(np.abs(off) < 0.5, axis=1)
            fin = idx[done]
            settled[fin] = True
            offset[fin] = off[done]
            value[fin] = v[done]
            grad_fin[fin] = g[done]
            move_idx = idx[~done]
            if move_idx.size == 0:
                continue
            step = np.zeros((move_idx.size, 3), int)
            moving = off[~done]
            step[moving > 0.5] = 1
            step[moving < -0.5] = -1
            c_[move_idx] += step[:, 0]
            r[move_idx] += step[:, 1]
            l[move_idx] += step[:, 2]
            inside = (
                (l[move_idx] >= 1)
                & (l[move_idx] <= n_levels - 2)
                & (r[move_idx] >= 1)
                & (r[move_idx] <= h - 2)
                & (c_[move_idx] >= 1)
                & (c_[move_idx] <= w - 2)
            )
            alive[move_idx[~inside]] = False

        alive &= settled
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            continue
        interp = value[idx] + 0.5 * np.sum(grad_fin[idx] * offset[idx], axis=1)
        keep = np.abs(interp) >= threshold
        idx = idx[keep]
        if idx.size == 0:
            continue
        # spatial Hessian edge test at the settled lattice point
        li, ri, ci = l[idx], r[idx], c_[idx]
        v0 = stack[li, ri, ci].astype(np.float64)
        dxx = stack[li, ri, ci + 1] + stack[li, ri, ci - 1] - 2 * v0
        dyy = stack[li, ri + 1, ci] + stack[li, ri - 1, ci] - 2 * v0
        dxy = 0.25 * (
            stack[li, ri + 1, ci + 1]
            - stack[li, ri + 1, ci - 1]
            - stack[li, ri - 1, ci + 1]
            + stack[li, ri - 1, ci - 1]
        )
        tr = dxx + dyy
        det = dxx * dyy - dxy * dxy
        not_edge = (det > 0) & (tr * tr < edge_bound * det)
        idx = idx[not_edge]
        interp = interp[keep][not_edge]

        scale_pow = 2.0**o
        for j, d_hat in zip(idx, interp):
            col_o = c_[j] + offset[j, 0]
            row_o = r[j] + offset[j, 1]
            level_f = l[j] + offset[j, 2]
            sigma_o = cfg.base_sigma * 2.0 ** (level_f / s)
            kp = Keypoint(
                x=col_o * scale_pow * 1.0,
                y=row_o * scale_pow * 1.0,
                octave=o,
                scale=sigma_o * scale_pow,
                dog_value=float(d_hat),
                col_octave=float(col_o),
                row_octave=float(row_o),
                level=float(level_f),
                sigma_octave=float(sigma_o),
            )
            keypoints.append((order[j], kp))

    keypoints.sort(key=lambda t: t[0])
    input_scale = 0.5 if cfg.double_base_image else 1.0
    return [_to_input_frame(kp, input_scale) for _, kp in keypoints]


def _to_input_frame(kp: Keypoint, input_scale: float) -> Keypoint:
    if input_scale == 1.0:
        return kp
    return Keypoint(
        x=kp.x * input_scale,
        y=kp.y * input_scale,
        octave=kp.octave,
        scale=kp.scale * input_scale,
        dog_value=kp.dog_value,
        col_octave=kp.col_octave,
        row_octave=kp.row_octave,
        level=kp.level,
        sigma_octave=kp.sigma_octave,
    )


def _orientation_histograms(ss: ScaleSpace, kps: list[Keypoint]):
    """36-bin Gaussian-weighted gradient histograms, batched per image."""
    s = ss.cfg.scales_per_octave
    n = len(kps)
    hists = np.zeros((n, _ORI_BINS))
    ok = np.zeros(n, bool)

    groups: dict[tuple[int, int], list[int]] = {}
    for i, kp in enumerate(kps):
        level = int(np.clip(np.rint(kp.level), 1, s))
        groups.setdefault((kp.octave, level), []).append(i)

    two_pi = np.float32(2 * np.pi)
    for (o, lev), idx_list in sorted(groups.items()):
        mag, ang = ss.gradient_maps(o, lev)
        h, w = mag.shape
        idx = np.array(idx_list)
        rc = np.array([
            (int(np.rint(kps[i].row_octave)), int(np.rint(kps[i].col_octave)))
            for i in idx_list
        ])
        sig_w = np.array([_ORI_SIGMA_FACTOR * kps[i].sigma_octave for i in idx_list])
        radius = np.rint(_ORI_RADIUS_FACTOR * sig_w).astype(int)
        inside = (
            (rc[:, 0] - radius >= 0)
            & (rc[:, 0] + radius < h)
            & (rc[:, 1] - radius >= 0)
            & (rc[:, 1] + radius < w)
        )
        idx, rc, sig_w, radius = idx[inside], rc[inside], sig_w[inside], radius[inside]
        if idx.size == 0:
            continue
        ok[idx] = True
        r_max = int(radius.max())
        g = np.mgrid[-r_max : r_max + 1, -r_max : r_max + 1]
        dy = g[0].ravel()
        dx = g[1].ravel()
        # grid is r_max wide; rows past a keypoint's own radius carry zero
        # weight, so clamping keeps the gather in bounds without bias
        rows = np.clip(rc[:, 0, None] + dy[None, :], 0, h - 1)
        cols = np.clip(rc[:, 1, None] + dx[None, :], 0, w - 1)
        span = np.maximum(np.abs(dy), np.abs(dx))[None, :]
        w_kp = np.exp(
            -(dy[None, :] ** 2 + dx[None, :] ** 2) / (2.0 * sig_w[:, None] ** 2)
        )
        w_kp[span > radius[:, None]] = 0.0
        m = mag[rows, cols]
        # bins centred on multiples of 2*pi/36, matching the peak convention
        bins = np.rint(ang[rows, cols] * np.float32(_ORI_BINS / (2 * np.pi))).astype(
            np.int64
        )
        bins[bins >= _ORI_BINS] = 0
        flat = np.arange(idx.size, dtype=np.int64)[:, None] * _ORI_BINS + bins
        acc = np.bincount(
            flat.ravel(), weights=(w_kp * m).ravel(), minlength=idx.size * _ORI_BINS
        )
        hists[idx] = acc.reshape(idx.size, _ORI_BINS)
    return hists, ok


def assign_orientations(kp: Keypoint, ss: ScaleSpace) -> list[tuple[Keypoint, float]]:
    """Orientations of one keypoint: peak bin plus every local peak >= 80%.

    Each reported orientation is refined by 3-bin parabolic interpolation.
    Keypoints whose window leaves the image yield an empty list, as do
    zero-gradient (constant) neighborhoods.
    """
    hists, ok = _orientation_histograms(ss, [kp])
    if not ok[0]:
        return []
    return [(kp, th) for th in _histogram_peaks(hists[0])]


def _histogram_peaks(hist: np.ndarray) -> list[float]:
    peak = hist.max()
    if peak <= 0.0:
        return []
    out = []
    n = len(hist)
    for b in range(n):
        left, right = hist[(b - 1) % n], hist[(b + 1) % n]
        if hist[b] > left and hist[b] > right and hist[b] >= _ORI_PEAK_RATIO * peak:
            denom = left - 2.0 * hist[b] + right
            shift = 0.0 if denom == 0.0 else 0.5 * (left - right) / denom
            out.append(((b + shift) * 2 * np.pi / n) % (2 * np.pi))
    return out


def _descriptor_batch(ss: ScaleSpace, oriented: list[tuple[Keypoint, float]]):
    """128-d descriptors for oriented keypoints; vector rows of None mark skips."""
    s = ss.cfg.scales_per_octave
    n = len(oriented)
    vectors: list[np.ndarray | None] = [None] * n
    cells = _DESC_CELLS
    nbins = _DESC_BINS
    pad = cells + 2  # 6x6 spatial histogram, border rows absorb spill
    per_kp = pad * pad * nbins

    groups: dict[tuple[int, int], list[int]] = {}
    for i, (kp, _) in enumerate(oriented):
        level = int(np.clip(np.rint(kp.level), 1, s))
        groups.setdefault((kp.octave, level), []).append(i)

    for (o, lev), idx_list in sorted(groups.items()):
        mag, ang = ss.gradient_maps(o, lev)
        h, w = mag.shape
        idx = np.array(idx_list)
        kps = [oriented[i][0] for i in idx_list]
        ori = np.array([oriented[i][1] for i in idx_list], np.float32)
        rc = np.array(
            [(int(np.rint(k.row_octave)), int(np.rint(k.col_octave))) for k in kps]
        )
        hist_w = np.array([_DESC_CELL_SIGMAS * k.sigma_octave for k in kps], np.float32)
        radius = np.rint(hist_w * np.sqrt(2.0) * (cells + 1) * 0.5).astype(int)
        inside = (
            (rc[:, 0] - radius >= 1)
            & (rc[:, 0] + radius < h - 1)
            & (rc[:, 1] - radius >= 1)
            & (rc[:, 1] + radius < w - 1)
        )
        idx, rc, hist_w, radius, ori = (
            idx[inside],
            rc[inside],
            hist_w[inside],
            radius[inside],
            ori[inside],
        )
        if idx.size == 0:
            continue
        r_max = int(radius.max())
        g = np.mgrid[-r_max : r_max + 1, -r_max : r_max + 1]
        dy = g[0].ravel().astype(np.float32)
        dx = g[1].ravel().astype(np.float32)
        rows = rc[:, 0, None] + g[0].ravel()[None, :]
        cols = rc[:, 1, None] + g[1].ravel()[None, :]
        co = np.cos(ori)[:, None]
        si = np.sin(ori)[:, None]
        hw = hist_w[:, None]
        c_rot = (co * dx[None, :] + si * dy[None, :]) / hw
        r_rot = (-si * dx[None, :] + co * dy[None, :]) / hw
        rbin = r_rot + np.float32(cells / 2 - 0.5)
        cbin = c_rot + np.float32(cells / 2 - 0.5)
        span = np.maximum(np.abs(dy), np.abs(dx))[None, :]
        keep = (
            (rbin > -1)
            & (rbin < cells)
            & (cbin > -1)
            & (cbin < cells)
            & (span <= radius[:, None])
        )
        kflat = np.broadcast_to(
            np.arange(idx.size, dtype=np.int64)[:, None], keep.shape
        )[keep]
        rbin = rbin[keep]
        cbin = cbin[keep]
        rows = rows[keep]  # in bounds: keep caps span at each keypoint's radius
        cols = cols[keep]
        wgt = mag[rows, cols] * np.exp(
            -(r_rot[keep] ** 2 + c_rot[keep] ** 2)
            / np.float32(0.5 * cells * cells)
        )
        abin = (
            (ang[rows, cols] - ori[kflat]) % np.float32(2 * np.pi)
        ) * np.float32(nbins / (2 * np.pi))
        r_f = np.floor(rbin)
        c_f = np.floor(cbin)
        a_f = np.floor(abin)
        dr = rbin - r_f
        dc = cbin - c_f
        da = abin - a_f
        ri = r_f.astype(np.int64) + 1  # shift into the padded 6x6 grid
        ci = c_f.astype(np.int64) + 1
        ai = a_f.astype(np.int64)
        # all eight trilinear targets are constant offsets from this base
        # index, except the orientation wrap which needs its own array
        flat0 = (kflat * per_kp + ri * (pad * nbins)) + ci * nbins
        ai1 = ai + 1
        ai1[ai1 == nbins] = 0
        acc = np.zeros(idx.size * per_kp)
        w_r = (wgt * (1 - dr), wgt * dr)
        for br in (0, 1):
            wr = w_r[br]
            row_off = br * (pad * nbins)
            for bc in (0, 1):
                wrc = wr * (dc if bc else 1 - dc)
                off = row_off + bc * nbins
                acc += np.bincount(
                    flat0 + (ai + off), weights=wrc * (1 - da), minlength=acc.size
                )
                acc += np.bincount(
                    flat0 + (ai1 + off), weights=wrc * da, minlength=acc.size
                )
        acc = acc.reshape(idx.size, pad, pad, nbins)[:, 1 : cells + 1, 1 : cells + 1, :]
        flat = acc.reshape(idx.size, cells * cells * nbins)
        norms = np.linalg.norm(flat, axis=1)
        good = norms > 1e-12
        v = flat[good] / norms[good, None]
        np.minimum(v, _DESC_CLAMP, out=v)
        norms2 = np.linalg.norm(v, axis=1)
        good2 = norms2 > 1e-12
        v = v[good2] / norms2[good2, None]
        for i, vec in zip(idx[good][good2], v):
            vectors[i] = vec
    return vectors


def compute_descriptor(
    kp: Keypoint, orientation: float, ss: ScaleSpace
) -> KeypointDescriptor | None:
    """Descriptor of one oriented keypoint, or None when skipped.

    Skips keypoints whose rotated support window leaves the image and
    degenerate all-constant neighborhoods (zero gradient energy).
    """
    vec = _descriptor_batch(ss, [(kp, orientation)])[0]
    if vec is None:
        return None
    return KeypointDescriptor(keypoint=kp, orientation=orientation, vector=vec)


def extract(img: np.ndarray, cfg: SiftConfig | None = None) -> list[KeypointDescriptor]:
    """Full pipeline: scale space, DoG, extrema, refinement, orientation,
    descriptors. Deterministic for fixed (image, config)."""
    cfg = cfg or SiftConfig()
    ss = build_scale_space(img, cfg)
    dog = build_dog(ss)
    cands = detect_extrema(dog)
    kps = refine_keypoints(cands, dog, cfg)
    hists, ok = _orientation_histograms(ss, kps)
    oriented = []
    for i, kp in enumerate(kps):
        if not ok[i]:
            continue
        for th in _histogram_peaks(hists[i]):
            oriented.append((kp, th))
    vectors = _descriptor_batch(ss, oriented)
    return [
        KeypointDescriptor(keypoint=kp, orientation=th, vector=vec)
        for (kp, th), vec in zip(oriented, vectors)
        if vec is not None
    ]


def dump_descriptors_csv(descriptors: list[KeypointDescriptor], path) -> None:
    """Write descriptors as CSV: x,y,scale,orientation then the 128 values."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["x", "y", "scale", "orientation"] + [f"v{i:03d}" for i in range(128)]
        )
        for d in descriptors:
            kp = d.keypoint
            writer.writerow(
                [f"{kp.x:.6f}", f"{kp.y:.6f}", f"{kp.scale:.6f}", f"{d.orientation:.6f}"]
                + [f"{v:.9g}" for v in d.vector]
            )


def load_descriptors_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a descriptor CSV: (n, 4) keypoint metadata and (n, 128) vectors."""
    meta, vecs = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != 132:
            raise ArgumentError(f"descriptor CSV must have 132 columns, got {len(header)}")
        for row in reader:
            meta.append([float(v) for v in row[:4]])
            vecs.append([float(v) for v in row[4:]])
    return (
        np.array(meta).reshape(-1, 4),
        np.array(vecs).reshape(-1, 128),
    )
