"""Shared fixtures and independent oracles for the test suite."""

import numpy as np


def blob_image(size=200, blobs=35, seed=0, background=0.5):
    """Textured fixture: many Gaussian bumps of mixed polarity and width."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = np.full((size, size), background)
    margin = size // 10
    for _ in range(blobs):
        r = rng.uniform(margin, size - margin)
        c = rng.uniform(margin, size - margin)
        s = rng.uniform(1.5, 6.0)
        a = rng.uniform(0.25, 0.5) * rng.choice([-1.0, 1.0])
        img += a * np.exp(-((yy - r) ** 2 + (xx - c) ** 2) / (2 * s * s))
    return np.clip(img, 0.0, 1.0)


def single_blob(size=64, center=(32.0, 32.0), sigma=4.0, amplitude=0.8):
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    cy, cx = center[1], center[0]
    return amplitude * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))


def brute_force_extrema(dog):
    """Exhaustive 26-neighbor scan over every octave stack."""
    found = []
    for o, stack in enumerate(dog.octaves):
        n_levels, h, w = stack.shape
        for l in range(1, n_levels - 1):
            for r in range(1, h - 1):
                for c in range(1, w - 1):
                    v = stack[l, r, c]
                    cube = stack[l - 1 : l + 2, r - 1 : r + 2, c - 1 : c + 2].ravel()
                    others = np.delete(cube, 13)
                    if v > others.max() or v < others.min():
                        found.append((o, l, r, c))
    return found


def mutual_nearest_matches(desc_a, desc_b):
    """Pairs (i, j) where a[i] and b[j] are each other's nearest descriptor."""
    a = np.stack([d.vector for d in desc_a])
    b = np.stack([d.vector for d in desc_b])
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        - 2.0 * (a @ b.T)
        + np.sum(b * b, axis=1)[None, :]
    )
    ab = np.argmin(d2, axis=1)
    ba = np.argmin(d2, axis=0)
    return [(i, j) for i, j in enumerate(ab) if ba[j] == i]
