"""One-dimensional and sliced Wasserstein-1 distances between samples.

``w1_1d`` treats two samples as empirical distributions: equal sizes reduce
to the mean absolute difference of the sorted values; unequal sizes use the
piecewise-constant quantile coupling on the merged probability grid.
``sliced_w`` averages ``w1_1d`` over projections onto random unit directions.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

__all__ = ["w1_1d", "w1_1d_grad", "unit_directions", "sliced_w", "projected_w1"]


def w1_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Wasserstein-1 distance between two 1-D samples (any sizes >= 1)."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    na, nb = a.size, b.size
    if na == 0 or nb == 0:
        raise DimensionError("w1_1d needs non-empty samples")
    if na == nb:
        return float(np.mean(np.abs(a - b)))
    edges = np.concatenate(
        [[0.0], np.sort(np.concatenate([np.arange(1, na) / na, np.arange(1, nb) / nb])), [1.0]]
    )
    widths = np.diff(edges)
    mids = (edges[:-1] + edges[1:]) / 2.0
    ia = np.minimum((mids * na).astype(np.int64), na - 1)
    ib = np.minimum((mids * nb).astype(np.int64), nb - 1)
    return float(np.sum(widths * np.abs(a[ia] - b[ib])))


def w1_1d_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """``w1_1d(a, b)`` plus its subgradient in the entries of ``a``.

    Equal sizes only (the case used by pathwise localization gradients).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DimensionError("w1_1d_grad needs equal sample sizes")
    order = np.argsort(a, kind="stable")
    diffs = a[order] - np.sort(b)
    grad = np.zeros_like(a)
    grad[order] = np.sign(diffs) / a.size
    return float(np.mean(np.abs(diffs))), grad


def unit_directions(k: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """(k, dim) rows uniform on the unit sphere (normalized Gaussians)."""
    if k < 1 or dim < 1:
        raise DimensionError("need k >= 1 and dim >= 1")
    vecs = rng.standard_normal((k, dim))
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    # a zero draw has probability zero; guard anyway
    norms[norms == 0.0] = 1.0
    return vecs / norms


def projected_w1(a: np.ndarray, b: np.ndarray, directions: np.ndarray) -> np.ndarray:
    """w1_1d between the projections of two point sets, per direction."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if a.shape[1] != b.shape[1] or a.shape[1] != directions.shape[1]:
        raise DimensionError("point sets and directions must share the last dim")
    pa = a @ directions.T  # (na, K)
    pb = b @ directions.T
    if a.shape[0] == b.shape[0]:
        return np.mean(np.abs(np.sort(pa, axis=0) - np.sort(pb, axis=0)), axis=0)
    return np.array([w1_1d(pa[:, k], pb[:, k]) for k in range(directions.shape[0])])


def sliced_w(a: np.ndarray, b: np.ndarray, directions: np.ndarray) -> float:
    """Average projected Wasserstein-1 over the given unit directions."""
    return float(np.mean(projected_w1(a, b, directions)))
