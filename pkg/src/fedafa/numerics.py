"""Vector and scalar primitives shared by the aggregation rules.

Model parameters travel around as flat ``float64`` numpy arrays
(``ParamVector``). All aggregation statistics are computed in 64-bit.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

ParamVector = np.ndarray

# Below this norm a vector has no usable direction.
EPS_NORM = 1e-12


def param_vector(values) -> ParamVector:
    """Build a validated, read-only copy of ``values`` as a 1-D float64 array."""
    vec = np.array(values, dtype=np.float64).ravel()
    if vec.size == 0:
        raise ValueError("parameter vector must have positive length")
    if not np.all(np.isfinite(vec)):
        raise ValueError("parameter vector contains NaN or Inf")
    vec.flags.writeable = False
    return vec


def _check_same_dim(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")


def cosine_similarity(a: ParamVector, b: ParamVector) -> float:
    """Cosine of the angle between ``a`` and ``b``.

    Returns 0.0 when either vector has norm below ``EPS_NORM``; the result
    is clamped to [-1, 1] to absorb rounding.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_same_dim(a, b)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na < EPS_NORM or nb < EPS_NORM:
        return 0.0
    cos = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, cos))


def cosine_similarities(rows: np.ndarray, v: ParamVector, row_norms: np.ndarray | None = None) -> np.ndarray:
    """Cosine similarity of every row of ``rows`` (K x d) with ``v``.

    Same conventions as :func:`cosine_similarity`; ``row_norms`` may be
    passed in when the caller already has them.
    """
    rows = np.asarray(rows, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1:] != v.shape:
        raise ValueError(f"dimension mismatch: rows {rows.shape} vs vector {v.shape}")
    if row_norms is None:
        row_norms = np.sqrt(np.einsum("ij,ij->i", rows, rows))
    nv = float(np.sqrt(np.dot(v, v)))
    if nv < EPS_NORM:
        return np.zeros(rows.shape[0])
    ok = row_norms >= EPS_NORM
    dots = rows @ v
    out = np.where(ok, dots / np.where(ok, row_norms, 1.0) / nv, 0.0)
    return np.clip(out, -1.0, 1.0)


def weighted_average(vectors: Sequence[ParamVector], weights: Sequence[float]) -> ParamVector:
    """Normalized weighted sum ``sum_k w_k v_k / sum_k w_k``.

    The accumulation runs in input order so the result does not depend on
    any threading inside the BLAS.

    Raises:
        ValueError: empty input, mismatched lengths or dimensions, negative
            weights, or a non-positive weight sum.
    """
    if len(vectors) == 0:
        raise ValueError("weighted_average of an empty list")
    if len(vectors) != len(weights):
        raise ValueError(f"{len(vectors)} vectors but {len(weights)} weights")
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    total = float(np.sum(w))
    if total <= 0.0:
        raise ValueError("weights sum to zero")

    first = np.asarray(vectors[0], dtype=np.float64)
    out = np.zeros_like(first)
    for vec, wk in zip(vectors, w):
        vec = np.asarray(vec, dtype=np.float64)
        _check_same_dim(first, vec)
        if wk != 0.0:
            out += (wk / total) * vec
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("weighted average is not finite")
    return out


def median(values, axis: int | None = None):
    """Median via selection (``np.partition``, introselect), not a full sort.

    Even counts return the mean of the two middle order statistics. With
    ``axis`` given, ``values`` is an array and the median is taken along that
    axis (used for coordinate-wise aggregation).
    """
    arr = np.asarray(values, dtype=np.float64)
    if axis is None:
        arr = arr.ravel()
        axis = 0
    n = arr.shape[axis]
    if n == 0:
        raise ValueError("median of an empty sequence")
    mid = n // 2
    if n % 2 == 1:
        part = np.partition(arr, mid, axis=axis)
        res = np.take(part, mid, axis=axis)
    else:
        part = np.partition(arr, (mid - 1, mid), axis=axis)
        res = 0.5 * (np.take(part, mid - 1, axis=axis) + np.take(part, mid, axis=axis))
    return float(res) if np.ndim(res) == 0 else res


def mean_std(values) -> tuple[float, float]:
    """Arithmetic mean and population (1/n) standard deviation."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("mean_std of an empty sequence")
    mu = float(np.mean(arr))
    return mu, float(np.sqrt(np.mean((arr - mu) ** 2)))
