"""Euclidean projection onto the probability simplex."""

from __future__ import annotations

import numpy as np

__all__ = ["project_simplex", "is_on_simplex"]


def project_simplex(v) -> np.ndarray:
    """Project ``v`` onto ``{w : w >= 0, sum(w) = 1}``.

    Sort-and-threshold rule: with ``u`` sorted in decreasing order, ``rho`` is
    the largest index with ``u_rho - (sum_{i<=rho} u_i - 1) / rho > 0`` and the
    result is ``max(v - theta, 0)`` for ``theta = (sum_{i<=rho} u_i - 1) / rho``.

    Parameters
    ----------
    v : array_like, shape (n,)
        Finite real vector, ``n >= 1``.

    Returns
    -------
    ndarray, shape (n,)
        The unique closest point of the simplex.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.shape[0] == 0:
        raise ValueError(f"expected a nonempty vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    # points already on the simplex (up to summation rounding) are fixed points;
    # this makes the projection exactly idempotent
    if _on_simplex_to_rounding(v):
        return v.copy()
    w = _threshold(v)
    # a threshold computed at large magnitude can leave the sum a few ulps of
    # that magnitude away from one; a second pass at unit scale settles it
    if not _on_simplex_to_rounding(w):
        w = _threshold(w)
    return w


def _on_simplex_to_rounding(v: np.ndarray) -> bool:
    return bool(v.min() >= 0.0 and abs(v.sum() - 1.0) <= 4.0 * v.shape[0] * np.finfo(float).eps)


def _threshold(v: np.ndarray) -> np.ndarray:
    n = v.shape[0]
    # stable sort on the negated values: descending, ties in index order
    u = v[np.argsort(-v, kind="stable")]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, n + 1)
    rho = np.flatnonzero(u - css / k > 0)[-1]
    theta = css[rho] / (rho + 1)
    return np.maximum(v - theta, 0.0)


def is_on_simplex(w, atol: float = 1e-12) -> bool:
    w = np.asarray(w, dtype=float)
    return bool(w.ndim == 1 and w.size > 0 and np.all(w >= 0) and abs(w.sum() - 1.0) <= atol)
