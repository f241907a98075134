"""Dense SPD kernels used by the pruning engine.

Everything runs in float64. Nothing here adds dampening: a singular or
indefinite input raises ``NotPositiveDefinite`` and the caller decides how
much ridge to add.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite

SYMMETRY_TOL = 1e-9


@dataclass(frozen=True)
class PsdFactor:
    lower: np.ndarray

    @property
    def dim(self) -> int:
        return self.lower.shape[0]


def _as_square(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    return a


def cholesky(a) -> PsdFactor:
    """Lower-triangular ``L`` with ``L @ L.T == a``."""
    a = _as_square(a)
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise NotPositiveDefinite("matrix is not symmetric")
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("non-positive pivot; increase dampening") from exc
    if np.any(np.diag(lower) <= 0.0) or not np.all(np.isfinite(lower)):
        raise NotPositiveDefinite("non-positive pivot; increase dampening")
    return PsdFactor(lower)


def psd_inverse(a) -> np.ndarray:
    """Inverse of a positive-definite matrix through its Cholesky factor."""
    factor = cholesky(a)
    n = factor.dim
    inv = cho_solve((factor.lower, True), np.eye(n))
    return 0.5 * (inv + inv.T)


def cholesky_solve(factor: PsdFactor, rhs) -> np.ndarray:
    y = solve_triangular(factor.lower, np.asarray(rhs, dtype=np.float64), lower=True)
    return solve_triangular(factor.lower.T, y, lower=False)


def masked_least_squares(x, target, keep=None, damp: float = 0.0) -> np.ndarray:
    """Least-squares weights over the kept input features.

    ``x`` is (features, samples); ``target`` holds one value per sample
    (typically ``w @ x`` for the dense row). Minimises
    ``||target - w_K @ x_K||^2`` over the rows ``K`` selected by ``keep``
    and returns a full-length vector with zeros on dropped features.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionMismatch("x must be 2-D (features x samples)")
    if target.shape != (x.shape[1],):
        raise DimensionMismatch(
            f"target has shape {target.shape}, expected ({x.shape[1]},)"
        )
    if keep is None:
        keep = np.ones(x.shape[0], dtype=bool)
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (x.shape[0],):
        raise DimensionMismatch("keep must have one flag per feature row")

    out = np.zeros(x.shape[0])
    if not keep.any():
        return out
    xk = x[keep]
    gram = xk @ xk.T
    if damp:
        gram = gram + damp * np.eye(gram.shape[0])
    out[keep] = cholesky_solve(cholesky(gram), xk @ target)
    return out
