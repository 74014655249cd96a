"""Dense float64 kernels used throughout the package.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64;
``as_matrix`` / ``as_vector`` are the validating constructors.  Every kernel
checks shapes eagerly and never returns NaN or Inf.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonFiniteValue, NonPositiveTemperature, ZeroRow

ZERO_ROW_TOL = 1e-12


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return a


def as_vector(v, name: str = "vector") -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"{name} contains NaN or Inf")
    return a


def _row_norms(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(norms <= ZERO_ROW_TOL):
        raise ZeroRow(f"row norm <= {ZERO_ROW_TOL}")
    return norms


def l2_normalize_rows(m) -> np.ndarray:
    """Scale every row (last axis) to unit L2 norm.

    Accepts stacks of matrices as well; the last axis is always the feature axis.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim < 2:
        raise DimensionMismatch(f"expected at least 2-D input, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue("input contains NaN or Inf")
    return a / _row_norms(a)


def cosine_similarity(a, b) -> np.ndarray:
    """Pairwise cosine similarity between the rows of ``a`` (L x d) and ``b`` (N x d)."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    out = l2_normalize_rows(a) @ l2_normalize_rows(b).T
    return np.clip(out, -1.0, 1.0)


def tempered_softmax(v, tau: float, axis: int = -1) -> np.ndarray:
    """``exp(v / tau)`` normalised along ``axis``, stabilised by max-subtraction."""
    if not tau > 0:
        raise NonPositiveTemperature(f"tau must be positive, got {tau}")
    z = np.asarray(v, dtype=np.float64) / tau
    if not np.all(np.isfinite(z)):
        raise NonFiniteValue("softmax input contains NaN or Inf")
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def pairwise_noisy_prob(s_clean, s_noisy, tau: float) -> np.ndarray:
    """Two-way softmax weight of the noisy score: exp(sn/t) / (exp(sc/t) + exp(sn/t))."""
    if not tau > 0:
        raise NonPositiveTemperature(f"tau must be positive, got {tau}")
    sc = np.asarray(s_clean, dtype=np.float64) / tau
    sn = np.asarray(s_noisy, dtype=np.float64) / tau
    m = np.maximum(sc, sn)
    en = np.exp(sn - m)
    return en / (en + np.exp(sc - m))
