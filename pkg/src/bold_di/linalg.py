"""Dense linear algebra primitives for small matrices.

Pseudoinverse and eigendecomposition are SVD/LAPACK-backed (via numpy) with
the conditioning and ordering policies this toolkit relies on:

* ``pinv`` truncates singular values below ``max(rows, cols) * eps * sigma_max``.
* ``eig`` returns eigenpairs sorted by (|lambda| descending, |Arg| ascending,
  Arg ascending, real part ascending), which keeps complex-conjugate pairs
  adjacent, with each eigenvector unit-normalized and phase-rotated so its
  largest-modulus entry is real positive.  Output is therefore deterministic.

All functions are pure; matrices larger than 1024x1024 are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalFailureError

MAX_DIM = 1024

_EIG_RESIDUAL_TOL = 1e-8


def _as_matrix(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def pinv_with_rank(a) -> tuple[np.ndarray, int, float]:
    """Moore-Penrose pseudoinverse plus the numerical rank and a condition hint.

    The condition hint is sigma_max / sigma_min over the retained spectrum
    (``inf`` for the zero matrix).
    """
    a = _as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"SVD did not converge: {exc}") from exc
    if s.size == 0 or s[0] == 0.0:
        return np.zeros((a.shape[1], a.shape[0])), 0, math.inf
    cutoff = max(a.shape) * np.finfo(float).eps * s[0]
    rank = int(np.sum(s > cutoff))
    if rank == 0:
        return np.zeros((a.shape[1], a.shape[0])), 0, math.inf
    inv = vt[:rank].T @ (u[:, :rank] / s[:rank]).T
    return inv, rank, float(s[0] / s[rank - 1])


def pinv(a) -> np.ndarray:
    """Moore-Penrose pseudoinverse via SVD with small singular values truncated."""
    return pinv_with_rank(a)[0]


@dataclass(frozen=True)
class EigResult:
    """Eigendecomposition with deterministic ordering.

    ``values[k]`` pairs with column ``vectors[:, k]``.  ``phi_condition`` is the
    2-norm condition number of the eigenvector matrix; large values flag
    near-defective input (callers decide how to handle it).
    """

    values: np.ndarray
    vectors: np.ndarray
    phi_condition: float


def eig(a) -> EigResult:
    """Eigendecomposition of a square real matrix, deterministically ordered."""
    a = _as_matrix(a)
    m, n = a.shape
    if m != n:
        raise InvalidInputError(f"eig requires a square matrix, got {m}x{n}")
    if m > MAX_DIM:
        raise InvalidInputError(f"eig supports matrices up to {MAX_DIM}x{MAX_DIM}, got {m}")
    try:
        values, vectors = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"eigendecomposition did not converge: {exc}") from exc

    values = values.astype(complex)
    vectors = vectors.astype(complex)

    mag = np.abs(values)
    arg = np.arctan2(values.imag, values.real)
    order = np.lexsort((values.real, arg, np.abs(arg), -mag))
    values = values[order]
    vectors = vectors[:, order]

    # Canonical phase: largest-modulus entry of each eigenvector made real positive.
    for k in range(n):
        col = vectors[:, k]
        idx = int(np.argmax(np.abs(col)))
        pivot = col[idx]
        if abs(pivot) > 0:
            col = col * (pivot.conjugate() / abs(pivot))
        norm = np.linalg.norm(col)
        if norm > 0:
            col = col / norm
        vectors[:, k] = col

    a_norm = np.linalg.norm(a)
    if a_norm > 0:
        residual = np.linalg.norm(a @ vectors - vectors * values) / a_norm
        if not residual < _EIG_RESIDUAL_TOL:
            raise NumericalFailureError(
                f"eigendecomposition residual {residual:.3e} exceeds {_EIG_RESIDUAL_TOL:.0e}"
            )

    try:
        cond = float(np.linalg.cond(vectors))
    except np.linalg.LinAlgError:
        cond = math.inf
    if not math.isfinite(cond):
        cond = math.inf
    return EigResult(values=values, vectors=vectors, phi_condition=cond)


def polar(lam: complex) -> tuple[float, float]:
    """Magnitude and argument of a complex scalar, argument in (-pi, pi].

    ``polar(0)`` returns ``(0.0, 0.0)`` by convention.
    """
    lam = complex(lam)
    if not (math.isfinite(lam.real) and math.isfinite(lam.imag)):
        raise InvalidInputError("polar requires finite components")
    magnitude = math.hypot(lam.real, lam.imag)
    if magnitude == 0.0:
        return 0.0, 0.0
    argument = math.atan2(lam.imag, lam.real)
    if argument == -math.pi:
        argument = math.pi
    return magnitude, argument
