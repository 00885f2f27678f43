"""Dense matrix primitives: SPD solves, extremal eigenvalues, singular values.

Everything here is a pure function of float64 arrays and uses deterministic
dense factorizations (LAPACK via numpy/scipy), so identical inputs always
produce identical outputs.  Problem sizes in this package are at most a few
hundred, where dense methods are both the simplest and the fastest option;
sparse formats and Krylov iterations are deliberately out of scope.
"""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .errors import NotPositiveDefinite, NotSymmetric

#: Relative tolerance for symmetry checks: max |S_ij - S_ji| <= tol * (1 + max |S_ij|).
SYMMETRY_RTOL = 1e-10

#: Target relative residual of SPD solves: ||Mx - b|| <= tol * (1 + ||b||).
SPD_RESIDUAL_RTOL = 1e-10

#: A stacked singular value below this fraction of the largest flags rank deficiency.
RANK_DEFICIENT_RTOL = 1e-12


def symmetry_defect(S: np.ndarray) -> float:
    """Largest absolute entry of ``S - S.T``."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0.0
    return float(np.max(np.abs(S - S.T)))


def require_symmetric(S, name: str = "matrix") -> np.ndarray:
    """Validate that ``S`` is square, finite and symmetric within tolerance.

    Returns ``S`` as a float64 array.  Raises :class:`NotSymmetric` when the
    asymmetry exceeds ``SYMMETRY_RTOL * (1 + max |S|)``; matrices fed to this
    package are explicitly symmetrized upstream, so a violation signals a bug
    rather than round-off.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise NotSymmetric(f"{name}: expected a square matrix, got shape {S.shape}")
    if S.size and not np.all(np.isfinite(S)):
        raise NotSymmetric(f"{name}: entries must be finite")
    bound = SYMMETRY_RTOL * (1.0 + (float(np.max(np.abs(S))) if S.size else 0.0))
    defect = symmetry_defect(S)
    if defect > bound:
        raise NotSymmetric(f"{name}: asymmetry {defect:.3e} exceeds tolerance {bound:.3e}")
    return S


class SpdFactor:
    """Cholesky factorization of a symmetric positive-definite matrix.

    The factorization is computed once and can be reused for many right-hand
    sides.  :meth:`solve` applies a single step of iterative refinement when
    the raw solution misses the target residual, which keeps
    ``||Mx - b|| <= SPD_RESIDUAL_RTOL * (1 + ||b||)`` on any reasonably
    conditioned input.
    """

    def __init__(self, M, name: str = "matrix"):
        M = require_symmetric(M, name)
        self._M = M
        try:
            self._factor = scipy.linalg.cho_factor(M, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            raise NotPositiveDefinite(f"{name}: {exc}") from exc

    @property
    def matrix(self) -> np.ndarray:
        return self._M

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        x = scipy.linalg.cho_solve(self._factor, b, check_finite=False)
        resid = b - self._M @ x
        target = 0.5 * SPD_RESIDUAL_RTOL * (1.0 + float(np.linalg.norm(b)))
        if float(np.linalg.norm(resid)) > target:
            x = x + scipy.linalg.cho_solve(self._factor, resid, check_finite=False)
        return x


def solve_spd(M, b) -> np.ndarray:
    """Solve ``M x = b`` for symmetric positive-definite ``M``.

    Raises :class:`NotPositiveDefinite` when the Cholesky factorization
    encounters a non-positive pivot.
    """
    return SpdFactor(M, "solve_spd").solve(b)


def min_eigenvalue_sym(S, name: str = "matrix") -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    S = require_symmetric(S, name)
    if S.shape[0] == 0:
        raise ValueError(f"{name}: empty matrix has no eigenvalues")
    # Symmetrize so round-off in the input cannot leak into the result.
    w = np.linalg.eigvalsh(0.5 * (S + S.T))
    return float(w[0])


def spectral_norm(A) -> float:
    """Largest singular value of a (possibly rectangular) matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.size == 0:
        raise ValueError(f"spectral_norm: expected a nonempty 2-d array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("spectral_norm: entries must be finite")
    return float(np.linalg.svd(A, compute_uv=False)[0])


class StackedSingularValue(NamedTuple):
    """Smallest singular value of a vertically stacked transpose block matrix."""

    value: float
    rank_deficient: bool


def smallest_singular_value_stacked(blocks: Sequence[np.ndarray]) -> StackedSingularValue:
    """Smallest singular value of ``[A_1.T; A_2.T; ...; A_N.T]``.

    Each block must have the same number of rows ``m``; the stack then has
    ``sum(n_i)`` rows and ``m`` columns.  The returned value is the smallest
    of the stack's ``min(sum(n_i), m)`` singular values.  When the stack has
    at least ``m`` rows this equals ``sqrt(min_eig(sum_i A_i @ A_i.T))``; it
    is the best constant ``c`` with ``sqrt(sum_i ||A_i.T y||^2) >= c ||y||``
    over the row space of the stack.

    ``rank_deficient`` is set when the value falls below
    ``RANK_DEFICIENT_RTOL`` times the largest singular value; the caller
    decides whether that is fatal.
    """
    if not blocks:
        raise ValueError("smallest_singular_value_stacked: need at least one block")
    mats = [np.asarray(A, dtype=float) for A in blocks]
    m = mats[0].shape[0]
    for idx, A in enumerate(mats):
        if A.ndim != 2 or A.shape[0] != m:
            raise ValueError(
                f"smallest_singular_value_stacked: block {idx} has shape {A.shape}, "
                f"expected {m} rows"
            )
    stack = np.vstack([A.T for A in mats])
    svals = np.linalg.svd(stack, compute_uv=False)
    value = float(svals[-1])
    return StackedSingularValue(value, bool(value <= RANK_DEFICIENT_RTOL * float(svals[0])))


def generalized_max_eigenvalue(M, Npd, name: str = "pencil") -> float:
    """Largest generalized eigenvalue of ``M v = t Npd v`` with ``Npd`` positive definite.

    Equals the largest eigenvalue of ``Npd^{-1/2} M Npd^{-1/2}``, i.e. the
    least ``t`` with ``M <= t * Npd`` in the semidefinite order.
    """
    M = require_symmetric(M, f"{name}: left matrix")
    Npd = require_symmetric(Npd, f"{name}: right matrix")
    if M.shape != Npd.shape:
        raise ValueError(f"{name}: shapes {M.shape} and {Npd.shape} differ")
    try:
        w = scipy.linalg.eigh(
            0.5 * (M + M.T), 0.5 * (Npd + Npd.T), eigvals_only=True, check_finite=False
        )
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"{name}: right matrix is not positive definite") from exc
    return float(w[-1])
