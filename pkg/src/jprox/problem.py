"""The N-block problem model.

A problem is ``min sum_i f_i(x_i)`` subject to the coupling constraint
``sum_i A_i x_i = c``.  This module holds the block objective variants,
the problem container, evaluation and optimality diagnostics, and the
JSON serialization of problem data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence, Union

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite
from .linalg import min_eigenvalue_sym, require_symmetric


def log1pexp(t: float) -> float:
    """``log(1 + exp(t))`` evaluated without overflow for any finite ``t``."""
    t = float(t)
    return max(t, 0.0) + math.log1p(math.exp(-abs(t)))


def sigmoid(t: float) -> float:
    """``1 / (1 + exp(-t))`` evaluated without overflow for any finite ``t``."""
    t = float(t)
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _as_vector(x, n: int | None = None, name: str = "vector") -> np.ndarray:
    x = np.asarray(x, dtype=float).reshape(-1)
    if n is not None and x.shape[0] != n:
        raise DimensionMismatch(f"{name}: expected length {n}, got {x.shape[0]}")
    return x


@dataclass(frozen=True)
class QuadraticBlock:
    """Strongly convex quadratic ``0.5 * x' H x + q' x`` with symmetric PD ``H``."""

    H: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        H = require_symmetric(self.H, "QuadraticBlock.H")
        q = _as_vector(self.q, H.shape[0], "QuadraticBlock.q")
        if min_eigenvalue_sym(H) <= 0.0:
            raise NotPositiveDefinite("QuadraticBlock.H must be positive definite")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "q", _frozen(q))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    def value(self, x: np.ndarray) -> float:
        return float(0.5 * x @ (self.H @ x) + self.q @ x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.H @ x + self.q


@dataclass(frozen=True)
class LogisticQuadBlock:
    """Scalar objective ``0.5*a*(x - cshift)^2 + log(1 + exp(b*(x - dshift)))``.

    The logistic term is evaluated in overflow-safe form, so value, gradient
    and curvature stay finite for any finite ``x`` even when ``|b*(x-dshift)|``
    transiently exceeds several hundred during a solve.
    """

    a: float
    b: float
    cshift: float
    dshift: float

    def __post_init__(self):
        vals = (self.a, self.b, self.cshift, self.dshift)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("LogisticQuadBlock coefficients must be finite")
        if self.a < 0.0:
            raise ValueError("LogisticQuadBlock.a must be nonnegative")

    @property
    def dim(self) -> int:
        return 1

    def value(self, x: np.ndarray) -> float:
        x0 = float(x[0])
        return 0.5 * self.a * (x0 - self.cshift) ** 2 + log1pexp(self.b * (x0 - self.dshift))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x0 = float(x[0])
        g = self.a * (x0 - self.cshift) + self.b * sigmoid(self.b * (x0 - self.dshift))
        return np.array([g])

    def curvature(self, x0: float) -> float:
        """Second derivative ``a + b^2 * s * (1 - s)``; bounded by ``a + b^2/4``."""
        s = sigmoid(self.b * (x0 - self.dshift))
        return self.a + self.b * self.b * s * (1.0 - s)


@dataclass(frozen=True)
class GenericSmooth:
    """Caller-supplied smooth block with reported smoothness constants.

    ``lipschitz`` is the gradient Lipschitz constant and ``strong_convexity``
    the modulus in the convention ``f(y) >= f(x) + <grad f(x), y-x> +
    strong_convexity * ||y-x||^2`` (no 1/2 factor).  These cannot be estimated
    from oracles, so the caller must report them for certification.
    """

    dim: int
    value_fn: Callable[[np.ndarray], float]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    lipschitz: float
    strong_convexity: float

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("GenericSmooth.dim must be at least 1")

    def value(self, x: np.ndarray) -> float:
        return float(self.value_fn(x))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return _as_vector(self.gradient_fn(x), self.dim, "GenericSmooth.gradient")


BlockObjective = Union[QuadraticBlock, LogisticQuadBlock, GenericSmooth]


@dataclass(frozen=True)
class BlockProblem:
    """Immutable N-block problem: objectives, coupling matrices and right-hand side."""

    objectives: tuple
    A: tuple
    c: np.ndarray

    def __post_init__(self):
        objectives = tuple(self.objectives)
        if not objectives:
            raise ValueError("BlockProblem needs at least one block")
        A = tuple(_frozen(np.asarray(Ai, dtype=float)) for Ai in self.A)
        if len(A) != len(objectives):
            raise DimensionMismatch(
                f"{len(objectives)} objectives but {len(A)} coupling matrices"
            )
        m = A[0].shape[0]
        for i, (f, Ai) in enumerate(zip(objectives, A)):
            if Ai.ndim != 2:
                raise DimensionMismatch(f"A[{i}] must be 2-d, got shape {Ai.shape}")
            if Ai.shape[0] != m:
                raise DimensionMismatch(f"A[{i}] has {Ai.shape[0]} rows, expected {m}")
            if Ai.shape[1] != f.dim:
                raise DimensionMismatch(
                    f"A[{i}] has {Ai.shape[1]} columns but block {i} has dimension {f.dim}"
                )
            if not np.all(np.isfinite(Ai)):
                raise ValueError(f"A[{i}] entries must be finite")
        c = _frozen(_as_vector(self.c, m, "BlockProblem.c"))
        object.__setattr__(self, "objectives", objectives)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "c", c)

    @property
    def N(self) -> int:
        return len(self.objectives)

    @property
    def m(self) -> int:
        return self.c.shape[0]

    @property
    def dims(self) -> tuple:
        return tuple(f.dim for f in self.objectives)

    def stacked_A(self) -> np.ndarray:
        """The horizontal concatenation ``[A_1, ..., A_N]`` of shape (m, sum n_i)."""
        return np.hstack(self.A)


@dataclass
class PrimalDualPoint:
    """Primal blocks ``x_1..x_N`` together with the multiplier ``lam``."""

    x: list
    lam: np.ndarray

    def __post_init__(self):
        self.x = [np.asarray(xi, dtype=float).reshape(-1) for xi in self.x]
        self.lam = np.asarray(self.lam, dtype=float).reshape(-1)

    def copy(self) -> "PrimalDualPoint":
        return PrimalDualPoint([xi.copy() for xi in self.x], self.lam.copy())

    @classmethod
    def zeros(cls, problem: BlockProblem) -> "PrimalDualPoint":
        return cls([np.zeros(n) for n in problem.dims], np.zeros(problem.m))

    def magnitude(self) -> float:
        """Largest block or multiplier norm; used by the divergence guard."""
        norms = [float(np.linalg.norm(xi)) for xi in self.x]
        norms.append(float(np.linalg.norm(self.lam)))
        return max(norms)


def check_point(problem: BlockProblem, u: PrimalDualPoint) -> None:
    if len(u.x) != problem.N:
        raise DimensionMismatch(f"point has {len(u.x)} blocks, problem has {problem.N}")
    for i, (xi, n) in enumerate(zip(u.x, problem.dims)):
        if xi.shape[0] != n:
            raise DimensionMismatch(f"block {i}: length {xi.shape[0]}, expected {n}")
    if u.lam.shape[0] != problem.m:
        raise DimensionMismatch(
            f"multiplier length {u.lam.shape[0]}, expected {problem.m}"
        )


def block_value(f: BlockObjective, x) -> float:
    """Objective value of a single block."""
    x = _as_vector(x, f.dim, "block_value input")
    v = f.value(x)
    if not math.isfinite(v):
        raise ValueError("block value is not finite")
    return v


def block_gradient(f: BlockObjective, x) -> np.ndarray:
    """Gradient of a single block objective."""
    x = _as_vector(x, f.dim, "block_gradient input")
    return np.asarray(f.gradient(x), dtype=float).reshape(-1)


def constraint_residual(problem: BlockProblem, x: Sequence[np.ndarray]) -> np.ndarray:
    """``sum_i A_i x_i - c``, accumulated in block index order."""
    if len(x) != problem.N:
        raise DimensionMismatch(f"{len(x)} blocks given, problem has {problem.N}")
    g = np.zeros(problem.m)
    for Ai, xi in zip(problem.A, x):
        xi = _as_vector(xi, Ai.shape[1], "constraint_residual block")
        g += Ai @ xi
    return g - problem.c


def kkt_residual(problem: BlockProblem, u: PrimalDualPoint) -> float:
    """Optimality defect: worst block stationarity gap or feasibility gap.

    Zero exactly at a primal-dual solution: every block satisfies
    ``grad f_i(x_i) = A_i' lam`` and the coupling constraint holds.
    """
    check_point(problem, u)
    worst = float(np.linalg.norm(constraint_residual(problem, u.x)))
    for f, Ai, xi in zip(problem.objectives, problem.A, u.x):
        gap = float(np.linalg.norm(block_gradient(f, xi) - Ai.T @ u.lam))
        worst = max(worst, gap)
    return worst


def augmented_lagrangian(problem: BlockProblem, u: PrimalDualPoint, rho: float) -> float:
    """``sum_i f_i(x_i) - <lam, r> + (rho/2) ||r||^2`` with ``r`` the constraint residual.

    ``rho`` may be zero, which evaluates the plain Lagrangian.
    """
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    check_point(problem, u)
    r = constraint_residual(problem, u.x)
    total = 0.0
    for f, xi in zip(problem.objectives, u.x):
        total += block_value(f, xi)
    return total - float(u.lam @ r) + 0.5 * rho * float(r @ r)


# -- JSON serialization -------------------------------------------------------
#
# Matrices are stored as nested row arrays of decimal numbers.  Python's json
# module emits shortest round-trip representations, so write -> read is
# value-exact for every finite float64.

def _block_to_dict(f: BlockObjective, Ai: np.ndarray) -> dict:
    if isinstance(f, QuadraticBlock):
        return {
            "type": "quadratic",
            "H": f.H.tolist(),
            "q": f.q.tolist(),
            "A": Ai.tolist(),
        }
    if isinstance(f, LogisticQuadBlock):
        return {
            "type": "logistic_quad",
            "a": f.a,
            "b": f.b,
            "cshift": f.cshift,
            "dshift": f.dshift,
            "A": Ai.tolist(),
        }
    raise ValueError(f"block type {type(f).__name__} is not serializable")


def _block_from_dict(d: dict) -> tuple:
    kind = d.get("type")
    if kind == "quadratic":
        return QuadraticBlock(np.array(d["H"], dtype=float), np.array(d["q"], dtype=float)), np.array(d["A"], dtype=float)
    if kind == "logistic_quad":
        return (
            LogisticQuadBlock(float(d["a"]), float(d["b"]), float(d["cshift"]), float(d["dshift"])),
            np.array(d["A"], dtype=float),
        )
    raise ValueError(f"unknown block type {kind!r}")


def problem_to_dict(problem: BlockProblem) -> dict:
    return {
        "N": problem.N,
        "m": problem.m,
        "c": problem.c.tolist(),
        "blocks": [_block_to_dict(f, Ai) for f, Ai in zip(problem.objectives, problem.A)],
    }


def problem_from_dict(d: dict) -> BlockProblem:
    blocks = [_block_from_dict(b) for b in d["blocks"]]
    problem = BlockProblem(
        tuple(f for f, _ in blocks),
        tuple(Ai for _, Ai in blocks),
        np.array(d["c"], dtype=float),
    )
    if problem.N != int(d["N"]) or problem.m != int(d["m"]):
        raise ValueError("problem dimensions disagree with the N/m fields")
    return problem


def save_problem(problem: BlockProblem, path) -> None:
    Path(path).write_text(json.dumps(problem_to_dict(problem)), encoding="utf-8")


def load_problem(path) -> BlockProblem:
    return problem_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
