"""Benchmark generators, reference solutions, the convergence metric, and sweeps.

Two seeded problem families are provided: a linearly constrained quadratic
program with dense Gaussian data and a scalar resource-allocation problem
(quadratic plus softplus blocks sharing a single budget constraint).
Randomness is confined to ``numpy.random.default_rng(seed)``, so identical
(seed, config) pairs reproduce instances and traces bit for bit.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .certify import (
    Certificate,
    PhiWeights,
    ProblemConstants,
    RateFit,
    certify,
    estimate_constants,
    fallback_tau,
    fit_linear_rate,
    smallest_certified_tau,
)
from .errors import (
    DegenerateAfterRetries,
    DimensionMismatch,
    InsufficientData,
    JproxError,
    SingularKkt,
)
from .linalg import smallest_singular_value_stacked
from .problem import (
    BlockProblem,
    LogisticQuadBlock,
    PrimalDualPoint,
    QuadraticBlock,
    kkt_residual,
    problem_from_dict,
    problem_to_dict,
)
from .solvers import SolverParams, StandardProximal, materialize_policy, run

#: Generated stacks must clear this smallest singular value (kept as a hard
#: floor so downstream rank assumptions hold).
STACK_MIN_SV = 1e-8

#: Attempts to draw a non-degenerate coupling-matrix set before giving up.
GENERATION_RETRIES = 20

#: Spectral shift applied when repairing objective matrices to strict PD.
PD_SHIFT = 0.1


def _symmetrized_gaussian(rng: np.random.Generator, n: int) -> np.ndarray:
    B = rng.standard_normal((n, n))
    return 0.5 * (B + B.T)


def _repair_psd(S: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero (PSD repair, keeps the eigenbasis)."""
    w, V = np.linalg.eigh(S)
    M = (V * np.clip(w, 0.0, None)) @ V.T
    return 0.5 * (M + M.T)


def _repair_pd(S: np.ndarray, shift: float = PD_SHIFT) -> np.ndarray:
    """Reflect eigenvalues to ``|w| + shift`` (strict PD repair)."""
    w, V = np.linalg.eigh(S)
    M = (V * (np.abs(w) + shift)) @ V.T
    return 0.5 * (M + M.T)


@dataclass(frozen=True)
class LcqpInstance:
    """A generated quadratic instance with its constructed optimum."""

    problem: BlockProblem
    xstar: tuple
    lambdastar: np.ndarray
    seed: int
    proximal_source: tuple = ()

    def optimum(self) -> PrimalDualPoint:
        return PrimalDualPoint([xi.copy() for xi in self.xstar], self.lambdastar.copy())


@dataclass(frozen=True)
class ResourceAllocInstance:
    """A generated scalar resource-allocation instance."""

    problem: BlockProblem
    a: np.ndarray
    b: np.ndarray
    cshift: np.ndarray
    dshift: np.ndarray
    seed: int


Instance = Union[LcqpInstance, ResourceAllocInstance]


def generate_lcqp(N: int, m: int, n: int, seed: int) -> LcqpInstance:
    """Generate a seeded quadratic instance whose optimum is known by construction.

    Coupling matrices are i.i.d. standard normal, redrawn (up to 20 times)
    until the stacked transpose clears a smallest singular value of 1e-8.
    Objective matrices come from symmetrized Gaussian draws repaired to
    strict positive definiteness; a PSD companion matrix per block (same
    recipe, clipped at zero) is kept for explicit-proximal experiments.
    The optimum is planted: ``q_i = -H_i x_i* + A_i' lam*`` and
    ``c = sum_i A_i x_i*``.

    When the blocks provide fewer than ``m`` total columns, the multiplier
    is projected onto the range of the coupling map; outside that range no
    multiplier is reachable by any dual update, and the projected vector is
    the unique minimum-norm KKT multiplier.
    """
    if min(N, m, n) < 1:
        raise ValueError("N, m and n must be at least 1")
    rng = np.random.default_rng(seed)
    A = None
    for _ in range(GENERATION_RETRIES):
        cand = [rng.standard_normal((m, n)) for _ in range(N)]
        sv = smallest_singular_value_stacked(cand)
        if sv.value > STACK_MIN_SV:
            A = cand
            break
    if A is None:
        raise DegenerateAfterRetries(
            f"no full-rank stack after {GENERATION_RETRIES} draws (N={N}, m={m}, n={n})"
        )
    P_src = tuple(_repair_psd(_symmetrized_gaussian(rng, n)) for _ in range(N))
    H = [_repair_pd(_symmetrized_gaussian(rng, n)) for _ in range(N)]
    xstar = [rng.standard_normal(n) for _ in range(N)]
    lamstar = rng.standard_normal(m)
    if N * n < m:
        # Rank-deficient coupling: keep the multiplier inside the reachable range.
        U, sv_all, _ = np.linalg.svd(np.hstack(A), full_matrices=False)
        r = int(np.sum(sv_all > sv_all[0] * 1e-12))
        lamstar = U[:, :r] @ (U[:, :r].T @ lamstar)
    q = [-Hi @ xi + Ai.T @ lamstar for Hi, Ai, xi in zip(H, A, xstar)]
    c = np.zeros(m)
    for Ai, xi in zip(A, xstar):
        c += Ai @ xi
    problem = BlockProblem(
        tuple(QuadraticBlock(Hi, qi) for Hi, qi in zip(H, q)),
        tuple(A),
        c,
    )
    instance = LcqpInstance(problem, tuple(xstar), lamstar, seed, P_src)
    resid = kkt_residual(problem, instance.optimum())
    if resid > 1e-9:
        raise DegenerateAfterRetries(f"constructed optimum has KKT residual {resid:.3e}")
    return instance


def generate_resource_alloc(N: int, seed: int) -> ResourceAllocInstance:
    """Generate a seeded scalar allocation instance with a zero-sum budget.

    Coefficients are uniform on [0,2], [-2,2], [-10,10] and [-10,10]; every
    block couples through the scalar constraint ``sum_i x_i = 0``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, 2.0, N)
    b = rng.uniform(-2.0, 2.0, N)
    cshift = rng.uniform(-10.0, 10.0, N)
    dshift = rng.uniform(-10.0, 10.0, N)
    problem = BlockProblem(
        tuple(LogisticQuadBlock(a[i], b[i], cshift[i], dshift[i]) for i in range(N)),
        tuple(np.ones((1, 1)) for _ in range(N)),
        np.zeros(1),
    )
    return ResourceAllocInstance(problem, a, b, cshift, dshift, seed)


def dis_metric(u: PrimalDualPoint, ref: PrimalDualPoint) -> float:
    """Largest block-wise primal distance or multiplier distance."""
    if len(u.x) != len(ref.x):
        raise DimensionMismatch(f"{len(u.x)} blocks vs {len(ref.x)}")
    if u.lam.shape != ref.lam.shape:
        raise DimensionMismatch("multiplier lengths differ")
    worst = float(np.linalg.norm(u.lam - ref.lam))
    for xi, ri in zip(u.x, ref.x):
        if xi.shape != ri.shape:
            raise DimensionMismatch("block lengths differ")
        worst = max(worst, float(np.linalg.norm(xi - ri)))
    return worst


class ReferenceSolution(NamedTuple):
    """A reference optimum with its achieved optimality defect."""

    point: PrimalDualPoint
    kkt_residual: float


def reference_solution(problem: BlockProblem, params: SolverParams) -> ReferenceSolution:
    """High-accuracy reference optimum.

    All-quadratic problems solve the dense stationarity-plus-feasibility
    system ``[blockdiag(H_i), -A'; A, 0] (x; lam) = (-q; c)`` directly via a
    minimum-norm least-squares solve (raising :class:`SingularKkt` when the
    system is inconsistent).  Other problems run the parallel proximal engine
    for 4000 iterations from zero and return its final iterate.
    """
    if all(isinstance(f, QuadraticBlock) for f in problem.objectives):
        n = sum(problem.dims)
        m = problem.m
        A = problem.stacked_A()
        K = np.zeros((n + m, n + m))
        rhs = np.zeros(n + m)
        offset = 0
        for f in problem.objectives:
            d = f.dim
            K[offset:offset + d, offset:offset + d] = f.H
            rhs[offset:offset + d] = -f.q
            offset += d
        K[:n, n:] = -A.T
        K[n:, :n] = A
        rhs[n:] = problem.c
        z, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        if float(np.linalg.norm(K @ z - rhs)) > 1e-8 * (1.0 + float(np.linalg.norm(rhs))):
            raise SingularKkt("stationarity system is inconsistent")
        x = []
        offset = 0
        for d in problem.dims:
            x.append(z[offset:offset + d])
            offset += d
        point = PrimalDualPoint(x, z[n:])
    else:
        trace = run(problem, replace(params, max_iters=4000, dis_tol=0.0),
                    PrimalDualPoint.zeros(problem))
        point = trace.final
    return ReferenceSolution(point, kkt_residual(problem, point))


# -- sweeps ----------------------------------------------------------------------

#: Reference experiment grids: damping values shared by both families,
#: penalty values per family size.
GAMMA_GRID = (0.1, 0.5, 1.5, 1.9)
RHO_GRID_SMALL = (0.03, 1.0, 5.0, 10.0)
RHO_GRID_LARGE = (1e-5, 0.1, 5.0, 10.0)


def default_rho_grid(instance: Instance) -> tuple:
    """Penalty grid used in the reference experiments for this family."""
    if isinstance(instance, LcqpInstance) and instance.problem.N >= 10:
        return RHO_GRID_LARGE
    return RHO_GRID_SMALL


@dataclass(frozen=True)
class SweepConfig:
    """Grid of (rho, gamma) cells, iteration budget, and seeds."""

    rho_grid: Sequence[float]
    gamma_grid: Sequence[float]
    max_iters: int = 4000
    seeds: Sequence[int] = (0, 1, 2)
    dis_tol: float = 1e-12

    def __post_init__(self):
        if not self.rho_grid or not self.gamma_grid:
            raise ValueError("grids must be nonempty")


@dataclass
class SweepCell:
    """One (rho, gamma, seed) cell of a sweep."""

    rho: float
    gamma: float
    seed: int
    certificate: Optional[Certificate] = None
    trace: Optional[object] = None
    dis_rate: Optional[RateFit] = None
    phi_rate: Optional[RateFit] = None
    error: Optional[str] = None

    @property
    def status(self) -> str:
        if self.error is not None:
            return "error"
        return self.trace.status


def resolve_policy(problem: BlockProblem, rho: float, gamma: float, policy,
                   consts: Optional[ProblemConstants] = None):
    """Turn a policy request into a concrete policy.

    ``"auto"`` builds a standard proximal policy from the smallest certified
    per-block weights (scaled by 1.5); when certification is unavailable it
    falls back to the classical sufficiency threshold.  Concrete policy
    objects pass through unchanged.
    """
    if policy != "auto":
        return policy
    try:
        return StandardProximal(smallest_certified_tau(problem, rho, gamma, consts=consts))
    except JproxError:
        return StandardProximal(fallback_tau(problem, rho, gamma))


def instance_reference(instance: Instance) -> PrimalDualPoint:
    """The optimum used as the sweep's error reference.

    Quadratic instances carry their constructed optimum.  Allocation
    instances get one engine reference per instance, computed with a fixed
    well-behaved parameter choice (rho=1, gamma=1, auto weights); block
    strong convexity makes the optimum unique, so the same reference serves
    every cell.
    """
    if isinstance(instance, LcqpInstance):
        return instance.optimum()
    problem = instance.problem
    policy = resolve_policy(problem, 1.0, 1.0, "auto")
    params = SolverParams(rho=1.0, gamma=1.0, policy=policy)
    return reference_solution(problem, params).point


def _run_cell(instance: Instance, reference: PrimalDualPoint, rho: float, gamma: float,
              sweep: SweepConfig, policy) -> SweepCell:
    cell = SweepCell(rho=rho, gamma=gamma, seed=instance.seed)
    problem = instance.problem
    try:
        concrete = resolve_policy(problem, rho, gamma, policy)
        cert = certify(problem, rho, gamma, concrete, seed=instance.seed)
        cell.certificate = cert
        phi_ctx = None
        if cert.passed:
            consts = estimate_constants(problem)
            P_list = materialize_policy(concrete, rho, problem)
            phi_ctx = PhiWeights.build(problem, gamma, rho, cert.s, P_list, consts)
        params = SolverParams(rho=rho, gamma=gamma, policy=concrete,
                              max_iters=sweep.max_iters, dis_tol=sweep.dis_tol)
        cell.trace = run(problem, params, PrimalDualPoint.zeros(problem),
                         reference=reference, phi_context=phi_ctx)
        cell.dis_rate = _fit_series([d for d in cell.trace.dis if d is not None])
        if phi_ctx is not None:
            cell.phi_rate = _fit_series([p for p in cell.trace.phi if p is not None])
    except (JproxError, np.linalg.LinAlgError, ValueError) as exc:
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def _fit_series(values) -> Optional[RateFit]:
    # Fast cells sink below the fit floor before the tail window opens; widen
    # the window to the whole series before giving up.
    for tail_fraction in (0.5, 1.0):
        try:
            return fit_linear_rate(values, tail_fraction)
        except InsufficientData:
            continue
    return None


def _worker_count() -> int:
    env = os.environ.get("JPROX_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def run_sweep(instances: Union[Instance, Sequence[Instance]], sweep: SweepConfig,
              policy="auto") -> dict:
    """Run every (rho, gamma) cell for every instance, from a zero start.

    Returns a dict keyed by ``(rho, gamma, seed)``.  Cells are independent
    and run on a thread pool sized by the JPROX_THREADS environment variable
    (default: machine parallelism); per-cell failures are recorded in the
    cell, never raised.
    """
    if isinstance(instances, (LcqpInstance, ResourceAllocInstance)):
        instances = [instances]
    refs = {inst.seed: instance_reference(inst) for inst in instances}
    jobs = [
        (inst, refs[inst.seed], rho, gamma)
        for inst in instances
        for rho in sweep.rho_grid
        for gamma in sweep.gamma_grid
    ]
    results: dict = {}
    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        futures = {
            pool.submit(_run_cell, inst, ref, rho, gamma, sweep, policy): (rho, gamma, inst.seed)
            for inst, ref, rho, gamma in jobs
        }
        for fut, key in futures.items():
            results[key] = fut.result()
    return results


# -- instance files ----------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    d = problem_to_dict(instance.problem)
    d["seed"] = instance.seed
    if isinstance(instance, LcqpInstance):
        d["kind"] = "lcqp"
        d["xstar"] = [xi.tolist() for xi in instance.xstar]
        d["lambdastar"] = instance.lambdastar.tolist()
        if instance.proximal_source:
            d["proximal_source"] = [P.tolist() for P in instance.proximal_source]
    else:
        d["kind"] = "resource_alloc"
    return d


def instance_from_dict(d: dict) -> Instance:
    problem = problem_from_dict(d)
    seed = int(d.get("seed", 0))
    if d.get("kind") == "lcqp" or "xstar" in d:
        xstar = tuple(np.array(xi, dtype=float) for xi in d["xstar"])
        lamstar = np.array(d["lambdastar"], dtype=float)
        src = tuple(np.array(P, dtype=float) for P in d.get("proximal_source", []))
        return LcqpInstance(problem, xstar, lamstar, seed, src)
    a, b, cs, ds = [], [], [], []
    for f in problem.objectives:
        if not isinstance(f, LogisticQuadBlock):
            raise ValueError("resource allocation instances need scalar logistic blocks")
        a.append(f.a)
        b.append(f.b)
        cs.append(f.cshift)
        ds.append(f.dshift)
    return ResourceAllocInstance(problem, np.array(a), np.array(b), np.array(cs),
                                 np.array(ds), seed)


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance)), encoding="utf-8")


def load_instance(path) -> Instance:
    return instance_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
