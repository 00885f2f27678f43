"""Linear-convergence certification.

Given a problem and the engine parameters (rho, gamma, proximal policy),
this module computes the smoothness/strong-convexity constants, checks
the sufficient conditions for geometric decay of the weighted distance

    phi(u) = ||lam - lam*||^2 / (2*gamma*rho)
             + 0.5 * sum_i ||x_i - x_i*||^2  in the  rho*A_i'A_i + P_i
               + 2*(alpha - 2*L*s)*I  norm,

and produces the certified per-iteration contraction factor

    sigma = max(1 - 2*gamma*rho*s*c_A^2, mu_s)  in (0, 1).

All checks are reported with margins; a failed certificate is data, not an
exception, so callers can still run the solver on uncertified parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    CertificationError,
    GammaOutOfRange,
    InsufficientData,
    NonPositiveWeight,
    NotStronglyConvex,
)
from .linalg import (
    generalized_max_eigenvalue,
    min_eigenvalue_sym,
    smallest_singular_value_stacked,
    spectral_norm,
)
from .problem import (
    BlockProblem,
    GenericSmooth,
    LogisticQuadBlock,
    PrimalDualPoint,
    QuadraticBlock,
    check_point,
)
from .solvers import ExplicitProximal, ProximalPolicy, ProxLinear, StandardProximal, materialize_policy

#: Strong-convexity floor: moduli at or below this certify rates uselessly close
#: to 1 and are treated as numerically not strongly convex.
ALPHA_TOL = 1e-3

#: Relative slack keeping the sum of split weights strictly below 2 - gamma.
XI_SLACK = 1e-6

#: Relative pullback applied when the stacked singular value exceeds the
#: admissible range of the dual contraction branch.
CA_CLAMP_MARGIN = 1e-9

#: Values at or below this floor are dropped before fitting a decay rate.
RATE_FIT_FLOOR = 1e-14


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness and geometry constants of a problem.

    ``alpha`` is the worst-block strong-convexity modulus in the convention
    ``f(y) >= f(x) + <grad f(x), y-x> + alpha ||y-x||^2`` (no 1/2 factor);
    ``L`` is the square of the largest per-block gradient Lipschitz constant;
    ``D`` the sum of squared coupling-matrix norms; ``c_A`` the smallest
    stacked singular value of the transposed coupling matrices.
    """

    alpha: float
    L_list: tuple
    L: float
    D: float
    c_A: float
    A_norms: tuple
    rank_deficient: bool = False


def _block_constants(f) -> tuple:
    """(gradient Lipschitz constant, strong-convexity modulus) of one block."""
    if isinstance(f, QuadraticBlock):
        return spectral_norm(f.H), 0.5 * min_eigenvalue_sym(f.H)
    if isinstance(f, LogisticQuadBlock):
        # Curvature ranges over [a, a + b^2/4]; the modulus convention halves it.
        return f.a + 0.25 * f.b * f.b, 0.5 * f.a
    if isinstance(f, GenericSmooth):
        return float(f.lipschitz), float(f.strong_convexity)
    raise TypeError(f"cannot estimate constants for {type(f).__name__}")


def estimate_constants(problem: BlockProblem) -> ProblemConstants:
    """Compute :class:`ProblemConstants` for a problem.

    Raises :class:`NotStronglyConvex` when the worst modulus is at or below
    ``ALPHA_TOL``; the exception carries the offending value.
    """
    pairs = [_block_constants(f) for f in problem.objectives]
    L_list = tuple(p[0] for p in pairs)
    alpha = min(p[1] for p in pairs)
    if alpha <= ALPHA_TOL:
        raise NotStronglyConvex(
            f"strong-convexity modulus {alpha:.3e} is at or below the floor {ALPHA_TOL:g}",
            alpha=alpha,
        )
    A_norms = tuple(spectral_norm(Ai) for Ai in problem.A)
    c_A, deficient = smallest_singular_value_stacked(problem.A)
    return ProblemConstants(
        alpha=alpha,
        L_list=L_list,
        L=max(L_list) ** 2,
        D=sum(nrm * nrm for nrm in A_norms),
        c_A=c_A,
        A_norms=A_norms,
        rank_deficient=deficient,
    )


def max_feasible_s(consts: ProblemConstants, rho: float, N: int) -> float:
    """Largest admissible dual-coupling weight.

    Returns the supremum of ``s`` with
    ``s * (rho^2 * D * ||A_i||^2 + L/N) < alpha / (2N)`` for every block;
    certificates use half this value so the inequality holds with margin.
    """
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    bound = consts.alpha / (2.0 * N)
    return min(bound / (rho * rho * consts.D * nrm * nrm + consts.L / N) for nrm in consts.A_norms)


def uniform_xi(gamma: float, N: int) -> tuple:
    """Equal split weights summing to just under ``2 - gamma``."""
    return tuple((1.0 - XI_SLACK) * (2.0 - gamma) / N for _ in range(N))


@dataclass(frozen=True)
class XiCheck:
    """Outcome of the per-block positive-definiteness condition."""

    passed: bool
    min_eigs: tuple
    xi: tuple


def check_xi_condition(problem: BlockProblem, rho: float, gamma: float, s: float,
                       P_list: Sequence[np.ndarray],
                       xi: Optional[Sequence[float]] = None) -> XiCheck:
    """Check the per-block coupling condition for given split weights.

    With ``B_i = rho*A_i'A_i + P_i``, each block must satisfy
    ``B_i - 8*s*B_i^2 - (rho/xi_i)*A_i'A_i`` positive definite while the
    ``xi_i`` sum stays below ``2 - gamma``.  Defaults to the uniform split
    ``xi_i = (1 - 1e-6) * (2 - gamma) / N``.
    """
    if not 0.0 < gamma < 2.0:
        raise GammaOutOfRange(f"gamma {gamma} outside (0, 2)")
    if s <= 0.0:
        raise ValueError("s must be positive")
    xi = tuple(xi) if xi is not None else uniform_xi(gamma, problem.N)
    if len(xi) != problem.N or any(x <= 0.0 for x in xi):
        raise ValueError("need one positive split weight per block")
    eigs = []
    for Ai, Pi, xi_i in zip(problem.A, P_list, xi):
        AtA = Ai.T @ Ai
        B = rho * AtA + np.asarray(Pi, dtype=float)
        M = B - 8.0 * s * (B @ B) - (rho / xi_i) * AtA
        eigs.append(min_eigenvalue_sym(0.5 * (M + M.T)))
    return XiCheck(all(e > 0.0 for e in eigs), tuple(eigs), xi)


def refine_xi(problem: BlockProblem, rho: float, gamma: float, s: float,
              P_list: Sequence[np.ndarray]) -> XiCheck:
    """Optional per-block refinement of the split weights.

    Starting from the uniform split, blocks whose positive-definiteness
    margin allows it give up weight (found by bisection, keeping a tenth of
    their uniform margin), and the freed slack is shared equally among the
    failing blocks.  Falls back to the uniform result when nothing fails.
    """
    base = check_xi_condition(problem, rho, gamma, s, P_list)
    if base.passed or not any(e > 0.0 for e in base.min_eigs):
        return base

    def margin(i: int, xi_i: float) -> float:
        Ai = problem.A[i]
        AtA = Ai.T @ Ai
        B = rho * AtA + np.asarray(P_list[i], dtype=float)
        M = B - 8.0 * s * (B @ B) - (rho / xi_i) * AtA
        return min_eigenvalue_sym(0.5 * (M + M.T))

    xi = list(base.xi)
    for i, eig in enumerate(base.min_eigs):
        if eig <= 0.0:
            continue
        target = 0.1 * eig
        lo, hi = 1e-12 * xi[i], xi[i]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if margin(i, mid) >= target:
                hi = mid
            else:
                lo = mid
        xi[i] = hi
    budget = (1.0 - XI_SLACK) * (2.0 - gamma)
    slack = budget - sum(xi)
    failing = [i for i, e in enumerate(base.min_eigs) if e <= 0.0]
    if slack > 0.0 and failing:
        for i in failing:
            xi[i] += slack / len(failing)
    refined = check_xi_condition(problem, rho, gamma, s, P_list, xi)
    return refined if refined.passed else base


def compute_mu_s(problem: BlockProblem, consts: ProblemConstants, rho: float, s: float,
                 P_list: Sequence[np.ndarray]) -> float:
    """Tightest factor bounding the k-state weights by the Lyapunov weights.

    Returns the largest generalized eigenvalue over blocks of
    ``(rho + 4*N*s*rho^2*D) * A_i'A_i + P_i`` against
    ``rho*A_i'A_i + P_i + 2*(alpha - 2*L*s) * I``; below 1 whenever ``s`` is
    admissible.
    """
    gap = consts.alpha - 2.0 * consts.L * s
    if gap <= 0.0:
        raise NonPositiveWeight(f"alpha - 2*L*s = {gap:.3e} must be positive")
    coef = rho + 4.0 * problem.N * s * rho * rho * consts.D
    worst = -math.inf
    for Ai, Pi in zip(problem.A, P_list):
        AtA = Ai.T @ Ai
        Pi = np.asarray(Pi, dtype=float)
        left = coef * AtA + Pi
        right = rho * AtA + Pi + 2.0 * gap * np.eye(AtA.shape[0])
        worst = max(worst, generalized_max_eigenvalue(left, right))
    return worst


class SigmaResult(NamedTuple):
    """Contraction factor with its admissibility flag and branch details."""

    sigma: float
    in_range: bool
    dual_branch: float
    c_A_used: float


def compute_sigma(gamma: float, rho: float, s: float, c_A: float, mu_s: float) -> SigmaResult:
    """``sigma = max(1 - 2*gamma*rho*s*c_A^2, mu_s)`` with the admissible clamp.

    The dual branch needs ``c_A < 1/sqrt(2*gamma*rho*s)``; a larger stacked
    singular value is pulled back to just inside that range (the distance
    bound it certifies holds a fortiori for any smaller constant).
    """
    if min(gamma, rho, s) <= 0.0:
        raise ValueError("gamma, rho and s must be positive")
    if c_A < 0.0 or mu_s < 0.0:
        raise ValueError("c_A and mu_s must be nonnegative")
    cap = 1.0 / math.sqrt(2.0 * gamma * rho * s)
    used = c_A if c_A < cap else (1.0 - CA_CLAMP_MARGIN) * cap
    dual_branch = 1.0 - 2.0 * gamma * rho * s * used * used
    sigma = max(dual_branch, mu_s)
    return SigmaResult(sigma, 0.0 < sigma < 1.0, dual_branch, used)


# -- certificates ---------------------------------------------------------------

def describe_policy(policy: ProximalPolicy) -> dict:
    if policy is None:
        return {"kind": "none"}
    if isinstance(policy, StandardProximal):
        tau = policy.tau if np.isscalar(policy.tau) else list(map(float, policy.tau))
        return {"kind": "standard", "tau": tau}
    if isinstance(policy, ProxLinear):
        tau = policy.tau if np.isscalar(policy.tau) else list(map(float, policy.tau))
        return {"kind": "proxlinear", "tau": tau}
    if isinstance(policy, ExplicitProximal):
        return {"kind": "explicit"}
    return {"kind": repr(policy)}


@dataclass
class Certificate:
    """Outcome of a certification attempt, with pass/fail margins.

    ``passed`` requires every strict condition to hold with positive margin:
    admissible ``s`` (so ``alpha - 2*L*s > 0``), all per-block minimum
    eigenvalues positive, split-weight slack positive, and both
    ``mu_s`` and ``sigma`` inside (0, 1).  A failed certificate records which
    condition broke in ``failure`` and keeps whatever was computed.
    """

    rho: float
    gamma: float
    policy: dict
    passed: bool
    failure: Optional[str] = None
    s: Optional[float] = None
    xi: Optional[tuple] = None
    mu_s: Optional[float] = None
    sigma: Optional[float] = None
    margins: dict = field(default_factory=dict)
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "gamma": self.gamma,
            "policy": self.policy,
            "passed": self.passed,
            "failure": self.failure,
            "s": self.s,
            "xi": list(self.xi) if self.xi is not None else None,
            "mu_s": self.mu_s,
            "sigma": self.sigma,
            "margins": self.margins,
            "seed": self.seed,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")


def certificate_from_dict(d: dict) -> Certificate:
    return Certificate(
        rho=float(d["rho"]),
        gamma=float(d["gamma"]),
        policy=dict(d.get("policy", {})),
        passed=bool(d["passed"]),
        failure=d.get("failure"),
        s=d.get("s"),
        xi=tuple(d["xi"]) if d.get("xi") is not None else None,
        mu_s=d.get("mu_s"),
        sigma=d.get("sigma"),
        margins=dict(d.get("margins", {})),
        seed=d.get("seed"),
    )


def certify(problem: BlockProblem, rho: float, gamma: float, policy: ProximalPolicy,
            consts: Optional[ProblemConstants] = None, refine: bool = False,
            seed: Optional[int] = None) -> Certificate:
    """Run the full certification pipeline for one parameter choice.

    Never raises on a certifiability failure: the returned certificate has
    ``passed=False`` and names the broken condition, so the solver can still
    be run on the same parameters.
    """
    cert = Certificate(rho=rho, gamma=gamma, policy=describe_policy(policy),
                       passed=False, seed=seed)
    if rho <= 0.0:
        raise ValueError("rho must be positive")
    if not 0.0 < gamma < 2.0:
        cert.failure = "GammaOutOfRange"
        cert.margins = {"gamma": gamma}
        return cert
    try:
        consts = consts if consts is not None else estimate_constants(problem)
    except NotStronglyConvex as exc:
        cert.failure = "NotStronglyConvex"
        cert.margins = {"alpha": exc.alpha, "alpha_floor": ALPHA_TOL}
        return cert

    s_bar = max_feasible_s(consts, rho, problem.N)
    s = 0.5 * s_bar
    gap = consts.alpha - 2.0 * consts.L * s
    P_list = materialize_policy(policy, rho, problem)

    xi_check = refine_xi(problem, rho, gamma, s, P_list) if refine \
        else check_xi_condition(problem, rho, gamma, s, P_list)
    mu = compute_mu_s(problem, consts, rho, s, P_list)
    sig = compute_sigma(gamma, rho, s, consts.c_A, mu)

    cert.s = s
    cert.xi = xi_check.xi
    cert.mu_s = mu
    cert.sigma = sig.sigma
    cert.margins = {
        "s_margin": consts.alpha / (2.0 * problem.N)
        - s * max(rho * rho * consts.D * nrm * nrm + consts.L / problem.N
                  for nrm in consts.A_norms),
        "alpha_2Ls": gap,
        "xi_pd_min_eigs": list(xi_check.min_eigs),
        "xi_sum_slack": (2.0 - gamma) - sum(xi_check.xi),
        "mu_margin": 1.0 - mu,
        "sigma_margin": 1.0 - sig.sigma,
        "dual_branch": sig.dual_branch,
        "c_A_used": sig.c_A_used,
    }
    if not xi_check.passed:
        cert.failure = "XiConditionFailed"
    elif not (0.0 < mu < 1.0):
        cert.failure = "MuOutOfRange"
    elif not sig.in_range:
        cert.failure = "SigmaOutOfRange"
    elif gap <= 0.0:
        cert.failure = "NonPositiveWeight"
    else:
        cert.passed = True
    return cert


# -- Lyapunov function and contraction verification -----------------------------

class PhiWeights:
    """Precomputed weights of the Lyapunov distance for one parameter choice."""

    def __init__(self, gamma: float, rho: float, W: Sequence[np.ndarray]):
        self.gamma = gamma
        self.rho = rho
        self.W = [np.asarray(Wi, dtype=float) for Wi in W]

    @classmethod
    def build(cls, problem: BlockProblem, gamma: float, rho: float, s: float,
              P_list: Sequence[np.ndarray], consts: ProblemConstants) -> "PhiWeights":
        gap = consts.alpha - 2.0 * consts.L * s
        if gap <= 0.0:
            raise NonPositiveWeight(f"alpha - 2*L*s = {gap:.3e} must be positive")
        W = [
            rho * (Ai.T @ Ai) + np.asarray(Pi, dtype=float) + 2.0 * gap * np.eye(Ai.shape[1])
            for Ai, Pi in zip(problem.A, P_list)
        ]
        return cls(gamma, rho, W)

    def evaluate(self, u: PrimalDualPoint, ref: PrimalDualPoint) -> float:
        dlam = u.lam - ref.lam
        total = float(dlam @ dlam) / (2.0 * self.gamma * self.rho)
        for Wi, xi, ri in zip(self.W, u.x, ref.x):
            d = xi - ri
            total += 0.5 * float(d @ (Wi @ d))
        return total


def lyapunov_phi(problem: BlockProblem, u: PrimalDualPoint, ref: PrimalDualPoint,
                 gamma: float, rho: float, s: float, P_list: Sequence[np.ndarray],
                 consts: ProblemConstants) -> float:
    """Weighted squared distance to the reference; zero iff ``u == ref``."""
    check_point(problem, u)
    check_point(problem, ref)
    return PhiWeights.build(problem, gamma, rho, s, P_list, consts).evaluate(u, ref)


@dataclass
class ContractionReport:
    """Per-step contraction audit of an iterate sequence."""

    phis: list
    ratios: list
    violations: list

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_contraction(points: Sequence[PrimalDualPoint], cert: Certificate,
                       ref: PrimalDualPoint, problem: BlockProblem, gamma: float,
                       rho: float, P_list: Sequence[np.ndarray],
                       consts: ProblemConstants) -> ContractionReport:
    """Check ``phi(u^{k+1}) <= sigma * phi(u^k) + 1e-12 * (1 + phi(u^k))`` pairwise.

    Ratios are recorded as ``nan`` when the previous value sits at or below
    1e-14 (a degenerate 0/0 step counts as a pass).  Requires a passed
    certificate; violations on a certified run indicate a bug.
    """
    if not cert.passed:
        raise ValueError("verify_contraction requires a passed certificate")
    weights = PhiWeights.build(problem, gamma, rho, cert.s, P_list, consts)
    phis = [weights.evaluate(u, ref) for u in points]
    ratios = []
    violations = []
    for k in range(len(phis) - 1):
        prev, curr = phis[k], phis[k + 1]
        ratios.append(curr / prev if prev > 1e-14 else math.nan)
        bound = cert.sigma * prev + 1e-12 * (1.0 + prev)
        if curr > bound:
            violations.append((k, prev, curr, bound))
    return ContractionReport(phis, ratios, violations)


# -- decay-rate fitting ----------------------------------------------------------

class RateFit(NamedTuple):
    """Fitted per-iteration decay factor of a positive series."""

    rate: float
    r_squared: float
    flat: bool = False


def fit_linear_rate(values: Sequence[float], tail_fraction: float = 0.5) -> RateFit:
    """Least-squares fit of ``log(values)`` against the index over a tail window.

    The window is the last ``tail_fraction`` of the series; entries at or
    below 1e-14 are dropped (floor).  Raises :class:`InsufficientData` with
    fewer than 10 usable points.  A constant series reports rate 1 with the
    ``flat`` flag set and an R-squared of 0.
    """
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must be in (0, 1]")
    vals = np.asarray(list(values), dtype=float)
    start = len(vals) - math.ceil(len(vals) * tail_fraction)
    idx = np.arange(start, len(vals))
    window = vals[idx]
    keep = window > RATE_FIT_FLOOR
    xs = idx[keep].astype(float)
    ys = np.log(window[keep])
    if xs.size < 10:
        raise InsufficientData(f"only {xs.size} tail points above the floor, need 10")
    if float(np.max(ys) - np.min(ys)) < 1e-12:
        return RateFit(1.0, 0.0, flat=True)
    slope, intercept = np.polyfit(xs, ys, 1)
    pred = slope * xs + intercept
    ss_res = float(np.sum((ys - pred) ** 2))
    ss_tot = float(np.sum((ys - np.mean(ys)) ** 2))
    return RateFit(float(np.exp(slope)), 1.0 - ss_res / ss_tot, flat=False)


# -- certified proximal weights ---------------------------------------------------

def smallest_certified_tau(problem: BlockProblem, rho: float, gamma: float,
                           kind: str = "standard",
                           consts: Optional[ProblemConstants] = None,
                           safety: float = 1.5) -> list:
    """Per-block smallest proximal weight passing the coupling condition, scaled.

    For each block, bisects the positive-definiteness margin of the uniform
    split condition over ``tau`` and returns ``safety`` times the boundary
    value.  ``kind`` selects the standard (``tau*I``) or prox-linear
    (``tau*I - rho*A'A``) materialization.
    """
    if not 0.0 < gamma < 2.0:
        raise GammaOutOfRange(f"gamma {gamma} outside (0, 2)")
    if kind not in ("standard", "proxlinear"):
        raise ValueError(f"unknown policy kind {kind!r}")
    consts = consts if consts is not None else estimate_constants(problem)
    s = 0.5 * max_feasible_s(consts, rho, problem.N)
    coupling = rho / ((1.0 - XI_SLACK) * (2.0 - gamma) / problem.N)
    taus = []
    for i, Ai in enumerate(problem.A):
        AtA = Ai.T @ Ai
        n = AtA.shape[0]
        eye = np.eye(n)

        def pd_margin(tau: float) -> float:
            B = rho * AtA + tau * eye if kind == "standard" else tau * eye
            M = B - 8.0 * s * (B @ B) - coupling * AtA
            return min_eigenvalue_sym(0.5 * (M + M.T))

        scale = max(coupling * consts.A_norms[i] ** 2, 1.0)
        if pd_margin(0.0) > 0.0:
            taus.append(1e-12 * scale)
            continue
        lo, hi = 0.0, None
        probe = scale * 2.0 ** -10
        for _ in range(60):
            if pd_margin(probe) > 0.0:
                hi = probe
                break
            lo = probe
            probe *= 2.0
        if hi is None:
            raise CertificationError(
                f"block {i}: no proximal weight satisfies the coupling condition "
                f"(rho={rho:g}, gamma={gamma:g})"
            )
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if pd_margin(mid) > 0.0:
                hi = mid
            else:
                lo = mid
        tau = safety * hi
        taus.append(tau if pd_margin(tau) > 0.0 else hi)
    return taus


def fallback_tau(problem: BlockProblem, rho: float, gamma: float,
                 kind: str = "standard") -> list:
    """Proximal weights from the classical sufficiency thresholds.

    Used when certification is unavailable (for example, a block modulus at
    the floor): 1.5 times ``rho * max(N/(2-gamma) - 1, 0) * ||A_i||^2`` for
    the standard materialization, or ``rho * N/(2-gamma) * ||A_i||^2`` for
    prox-linear, with a small positive floor to keep the engine well-posed.
    """
    if not 0.0 < gamma < 2.0:
        raise GammaOutOfRange(f"gamma {gamma} outside (0, 2)")
    if kind == "standard":
        factor = max(problem.N / (2.0 - gamma) - 1.0, 0.0)
    elif kind == "proxlinear":
        factor = problem.N / (2.0 - gamma)
    else:
        raise ValueError(f"unknown policy kind {kind!r}")
    taus = []
    for Ai in problem.A:
        nrm2 = spectral_norm(Ai) ** 2
        taus.append(max(1.5 * rho * factor * nrm2, 1e-8 * max(1.0, rho * nrm2)))
    return taus
