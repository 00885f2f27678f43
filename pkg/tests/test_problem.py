"""Problem model tests: values, gradients, diagnostics, serialization."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jprox.errors import DimensionMismatch
from jprox.experiments import generate_lcqp
from jprox.problem import (
    BlockProblem,
    GenericSmooth,
    LogisticQuadBlock,
    PrimalDualPoint,
    QuadraticBlock,
    augmented_lagrangian,
    block_gradient,
    block_value,
    constraint_residual,
    kkt_residual,
    load_problem,
    problem_from_dict,
    problem_to_dict,
    save_problem,
)


def scalar_problem(n_blocks=2, c=0.0):
    """Blocks f_i(x) = x^2/2 with unit coupling, scalar constraint."""
    return BlockProblem(
        tuple(QuadraticBlock(np.eye(1), np.zeros(1)) for _ in range(n_blocks)),
        tuple(np.ones((1, 1)) for _ in range(n_blocks)),
        np.array([c]),
    )


def central_difference(f, x, step=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = step
        g[j] = (block_value(f, x + e) - block_value(f, x - e)) / (2.0 * step)
    return g


# -- block_value ------------------------------------------------------------------

def test_quadratic_value():
    f = QuadraticBlock(2.0 * np.eye(1), np.zeros(1))
    assert block_value(f, np.array([1.0])) == pytest.approx(1.0, abs=1e-15)


def test_logistic_value_at_zero_coefficients():
    f = LogisticQuadBlock(0.0, 0.0, 0.0, 0.0)
    for x in (-3.0, 0.0, 7.5):
        assert block_value(f, np.array([x])) == pytest.approx(math.log(2.0), rel=1e-15)


def test_logistic_value_high_precision_oracle():
    import mpmath

    f = LogisticQuadBlock(1.0, 1.0, 0.0, 0.0)
    mpmath.mp.dps = 50
    expected = float(mpmath.mpf("0.5") + mpmath.log(1 + mpmath.e))
    assert block_value(f, np.array([1.0])) == pytest.approx(expected, rel=1e-15)


def test_value_dimension_mismatch():
    f = QuadraticBlock(np.eye(2), np.zeros(2))
    with pytest.raises(DimensionMismatch):
        block_value(f, np.zeros(3))


# -- block_gradient ----------------------------------------------------------------

def test_quadratic_gradient():
    f = QuadraticBlock(np.diag([2.0, 2.0]), np.array([1.0, 1.0]))
    assert np.allclose(block_gradient(f, np.zeros(2)), [1.0, 1.0], atol=1e-15)


def test_logistic_gradient_stationary_point():
    f = LogisticQuadBlock(1.0, 0.0, 3.0, 0.0)
    assert block_gradient(f, np.array([3.0]))[0] == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize(
    "make_block",
    [
        lambda rng: QuadraticBlock(
            (lambda B: B @ B.T + 0.5 * np.eye(3))(rng.standard_normal((3, 3))),
            rng.standard_normal(3),
        ),
        lambda rng: LogisticQuadBlock(
            rng.uniform(0.0, 2.0), rng.uniform(-2.0, 2.0),
            rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0),
        ),
        lambda rng: GenericSmooth(
            2,
            lambda x: float(np.cosh(x[0]) + 0.5 * x[1] ** 2 + 0.25 * (x[0] - x[1]) ** 2),
            lambda x: np.array([
                np.sinh(x[0]) + 0.5 * (x[0] - x[1]),
                x[1] - 0.5 * (x[0] - x[1]),
            ]),
            lipschitz=10.0,
            strong_convexity=0.25,
        ),
    ],
    ids=["quadratic", "logistic_quad", "generic_smooth"],
)
def test_gradient_matches_central_differences(make_block):
    rng = np.random.default_rng(2024)
    block = make_block(rng)
    for _ in range(20):
        x = rng.uniform(-2.0, 2.0, block.dim)
        fd = central_difference(block, x)
        assert np.linalg.norm(block_gradient(block, x) - fd) < 1e-5


def test_logistic_overflow_safety():
    f = LogisticQuadBlock(1.0, 2.0, 0.0, 0.0)
    for x in (-1e6, -800.0, 800.0, 1e6):
        v = block_value(f, np.array([x]))
        g = block_gradient(f, np.array([x]))[0]
        assert math.isfinite(v) and math.isfinite(g)


@settings(max_examples=200, deadline=None)
@given(
    a=st.floats(0.0, 2.0),
    b=st.floats(-2.0, 2.0),
    cshift=st.floats(-10.0, 10.0),
    dshift=st.floats(-10.0, 10.0),
    x=st.floats(-1e8, 1e8),
)
def test_logistic_gradient_is_bounded_perturbation(a, b, cshift, dshift, x):
    f = LogisticQuadBlock(a, b, cshift, dshift)
    g = block_gradient(f, np.array([x]))[0]
    linear = a * (x - cshift)
    # fp slack: the bound is exact in reals, but forming g rounds at |linear| scale.
    slack = 1e-12 + 8.0 * np.finfo(float).eps * abs(linear)
    assert abs(g - linear) <= abs(b) + slack


# -- constraint_residual --------------------------------------------------------------

def test_constraint_residual_at_generated_optimum():
    inst = generate_lcqp(3, 6, 4, seed=0)
    r = constraint_residual(inst.problem, list(inst.xstar))
    assert np.linalg.norm(r) <= 1e-10


def test_constraint_residual_zeros():
    p = scalar_problem(3, c=0.0)
    assert np.allclose(constraint_residual(p, [np.zeros(1)] * 3), 0.0)


def test_constraint_residual_arithmetic():
    p = scalar_problem(2, c=4.0)
    r = constraint_residual(p, [np.array([1.0]), np.array([2.0])])
    assert r == pytest.approx([-1.0])


# -- kkt_residual ----------------------------------------------------------------------

def test_kkt_residual_zero_at_origin_for_identity_problem():
    p = BlockProblem(
        (QuadraticBlock(np.eye(2), np.zeros(2)),),
        (np.eye(2),),
        np.zeros(2),
    )
    u = PrimalDualPoint([np.zeros(2)], np.zeros(2))
    assert kkt_residual(p, u) == 0.0


def test_kkt_residual_at_generated_optimum():
    inst = generate_lcqp(2, 5, 4, seed=3)
    assert kkt_residual(inst.problem, inst.optimum()) <= 1e-9


def test_kkt_residual_detects_perturbation():
    inst = generate_lcqp(2, 5, 4, seed=1)
    u = inst.optimum()
    delta = 1e-3
    u.x[0] = u.x[0].copy()
    u.x[0][0] += delta
    H0 = inst.problem.objectives[0].H
    lam_min = float(np.linalg.eigvalsh(H0)[0])
    res = kkt_residual(inst.problem, u)
    assert res >= lam_min * delta * (1.0 - 1e-6)
    # Direct evaluation: the stationarity gap of block 0 equals ||H0 e0|| * delta
    # up to the feasibility change it also induces.
    direct = np.linalg.norm(
        block_gradient(inst.problem.objectives[0], u.x[0])
        - inst.problem.A[0].T @ u.lam
    )
    assert res >= direct - 1e-12


# -- augmented_lagrangian -----------------------------------------------------------------

def test_augmented_lagrangian_feasible_point_is_plain_sum():
    inst = generate_lcqp(3, 6, 4, seed=5)
    u = inst.optimum()
    total = sum(
        block_value(f, xi) for f, xi in zip(inst.problem.objectives, u.x)
    )
    assert augmented_lagrangian(inst.problem, u, rho=2.5) == pytest.approx(total, rel=1e-12)


def test_augmented_lagrangian_scalar_arithmetic():
    p = scalar_problem(2, c=0.0)
    u = PrimalDualPoint([np.array([1.0]), np.array([2.0])], np.zeros(1))
    # residual r = 3, values sum to 0.5 + 2.0; with lam=0, rho=2: sum + r^2.
    assert augmented_lagrangian(p, u, rho=2.0) == pytest.approx(2.5 + 9.0, rel=1e-14)


def test_augmented_lagrangian_term_by_term_oracle():
    rng = np.random.default_rng(17)
    inst = generate_lcqp(3, 5, 3, seed=9)
    u = PrimalDualPoint(
        [rng.standard_normal(3) for _ in range(3)], rng.standard_normal(5)
    )
    rho = 1.7
    r = sum(Ai @ xi for Ai, xi in zip(inst.problem.A, u.x)) - inst.problem.c
    expected = (
        sum(block_value(f, xi) for f, xi in zip(inst.problem.objectives, u.x))
        - float(u.lam @ r)
        + 0.5 * rho * float(r @ r)
    )
    assert augmented_lagrangian(inst.problem, u, rho) == pytest.approx(expected, rel=1e-12)


def test_augmented_lagrangian_penalty_difference_identity():
    rng = np.random.default_rng(23)
    inst = generate_lcqp(2, 4, 3, seed=11)
    u = PrimalDualPoint(
        [rng.standard_normal(3) for _ in range(2)], rng.standard_normal(4)
    )
    rho = 3.0
    r = constraint_residual(inst.problem, u.x)
    diff = augmented_lagrangian(inst.problem, u, rho) - augmented_lagrangian(inst.problem, u, 0.0)
    assert diff == pytest.approx(0.5 * rho * float(r @ r), rel=1e-12)


# -- serialization -----------------------------------------------------------------------

def test_problem_roundtrip_quadratic(tmp_path):
    inst = generate_lcqp(3, 6, 4, seed=2)
    path = tmp_path / "problem.json"
    save_problem(inst.problem, path)
    loaded = load_problem(path)
    assert loaded.N == inst.problem.N
    assert loaded.m == inst.problem.m
    for f1, f2, A1, A2 in zip(
        inst.problem.objectives, loaded.objectives, inst.problem.A, loaded.A
    ):
        assert np.array_equal(f1.H, f2.H)
        assert np.array_equal(f1.q, f2.q)
        assert np.array_equal(A1, A2)
    assert np.array_equal(inst.problem.c, loaded.c)


def test_problem_roundtrip_logistic():
    p = BlockProblem(
        (LogisticQuadBlock(0.5, -1.25, 3.75, -2.5), LogisticQuadBlock(1.0, 2.0, 0.1, 0.2)),
        (np.ones((1, 1)), np.ones((1, 1))),
        np.zeros(1),
    )
    loaded = problem_from_dict(problem_to_dict(p))
    for f1, f2 in zip(p.objectives, loaded.objectives):
        assert (f1.a, f1.b, f1.cshift, f1.dshift) == (f2.a, f2.b, f2.cshift, f2.dshift)


def test_generic_smooth_not_serializable():
    p = BlockProblem(
        (GenericSmooth(1, lambda x: float(x[0] ** 2), lambda x: 2 * x, 2.0, 1.0),),
        (np.ones((1, 1)),),
        np.zeros(1),
    )
    with pytest.raises(ValueError):
        problem_to_dict(p)


def test_problem_validation_rejects_bad_shapes():
    with pytest.raises(DimensionMismatch):
        BlockProblem(
            (QuadraticBlock(np.eye(2), np.zeros(2)),),
            (np.ones((3, 1)),),
            np.zeros(3),
        )
