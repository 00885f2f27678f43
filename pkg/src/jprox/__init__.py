"""Parallel proximal multi-block ADMM with a linear-convergence certification engine."""

from .certify import (
    Certificate,
    ContractionReport,
    PhiWeights,
    ProblemConstants,
    RateFit,
    certify,
    check_xi_condition,
    compute_mu_s,
    compute_sigma,
    estimate_constants,
    fit_linear_rate,
    lyapunov_phi,
    max_feasible_s,
    smallest_certified_tau,
    verify_contraction,
)
from .experiments import (
    LcqpInstance,
    ResourceAllocInstance,
    SweepConfig,
    dis_metric,
    generate_lcqp,
    generate_resource_alloc,
    load_instance,
    reference_solution,
    run_sweep,
    save_instance,
)
from .linalg import (
    generalized_max_eigenvalue,
    min_eigenvalue_sym,
    smallest_singular_value_stacked,
    solve_spd,
    spectral_norm,
)
from .problem import (
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
    save_problem,
)
from .solvers import (
    DualDecompositionParams,
    ExplicitProximal,
    ProxLinear,
    SolverParams,
    StandardProximal,
    Trace,
    dual_decomposition_step,
    gauss_seidel_step,
    jacobi_plain_step,
    jacobi_proximal_step,
    materialize_P,
    run,
    solve_block_quadratic,
    solve_block_scalar_newton,
)

__version__ = "0.1.0"
