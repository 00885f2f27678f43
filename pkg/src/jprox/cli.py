"""Command-line front end.

Commands: ``generate`` (instance files), ``certify`` (parameter
certificates), ``solve`` (one run, CSV trace, optional SVG), ``sweep``
(grid campaigns with a manifest) and ``report`` (SVG families plus a rate
table from a sweep directory).

Exit codes are a stable contract: 0 success, 2 flag validation, 3 I/O or
parse or generation failure, 4 certification failed, 5 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

from . import experiments as exp
from .certify import (
    PhiWeights,
    certify,
    estimate_constants,
    fallback_tau,
    smallest_certified_tau,
)
from .errors import JproxError
from .problem import PrimalDualPoint
from .solvers import (
    DIVERGED,
    ExplicitProximal,
    ProxLinear,
    SolverParams,
    StandardProximal,
    materialize_policy,
    run,
)
from .svgplot import line_plot_svg

EXIT_OK = 0
EXIT_FLAGS = 2
EXIT_IO = 3
EXIT_CERT = 4
EXIT_DIVERGED = 5

CSV_HEADER = "k,dis,phi,primal_residual,elapsed_seconds"


class FlagError(Exception):
    """A flag failed validation; message names the offending flag."""


def _fail_flags(message: str) -> "NoReturn":  # noqa: F821
    raise FlagError(message)


def _positive(value: float, flag: str) -> float:
    if not math.isfinite(value) or value <= 0.0:
        _fail_flags(f"invalid {flag}: must be a positive number")
    return value


def _at_least_one(value: int, flag: str) -> int:
    if value < 1:
        _fail_flags(f"invalid {flag}: must be at least 1")
    return value


def _fmt(v) -> str:
    if v is None:
        return ""
    return f"{float(v):.17g}"


def write_trace_csv(trace, path) -> None:
    lines = [CSV_HEADER]
    for i, k in enumerate(trace.ks):
        lines.append(
            f"{k},{_fmt(trace.dis[i])},{_fmt(trace.phi[i])},"
            f"{_fmt(trace.primal_residual[i])},{_fmt(trace.elapsed[i])}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_trace_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if ",".join(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header")
        cols = {name: [] for name in header}
        for row in reader:
            for name, cell in zip(header, row):
                if name == "k":
                    cols[name].append(int(cell))
                else:
                    cols[name].append(float(cell) if cell else None)
    return cols


def build_policy(instance, rho: float, gamma: float, name: str, tau):
    """Materialize the requested proximal policy for one instance."""
    problem = instance.problem
    if name == "none":
        return None
    if name == "explicit":
        src = getattr(instance, "proximal_source", ())
        if not src:
            _fail_flags("invalid --policy: explicit needs an instance with stored proximal matrices")
        return ExplicitProximal(src)
    if name not in ("standard", "proxlinear"):
        _fail_flags(f"invalid --policy: unknown policy {name!r}")
    if tau == "auto":
        try:
            taus = smallest_certified_tau(problem, rho, gamma, kind=name)
        except JproxError:
            taus = fallback_tau(problem, rho, gamma, kind=name)
        return StandardProximal(taus) if name == "standard" else ProxLinear(taus)
    return StandardProximal(tau) if name == "standard" else ProxLinear(tau)


def _load_instance(path):
    try:
        return exp.load_instance(path)
    except FileNotFoundError:
        raise IOError(f"instance file not found: {path}")
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        raise IOError(f"malformed instance file {path}: {exc}")


# -- commands -----------------------------------------------------------------

def cmd_generate(args) -> int:
    seed = args.seed
    N = _at_least_one(args.N, "--N")
    if args.kind == "lcqp":
        m = _at_least_one(args.m, "--m")
        n = _at_least_one(args.n, "--n")
        instance = exp.generate_lcqp(N, m, n, seed)
    else:
        instance = exp.generate_resource_alloc(N, seed)
    out = Path(args.output)
    exp.save_instance(instance, out)
    problem = instance.problem
    try:
        consts = estimate_constants(problem)
        summary = (
            f"alpha={consts.alpha:.6g} L={consts.L:.6g} D={consts.D:.6g} "
            f"c_A={consts.c_A:.6g}"
        )
    except JproxError as exc:
        summary = f"constants unavailable ({exc})"
    print(
        f"wrote {out}: kind={args.kind} N={problem.N} m={problem.m} "
        f"dims={list(problem.dims)} seed={seed} {summary}"
    )
    return EXIT_OK


def cmd_certify(args) -> int:
    instance = _load_instance(args.input)
    rho = _positive(args.rho, "--rho")
    gamma = _positive(args.gamma, "--gamma")
    if not 0.0 < gamma < 2.0:
        # Still produce a certificate file so the failure and margins are on disk.
        cert = certify(instance.problem, rho, gamma, None, seed=instance.seed)
        cert.save(args.output)
        print("certification failed: gamma out of (0,2)", file=sys.stderr)
        return EXIT_CERT
    policy = build_policy(instance, rho, gamma, args.policy, args.tau)
    cert = certify(instance.problem, rho, gamma, policy, seed=instance.seed)
    cert.save(args.output)
    if cert.passed:
        print(f"certified: sigma={cert.sigma:.12g} s={cert.s:.6g} mu_s={cert.mu_s:.6g}")
        return EXIT_OK
    print(f"certification failed: {cert.failure}", file=sys.stderr)
    for key, val in cert.margins.items():
        print(f"  {key} = {val}", file=sys.stderr)
    return EXIT_CERT


def cmd_solve(args) -> int:
    instance = _load_instance(args.input)
    problem = instance.problem
    rho = _positive(args.rho, "--rho")
    gamma = _positive(args.gamma, "--gamma")
    max_iters = _at_least_one(args.max_iters, "--max-iters")
    if args.tol < 0.0:
        _fail_flags("invalid --tol: must be nonnegative")
    policy = build_policy(instance, rho, gamma, args.policy, args.tau)
    params = SolverParams(rho=rho, gamma=gamma, policy=policy,
                          max_iters=max_iters, dis_tol=args.tol)
    if isinstance(instance, exp.LcqpInstance):
        reference = instance.optimum()
    else:
        reference = exp.reference_solution(problem, params).point
    phi_ctx = None
    if args.method == "jprox":
        cert = certify(problem, rho, gamma, policy, seed=instance.seed)
        if cert.passed:
            consts = estimate_constants(problem)
            P_list = materialize_policy(policy, rho, problem)
            phi_ctx = PhiWeights.build(problem, gamma, rho, cert.s, P_list, consts)
    u0 = reference.copy() if args.u0 == "reference" else PrimalDualPoint.zeros(problem)
    trace = run(problem, params, u0, reference=reference, phi_context=phi_ctx,
                method=args.method)
    write_trace_csv(trace, args.output)
    if args.plot:
        plot_path = Path(args.output).with_suffix(".svg")
        line_plot_svg(
            plot_path,
            [(args.method, trace.ks, trace.dis)],
            title=f"rho={rho:g} gamma={gamma:g}",
            xlabel="k",
            ylabel="log10 dis",
            logy=True,
        )
    final_dis = trace.dis[-1]
    print(f"status={trace.status} iters={trace.ks[-1]} final_dis={_fmt(final_dis)}")
    if trace.status == DIVERGED:
        return EXIT_DIVERGED
    return EXIT_OK


def _cell_name(rho: float, gamma: float, seed: int) -> str:
    return f"trace_rho{rho:g}_gamma{gamma:g}_seed{seed}.csv"


def _rate_to_dict(rate) -> dict | None:
    if rate is None:
        return None
    return {"rate": rate.rate, "r_squared": rate.r_squared, "flat": rate.flat}


def cmd_sweep(args) -> int:
    instance = _load_instance(args.input)
    problem = instance.problem
    seeds = [instance.seed]
    if args.seeds:
        try:
            seeds = [int(s) for s in args.seeds.split(",") if s.strip() != ""]
        except ValueError:
            _fail_flags("invalid --seeds: expected a comma-separated list of integers")
        if not seeds:
            _fail_flags("invalid --seeds: list is empty")
    rho_grid = exp.default_rho_grid(instance)
    gamma_grid = exp.GAMMA_GRID
    if args.rho_grid:
        rho_grid = tuple(_positive(float(s), "--rho-grid") for s in args.rho_grid.split(","))
    if args.gamma_grid:
        gamma_grid = tuple(_positive(float(s), "--gamma-grid") for s in args.gamma_grid.split(","))
    max_iters = _at_least_one(args.max_iters, "--max-iters")

    instances = []
    for seed in seeds:
        if seed == instance.seed:
            instances.append(instance)
        elif isinstance(instance, exp.LcqpInstance):
            instances.append(exp.generate_lcqp(problem.N, problem.m, problem.dims[0], seed))
        else:
            instances.append(exp.generate_resource_alloc(problem.N, seed))

    sweep = exp.SweepConfig(rho_grid=rho_grid, gamma_grid=gamma_grid,
                            max_iters=max_iters, seeds=tuple(seeds))
    results = exp.run_sweep(instances, sweep, policy="auto")

    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "input": str(args.input),
        "rho_grid": list(rho_grid),
        "gamma_grid": list(gamma_grid),
        "seeds": seeds,
        "max_iters": max_iters,
        "cells": [],
    }
    succeeded = 0
    for (rho, gamma, seed), cell in sorted(results.items()):
        entry = {
            "rho": rho,
            "gamma": gamma,
            "seed": seed,
            "status": cell.status,
            "certificate": cell.certificate.to_dict() if cell.certificate else None,
            "dis_rate": _rate_to_dict(cell.dis_rate),
            "phi_rate": _rate_to_dict(cell.phi_rate),
            "error": cell.error,
            "trace": None,
        }
        if cell.trace is not None:
            name = _cell_name(rho, gamma, seed)
            write_trace_csv(cell.trace, outdir / name)
            entry["trace"] = name
            succeeded += 1
        manifest["cells"].append(entry)
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    print(f"sweep: {succeeded}/{len(manifest['cells'])} cells completed -> {outdir}")
    return EXIT_OK if succeeded else EXIT_IO


def cmd_report(args) -> int:
    indir = Path(args.input)
    manifest_path = indir / "manifest.json"
    if not manifest_path.exists():
        raise IOError(f"no manifest.json in {indir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    cells = manifest.get("cells", [])
    if not cells:
        raise IOError(f"{manifest_path} lists no cells")
    outdir = Path(args.output) if args.output else indir
    outdir.mkdir(parents=True, exist_ok=True)

    traces = {}
    for cell in cells:
        if cell.get("trace"):
            path = indir / cell["trace"]
            if not path.exists():
                raise IOError(f"missing trace file {path}")
            traces[(cell["rho"], cell["gamma"], cell["seed"])] = read_trace_csv(path)

    seeds = sorted({cell["seed"] for cell in cells})
    plot_seed = seeds[0]
    rho_grid = manifest["rho_grid"]
    gamma_grid = manifest["gamma_grid"]

    def series_for(fixed: str, value: float) -> list:
        out = []
        varying = rho_grid if fixed == "gamma" else gamma_grid
        for v in varying:
            key = (v, value, plot_seed) if fixed == "gamma" else (value, v, plot_seed)
            data = traces.get(key)
            if data is None:
                continue
            label = f"rho={v:g}" if fixed == "gamma" else f"gamma={v:g}"
            out.append((label, data["k"], data["dis"]))
        return out

    written = 0
    for gamma in gamma_grid:
        svg = outdir / f"fixed_gamma{gamma:g}.svg"
        line_plot_svg(svg, series_for("gamma", gamma),
                      title=f"gamma={gamma:g}, seed {plot_seed}",
                      xlabel="k", ylabel="log10 dis", logy=True)
        written += 1
    for rho in rho_grid:
        svg = outdir / f"fixed_rho{rho:g}.svg"
        line_plot_svg(svg, series_for("rho", rho),
                      title=f"rho={rho:g}, seed {plot_seed}",
                      xlabel="k", ylabel="log10 dis", logy=True)
        written += 1

    lines = ["rho gamma seed status sigma dis_rate phi_rate within_bound"]
    for cell in cells:
        cert = cell.get("certificate") or {}
        sigma = cert.get("sigma")
        phi_rate = (cell.get("phi_rate") or {}).get("rate")
        dis_rate = (cell.get("dis_rate") or {}).get("rate")
        within = ""
        if sigma is not None and phi_rate is not None and cert.get("passed"):
            within = "yes" if phi_rate <= sigma + 0.02 else "NO"
        lines.append(
            f"{cell['rho']:g} {cell['gamma']:g} {cell['seed']} {cell['status']} "
            f"{'' if sigma is None else format(sigma, '.6g')} "
            f"{'' if dis_rate is None else format(dis_rate, '.6g')} "
            f"{'' if phi_rate is None else format(phi_rate, '.6g')} {within}"
        )
    table = "\n".join(lines) + "\n"
    (outdir / "rates.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    print(f"report: wrote {written} SVG files to {outdir}")
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jprox",
        description="Parallel proximal multi-block ADMM: generate, certify, solve, sweep, report.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a seeded instance file")
    gen.add_argument("kind", choices=["lcqp", "ra"])
    gen.add_argument("--N", type=int, required=True, help="number of blocks")
    gen.add_argument("--m", type=int, default=1, help="constraint rows (lcqp)")
    gen.add_argument("--n", type=int, default=1, help="per-block dimension (lcqp)")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", default="instance.json")

    def solver_flags(p, tol_default: float):
        p.add_argument("--rho", type=float, default=1.0)
        p.add_argument("--gamma", type=float, default=1.0)
        p.add_argument("--policy", choices=["standard", "proxlinear", "none", "explicit"],
                       default="standard")
        p.add_argument("--tau", default="auto",
                       help="positive number, or 'auto' for certified weights")
        p.add_argument("--max-iters", dest="max_iters", type=int, default=4000)
        p.add_argument("--tol", type=float, default=tol_default)

    cer = sub.add_parser("certify", help="certify (rho, gamma, policy) for an instance")
    cer.add_argument("--input", required=True)
    cer.add_argument("--output", default="certificate.json")
    solver_flags(cer, 0.0)

    sol = sub.add_parser("solve", help="run a solver and write a CSV trace")
    sol.add_argument("--input", required=True)
    sol.add_argument("--output", default="trace.csv")
    sol.add_argument("--method", choices=["jprox", "jacobi-plain", "gauss-seidel", "dual-decomp"],
                     default="jprox")
    sol.add_argument("--u0", choices=["zeros", "reference"], default="zeros")
    sol.add_argument("--plot", action="store_true")
    solver_flags(sol, 1e-10)

    swp = sub.add_parser("sweep", help="run a (rho, gamma) grid campaign")
    swp.add_argument("--input", required=True)
    swp.add_argument("--output", default="sweep")
    swp.add_argument("--seeds", default="", help="comma-separated extra seeds")
    swp.add_argument("--rho-grid", dest="rho_grid", default="")
    swp.add_argument("--gamma-grid", dest="gamma_grid", default="")
    swp.add_argument("--max-iters", dest="max_iters", type=int, default=4000)

    rep = sub.add_parser("report", help="render SVGs and a rate table from a sweep directory")
    rep.add_argument("--input", required=True)
    rep.add_argument("--output", default="")
    return parser


def _validate_tau(args) -> None:
    tau = getattr(args, "tau", None)
    if tau is None or tau == "auto":
        return
    try:
        value = float(tau)
    except ValueError:
        _fail_flags("invalid --tau: expected a number or 'auto'")
    args.tau = _positive(value, "--tau")


COMMANDS = {
    "generate": cmd_generate,
    "certify": cmd_certify,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _validate_tau(args)
        code = COMMANDS[args.command](args)
    except FlagError as exc:
        print(str(exc), file=sys.stderr)
        code = EXIT_FLAGS
    except (IOError, OSError, json.JSONDecodeError) as exc:
        print(str(exc), file=sys.stderr)
        code = EXIT_IO
    except JproxError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_IO
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
