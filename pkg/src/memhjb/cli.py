"""Command-line runner: ``memhjb run <config>`` and ``memhjb list``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import _core
from .config import KINDS, ConfigError, ExperimentConfig, load_config, required_fields
from .dynamics import BlowUpError, ControlLaw, PicardDivergenceError, picard_constant, picard_solve, solve_cauchy
from .hilbert import (
    InternalConsistencyError,
    apply_B,
    b_image_norm,
    b_norm_routes,
    lower_bound_ratio,
    tb_form,
    tb_form_closed,
)
from .kernel import HistoryState
from .reduced import ConvergenceError, OutOfDomainError, ReducedProblem, cross_validate, reduced_pde_residual, solve_reduced_hjb
from .value import ControlFamily, FamilyTooLarge, dpp_residual, truncation_horizon, value_estimate, write_value_csv

logger = logging.getLogger("memhjb")

EXPERIMENTS = {
    "simulate": "state equation with memory: RK4 solve cross-checked by Picard contraction in the weighted sup norm",
    "value": "discounted infinite-horizon value by minimization over piecewise-constant controls",
    "dpp": "dynamic programming principle v = inf {segment cost + exp(-lam t) v(shifted state)}",
    "bop": "operator B = (I + T*T)^-1 via the Robin problem; B-norm identity and <TB a, a> >= 0",
    "hjb2d": "reduced two-dimensional HJB for exponential memory, semi-Lagrangian value iteration",
    "xval": "finite-dimensional reduction v(x, z) = w(x, y(z)) with y(z) = int exp(-delta s) z(s) ds",
}

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _check(name, value, tol, ok) -> dict:
    return {"name": name, "value": float(value), "tolerance": float(tol), "pass": bool(ok)}


def _horizon(cfg: ExperimentConfig, cost, h):
    return cfg.discretization.T if cfg.discretization.T is not None else truncation_horizon(cost, h)


def _family(cfg: ExperimentConfig) -> ControlFamily:
    f = cfg.family
    return ControlFamily(f.m, f.span, tuple(f.controls) if f.controls is not None else None)


def run_simulate(cfg: ExperimentConfig, out: Path, rng) -> dict:
    prob = cfg.build_problem()
    spec = cfg.simulate
    alpha = cfg.history.build()
    h = cfg.discretization.h
    law = ControlLaw.uniform(cfg.control.indices, cfg.control.span)
    traj = solve_cauchy(prob.dyn, prob.kernel, alpha, law, spec.T, h)
    traj.to_csv(out / "trajectory.csv")
    results = {"y_final": traj.y[-1].tolist(), "steps": len(traj.t) - 1}
    checks = []
    if spec.picard_check:
        C = picard_constant(prob.dyn, prob.kernel)
        theta = spec.theta if spec.theta is not None else 2 * C + 1
        pic, dist = picard_solve(prob.dyn, prob.kernel, alpha, law, spec.T, h, theta)
        gap = float(np.max(np.abs(pic.y - traj.y)))
        results |= {"picard_gap": gap, "picard_iterations": len(dist), "theta": theta}
        checks.append(_check("rk4_vs_picard_sup_gap", gap, 1e-6, gap <= 1e-6))
    return {"results": results, "checks": checks, "files": ["trajectory.csv"]}


def run_value(cfg: ExperimentConfig, out: Path, rng) -> dict:
    prob = cfg.build_problem()
    h = cfg.discretization.h
    T = _horizon(cfg, prob.cost, h)
    family = _family(cfg)
    xs = cfg.value.x_values if cfg.value is not None and cfg.value.x_values else [cfg.history.x]
    estimates, inputs = [], []
    for x in xs:
        alpha = cfg.history.build(x)
        est = value_estimate(prob.dyn, prob.kernel, prob.cost, alpha, family, T, h, mode=cfg.family.mode,
                             max_candidates=cfg.family.max_candidates)
        estimates.append(est)
        inputs.append({"x": float(x), "z_l2": alpha.l2_norm()})
    write_value_csv(out / "values.csv", estimates, inputs)
    bound = prob.cost.value_bound
    worst = max(abs(e.value) - bound - e.tail_bound for e in estimates)
    return {
        "results": {"values": [e.value for e in estimates], "horizon": T, "best": [list(e.best) for e in estimates]},
        "checks": [_check("value_within_bound", worst, 0.0, worst <= 0.0)],
        "files": ["values.csv"],
    }


def run_dpp(cfg: ExperimentConfig, out: Path, rng) -> dict:
    prob = cfg.build_problem()
    h = cfg.discretization.h
    T = _horizon(cfg, prob.cost, h)
    res = dpp_residual(prob.dyn, prob.kernel, prob.cost, cfg.history.build(), cfg.dpp.t, _family(cfg), T, h,
                       max_candidates=cfg.family.max_candidates * 10)
    _write_rows(out / "dpp.csv", ["t", "lhs", "rhs", "residual"], [[res.t, res.lhs, res.rhs, res.residual]])
    return {
        "results": {"residual": res.residual, "lhs": res.lhs, "rhs": res.rhs, "horizon": T},
        "checks": [_check("dpp_residual", res.residual, cfg.dpp.tol, res.residual <= cfg.dpp.tol)],
        "files": ["dpp.csv"],
    }


def _random_point(rng, s, h):
    amp = rng.normal(0.0, 1.0, 3)
    rate = rng.uniform(0.2, 2.0, 3)
    freq = rng.uniform(0.0, 3.0, 3)
    phase = rng.uniform(0.0, 2 * np.pi, 3)
    z = (amp[:, None] * np.exp(-rate[:, None] * s) * np.cos(freq[:, None] * s + phase[:, None])).sum(axis=0)
    return HistoryState(x=rng.normal(0.0, 1.0, 1), z=z[:, None], h=h)


def run_bop(cfg: ExperimentConfig, out: Path, rng) -> dict:
    spec = cfg.bop
    h = spec.h_z
    s = h * np.arange(int(round(spec.s_max / h)) + 1)
    rows = []
    for i in range(spec.n_samples):
        alpha = _random_point(rng, s, h)
        B = apply_B(alpha)
        direct, ident = b_norm_routes(alpha, B)
        rows.append([i, float(alpha.x[0]), alpha.l2_norm(), direct, ident, abs(direct - ident) / abs(ident),
                     tb_form(alpha, B), b_image_norm(alpha, B), lower_bound_ratio(alpha), B.residual])
    _write_rows(out / "bop.csv", ["index", "x", "z_l2", "b_norm_direct", "b_norm_identity", "rel_gap", "tb_form",
                                  "b_image_norm", "lower_bound_ratio", "bvp_residual"], rows)
    arr = np.array([r[1:] for r in rows])
    rel, tb, img, lower = arr[:, 4].max(), arr[:, 5].min(), arr[:, 6], arr[:, 7]
    contraction = float(np.max(img - np.sqrt(np.maximum(arr[:, 2], 0))))
    ref = HistoryState.from_function(np.array([1.0]), lambda t: np.exp(-t), h, spec.s_max)
    refB = apply_B(ref)
    return {
        "results": {
            "max_rel_gap": rel,
            "min_tb_form": tb,
            "measured_lower_bound_constant": float(lower.min()),
            "reference_point": {"b_norm_sq": b_norm_routes(ref, refB)[0], "tb_form": tb_form(ref, refB),
                                "tb_form_closed": tb_form_closed(ref, refB), "y": float(refB.y[0])},
        },
        "checks": [
            _check("b_norm_two_routes_rel_gap", rel, spec.rel_tol, rel <= spec.rel_tol),
            _check("tb_form_nonnegative", tb, -1e-9, tb >= -1e-9),
            _check("b_contraction", contraction, 1e-9, contraction <= 1e-9),
        ],
        "files": ["bop.csv"],
    }


def _reduced(cfg: ExperimentConfig, prob):
    delta = prob.delta
    if delta is None:
        raise ConfigError("the reduced equation needs a single exponential kernel with unit coefficient")
    spec = cfg.hjb
    return ReducedProblem(prob.dyn, prob.cost, delta, tuple(spec.box), spec.nx, spec.ny)


def run_hjb2d(cfg: ExperimentConfig, out: Path, rng) -> dict:
    prob = cfg.build_problem()
    red = _reduced(cfg, prob)
    spec = cfg.hjb
    grid = solve_reduced_hjb(red, spec.dt, spec.tol, spec.max_iter)
    grid.to_csv(out / "value_grid.csv")
    beta = float(np.exp(-prob.cost.lam * spec.dt))
    ratio = float(grid.contraction_ratios().max()) if grid.iterations > 1 else 0.0
    sup = float(np.max(np.abs(grid.w)))
    resid = reduced_pde_residual(grid, red, spec.margin)
    return {
        "results": {"iterations": grid.iterations, "final_update": grid.final_update, "pde_residual": resid,
                    "max_contraction_ratio": ratio, "sup_w": sup},
        "checks": [
            _check("contraction_factor", ratio, beta + 1e-12, ratio <= beta + 1e-12),
            _check("sup_bound", sup, prob.cost.value_bound, sup <= prob.cost.value_bound + 1e-12),
        ],
        "files": ["value_grid.csv"],
    }


def run_xval(cfg: ExperimentConfig, out: Path, rng) -> dict:
    prob = cfg.build_problem()
    red = _reduced(cfg, prob)
    spec = cfg.hjb
    h = cfg.discretization.h
    grid = solve_reduced_hjb(red, spec.dt, spec.tol, spec.max_iter)
    alpha = cfg.history.build()
    res = cross_validate(prob.dyn, prob.cost, red.delta, alpha, grid, _family(cfg), _horizon(cfg, prob.cost, h), h,
                         mode=cfg.family.mode)
    _write_rows(out / "xval.csv", ["x", "moment", "v_direct", "w_reduced", "gap"],
                [[float(alpha.x[0]), res.moment, res.v_direct, res.w_reduced, res.gap]])
    return {
        "results": {"v_direct": res.v_direct, "w_reduced": res.w_reduced, "gap": res.gap, "moment": res.moment},
        "checks": [],
        "files": ["xval.csv"],
    }


RUNNERS = {
    "simulate": run_simulate,
    "value": run_value,
    "dpp": run_dpp,
    "bop": run_bop,
    "hjb2d": run_hjb2d,
    "xval": run_xval,
}

NUMERIC_ERRORS = (
    BlowUpError,
    PicardDivergenceError,
    InternalConsistencyError,
    ConvergenceError,
    OutOfDomainError,
    FamilyTooLarge,
    FloatingPointError,
)


def _error_payload(exc) -> dict:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("ratios", "updates", "time"):
        if hasattr(exc, attr):
            payload[attr] = getattr(exc, attr)
    return payload


def run(config_path, output_dir=None, seed=None) -> int:
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": seed})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(output_dir if output_dir is not None else cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    logger.info("running %s experiment from %s", cfg.kind, config_path)
    summary = {"kind": cfg.kind, "config": cfg.echo(), "backend": _core.BACKEND}
    try:
        summary |= RUNNERS[cfg.kind](cfg, out, rng)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        payload = _error_payload(exc)
        summary |= {"status": "error", **payload}
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        print(json.dumps(payload), file=sys.stderr)
        return EXIT_NUMERIC
    summary["status"] = "ok" if all(c["pass"] for c in summary["checks"]) else "checks_failed"
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for c in summary["checks"]:
        logger.info("%s: %s (%.3e vs %.3e)", c["name"], "pass" if c["pass"] else "FAIL", c["value"], c["tolerance"])
    return 0


def list_experiments() -> str:
    lines = ["kind      required tables                          exercises"]
    for kind in KINDS:
        req = ", ".join(required_fields(kind))
        lines.append(f"{kind:<9} {req:<40} {EXPERIMENTS[kind]}")
    return "\n".join(lines) + "\n"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="memhjb", description="Optimal control with memory: experiment runner")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the experiment described by a TOML config")
    p_run.add_argument("config")
    p_run.add_argument("--output-dir", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)
    sub.add_parser("list", help="list the experiment kinds")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "list":
        sys.stdout.write(list_experiments())
        return 0
    return run(args.config, args.output_dir, args.seed)


if __name__ == "__main__":
    sys.exit(main())
