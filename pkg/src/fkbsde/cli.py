"""Batch experiment runner.

Configs are flat INI files with one section per concern; reports are a
deterministic report.json plus plot-ready CSV tables.  Wall-clock timings
go to a separate timing.json so that report.json and the CSVs are
byte-identical for a fixed (config, seed) regardless of thread count.

Exit codes: 0 all checks pass, 1 any check fails, 2 any check errors.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import configparser
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .bsde import (
    apriori_check,
    as_general_driver,
    comparison_check,
    solve_backward,
    stability_check,
    supersolution_residual,
)
from .errors import ConfigError, FkbsdeError
from .feynman_kac import (
    b_continuity_probe,
    evaluate_u,
    growth_probe,
    markov_consistency_check,
    terminal_condition_probe,
)
from .forward import RngPolicy, sample_increments, simulate_ensemble
from .linear_bsde import TerminalFunctional, gamma_paths, solve_linear_explicit
from .presets import (
    APRIORI_RATIO_BOUND,
    PRESET_NAMES,
    STABILITY_RATIO_BOUND,
    calibration_family,
    initial_state,
    linear_counterpart,
    problem_preset,
)
from .spectral import SpectralVector

_PROBLEM_KEYS = {"preset", "d", "d_xi", "t", "T", "n_steps", "c0",
                 "sigma_scale"}
_SOLVER_KEYS = {"n_paths", "seed", "basis_degree", "basis_modes",
                "picard_iters"}
_RUN_KEYS = {"threads", "tol_scale", "out"}
_INT_KEYS = {"d", "d_xi", "n_steps", "n_paths", "seed", "basis_degree",
             "basis_modes", "picard_iters", "threads"}
_FLOAT_KEYS = {"t", "T", "c0", "sigma_scale", "tol_scale"}


@dataclass
class RunConfig:
    preset: str
    overrides: dict
    seed: int = 0
    threads: int = 1
    tol_scale: float = 1.0
    out: str = "out"
    raw_bytes: bytes = b""

    def build_problem(self):
        return problem_preset(self.preset, seed=self.seed, **self.overrides)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.raw_bytes).hexdigest()


def load_config(path: str) -> RunConfig:
    """Parse and fully validate a run configuration.

    Validation includes building the problem once, so every module-level
    invariant (dimensions, strong B-condition, coefficient audits) has
    already been checked when this returns."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = p.read_bytes()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(raw.decode())
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    def typed(key, value):
        try:
            if key in _INT_KEYS:
                return int(value)
            if key in _FLOAT_KEYS:
                return float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
        return value

    overrides = {}
    preset = None
    seed, threads, tol_scale, out = 0, 1, 1.0, "out"
    for section in parser.sections():
        allowed = {"problem": _PROBLEM_KEYS, "solver": _SOLVER_KEYS,
                   "run": _RUN_KEYS}.get(section)
        if allowed is None:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in parser.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            value = typed(key, value)
            if key == "preset":
                preset = value
            elif key == "seed":
                seed = value
            elif key == "threads":
                threads = value
            elif key == "tol_scale":
                tol_scale = value
            elif key == "out":
                out = value
            else:
                overrides[key] = value
    if preset is None:
        raise ConfigError("missing required key 'preset' in [problem]")
    if preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {preset!r}")
    cfg = RunConfig(preset=preset, overrides=overrides, seed=seed,
                    threads=threads, tol_scale=tol_scale, out=out,
                    raw_bytes=raw)
    try:
        cfg.build_problem()
    except FkbsdeError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# Checks.  Each check is a pure function of (problem, cfg) returning a
# verdict block {check, verdict, statistic, tolerance, seed} plus optional
# CSV tables {name: (header, rows)}.


def _block(name, verdict, statistic, tolerance, seed, **extra):
    block = {"check": name, "verdict": verdict, "statistic": statistic,
             "tolerance": tolerance, "seed": seed}
    block.update(extra)
    return block


def _common_ensemble(problem, cfg):
    x0 = initial_state(problem)
    incs = sample_increments(problem.grid, problem.settings.n_paths,
                             problem.noise, RngPolicy(cfg.seed))
    return simulate_ensemble(problem.generator, problem.coeffs, problem.grid,
                             x0, incs, seed=cfg.seed)


def _check_gamma_oracle(problem, cfg):
    lin = linear_counterpart(cfg.preset)
    ens = _common_ensemble(problem, cfg)
    gamma = gamma_paths(lin, ens)
    explicit = solve_linear_explicit(lin, problem.terminal, ens, gamma)
    sol = solve_backward(problem.driver, problem.terminal, ens,
                         problem.settings.basis,
                         problem.settings.picard_iters,
                         pathwise_ode=problem.coeffs.sigma_is_zero)
    gap = abs(sol.y0 - explicit.y0)
    tol = cfg.tol_scale * 3.0 * math.hypot(sol.y0_stderr, explicit.stderr)
    block = _block("gamma_oracle", "pass" if gap <= tol else "fail",
                   gap, tol, cfg.seed,
                   regression_value=sol.y0, explicit_value=explicit.y0)
    return block, {}


def _check_comparison(problem, cfg):
    shifted = TerminalFunctional(
        eta=lambda xs, base=problem.terminal.eta: np.asarray(base(xs)) + 0.5,
        lip=problem.terminal.lip, name="shifted")
    ens = _common_ensemble(problem, cfg)
    rep = comparison_check(problem.driver, problem.terminal,
                           problem.driver, shifted,
                           ens, problem.settings.basis,
                           problem.settings.picard_iters, strict_gap=0.25)
    ok = rep["holds"] and rep["strict_holds"]
    block = _block("comparison", "pass" if ok else "fail",
                   rep["margin"], cfg.tol_scale * rep["tolerance"], cfg.seed,
                   uniform_gap=rep["uniform_gap"])
    return block, {}


def _check_apriori(problem, cfg):
    worst = 0.0
    rows = []
    for k, (driver, terminal) in enumerate(
            calibration_family(problem.noise.d_xi)):
        ens = _common_ensemble(problem, cfg)
        sol = solve_backward(driver, terminal, ens, problem.settings.basis,
                             problem.settings.picard_iters,
                             pathwise_ode=problem.coeffs.sigma_is_zero)
        rep = apriori_check(driver, terminal, ens, sol)
        worst = max(worst, rep["ratio"])
        rows.append((k, rep["lhs"], rep["rhs"], rep["ratio"]))
    tol = cfg.tol_scale * 1.2 * APRIORI_RATIO_BOUND
    block = _block("apriori", "pass" if worst <= tol else "fail",
                   worst, tol, cfg.seed)
    table = {"apriori": (["draw", "lhs", "rhs", "ratio"], rows)}
    return block, table


def _check_stability(problem, cfg):
    worst = 0.0
    rows = []
    family = calibration_family(problem.noise.d_xi)
    ens = _common_ensemble(problem, cfg)
    for k in range(len(family) - 1):
        d1, t1 = family[k]
        d2, t2 = family[k + 1]
        rep = stability_check(d1, t1, d2, t2, ens, problem.settings.basis,
                              problem.settings.picard_iters)
        worst = max(worst, rep["ratio"])
        rows.append((k, rep["lhs"], rep["rhs"], rep["ratio"]))
    tol = cfg.tol_scale * 1.2 * STABILITY_RATIO_BOUND
    block = _block("stability", "pass" if worst <= tol else "fail",
                   worst, tol, cfg.seed)
    return block, {"stability": (["pair", "lhs", "rhs", "ratio"], rows)}


def _check_residual(problem, cfg):
    # Regressed solutions carry pathwise noise in z far above the
    # discretization slack, so the monotonicity check runs on an exact
    # zero-noise companion: same driver and terminal, deterministic flow.
    x0 = initial_state(problem)
    zero_incs = np.zeros((4, problem.grid.n_steps, problem.noise.d_xi))
    ens = simulate_ensemble(problem.generator, problem.coeffs, problem.grid,
                            x0, zero_incs, seed=cfg.seed)
    sol = solve_backward(problem.driver, problem.terminal, ens,
                         problem.settings.basis,
                         problem.settings.picard_iters, pathwise_ode=True)
    elapsed = problem.grid.times - problem.grid.start
    _, up = supersolution_residual(sol.y - elapsed[None, :], sol.z,
                                   problem.driver, ens)
    _, down = supersolution_residual(sol.y + elapsed[None, :], sol.z,
                                     problem.driver, ens)
    ok = up["is_supersolution"] and down["is_subsolution"]
    block = _block("supersolution_residual", "pass" if ok else "fail",
                   up["min_increment"],
                   cfg.tol_scale * up["tolerance"], cfg.seed)
    return block, {}


def _check_markov(problem, cfg):
    h = (problem.grid.end - problem.grid.start) * 0.2
    h = problem.grid.dt * max(1, round(h / problem.grid.dt))
    rep = markov_consistency_check(problem, problem.grid.start,
                                   initial_state(problem), h, seed=cfg.seed)
    tol = cfg.tol_scale * 3.0 * max(rep["stderr"], 1e-12)
    block = _block("markov_consistency", "pass" if abs(rep["gap"]) <= tol
                   else "fail", rep["gap"], tol, cfg.seed)
    return block, {}


def _check_b_continuity(problem, cfg):
    x0 = initial_state(problem)
    perts = []
    labels = []
    modes = sorted({1, max(1, problem.d // 2), problem.d})
    for mode in modes:
        for mag in (0.01, 0.05, 0.1):
            e = np.zeros(problem.d)
            e[mode - 1] = mag
            perts.append(SpectralVector(e))
            labels.append((mode, mag))
    rep = b_continuity_probe(problem, problem.grid.start, x0, perts,
                             seed=cfg.seed)
    stat = rep["max_ratio"]
    ok = math.isfinite(stat)
    rows = [(mode, mag, r["weak_norm_sq"], r["value_gap"], r["ratio"])
            for (mode, mag), r in zip(labels, rep["rows"])]
    block = _block("b_continuity", "pass" if ok else "fail", stat,
                   math.inf, cfg.seed)
    return block, {"b_continuity": (
        ["mode", "magnitude", "weak_norm_sq", "value_gap", "ratio"], rows)}


def _check_terminal(problem, cfg):
    span = problem.grid.end - problem.grid.start
    times = [problem.grid.end - f * span for f in (0.2, 0.1, 0.05, 0.025)]
    rep = terminal_condition_probe(problem, initial_state(problem), times,
                                   final_tol=0.02 * cfg.tol_scale,
                                   seed=cfg.seed)
    rows = [(r["t"], r["value"], r["reference"], r["error"], r["stderr"])
            for r in rep["rows"]]
    block = _block("terminal_condition", "pass" if rep["holds"] else "fail",
                   rep["final_error"], rep["final_bound"], cfg.seed)
    return block, {"terminal_condition": (
        ["t", "value", "reference", "error", "stderr"], rows)}


def _check_growth(problem, cfg):
    rep = growth_probe(problem, problem.grid.start, initial_state(problem),
                       [1.0, 2.0, 4.0, 8.0], seed=cfg.seed)
    rows = [(r["magnitude"], r["state_norm"], r["value"], r["stderr"])
            for r in rep["rows"]]
    block = _block("growth", "pass" if rep["holds"] else "fail",
                   rep["exponent"], rep["bound"], cfg.seed)
    return block, {"growth": (
        ["magnitude", "state_norm", "value", "stderr"], rows)}


def _check_solve(problem, cfg):
    est = evaluate_u(problem, problem.grid.start, initial_state(problem),
                     seed=cfg.seed)
    block = _block("solve", "pass", est.value, math.inf, cfg.seed,
                   stderr=est.stderr, diagnostics=est.diagnostics)
    return block, {}


def _check_sweep(problem, cfg):
    rows = []
    base_steps = problem.grid.n_steps
    for factor in (1, 2, 4):
        est = evaluate_u(problem, problem.grid.start, initial_state(problem),
                         seed=cfg.seed, n_steps=base_steps * factor)
        rows.append((base_steps * factor, problem.settings.n_paths,
                     est.value, est.stderr))
    block = _block("sweep", "pass", rows[-1][2], math.inf, cfg.seed)
    return block, {"sweep": (["n_steps", "n_paths", "value", "stderr"], rows)}


_COMMANDS = {
    "solve": ["solve"],
    "verify-bsde": ["gamma_oracle", "comparison", "apriori", "stability",
                    "supersolution_residual"],
    "verify-fk": ["markov_consistency", "b_continuity",
                  "terminal_condition", "growth"],
    "sweep": ["sweep"],
}

_CHECK_FNS = {
    "solve": _check_solve,
    "gamma_oracle": _check_gamma_oracle,
    "comparison": _check_comparison,
    "apriori": _check_apriori,
    "stability": _check_stability,
    "supersolution_residual": _check_residual,
    "markov_consistency": _check_markov,
    "b_continuity": _check_b_continuity,
    "terminal_condition": _check_terminal,
    "growth": _check_growth,
    "sweep": _check_sweep,
}


def _jsonsafe(obj):
    """Replace non-finite floats so report.json stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonsafe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonsafe(v) for v in obj]
    return obj


def _write_csv(path: Path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                f"{v:.17g}" if isinstance(v, float) else str(v)
                for v in row) + "\n")


def run(cfg: RunConfig, command: str) -> dict:
    """Execute a command's check suite and write report.json plus CSVs."""
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    problem = cfg.build_problem()
    names = list(_COMMANDS[command])
    if command == "verify-bsde" and linear_counterpart(cfg.preset) is None:
        names.remove("gamma_oracle")

    started = time.perf_counter()
    timings = {}
    results = {}

    def run_one(name):
        t0 = time.perf_counter()
        try:
            block, tables = _CHECK_FNS[name](problem, cfg)
        except FkbsdeError as exc:
            block = _block(name, "error", math.nan, math.nan, cfg.seed,
                           error=f"{type(exc).__name__}: {exc}")
            tables = {}
        return name, block, tables, time.perf_counter() - t0

    if cfg.threads > 1 and len(names) > 1:
        with concurrent.futures.ThreadPoolExecutor(cfg.threads) as pool:
            outcomes = list(pool.map(run_one, names))
    else:
        outcomes = [run_one(name) for name in names]
    for name, block, tables, elapsed in outcomes:
        results[name] = (block, tables)
        timings[name] = elapsed

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    checks = []
    for name in sorted(results):
        block, tables = results[name]
        checks.append(block)
        for table_name in sorted(tables):
            header, rows = tables[table_name]
            _write_csv(out_dir / f"{table_name}.csv", header, rows)

    report = {
        "schema_version": 1,
        "command": command,
        "preset": cfg.preset,
        "provenance": {
            "config_hash": cfg.config_hash,
            "seed": cfg.seed,
            "version": __version__,
        },
        "checks": checks,
    }
    (out_dir / "report.json").write_text(
        json.dumps(_jsonsafe(report), sort_keys=True, indent=2) + "\n")
    timings["total"] = time.perf_counter() - started
    (out_dir / "timing.json").write_text(
        json.dumps(timings, sort_keys=True, indent=2) + "\n")
    return report


def report_exit_code(report: dict) -> int:
    verdicts = {c["verdict"] for c in report["checks"]}
    if "error" in verdicts:
        return 2
    if "fail" in verdicts:
        return 1
    return 0


def summarize(report: dict, stream=None) -> None:
    stream = stream or sys.stdout
    for check in report["checks"]:
        stat = float(check["statistic"])
        tol = float(check["tolerance"])
        stream.write(f"{check['verdict']:5s} {check['check']}: "
                     f"statistic={stat:.6g} tolerance={tol:.6g}\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fkbsde",
        description="Probabilistic PDE solver and verification suite")
    parser.add_argument("command",
                        choices=["solve", "verify-bsde", "verify-fk",
                                 "sweep", "report"])
    parser.add_argument("--config", required=True)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default=None)
    parser.add_argument("--tol-scale", type=float, default=None)
    args = parser.parse_args(argv)

    if args.command == "report":
        path = Path(args.out or "out") / "report.json"
        if not path.is_file():
            sys.stderr.write(f"no report at {path}\n")
            return 2
        report = json.loads(path.read_text())
        summarize(report)
        return report_exit_code(report)

    try:
        cfg = load_config(args.config)
    except FkbsdeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.out is not None:
        cfg.out = args.out
    if args.tol_scale is not None:
        cfg.tol_scale = args.tol_scale
    try:
        report = run(cfg, args.command)
    except FkbsdeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    summarize(report)
    return report_exit_code(report)


if __name__ == "__main__":
    sys.exit(main())
