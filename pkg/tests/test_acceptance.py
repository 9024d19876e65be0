"""Acceptance suite: one test per release criterion, each printing a
single PASS/FAIL line with its headline statistic and pinned tolerance."""

import json
import math

import numpy as np
import pytest

from fkbsde.bsde import RegressionBasis, apriori_check, comparison_check, \
    solve_backward, stability_check
from fkbsde.cli import load_config, run
from fkbsde.fd_oracle import Grid1D, solve_semilinear_fd
from fkbsde.feynman_kac import b_continuity_probe, evaluate_u, \
    oracle_compare, terminal_condition_probe
from fkbsde.forward import RngPolicy, TimeGrid, coefficient_preset, \
    sample_increments, simulate_ensemble
from fkbsde.linear_bsde import TerminalFunctional, gamma_paths, \
    solve_linear_explicit
from fkbsde.presets import (
    APRIORI_RATIO_BOUND,
    STABILITY_RATIO_BOUND,
    calibration_family,
    driver_scaled_value,
    initial_state,
    linear_battery,
    problem_preset,
    terminal_first_mode,
)
from fkbsde.spectral import (
    DiagonalGenerator,
    NoiseModel,
    SpectralVector,
    apply_semigroup,
    generator_preset,
    norm_h,
)


def verdict_line(number, label, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"[criterion {number:2d}] {status} {label}: {detail}")


def ou_ensemble(grid, m, seed):
    gen = generator_preset("identity_decay", 1, rate=1.0)
    coeffs = coefficient_preset("constant_sigma", 1, 1)
    incs = sample_increments(grid, m, NoiseModel(1), RngPolicy(seed))
    return simulate_ensemble(gen, coeffs, grid,
                             SpectralVector(np.array([1.0])), incs, seed=seed)


BASIS_1D = RegressionBasis(degree=2, n_modes=1)


def test_criterion_01_linear_oracle_equivalence():
    # 5 linear drivers on the 1-d mean-reverting forward process; the
    # regression value must match the exponential-weight formula within
    # 3 combined standard errors in at least 4 of 5 presets per seed.
    grid = TimeGrid(0.0, 1.0, 50)
    term = terminal_first_mode()
    battery = linear_battery(1)
    per_seed = []
    for seed in range(20):
        ens = ou_ensemble(grid, 100_000, seed)
        n_ok = 0
        for name, lin, drv in battery:
            explicit = solve_linear_explicit(lin, term, ens,
                                             gamma_paths(lin, ens))
            sol = solve_backward(drv, term, ens, BASIS_1D)
            gap = abs(sol.y0 - explicit.y0)
            tol = 3.0 * math.hypot(sol.y0_stderr, explicit.stderr)
            n_ok += gap <= tol
        per_seed.append(n_ok)
    ok = all(n >= 4 for n in per_seed)
    verdict_line(1, "linear oracle equivalence", ok,
                 f"per-seed agreement counts {per_seed} (need >= 4 of 5)")
    assert ok


def test_criterion_02_classical_heat_value():
    p = problem_preset("heat_1d")  # 100k paths, 50 steps
    est = evaluate_u(p, 0.0, SpectralVector(np.array([0.0])), seed=1)
    ok = abs(est.value - 1.0) <= 0.02
    verdict_line(2, "classical heat value", ok,
                 f"u(0,0) = {est.value:.5f}, target 1.0 within 2%")
    assert ok


def test_criterion_03_truncated_heat_value():
    p = problem_preset("heat_d8")  # 8 modes, T = 0.1
    est = evaluate_u(p, 0.0, initial_state(p), seed=1)
    target = math.exp(-math.pi**2 * 0.1)
    ok = abs(est.value - target) <= 3 * est.stderr
    verdict_line(3, "truncated stochastic heat value", ok,
                 f"u(0,e1) = {est.value:.5f} +- {est.stderr:.5f}, "
                 f"target {target:.5f} within 3 stderr")
    assert ok


def test_criterion_04_semilinear_oracle_agreement():
    grid = Grid1D(-8.0, 8.0, 401, 200)
    fd = solve_semilinear_fd(lambda t, x: np.zeros_like(x),
                             lambda t, x: np.ones_like(x),
                             lambda t, x, v, z: np.sin(v),
                             np.cos, grid, 0.0, 1.0)
    p = problem_preset("semilinear_sine_1d")
    points = [(0.0, -1.0), (0.0, 0.0), (0.5, -1.0), (0.5, 0.0), (0.5, 1.0)]
    rep = oracle_compare(p, fd, points, seed=11)
    ok = rep["max_relative_error"] <= 0.05
    verdict_line(4, "semilinear oracle agreement", ok,
                 f"max relative gap {rep['max_relative_error']:.4f} "
                 f"over 5 points, bound 0.05")
    assert ok


def test_criterion_05_comparison_theorem():
    grid = TimeGrid(0.0, 1.0, 50)
    t1 = terminal_first_mode()
    t2 = TerminalFunctional(eta=lambda xs: xs[:, 0] + 0.5, lip=1.0,
                            name="shifted")
    drv = driver_scaled_value(1.0)
    target = 0.5 * math.exp(-1.0)
    weak_failures = 0
    strict_all = True
    worst_gap = 0.0
    for seed in range(20):
        ens = ou_ensemble(grid, 20_000, seed)
        rep = comparison_check(drv, t1, drv, t2, ens, BASIS_1D,
                               strict_gap=0.25)
        if abs(rep["margin"] - target) > rep["tolerance"]:
            weak_failures += 1
        strict_all = strict_all and rep["strict_holds"]
        worst_gap = max(worst_gap, abs(rep["margin"] - target))
    ok = weak_failures == 0 and strict_all
    verdict_line(5, "comparison theorem", ok,
                 f"margin vs 0.5/e: worst gap {worst_gap:.5f}, "
                 f"{weak_failures} weak failures over 20 seeds, "
                 f"strict verdict {'held' if strict_all else 'failed'}")
    assert ok


def test_criterion_06_apriori_and_stability_calibration():
    grid = TimeGrid(0.0, 1.0, 40)
    family = calibration_family(1)
    worst_a, worst_s = 0.0, 0.0
    for seed in (7, 77, 777, 7777, 77777):
        ens = ou_ensemble(grid, 4000, seed)
        for drv, term in family:
            sol = solve_backward(drv, term, ens, BASIS_1D)
            worst_a = max(worst_a,
                          apriori_check(drv, term, ens, sol)["ratio"])
        for k in range(len(family) - 1):
            rep = stability_check(family[k][0], family[k][1],
                                  family[k + 1][0], family[k + 1][1],
                                  ens, BASIS_1D)
            worst_s = max(worst_s, rep["ratio"])
    ok = (worst_a <= 1.2 * APRIORI_RATIO_BOUND
          and worst_s <= 1.2 * STABILITY_RATIO_BOUND)
    verdict_line(6, "a priori and stability calibration", ok,
                 f"worst ratios {worst_a:.4f}/{worst_s:.4f} vs bounds "
                 f"{1.2 * APRIORI_RATIO_BOUND:.4f}/"
                 f"{1.2 * STABILITY_RATIO_BOUND:.4f}")
    assert ok


def test_criterion_07_b_continuity_stable_under_dim_doubling():
    mags = np.geomspace(0.01, 0.1, 7)
    max_ratio = {}
    for d in (8, 16):
        p = problem_preset("heat_d8", d=d, d_xi=d, n_paths=4000, n_steps=25)
        perts = []
        for k in (1, 4, 8):
            for mag in mags:
                e = np.zeros(d)
                e[k - 1] = mag
                perts.append(SpectralVector(e))
        rep = b_continuity_probe(p, 0.0, initial_state(p), perts, seed=5)
        max_ratio[d] = rep["max_ratio"]
    finite = all(math.isfinite(v) for v in max_ratio.values())
    factor = max_ratio[16] / max_ratio[8]
    ok = finite and 0.5 <= factor <= 2.0
    verdict_line(7, "weak-norm continuity under dimension doubling", ok,
                 f"max ratios d=8: {max_ratio[8]:.4f}, d=16: "
                 f"{max_ratio[16]:.4f} (21 coupled pairs each, factor "
                 f"{factor:.3f} within [0.5, 2])")
    assert ok


def test_criterion_08_terminal_condition():
    p = problem_preset("linear_1d")
    x = initial_state(p)
    rep = terminal_condition_probe(p, x, [0.8, 0.9, 0.95, 0.975],
                                   final_tol=0.02, seed=2)
    ok = rep["holds"]
    errs = [f"{r['error']:.4f}" for r in rep["rows"]]
    verdict_line(8, "terminal condition", ok,
                 f"errors {errs} decreasing={rep['decreasing']}, final "
                 f"{rep['final_error']:.4f} <= {rep['final_bound']:.4f}")
    assert ok


def test_criterion_09_deterministic_reports(tmp_path):
    cfg_path = tmp_path / "run.ini"
    cfg_path.write_text(
        "[problem]\npreset = ou_1d\nn_steps = 10\n"
        "[solver]\nn_paths = 1000\nseed = 5\n")
    outputs = {}
    for command in ("verify-fk", "verify-bsde"):
        blobs = []
        for threads in (1, 4, 8):
            cfg = load_config(str(cfg_path))
            cfg.threads = threads
            cfg.out = str(tmp_path / f"{command}-{threads}")
            report = run(cfg, command)
            assert all(c["verdict"] == "pass" for c in report["checks"])
            out = tmp_path / f"{command}-{threads}"
            blob = {f.name: f.read_bytes()
                    for f in sorted(out.iterdir()) if f.name != "timing.json"}
            blobs.append(blob)
        outputs[command] = (blobs[0] == blobs[1] == blobs[2])
    ok = all(outputs.values())
    verdict_line(9, "byte-identical reports across thread counts", ok,
                 f"verify-fk: {outputs['verify-fk']}, "
                 f"verify-bsde: {outputs['verify-bsde']}")
    assert ok


def test_criterion_10_forward_and_semigroup_properties():
    # moment check for the mean-reverting forward preset
    grid = TimeGrid(0.0, 1.0, 400)
    ens = ou_ensemble(grid, 100_000, seed=99)
    xt = ens.states[:, -1, 0]
    m = len(xt)
    mean_ok = abs(xt.mean() - math.exp(-1.0)) \
        <= 3 * xt.std(ddof=1) / math.sqrt(m)
    var = xt.var(ddof=1)
    target_var = (1 - math.exp(-2.0)) / 2
    var_ok = abs(var - target_var) <= 3 * var * math.sqrt(2.0 / (m - 1))

    # semigroup invariants on 1000 random inputs
    rng = np.random.default_rng(2024)
    comp_ok = True
    contr_ok = True
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        gen = DiagonalGenerator(np.sort(rng.uniform(0.0, 5.0, d)))
        v = SpectralVector(rng.standard_normal(d))
        dt1, dt2 = rng.uniform(0.0, 2.0, 2)
        once = apply_semigroup(gen, dt1 + dt2, v)
        twice = apply_semigroup(gen, dt2, apply_semigroup(gen, dt1, v))
        comp_ok &= bool(np.allclose(once.coeffs, twice.coeffs,
                                    rtol=1e-12, atol=1e-14))
        contr_ok &= norm_h(once) <= norm_h(v) * (1 + 1e-12)
    ok = mean_ok and var_ok and comp_ok and contr_ok
    verdict_line(10, "forward moments and semigroup properties", ok,
                 f"mean {xt.mean():.5f} vs {math.exp(-1.0):.5f}, var "
                 f"{var:.5f} vs {target_var:.5f}, composition={comp_ok}, "
                 f"contraction={contr_ok}")
    assert ok
