import math

import numpy as np
import pytest

from fkbsde.bsde import (
    DriverSpec,
    RegressionBasis,
    apriori_check,
    as_general_driver,
    comparison_check,
    solve_backward,
    stability_check,
    supersolution_residual,
)
from fkbsde.errors import PreconditionError, RegressionError
from fkbsde.forward import RngPolicy, TimeGrid, coefficient_preset, \
    sample_increments, simulate_ensemble
from fkbsde.linear_bsde import TerminalFunctional, gamma_paths, \
    solve_linear_explicit
from fkbsde.presets import (
    constant_linear_driver,
    driver_scaled_value,
    driver_sin_value,
    driver_zero,
    terminal_constant,
    terminal_first_mode,
)
from fkbsde.spectral import NoiseModel, SpectralVector, generator_preset


BASIS = RegressionBasis(degree=2, n_modes=1)


def ou_ensemble(m=2000, n=20, seed=0, x0=1.0):
    gen = generator_preset("identity_decay", 1, rate=1.0)
    coeffs = coefficient_preset("constant_sigma", 1, 1)
    grid = TimeGrid(0.0, 1.0, n)
    incs = sample_increments(grid, m, NoiseModel(1), RngPolicy(seed))
    return simulate_ensemble(gen, coeffs, grid,
                             SpectralVector(np.array([x0])), incs, seed=seed)


def brownian_ensemble(m, n, seed=0, x0=0.0):
    gen = generator_preset("zero", 1)
    coeffs = coefficient_preset("constant_sigma", 1, 1)
    grid = TimeGrid(0.0, 1.0, n)
    incs = sample_increments(grid, m, NoiseModel(1), RngPolicy(seed))
    return simulate_ensemble(gen, coeffs, grid,
                             SpectralVector(np.array([x0])), incs, seed=seed)


class TestRegressionBasis:
    def test_feature_count_formula(self):
        for degree in (0, 1, 2, 3):
            for modes in (1, 2, 4):
                basis = RegressionBasis(degree=degree, n_modes=modes)
                for d in (1, 2, 8):
                    m_use = min(d, modes)
                    expected = math.comb(m_use + degree, degree)
                    assert basis.n_features(d) == expected
                    x = np.random.default_rng(0).standard_normal((40, d))
                    assert basis.features(x).shape == (40, expected)

    def test_constant_feature_present(self):
        x = np.random.default_rng(1).standard_normal((30, 2))
        phi = RegressionBasis(degree=2, n_modes=2).features(x)
        np.testing.assert_array_equal(phi[:, 0], np.ones(30))


class TestSolveBackward:
    def test_constant_terminal_exact(self):
        ens = ou_ensemble(m=200, n=10)
        sol = solve_backward(driver_zero(), terminal_constant(3.0), ens, BASIS)
        np.testing.assert_allclose(sol.y, 3.0, rtol=1e-12)
        assert sol.y0 == pytest.approx(3.0, abs=1e-12)

    def test_terminal_row_bit_exact(self):
        ens = ou_ensemble(m=300, n=10, seed=4)
        term = terminal_first_mode(scale=1.7, shift=-0.3)
        sol = solve_backward(driver_zero(), term, ens, BASIS)
        np.testing.assert_array_equal(sol.y[:, -1],
                                      term.eta(ens.states[:, -1, :]))

    def test_zero_driver_reduces_to_plain_mean(self):
        ens = ou_ensemble(m=1500, n=15, seed=3)
        term = terminal_first_mode()
        sol = solve_backward(driver_zero(), term, ens, BASIS)
        expected = float(np.asarray(term.eta(ens.states[:, -1, :])).mean())
        assert sol.y0 == pytest.approx(expected, abs=1e-10)

    def test_backward_ode_oracle_with_step_doubling(self):
        # f(y) = y with constant terminal: y0 should approach e^{-1}
        # at first order in dt.
        errors = []
        for n in (25, 50, 100):
            ens = ou_ensemble(m=400, n=n, seed=6)
            sol = solve_backward(driver_scaled_value(1.0),
                                 terminal_constant(1.0), ens, BASIS)
            errors.append(abs(sol.y0 - math.exp(-1.0)))
        assert errors[0] < 0.02
        assert errors[2] < errors[0]

    def test_linear_oracle_agreement(self):
        ens = ou_ensemble(m=20_000, n=50, seed=12)
        lin = constant_linear_driver(0.3, 0.1, 0.2, 1)
        term = terminal_first_mode()
        explicit = solve_linear_explicit(lin, term, ens,
                                         gamma_paths(lin, ens))
        sol = solve_backward(as_general_driver(lin, lip=0.5), term, ens, BASIS)
        tol = 3 * math.hypot(sol.y0_stderr, explicit.stderr)
        assert abs(sol.y0 - explicit.y0) <= tol

    def test_constant_basis_equals_nested_means(self):
        # Brute-force oracle: with a constant-only basis the recursion is
        # the plain nested-means scheme.
        ens = ou_ensemble(m=500, n=12, seed=9)
        driver = driver_sin_value()
        term = terminal_first_mode()
        basis0 = RegressionBasis(degree=0, n_modes=1)
        sol = solve_backward(driver, term, ens, basis0, picard_iters=1)

        dt = ens.grid.dt
        times = ens.grid.times
        m, n = ens.n_paths, ens.n_steps
        y = np.asarray(term.eta(ens.states[:, -1, :]), dtype=float)
        for i in range(n - 1, 0, -1):
            x = ens.states[:, i, :]
            zbar = (y[:, None] * ens.increments[:, i, :]).mean(axis=0) / dt
            ybar = np.full(m, y.mean())
            z = np.tile(zbar, (m, 1))
            ycur = ybar - np.asarray(driver.f(times[i], x, ybar, z)) * dt
            ycur = ybar - np.asarray(driver.f(times[i], x, ycur, z)) * dt
            y = ycur
        z0 = (y[:, None] * ens.increments[:, 0, :]).mean(axis=0) / dt
        ybar0 = y.mean()
        y0 = ybar0
        for _ in range(2):
            f0 = float(np.asarray(driver.f(
                times[0], ens.states[:1, 0, :], np.array([y0]), z0[None, :]))[0])
            y0 = ybar0 - f0 * dt
        assert sol.y0 == pytest.approx(y0, abs=1e-12)

    def test_picard_stability(self):
        ens = ou_ensemble(m=2000, n=50, seed=2)
        term = terminal_first_mode()
        y1 = solve_backward(driver_sin_value(), term, ens, BASIS,
                            picard_iters=1).y0
        y3 = solve_backward(driver_sin_value(), term, ens, BASIS,
                            picard_iters=3).y0
        assert abs(y1 - y3) <= 1e-3

    def test_degenerate_diffusion_without_flag_errors(self):
        gen = generator_preset("zero", 1)
        coeffs = coefficient_preset("zero", 1, 1)
        grid = TimeGrid(0.0, 1.0, 5)
        incs = sample_increments(grid, 50, NoiseModel(1), RngPolicy(0))
        ens = simulate_ensemble(gen, coeffs, grid,
                                SpectralVector(np.array([1.0])), incs)
        with pytest.raises(RegressionError):
            solve_backward(driver_zero(), terminal_first_mode(), ens, BASIS)

    def test_degenerate_diffusion_pathwise_ode(self):
        gen = generator_preset("zero", 1)
        coeffs = coefficient_preset("zero", 1, 1)
        grid = TimeGrid(0.0, 1.0, 100)
        incs = sample_increments(grid, 8, NoiseModel(1), RngPolicy(0))
        ens = simulate_ensemble(gen, coeffs, grid,
                                SpectralVector(np.array([1.0])), incs)
        sol = solve_backward(driver_scaled_value(1.0), terminal_constant(1.0),
                             ens, BASIS, pathwise_ode=True)
        assert sol.y0 == pytest.approx(math.exp(-1.0), abs=5e-3)
        np.testing.assert_array_equal(sol.z, 0.0)


class TestComparisonCheck:
    def test_identical_pairs(self):
        ens = ou_ensemble(m=3000, n=20, seed=1)
        term = terminal_first_mode()
        drv = driver_scaled_value(0.5)
        rep = comparison_check(drv, term, drv, term, ens, BASIS)
        assert rep["holds"]
        assert abs(rep["margin"]) <= rep["tolerance"] + 1e-12

    def test_terminal_shift_margin(self):
        rho = 1.0
        ens = ou_ensemble(m=20_000, n=50, seed=3)
        t1 = terminal_first_mode()
        t2 = TerminalFunctional(eta=lambda xs: xs[:, 0] + 0.5, lip=1.0)
        drv = driver_scaled_value(rho)
        rep = comparison_check(drv, t1, drv, t2, ens, BASIS, strict_gap=0.25)
        target = 0.5 * math.exp(-rho)
        assert abs(rep["margin"] - target) <= rep["tolerance"]
        assert rep["holds"] and rep["strict_holds"]

    def test_constant_driver_gap_strict(self):
        ens = ou_ensemble(m=10_000, n=40, seed=8)
        term = terminal_first_mode()
        f1 = DriverSpec(f=lambda s, x, y, z: np.zeros(len(y)), lip=0.0)
        f2 = DriverSpec(f=lambda s, x, y, z: np.full(len(y), -0.1), lip=0.0)
        rep = comparison_check(f1, term, f2, term, ens, BASIS, strict_gap=0.05)
        assert rep["margin"] == pytest.approx(0.1, abs=3e-3)
        assert rep["strict_holds"]

    def test_violated_terminal_ordering_is_an_error(self):
        ens = ou_ensemble(m=200, n=10)
        t1 = terminal_first_mode()
        t2 = TerminalFunctional(eta=lambda xs: xs[:, 0] - 0.5, lip=1.0)
        with pytest.raises(PreconditionError):
            comparison_check(driver_zero(), t1, driver_zero(), t2, ens, BASIS)


class TestSupersolutionResidual:
    def make_exact(self, n=50):
        gen = generator_preset("zero", 1)
        coeffs = coefficient_preset("zero", 1, 1)
        grid = TimeGrid(0.0, 1.0, n)
        ens = simulate_ensemble(gen, coeffs, grid,
                                SpectralVector(np.array([1.0])),
                                np.zeros((4, n, 1)))
        sol = solve_backward(driver_zero(), terminal_constant(2.0), ens,
                             BASIS, pathwise_ode=True)
        return ens, sol

    def test_exact_solution_is_flat(self):
        ens, sol = self.make_exact()
        res, verdict = supersolution_residual(sol.y, sol.z, driver_zero(), ens)
        np.testing.assert_allclose(res.i_process, 0.0, atol=1e-14)
        assert res.direction == "flat"
        np.testing.assert_array_equal(res.i_process[:, 0], 0.0)

    def test_downward_drift_is_supersolution(self):
        # Y decreasing in time dominates its terminal value: the
        # compensator I_s = Y_t - Y_s is increasing.
        ens, sol = self.make_exact()
        elapsed = ens.grid.times - ens.grid.times[0]
        res, verdict = supersolution_residual(sol.y - elapsed[None, :], sol.z,
                                              driver_zero(), ens)
        assert verdict["is_supersolution"]
        assert not verdict["is_subsolution"]
        assert res.direction == "increasing"
        assert verdict["min_increment"] == pytest.approx(ens.grid.dt)

    def test_upward_drift_is_subsolution(self):
        ens, sol = self.make_exact()
        elapsed = ens.grid.times - ens.grid.times[0]
        res, verdict = supersolution_residual(sol.y + elapsed[None, :], sol.z,
                                              driver_zero(), ens)
        assert not verdict["is_supersolution"]
        assert verdict["is_subsolution"]
        assert res.direction == "decreasing"


class TestAprioriAndStability:
    def test_degenerate_zero_case(self):
        ens = ou_ensemble(m=500, n=10)
        sol = solve_backward(driver_zero(), terminal_constant(0.0), ens, BASIS)
        rep = apriori_check(driver_zero(), terminal_constant(0.0), ens, sol)
        assert rep["rhs"] == 0.0
        assert rep["ratio"] == 0.0

    def test_constant_terminal_ratio_one(self):
        ens = ou_ensemble(m=2000, n=20, seed=5)
        term = terminal_constant(1.5)
        sol = solve_backward(driver_zero(), term, ens, BASIS)
        rep = apriori_check(driver_zero(), term, ens, sol)
        assert rep["ratio"] == pytest.approx(1.0, rel=0.02)

    def test_stability_identical_problems(self):
        ens = ou_ensemble(m=1000, n=15, seed=5)
        term = terminal_first_mode()
        drv = driver_scaled_value(0.3)
        rep = stability_check(drv, term, drv, term, ens, BASIS)
        assert rep["lhs"] == pytest.approx(0.0, abs=1e-20)
        assert rep["ratio"] == 0.0

    def test_terminal_shift_propagation_bound(self):
        rho, eps = 0.5, 0.2
        ens = ou_ensemble(m=5000, n=40, seed=6)
        t1 = terminal_first_mode()
        t2 = TerminalFunctional(eta=lambda xs: xs[:, 0] + eps, lip=1.0)
        drv = driver_scaled_value(rho)
        rep = stability_check(drv, t1, drv, t2, ens, BASIS)
        assert rep["lhs"] / eps**2 <= math.exp(2 * rho) * 1.1

    def test_driver_shift_quadratic_bound(self):
        eps = 0.1
        ens = ou_ensemble(m=5000, n=40, seed=6)
        term = terminal_first_mode()
        f1 = driver_zero()
        f2 = DriverSpec(f=lambda s, x, y, z: np.full(len(y), eps), lip=0.0)
        rep = stability_check(f1, term, f2, term, ens, BASIS)
        assert rep["lhs"] <= 2.0 * eps**2 * 1.0**2
