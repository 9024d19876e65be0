"""General scalar backward solver by least-squares regression, plus the
comparison, monotone-residual and a-priori/stability checks.

Conditional expectations are estimated by global least squares on
total-degree polynomial features of the leading spectral modes
(Gobet-Lemor-Warin style).  At the root step the state is deterministic,
so regression degenerates to the plain mean.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import LipschitzAuditError, PreconditionError, RegressionError
from .forward import PathEnsemble
from .linear_bsde import LinearDriver, TerminalFunctional

_COND_RIDGE = 1e8
_COND_FAIL = 1e12
_RIDGE_SCALE = 1e-10


@dataclass(frozen=True)
class DriverSpec:
    """Nonlinearity f(s, x, y, z) with a declared Lipschitz constant.

    f takes a (m, d) state block, (m,) values and (m, d_xi) noise loadings
    and returns (m,).
    """

    f: Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    lip: float
    name: str = ""


@dataclass(frozen=True)
class RegressionBasis:
    """Polynomial features of total degree <= degree on the leading modes."""

    degree: int = 2
    n_modes: int = 4

    def __post_init__(self):
        if self.degree < 0 or self.n_modes < 1:
            raise ValueError("need degree >= 0 and at least one mode")

    def exponents(self, d: int) -> list[tuple[int, ...]]:
        m_use = min(d, self.n_modes)
        exps = [e for e in itertools.product(range(self.degree + 1), repeat=m_use)
                if sum(e) <= self.degree]
        exps.sort(key=lambda e: (sum(e), e))
        return exps

    def n_features(self, d: int) -> int:
        m_use = min(d, self.n_modes)
        return math.comb(m_use + self.degree, self.degree)

    def features(self, x: np.ndarray) -> np.ndarray:
        exps = self.exponents(x.shape[1])
        m_use = min(x.shape[1], self.n_modes)
        # Batch-standardized monomials: same span as raw powers, but the
        # Gram matrix stays well conditioned when the state spread is small.
        xs = x[:, :m_use]
        mu = xs.mean(axis=0)
        sd = xs.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
        xs = (xs - mu) / sd
        cols = np.empty((x.shape[0], len(exps)))
        for j, e in enumerate(exps):
            col = np.ones(x.shape[0])
            for axis, power in enumerate(e):
                if power:
                    col = col * xs[:, axis] ** power
            cols[:, j] = col
        return cols


@dataclass(frozen=True)
class BsdeSolution:
    y: np.ndarray            # (m, n+1)
    z: np.ndarray            # (m, n, d_xi)
    beta: list               # per-step regression coefficients (None at root)
    y0: float
    y0_stderr: float
    conditions: np.ndarray   # (n,) Gram condition numbers (0 where skipped)

    @property
    def max_condition(self) -> float:
        return float(self.conditions.max()) if self.conditions.size else 0.0


@dataclass(frozen=True)
class MonotoneResidual:
    i_process: np.ndarray  # (m, n+1), zero at the initial time
    direction: str         # "increasing" | "decreasing" | "flat" | "neither"


def _regress(phi: np.ndarray, targets: np.ndarray, step: int):
    """Least squares by normal equations with a deterministic ridge policy."""
    m = phi.shape[0]
    gram = phi.T @ phi / m
    cond = float(np.linalg.cond(gram))
    if not math.isfinite(cond) or cond > _COND_FAIL:
        raise RegressionError(step=step, condition=cond)
    if cond > _COND_RIDGE:
        jitter = _RIDGE_SCALE * np.trace(gram) / gram.shape[0]
        gram = gram + jitter * np.eye(gram.shape[0])
    beta = np.linalg.solve(gram, phi.T @ targets / m)
    return phi @ beta, beta, cond


def solve_backward(driver: DriverSpec, terminal: TerminalFunctional,
                   ensemble: PathEnsemble, basis: RegressionBasis,
                   picard_iters: int = 1,
                   pathwise_ode: bool = False) -> BsdeSolution:
    """Backward regression sweep.

    Each step regresses the next value and its Brownian covariation on
    state features, then applies the explicit driver step with optional
    Picard refinement.  With pathwise_ode=True (degenerate diffusion) the
    regressions are skipped and the recursion runs path by path with z = 0.

    The reported standard error comes from the pathwise rollback
    g(X_T) - sum_i f_i dt, whose spread reflects the genuine Monte-Carlo
    error of the initial value; the regressed per-step values alone would
    understate it.
    """
    if picard_iters < 0:
        raise ValueError("picard_iters must be nonnegative")
    m, n = ensemble.n_paths, ensemble.n_steps
    d_xi = ensemble.d_xi
    dt = ensemble.grid.dt
    times = ensemble.grid.times
    states = ensemble.states

    y = np.empty((m, n + 1))
    z = np.zeros((m, n, d_xi))
    y[:, n] = np.asarray(terminal.eta(states[:, -1, :]), dtype=float)
    betas: list = [None] * n
    conds = np.zeros(n)
    rollback = y[:, n].copy()

    def step_value(i, x, ybar, zfit):
        ycur = ybar - np.asarray(driver.f(float(times[i]), x, ybar, zfit)) * dt
        for _ in range(picard_iters):
            ycur = ybar - np.asarray(driver.f(float(times[i]), x, ycur, zfit)) * dt
        return ycur

    for i in range(n - 1, 0, -1):
        x = states[:, i, :]
        if pathwise_ode:
            zfit = np.zeros((m, d_xi))
            ycur = step_value(i, x, y[:, i + 1], zfit)
        else:
            phi = basis.features(x)
            targets_z = y[:, i + 1][:, None] * ensemble.increments[:, i, :] / dt
            zfit, beta_z, cond_z = _regress(phi, targets_z, step=i)
            ybar, beta_y, cond_y = _regress(phi, y[:, i + 1], step=i)
            betas[i] = (beta_y, beta_z)
            conds[i] = max(cond_y, cond_z)
            ycur = step_value(i, x, ybar, zfit)
        y[:, i] = ycur
        z[:, i, :] = zfit
        rollback -= np.asarray(driver.f(float(times[i]), x, ycur, zfit)) * dt
        if not np.isfinite(y[:, i]).all():
            raise OverflowError(f"non-finite backward value at step {i}")

    # Root: the state is a point mass, regression collapses to the mean.
    x0 = states[:, 0, :]
    if pathwise_ode:
        z0 = np.zeros(d_xi)
    else:
        z0 = (y[:, 1][:, None] * ensemble.increments[:, 0, :]).mean(axis=0) / dt
    ybar0 = float(y[:, 1].mean())
    y0 = ybar0
    f_root = 0.0
    for k in range(picard_iters + 1):
        prev = ybar0 if k == 0 else y0
        f_root = float(np.asarray(driver.f(
            float(times[0]), x0[:1], np.array([prev]), z0[None, :]))[0])
        y0 = ybar0 - f_root * dt
    z[:, 0, :] = z0
    rollback -= f_root * dt
    y[:, 0] = rollback - rollback.mean() + y0
    stderr = float(rollback.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    if not math.isfinite(y0):
        raise OverflowError("non-finite initial value")
    return BsdeSolution(y=y, z=z, beta=betas, y0=y0, y0_stderr=stderr,
                        conditions=conds)


def as_general_driver(lin: LinearDriver, lip: float) -> DriverSpec:
    """Map a linear driver to the general form f = -(rate*y + offset + <load, z>)."""

    def f(s, x, yv, zv):
        a = np.asarray(lin.rate(s, x), dtype=float)
        b = np.asarray(lin.offset(s, x), dtype=float)
        c = np.asarray(lin.noise_load(s, x), dtype=float)
        if c.ndim == 1:
            cz = zv @ c
        else:
            cz = (c * zv).sum(axis=1)
        return -(a * yv + b + cz)

    return DriverSpec(f=f, lip=lip, name=f"linearized:{lin.name}")


def comparison_check(driver1: DriverSpec, terminal1: TerminalFunctional,
                     driver2: DriverSpec, terminal2: TerminalFunctional,
                     ensemble: PathEnsemble, basis: RegressionBasis,
                     picard_iters: int = 1, strict_gap: float = 0.0,
                     precondition_tol: float = 1e-9) -> dict:
    """Solve both problems on the same ensemble and compare initial values.

    The ordering hypotheses are checked pathwise along the second solution
    before any verdict is issued; a violated hypothesis is an error, not a
    failed check, because the theorem simply does not apply there."""
    dt = ensemble.grid.dt
    times = ensemble.grid.times
    eta1 = np.asarray(terminal1.eta(ensemble.states[:, -1, :]), dtype=float)
    eta2 = np.asarray(terminal2.eta(ensemble.states[:, -1, :]), dtype=float)
    if (eta2 < eta1 - precondition_tol).any():
        raise PreconditionError("terminal ordering violated on the ensemble")
    sol1 = solve_backward(driver1, terminal1, ensemble, basis, picard_iters)
    sol2 = solve_backward(driver2, terminal2, ensemble, basis, picard_iters)
    driver_gap = np.zeros(ensemble.n_paths)
    for i in range(ensemble.n_steps):
        x = ensemble.states[:, i, :]
        f1 = np.asarray(driver1.f(float(times[i]), x, sol2.y[:, i], sol2.z[:, i, :]))
        f2 = np.asarray(driver2.f(float(times[i]), x, sol2.y[:, i], sol2.z[:, i, :]))
        if (f2 > f1 + precondition_tol).any():
            raise PreconditionError(
                f"driver ordering violated along the second solution at step {i}")
        driver_gap += (f1 - f2) * dt
    uniform_gap = float((eta2 - eta1 + driver_gap).min())
    margin = sol2.y0 - sol1.y0
    combined = math.hypot(sol1.y0_stderr, sol2.y0_stderr)
    tolerance = 3.0 * combined
    return {
        "margin": margin,
        "combined_stderr": combined,
        "tolerance": tolerance,
        "holds": margin >= -tolerance,
        "uniform_gap": uniform_gap,
        "strict_holds": bool(strict_gap > 0.0 and uniform_gap >= strict_gap
                             and margin > tolerance),
    }


def supersolution_residual(y: np.ndarray, z: np.ndarray, driver: DriverSpec,
                           ensemble: PathEnsemble,
                           tol: float | None = None) -> tuple[MonotoneResidual, dict]:
    """Build the discrete compensator of a candidate pair and classify its
    monotonicity: value at the initial time plus accumulated driver and
    noise terms minus the running value.  Increasing means supersolution,
    decreasing means subsolution."""
    m, n = ensemble.n_paths, ensemble.n_steps
    dt = ensemble.grid.dt
    times = ensemble.grid.times
    i_proc = np.zeros((m, n + 1))
    for i in range(n):
        x = ensemble.states[:, i, :]
        fv = np.asarray(driver.f(float(times[i]), x, y[:, i], z[:, i, :]))
        incr = fv * dt + (z[:, i, :] * ensemble.increments[:, i, :]).sum(axis=1) \
            - (y[:, i + 1] - y[:, i])
        i_proc[:, i + 1] = i_proc[:, i] + incr
    if tol is None:
        scale = max(1.0, float(np.abs(y).max()))
        tol = 10.0 * dt * max(driver.lip, 1e-12) * scale
    steps = np.diff(i_proc, axis=1)
    super_ok = bool((steps >= -tol).all())
    sub_ok = bool((steps <= tol).all())
    if super_ok and sub_ok:
        direction = "flat"
    elif super_ok:
        direction = "increasing"
    elif sub_ok:
        direction = "decreasing"
    else:
        direction = "neither"
    verdict = {
        "tolerance": tol,
        "is_supersolution": super_ok,
        "is_subsolution": sub_ok,
        "min_increment": float(steps.min()),
        "max_increment": float(steps.max()),
    }
    return MonotoneResidual(i_process=i_proc, direction=direction), verdict


def _driver_at_origin(driver: DriverSpec, times: np.ndarray, d: int,
                      d_xi: int, dt: float) -> float:
    total = 0.0
    zero_x = np.zeros((1, d))
    zero_y = np.zeros(1)
    zero_z = np.zeros((1, d_xi))
    for i in range(len(times) - 1):
        total += abs(float(np.asarray(
            driver.f(float(times[i]), zero_x, zero_y, zero_z))[0])) * dt
    return total


def apriori_check(driver: DriverSpec, terminal: TerminalFunctional,
                  ensemble: PathEnsemble, solution: BsdeSolution) -> dict:
    """Ratio of E[sup |Y|^2 + int |Z|^2] to E[|eta|^2 + (int |f(.,0,0,0)|)^2]."""
    dt = ensemble.grid.dt
    sup_y = (solution.y**2).max(axis=1)
    z_int = (solution.z**2).sum(axis=2).sum(axis=1) * dt
    lhs = float((sup_y + z_int).mean())
    eta = np.asarray(terminal.eta(ensemble.states[:, -1, :]), dtype=float)
    origin_term = _driver_at_origin(driver, ensemble.grid.times, ensemble.d,
                                    ensemble.d_xi, dt) ** 2
    rhs = float((eta**2).mean() + origin_term)
    if rhs == 0.0:
        ratio = math.inf if lhs > 1e-12 else 0.0
    else:
        ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


def stability_check(driver1: DriverSpec, terminal1: TerminalFunctional,
                    driver2: DriverSpec, terminal2: TerminalFunctional,
                    ensemble: PathEnsemble, basis: RegressionBasis,
                    picard_iters: int = 1) -> dict:
    """Ratio of the solution-difference functional to the data-difference
    functional for two problems solved on a common ensemble."""
    dt = ensemble.grid.dt
    times = ensemble.grid.times
    sol1 = solve_backward(driver1, terminal1, ensemble, basis, picard_iters)
    sol2 = solve_backward(driver2, terminal2, ensemble, basis, picard_iters)
    sup_dy = ((sol1.y - sol2.y) ** 2).max(axis=1)
    dz_int = ((sol1.z - sol2.z) ** 2).sum(axis=2).sum(axis=1) * dt
    lhs = float((sup_dy + dz_int).mean())
    eta1 = np.asarray(terminal1.eta(ensemble.states[:, -1, :]), dtype=float)
    eta2 = np.asarray(terminal2.eta(ensemble.states[:, -1, :]), dtype=float)
    f_gap = np.zeros(ensemble.n_paths)
    for i in range(ensemble.n_steps):
        x = ensemble.states[:, i, :]
        f1 = np.asarray(driver1.f(float(times[i]), x, sol1.y[:, i], sol1.z[:, i, :]))
        f2 = np.asarray(driver2.f(float(times[i]), x, sol1.y[:, i], sol1.z[:, i, :]))
        f_gap += np.abs(f1 - f2) * dt
    rhs = float(((eta1 - eta2) ** 2 + f_gap**2).mean())
    if rhs == 0.0:
        ratio = math.inf if lhs > 1e-12 else 0.0
    else:
        ratio = lhs / rhs
    return {"lhs": lhs, "rhs": rhs, "ratio": ratio}


def audit_driver(driver: DriverSpec, d: int, d_xi: int, t_max: float = 1.0,
                 n_probes: int = 100, slack: float = 0.05,
                 seed: int = 90210) -> None:
    """Spot-check the declared Lipschitz constant on sampled probe tuples."""
    rng = np.random.default_rng(seed)
    for _ in range(n_probes):
        s = float(rng.uniform(0.0, t_max))
        xa = rng.standard_normal((1, d))
        xb = rng.standard_normal((1, d))
        ya, yb = rng.standard_normal(2)
        za = rng.standard_normal((1, d_xi))
        zb = rng.standard_normal((1, d_xi))
        fa = float(np.asarray(driver.f(s, xa, np.array([ya]), za))[0])
        fb = float(np.asarray(driver.f(s, xb, np.array([yb]), zb))[0])
        bound = driver.lip * (np.linalg.norm(xa - xb) + abs(ya - yb)
                              + np.linalg.norm(za - zb))
        if abs(fa - fb) > (1 + slack) * bound + 1e-12:
            raise LipschitzAuditError(
                "driver exceeded its declared Lipschitz bound")
