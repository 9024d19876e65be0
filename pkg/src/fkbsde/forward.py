"""Forward SPDE simulation on a uniform grid.

The time stepper is exponential Euler: the exact semigroup is applied to
the whole Euler increment, X_{i+1} = S(dt) [X_i + b(t_i, X_i) dt
+ sigma(t_i, X_i) dW_i].  For a diagonal generator S(dt) is exact, so the
scheme is unconditionally stable for stiff modes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    DimensionMismatchError,
    GridAlignmentError,
    LipschitzAuditError,
    PreconditionError,
    SimulationError,
    UnknownTagError,
)
from .spectral import (
    BWeight,
    DiagonalGenerator,
    NoiseModel,
    SpectralVector,
    norm_h,
    norm_hm1_sq,
)

# Disjoint counter block per time step; each block covers far more draws
# than any ensemble consumes, so streams never overlap.
_STEP_STRIDE = 1 << 40


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [start, end] with n_steps steps."""

    start: float
    end: float
    n_steps: int

    def __post_init__(self):
        if not (0.0 <= self.start < self.end < math.inf):
            raise ValueError("need 0 <= start < end < inf")
        if self.n_steps < 1:
            raise ValueError("need at least one time step")

    @property
    def dt(self) -> float:
        return (self.end - self.start) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.start + self.dt * np.arange(self.n_steps + 1)

    def index_of(self, time: float, tol: float = 1e-9) -> int:
        idx = round((time - self.start) / self.dt)
        if idx < 0 or idx > self.n_steps or abs(self.start + idx * self.dt - time) > tol:
            raise GridAlignmentError(f"time {time} is not a grid point")
        return idx


@dataclass(frozen=True)
class RngPolicy:
    """Counter-based random streams keyed by (seed, step); draws within a
    step block are indexed by (path, coordinate).  The result is a pure
    function of the key, independent of thread count or evaluation order."""

    seed: int

    def step_stream(self, step: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=self.seed & 0xFFFFFFFFFFFFFFFF)
        bitgen.advance(step * _STEP_STRIDE)
        return np.random.Generator(bitgen)


@dataclass(frozen=True)
class CoefficientField:
    """Drift and diffusion of the forward equation, with declared constants.

    drift(s, x) maps a (m, d) state block to (m, d) or a shared (d,) value;
    diffusion(s, x) maps to (m, d, d_xi) or a shared (d, d_xi) matrix.
    The declared Lipschitz/growth constants are trusted but spot-audited.
    """

    drift: Callable[[float, np.ndarray], np.ndarray]
    diffusion: Callable[[float, np.ndarray], np.ndarray]
    lip_drift: float
    lip_diffusion: float
    growth: float
    name: str = ""
    sigma_is_zero: bool = False


@dataclass(frozen=True)
class PathEnsemble:
    """Forward paths together with the Brownian increments that drove them."""

    states: np.ndarray      # (m, n+1, d)
    increments: np.ndarray  # (m, n, d_xi)
    seed: int
    grid: TimeGrid

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def d_xi(self) -> int:
        return self.increments.shape[2]

    def restrict(self, from_step: int) -> "PathEnsemble":
        """View of the ensemble restarted at an interior grid index."""
        times = self.grid.times
        sub = TimeGrid(float(times[from_step]), self.grid.end,
                       self.grid.n_steps - from_step)
        return PathEnsemble(self.states[:, from_step:, :],
                            self.increments[:, from_step:, :], self.seed, sub)


def sample_increments(grid: TimeGrid, n_paths: int, noise: NoiseModel,
                      rng: RngPolicy) -> np.ndarray:
    """Draw i.i.d. N(0, dt) increments, shape (n_paths, n_steps, d_xi)."""
    if n_paths < 1:
        raise ValueError("need at least one path")
    out = np.empty((n_paths, grid.n_steps, noise.d_xi))
    for i in range(grid.n_steps):
        out[:, i, :] = rng.step_stream(i).standard_normal((n_paths, noise.d_xi))
    out *= math.sqrt(grid.dt)
    return out


def simulate_ensemble(gen: DiagonalGenerator, coeffs: CoefficientField,
                      grid: TimeGrid, x0: SpectralVector,
                      increments: np.ndarray, seed: int = 0) -> PathEnsemble:
    """Run the exponential-Euler stepper over a block of increments."""
    m, n, _ = increments.shape
    if n != grid.n_steps:
        raise DimensionMismatchError("increments do not match the grid")
    if gen.d != x0.d:
        raise DimensionMismatchError("generator and initial state disagree")
    d = x0.d
    decay = np.exp(-gen.lambdas * grid.dt)
    times = grid.times
    states = np.empty((m, n + 1, d))
    states[:, 0, :] = x0.coeffs
    x = np.tile(x0.coeffs, (m, 1))
    for i in range(n):
        s = float(times[i])
        bx = np.asarray(coeffs.drift(s, x))
        sig = np.asarray(coeffs.diffusion(s, x))
        dw = increments[:, i, :]
        noise_term = dw @ sig.T if sig.ndim == 2 else np.einsum("mij,mj->mi", sig, dw)
        x = decay * (x + bx * grid.dt + noise_term)
        if not np.isfinite(x).all():
            bad = np.argwhere(~np.isfinite(x))[0]
            raise SimulationError(path=int(bad[0]), step=i + 1)
        states[:, i + 1, :] = x
    return PathEnsemble(states=states, increments=increments, seed=seed, grid=grid)


def forward_stability_probe(gen: DiagonalGenerator, coeffs: CoefficientField,
                            bop: BWeight, grid: TimeGrid, x: SpectralVector,
                            x_prime: SpectralVector, n_paths: int,
                            noise: NoiseModel, seed: int) -> dict:
    """Estimate the two coupled-path difference functionals and their ratios
    to the weak squared norm of the initial gap, under common noise."""
    denom = norm_hm1_sq(bop, x - x_prime)
    if denom == 0.0:
        raise PreconditionError("initial states must differ")
    incs = sample_increments(grid, n_paths, noise, RngPolicy(seed))
    e1 = simulate_ensemble(gen, coeffs, grid, x, incs, seed=seed)
    e2 = simulate_ensemble(gen, coeffs, grid, x_prime, incs, seed=seed)
    diff = e1.states - e2.states
    weak_terminal = (bop.bweights * diff[:, -1, :] ** 2).sum(axis=1)
    strong_terminal = (diff[:, -1, :] ** 2).sum(axis=1)
    strong_integral = (diff[:, :-1, :] ** 2).sum(axis=2).sum(axis=1) * grid.dt
    s1 = weak_terminal + strong_integral
    s2 = strong_terminal
    root_m = math.sqrt(n_paths)
    return {
        "lhs1": float(s1.mean()),
        "lhs1_stderr": float(s1.std(ddof=1) / root_m),
        "lhs2": float(s2.mean()),
        "lhs2_stderr": float(s2.std(ddof=1) / root_m),
        "denominator": denom,
        "ratio1": float(s1.mean() / denom),
        "ratio2": float(s2.mean() / denom),
    }


def time_continuity_probe(gen: DiagonalGenerator, coeffs: CoefficientField,
                          grid: TimeGrid, x: SpectralVector,
                          restart_times: list[float], n_paths: int,
                          noise: NoiseModel, seed: int) -> dict:
    """Sup-distance between the path started at t and restarts at t_n > t,
    driven by the same noise on the overlapping part of the grid."""
    incs = sample_increments(grid, n_paths, noise, RngPolicy(seed))
    base = simulate_ensemble(gen, coeffs, grid, x, incs, seed=seed)
    rows = []
    root_m = math.sqrt(n_paths)
    for tn in restart_times:
        j = grid.index_of(tn)
        if j == 0:
            rows.append({"restart_time": float(tn), "sup_error": 0.0,
                         "stderr": 0.0})
            continue
        sub = TimeGrid(float(grid.times[j]), grid.end, grid.n_steps - j)
        restarted = simulate_ensemble(gen, coeffs, sub, x, incs[:, j:, :],
                                      seed=seed)
        diff = restarted.states - base.states[:, j:, :]
        sup_sq = (diff**2).sum(axis=2).max(axis=1)
        rows.append({"restart_time": float(tn),
                     "sup_error": float(sup_sq.mean()),
                     "stderr": float(sup_sq.std(ddof=1) / root_m)})
    return {"rows": rows}


def audit_coefficients(coeffs: CoefficientField, d: int, d_xi: int,
                       bop: BWeight, t_max: float = 1.0, n_pairs: int = 100,
                       slack: float = 0.05, seed: int = 20210) -> None:
    """Spot-check the declared Lipschitz and growth constants on sampled
    probe pairs; raises if any declared bound is exceeded beyond slack."""
    rng = np.random.default_rng(seed)
    for _ in range(n_pairs):
        s = float(rng.uniform(0.0, t_max))
        scale = float(rng.uniform(0.1, 3.0))
        xa = rng.standard_normal(d) * scale
        xb = rng.standard_normal(d) * scale
        xa2, xb2 = xa[None, :], xb[None, :]
        ba = np.broadcast_to(np.asarray(coeffs.drift(s, xa2)), (1, d))
        bb = np.broadcast_to(np.asarray(coeffs.drift(s, xb2)), (1, d))
        gap_h = float(np.linalg.norm(xa - xb))
        if np.linalg.norm(ba - bb) > (1 + slack) * coeffs.lip_drift * gap_h + 1e-12:
            raise LipschitzAuditError("drift exceeded its declared Lipschitz bound")
        sa = np.asarray(coeffs.diffusion(s, xa2))
        sb = np.asarray(coeffs.diffusion(s, xb2))
        gap_weak = math.sqrt(norm_hm1_sq(bop, SpectralVector(xa)
                                         - SpectralVector(xb)))
        if np.linalg.norm(sa - sb) > (1 + slack) * coeffs.lip_diffusion * gap_weak + 1e-12:
            raise LipschitzAuditError("diffusion exceeded its declared weak-norm bound")
        grow = (1 + slack) * coeffs.growth
        if np.linalg.norm(ba) > grow * (1 + np.linalg.norm(xa)) + 1e-12:
            raise LipschitzAuditError("drift exceeded its declared growth bound")
        if np.linalg.norm(sa) > grow * (1 + np.linalg.norm(xa)) + 1e-12:
            raise LipschitzAuditError("diffusion exceeded its declared growth bound")


def coefficient_preset(name: str, d: int, d_xi: int, *, sigma_scale: float = 1.0,
                       beta: float = 0.5, shift: float = 0.1,
                       slope: float = 0.2) -> CoefficientField:
    """Named drift/diffusion presets with their declared constants."""
    k = min(d, d_xi)
    sigma_const = np.zeros((d, d_xi))
    sigma_const[:k, :k] = sigma_scale * np.eye(k)

    if name == "zero":
        return CoefficientField(
            drift=lambda s, x: np.zeros(d),
            diffusion=lambda s, x: np.zeros((d, d_xi)),
            lip_drift=0.0, lip_diffusion=0.0, growth=0.0,
            name=name, sigma_is_zero=True)
    if name == "constant_sigma":
        return CoefficientField(
            drift=lambda s, x: np.zeros(d),
            diffusion=lambda s, x: sigma_const,
            lip_drift=0.0, lip_diffusion=0.0,
            growth=abs(sigma_scale) * math.sqrt(k),
            name=name)
    if name == "nemytskii_sine":
        return CoefficientField(
            drift=lambda s, x: beta * np.sin(x),
            diffusion=lambda s, x: sigma_const,
            lip_drift=abs(beta), lip_diffusion=0.0,
            growth=max(abs(beta) * math.sqrt(d), abs(sigma_scale) * math.sqrt(k)),
            name=name)
    if name == "affine":
        return CoefficientField(
            drift=lambda s, x: shift + slope * x,
            diffusion=lambda s, x: sigma_const,
            lip_drift=abs(slope), lip_diffusion=0.0,
            growth=max(abs(shift) * math.sqrt(d) + abs(slope),
                       abs(sigma_scale) * math.sqrt(k)),
            name=name)
    raise UnknownTagError(f"unknown coefficient preset {name!r}")


# ---------------------------------------------------------------------------
# Ensemble export.  Binary layout: magic 'FKEN', u32 version, u64 m/n/d/d_xi,
# i64 seed, f64 start/end, then states and increments as little-endian f64.

_MAGIC = b"FKEN"
_HEADER = struct.Struct("<4sIQQQQqdd")


def write_ensemble_binary(ens: PathEnsemble, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, ens.n_paths, ens.n_steps, ens.d,
                              ens.d_xi, ens.seed, ens.grid.start, ens.grid.end))
        fh.write(np.ascontiguousarray(ens.states, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(ens.increments, dtype="<f8").tobytes())


def read_ensemble_binary(path: str) -> PathEnsemble:
    with open(path, "rb") as fh:
        magic, version, m, n, d, d_xi, seed, start, end = _HEADER.unpack(
            fh.read(_HEADER.size))
        if magic != _MAGIC or version != 1:
            raise ValueError("not a recognized ensemble file")
        states = np.frombuffer(fh.read(8 * m * (n + 1) * d),
                               dtype="<f8").reshape(m, n + 1, d).copy()
        incs = np.frombuffer(fh.read(8 * m * n * d_xi),
                             dtype="<f8").reshape(m, n, d_xi).copy()
    return PathEnsemble(states, incs, seed, TimeGrid(start, end, n))


def write_ensemble_csv(ens: PathEnsemble, path: str) -> None:
    times = ens.grid.times
    header = "path_id,step,t," + ",".join(f"x_{k+1}" for k in range(ens.d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for m in range(ens.n_paths):
            for i in range(ens.n_steps + 1):
                coords = ",".join(f"{v:.17g}" for v in ens.states[m, i])
                fh.write(f"{m},{i},{times[i]:.17g},{coords}\n")
