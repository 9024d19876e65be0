"""Finite spectral truncation of the Hilbert-space setting.

The unbounded generator is diagonal in a fixed eigenbasis (multiplication
by -lambda_k), which makes the semigroup exact and keeps every operation a
cheap coordinatewise array expression.  The weighting operator acts as
multiplication by strictly positive weights b_k and induces the weak
quadratic form sum(b_k v_k^2) used as squared norm throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, UnknownTagError


def _finite_1d(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"{name} must be a nonempty 1-d sequence")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite entries")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _check_dim(d1: int, d2: int) -> None:
    if d1 != d2:
        raise DimensionMismatchError(f"dimension mismatch: {d1} != {d2}")


@dataclass(frozen=True)
class SpectralVector:
    """Truncated state, stored as coefficients in the eigenbasis."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _finite_1d(self.coeffs, "coeffs"))

    @property
    def d(self) -> int:
        return self.coeffs.size

    def __add__(self, other: "SpectralVector") -> "SpectralVector":
        _check_dim(self.d, other.d)
        return SpectralVector(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralVector") -> "SpectralVector":
        _check_dim(self.d, other.d)
        return SpectralVector(self.coeffs - other.coeffs)

    def scaled(self, factor: float) -> "SpectralVector":
        return SpectralVector(self.coeffs * factor)


@dataclass(frozen=True)
class DiagonalGenerator:
    """Dissipative generator acting as multiplication by -lambda_k."""

    lambdas: np.ndarray

    def __post_init__(self):
        arr = _finite_1d(self.lambdas, "lambdas")
        if (arr < 0).any():
            raise ValueError("eigenvalue rates must be nonnegative")
        if (np.diff(arr) < 0).any():
            raise ValueError("eigenvalue rates must be nondecreasing")
        object.__setattr__(self, "lambdas", arr)

    @property
    def d(self) -> int:
        return self.lambdas.size


@dataclass(frozen=True)
class BWeight:
    """Positive weighting operator, diagonal with weights b_k, plus shift c0."""

    bweights: np.ndarray
    c0: float = 1.0

    def __post_init__(self):
        arr = _finite_1d(self.bweights, "bweights")
        if (arr <= 0).any():
            raise ValueError("weights must be strictly positive")
        if not (math.isfinite(self.c0) and self.c0 >= 0):
            raise ValueError("c0 must be finite and nonnegative")
        object.__setattr__(self, "bweights", arr)

    @property
    def d(self) -> int:
        return self.bweights.size


@dataclass(frozen=True)
class NoiseModel:
    """Truncation of the driving noise space."""

    d_xi: int

    def __post_init__(self):
        if self.d_xi < 1:
            raise ValueError("noise dimension must be at least 1")


@dataclass(frozen=True)
class BCheckVerdict:
    holds: bool
    violating_index: int | None = None  # 1-based mode index


def apply_semigroup(gen: DiagonalGenerator, dt: float, v: SpectralVector) -> SpectralVector:
    """Apply the contraction semigroup over a time increment dt >= 0."""
    if dt < 0:
        raise ValueError("time increment must be nonnegative")
    _check_dim(gen.d, v.d)
    return SpectralVector(np.exp(-gen.lambdas * dt) * v.coeffs)


def norm_h(v: SpectralVector) -> float:
    """Euclidean norm of the coefficients."""
    return float(np.linalg.norm(v.coeffs))


def norm_hm1_sq(bop: BWeight, v: SpectralVector) -> float:
    """Weighted quadratic form sum(b_k v_k^2); exposed squared, never rooted."""
    _check_dim(bop.d, v.d)
    return float(np.dot(bop.bweights, v.coeffs**2))


def strong_b_check(gen: DiagonalGenerator, bop: BWeight) -> BCheckVerdict:
    """Check the diagonal operator inequality (lambda_k + c0) b_k >= 1."""
    _check_dim(gen.d, bop.d)
    lhs = (gen.lambdas + bop.c0) * bop.bweights
    bad = np.flatnonzero(lhs < 1.0)
    if bad.size:
        return BCheckVerdict(holds=False, violating_index=int(bad[0]) + 1)
    return BCheckVerdict(holds=True)


# Operator presets addressable by name from configuration files.

def generator_preset(name: str, d: int, rate: float = 1.0) -> DiagonalGenerator:
    if name == "dirichlet_laplacian":
        k = np.arange(1, d + 1, dtype=float)
        return DiagonalGenerator(math.pi**2 * k**2)
    if name == "identity_decay":
        return DiagonalGenerator(np.full(d, float(rate)))
    if name == "zero":
        return DiagonalGenerator(np.zeros(d))
    raise UnknownTagError(f"unknown generator preset {name!r}")


def default_bweight(gen: DiagonalGenerator, c0: float = 1.0) -> BWeight:
    """Canonical weights b_k = 1/(1 + lambda_k), which meet the strong
    condition with equality when c0 = 1."""
    return BWeight(1.0 / (1.0 + gen.lambdas), c0=c0)
