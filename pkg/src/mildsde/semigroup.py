"""Exponentially stable diagonal semigroups.

Everything here works in an eigenbasis: a state is a vector of coefficients
and ``T(t)`` multiplies coefficient ``n`` by ``exp(lambda_n * t)``.  The
Dirichlet heat operator on [0, 1] is the main realization, with basis
``phi_n(x) = sqrt(2) sin(n pi x)`` and eigenvalues ``-n^2 pi^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError

DEFAULT_N_MODES = 32
DEFAULT_X_POINTS = 101
# below this |lambda * dt| the removable singularity is handled by series
_SERIES_CUTOFF = 1e-8


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Element of L2[0, 1] stored as eigenbasis coordinates."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim != 1:
            raise ShapeError(f"coeffs must be 1-d, got shape {c.shape}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[0]

    def norm(self) -> float:
        # Parseval: the basis is orthonormal
        return float(np.linalg.norm(self.coeffs))

    def to_physical(self, x=None) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate ``u(x) = sum_n c_n sqrt(2) sin(n pi x)`` on an x-grid."""
        if x is None:
            x = np.linspace(0.0, 1.0, DEFAULT_X_POINTS)
        x = np.asarray(x, dtype=float)
        return x, physical_values(self.coeffs, x)

    @classmethod
    def unit(cls, n_modes: int, mode: int = 1) -> "SpectralField":
        """Field equal to the basis function ``phi_mode`` (1-based)."""
        c = np.zeros(n_modes)
        c[mode - 1] = 1.0
        return cls(c)


def physical_values(coeffs, x) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    n = np.arange(1, coeffs.shape[-1] + 1)
    basis = math.sqrt(2.0) * np.sin(np.pi * np.outer(np.asarray(x, dtype=float), n))
    return basis @ coeffs


@dataclass(frozen=True, eq=False)
class ExpStableSemigroup:
    """Diagonal semigroup with ``||T(t)|| <= M exp(-a t)``.

    ``modes`` holds the eigenvalues; ``M`` and ``a`` are the growth constant
    and decay rate of the stability bound.
    """

    M: float
    a: float
    modes: np.ndarray
    kind: str = "scalar"

    def __post_init__(self):
        modes = np.asarray(self.modes, dtype=float)
        if modes.ndim != 1 or modes.size == 0:
            raise ConfigurationError("need a non-empty 1-d list of eigenvalues", key="semigroup.lambda")
        if not self.a > 0:
            raise ConfigurationError(f"decay rate a must be > 0, got {self.a}", key="semigroup.a")
        if not self.M >= 1:
            raise ConfigurationError(f"growth constant M must be >= 1, got {self.M}", key="semigroup.M")
        if np.any(modes >= 0):
            raise ConfigurationError("all eigenvalues must be negative", key="semigroup.lambda")
        if np.any(modes > -self.a / self.M * (1 - 1e-12)):
            raise ConfigurationError("eigenvalues violate lambda_n <= -a/M", key="semigroup.lambda")
        modes.setflags(write=False)
        object.__setattr__(self, "modes", modes)

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    def propagate(self, t: float, coeffs: np.ndarray) -> np.ndarray:
        """Array-level ``T(t)``; the last axis of ``coeffs`` indexes modes."""
        if t < 0:
            raise DomainError(f"semigroup time must be >= 0, got {t}")
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.n_modes:
            raise ShapeError(f"expected {self.n_modes} modes, got {coeffs.shape[-1]}")
        return coeffs * np.exp(self.modes * t)

    def bound(self, t) -> np.ndarray:
        """The operator-norm envelope ``M exp(-a t)``."""
        return self.M * np.exp(-self.a * np.asarray(t, dtype=float))


def heat_semigroup(n_modes: int = DEFAULT_N_MODES) -> ExpStableSemigroup:
    """Dirichlet heat semigroup on [0, 1] truncated to ``n_modes`` modes.

    Eigenvalues are ``-n^2 pi^2`` so that ``||T(t)|| <= exp(-pi^2 t)``,
    i.e. ``M = 1`` and ``a = pi^2``.
    """
    if int(n_modes) != n_modes or n_modes < 1:
        raise ConfigurationError(f"n_modes must be a positive integer, got {n_modes}", key="semigroup.n_modes")
    n = np.arange(1, int(n_modes) + 1, dtype=float)
    return ExpStableSemigroup(M=1.0, a=math.pi**2, modes=-(n**2) * math.pi**2, kind="heat")


def scalar_semigroup(lambdas: Sequence[float]) -> ExpStableSemigroup:
    """Semigroup from an explicit eigenvalue list, with ``M = 1``."""
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    if lam.size == 0:
        raise ConfigurationError("empty eigenvalue list", key="semigroup.lambda")
    if np.any(lam >= 0):
        raise ConfigurationError("all eigenvalues must be negative (exponential stability)", key="semigroup.lambda")
    return ExpStableSemigroup(M=1.0, a=float(-lam.max()), modes=lam, kind="scalar")


def apply(sg: ExpStableSemigroup, t: float, v: SpectralField) -> SpectralField:
    if v.n_modes != sg.n_modes:
        raise ShapeError(f"field has {v.n_modes} modes, semigroup has {sg.n_modes}")
    return SpectralField(sg.propagate(t, v.coeffs))


class ConvolutionWeights(NamedTuple):
    decay: np.ndarray
    drift_weight: np.ndarray
    noise_std: np.ndarray


def convolution_weights(sg, dt: float) -> ConvolutionWeights:
    """Exact one-step weights for the mild-solution integrals, per mode.

    With drift ``c`` and diffusion ``g`` frozen over a step of length ``dt``
    the mode advances exactly as
    ``x <- decay * x + drift_weight * c + noise_std * g * xi``, ``xi ~ N(0, 1)``:

    * ``decay = exp(lam dt)``
    * ``drift_weight = (exp(lam dt) - 1) / lam``
    * ``noise_std = sqrt((exp(2 lam dt) - 1) / (2 lam))``

    ``sg`` may be a semigroup or a raw eigenvalue array; a zero eigenvalue
    takes the analytic limits ``dt`` and ``sqrt(dt)``.
    """
    if not dt > 0:
        raise DomainError(f"dt must be > 0, got {dt}")
    lam = sg.modes if isinstance(sg, ExpStableSemigroup) else np.atleast_1d(np.asarray(sg, dtype=float))
    if np.any(lam > 0):
        raise ConfigurationError("positive eigenvalue violates exponential stability", key="semigroup.lambda")
    z = lam * dt
    small = np.abs(z) < _SERIES_CUTOFF
    safe = np.where(small, -1.0, lam)
    decay = np.exp(z)
    drift = np.where(small, dt * (1.0 + z / 2.0), np.expm1(z) / safe)
    var = np.where(small, dt * (1.0 + z), np.expm1(2.0 * z) / (2.0 * safe))
    return ConvolutionWeights(decay, drift, np.sqrt(var))
