"""Brownian driver, path ensembles and square-mean estimators.

Noise is counter-addressed: the increment for ``(path, step)`` is a pure
function of the seed and the address, computed from one Philox4x64 output
word pushed through the inverse normal CDF.  Any chunking of paths or steps
over any number of workers therefore sees identical increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError, HorizonError, ShapeError

_PATH_BITS = 40
_WORDS_PER_COUNTER = 4
_U53 = 2.0**-53


@dataclass(frozen=True)
class BrownianDriver:
    """Scalar Brownian increments addressed by ``(path, step)``.

    Each increment is built from ``refine`` base increments of length
    ``dt / refine``.  Drivers with the same seed and base step therefore
    share one Brownian path at several resolutions.  ``offset`` counts base
    increments skipped by :func:`shift_driver`; ``stream`` separates
    independent noise sources under one seed.
    """

    seed: int
    dt: float
    refine: int = 1
    offset: int = 0
    stream: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be > 0, got {self.dt}", key="solver.dt")
        if self.refine < 1 or self.offset < 0 or self.stream < 0:
            raise ConfigurationError("refine >= 1, offset >= 0 and stream >= 0 required")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed must fit in 64 unsigned bits, got {self.seed}", key="mc.seed")

    @property
    def base_dt(self) -> float:
        return self.dt / self.refine

    def _base_normals(self, path: int, start: int, count: int) -> np.ndarray:
        if path >= 2**_PATH_BITS:
            raise ConfigurationError("path index too large for the counter layout")
        key = np.array([self.seed, (self.stream << _PATH_BITS) | path], dtype=np.uint64)
        block, skip = divmod(start, _WORDS_PER_COUNTER)
        counter = np.array([block, 0, 0, 0], dtype=np.uint64)
        raw = np.random.Philox(key=key, counter=counter).random_raw(skip + count)[skip:]
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _U53
        return ndtri(u)

    def normals(self, paths, step0: int, n_steps: int) -> np.ndarray:
        """Unit-variance variates ``dB / sqrt(dt)``, shape ``(len(paths), n_steps)``."""
        paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
        out = np.empty((paths.size, n_steps))
        r = self.refine
        base0 = self.offset + step0 * r
        for i, p in enumerate(paths):
            z = self._base_normals(int(p), base0, n_steps * r)
            if r == 1:
                out[i] = z
            else:
                z = z.reshape(n_steps, r)
                acc = z[:, 0].copy()
                for j in range(1, r):
                    acc += z[:, j]
                # sum of r unit normals, rescaled to unit variance
                out[i] = acc / math.sqrt(r)
        return out

    def increments(self, paths, step0: int, n_steps: int) -> np.ndarray:
        return self.normals(paths, step0, n_steps) * math.sqrt(self.dt)


def increment(driver: BrownianDriver, path: int, step: int) -> float:
    """The Normal(0, dt) increment at one address."""
    return float(driver.increments([path], step, 1)[0, 0])


def shift_driver(driver: BrownianDriver, h_steps: int) -> BrownianDriver:
    """Driver for ``B(u + h) - B(h)`` with ``h = h_steps * dt``."""
    if h_steps < 0:
        raise ConfigurationError(f"shift must be >= 0 steps, got {h_steps}")
    return replace(driver, offset=driver.offset + h_steps * driver.refine)


@dataclass
class PathEnsemble:
    """Monte Carlo paths of a spectral state.

    ``data`` has shape ``(n_paths, len(steps), n_modes)`` where ``steps``
    lists the stored step indices; a full ensemble stores every step
    ``0..n_steps``.
    """

    data: np.ndarray
    dt: float
    t0: float = 0.0
    steps: np.ndarray | None = None
    n_steps: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 3:
            raise ShapeError(f"ensemble data must be 3-d, got shape {self.data.shape}")
        if self.steps is None:
            self.steps = np.arange(self.data.shape[1])
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if self.steps.shape != (self.data.shape[1],):
            raise ShapeError("one step index per stored slice required")
        if np.any(np.diff(self.steps) <= 0):
            raise ShapeError("stored steps must be strictly increasing")
        if self.n_steps is None:
            self.n_steps = int(self.steps[-1])
        self._slot = {int(s): i for i, s in enumerate(self.steps)}

    @property
    def n_paths(self) -> int:
        return self.data.shape[0]

    @property
    def n_modes(self) -> int:
        return self.data.shape[2]

    @property
    def is_full(self) -> bool:
        return len(self.steps) == self.n_steps + 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.steps * self.dt

    @property
    def horizon(self) -> float:
        return self.t0 + self.n_steps * self.dt

    def slot(self, step: int) -> int:
        try:
            return self._slot[int(step)]
        except KeyError:
            if 0 <= step <= self.n_steps:
                raise HorizonError(f"step {step} was not retained by this ensemble") from None
            raise HorizonError(f"step {step} outside 0..{self.n_steps}") from None

    def at(self, step: int) -> np.ndarray:
        return self.data[:, self.slot(step), :]

    def step_of(self, t: float) -> int:
        k = (t - self.t0) / self.dt
        s = int(round(k))
        if abs(k - s) > 1e-9 * max(1.0, abs(k)):
            raise ConfigurationError(f"time {t} is not on the dt grid")
        if not 0 <= s <= self.n_steps:
            raise HorizonError(f"time {t} outside [{self.t0}, {self.horizon}]")
        return s

    def check_finite(self):
        bad = ~np.isfinite(self.data)
        if bad.any():
            slot = int(np.argwhere(bad)[0][1])
            raise ShapeError(f"non-finite value stored at step {int(self.steps[slot])}")


class SquareMeanEstimate(NamedTuple):
    value: float
    std_error: float
    n_paths: int


def estimate(samples) -> SquareMeanEstimate:
    """Mean and standard error of per-path non-negative samples."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(np.sum(samples) / n)
    se = float(np.std(samples, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return SquareMeanEstimate(mean, se, n)


def square_mean_norm(ens: PathEnsemble, step: int) -> SquareMeanEstimate:
    """Estimate ``E||X(t_step)||^2``."""
    try:
        x = ens.at(step)
    except HorizonError as exc:
        raise ShapeError(str(exc)) from None
    return estimate(np.sum(x * x, axis=1))


def square_mean_curve(ens: PathEnsemble) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(t, E||X||^2, std_error)`` at every stored step."""
    norms = np.sum(ens.data * ens.data, axis=2)
    n = ens.n_paths
    mean = np.sum(norms, axis=0) / n
    se = np.std(norms, axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return ens.times, mean, se


def sup_square_mean(ens: PathEnsemble) -> float:
    """Discretized Banach norm squared: max over stored times of ``E||X||^2``."""
    return float(np.max(square_mean_curve(ens)[1]))


def omega_steps(ens: PathEnsemble, omega: float) -> int:
    k = omega / ens.dt
    m = int(round(k))
    if m < 1 or abs(k - m) > 1e-9 * k:
        raise ConfigurationError(f"omega={omega} is not an integer multiple of dt={ens.dt}", key="omega")
    return m


def shift_cauchy_metric(ens: PathEnsemble, t: float, n: int, p: int, omega: float) -> SquareMeanEstimate:
    """Estimate ``D(n, p, t) = E||X(t + (n + p) omega) - X(t + n omega)||^2``.

    Differences are taken path by path before averaging.
    """
    m = omega_steps(ens, omega)
    s = ens.step_of(t)
    hi = s + (n + p) * m
    if hi > ens.n_steps:
        raise HorizonError(f"t + (n+p)*omega = {ens.t0 + hi * ens.dt} beyond horizon {ens.horizon}")
    diff = ens.at(hi) - ens.at(s + n * m)
    return estimate(np.sum(diff * diff, axis=1))
