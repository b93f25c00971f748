"""Deterministic omega-periodic-limit functions.

A function ``f`` on [0, inf) is an omega-periodic limit if ``f(t + n omega)``
converges for every fixed ``t`` as the integer ``n`` grows.  The limit is
omega-periodic.  If the convergence is uniform in ``t`` the function is
asymptotically periodic; the spike family below is the standard example of
a periodic limit function that is not.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, DomainError

DEFAULT_TOL = 1e-6
EXACT_TOL = 1e-12
DEFAULT_GRID_POINTS = 256

TimeFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class PeriodicLimitFn:
    """A vectorized function of time with a period candidate ``omega``.

    ``known_limit`` is the omega-periodic limit function when it is available
    in closed form; ``sup_bound`` is a uniform bound on ``|eval|``.
    """

    omega: float
    eval: TimeFn
    sup_bound: float
    known_limit: Optional[TimeFn] = None
    name: str = "fn"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.omega > 0:
            raise ConfigurationError(f"omega must be > 0, got {self.omega}", key="omega")
        if not self.sup_bound >= 0:
            raise ConfigurationError(f"sup_bound must be >= 0, got {self.sup_bound}", key="sup_bound")

    def __call__(self, t):
        return self.eval(np.asarray(t, dtype=float))

    def value(self, t: float) -> float:
        return float(self.eval(np.asarray([t], dtype=float))[0])


def harmonic_widths(n):
    return 1.0 / (np.asarray(n, dtype=float) + 1.0)


def geometric_widths(n):
    return 0.5 ** (np.asarray(n, dtype=float) + 1.0)


@dataclass(frozen=True)
class SpikeFamily:
    """Half-widths ``k_n`` of the spikes centred at ``2n + 1``, ``n >= 1``.

    ``k_seq`` must be vectorized, take values in (0, 1), be strictly
    decreasing and tend to 0.  Only finitely many terms can be checked.
    """

    k_seq: Callable = harmonic_widths
    label: str = "harmonic"

    def widths(self, n) -> np.ndarray:
        return np.asarray(self.k_seq(np.asarray(n)), dtype=float)

    def check(self, n_max: int = 1000) -> None:
        k = self.widths(np.arange(1, n_max + 2))
        if np.any(k <= 0) or np.any(k >= 1):
            raise ConfigurationError("spike half-widths must lie in (0, 1)", key="spike.k")
        if np.any(np.diff(k) >= 0):
            raise ConfigurationError("spike half-widths must be strictly decreasing", key="spike.k")


SPIKE_FAMILIES = {
    "harmonic": SpikeFamily(harmonic_widths, "harmonic"),
    "geometric": SpikeFamily(geometric_widths, "geometric"),
}


def eval_spike(t, fam: SpikeFamily = SPIKE_FAMILIES["harmonic"]):
    """Piecewise-linear unit spikes at the odd integers.

    The spike at 1 rises linearly from (0, 0) to (1, 1) and falls back to
    (2, 0).  For ``n >= 1`` the spike at ``2n + 1`` has half-width ``k_n``.
    Scalars in, float out; arrays in, arrays out.
    """
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError("spike functions are defined for t >= 0")
    m = np.floor(t / 2.0)
    centre = 2.0 * m + 1.0
    width = np.ones_like(t)
    later = m >= 1
    if np.any(later):
        width[later] = fam.widths(m[later])
    out = np.clip(1.0 - np.abs(t - centre) / width, 0.0, 1.0)
    return float(out[0]) if scalar else out


def eval_spike_limit(t):
    """Indicator of the odd positive integers (to within ``1e-12``)."""
    scalar = np.ndim(t) == 0
    t = np.atleast_1d(np.asarray(t, dtype=float))
    r = np.round(t)
    hit = (np.abs(t - r) <= EXACT_TOL) & (r > 0) & (np.mod(r, 2.0) == 1.0)
    out = hit.astype(float)
    return float(out[0]) if scalar else out


def spike_function(fam: SpikeFamily | None = None) -> PeriodicLimitFn:
    fam = fam or SPIKE_FAMILIES["harmonic"]
    return PeriodicLimitFn(
        omega=2.0,
        eval=lambda t: eval_spike(t, fam),
        sup_bound=1.0,
        known_limit=eval_spike_limit,
        name="spike",
        params={"k": fam.label},
    )


# -- pointwise and uniform convergence ---------------------------------------


def _cauchy_window(n_max: int) -> int:
    return max(1, n_max // 4)


def estimate_pointwise_limit(f: PeriodicLimitFn, t: float, n_max: int, tol: float = DEFAULT_TOL):
    """Cauchy-stabilized value of ``f(t + n omega)`` for ``n <= n_max``.

    Returns ``(limit, converged)``.  ``converged`` is true when consecutive
    values move by at most ``tol`` over the last quarter of ``0..n_max``;
    the limit is the last value either way.
    """
    limits, conv = _pointwise_limits(f, np.asarray([t], dtype=float), n_max, tol)
    return float(limits[0]), bool(conv[0])


def _pointwise_limits(f: PeriodicLimitFn, ts: np.ndarray, n_max: int, tol: float):
    if n_max < 2:
        raise ConfigurationError(f"n_max must be >= 2, got {n_max}", key="n_max")
    n = np.arange(n_max + 1, dtype=float)
    vals = f(ts[:, None] + n[None, :] * f.omega)
    q = _cauchy_window(n_max)
    tail = vals[:, n_max - q :]
    with np.errstate(invalid="ignore"):
        steps = np.abs(np.diff(tail, axis=1))
        converged = np.all(steps <= tol, axis=1) & np.all(np.isfinite(tail), axis=1)
    return vals[:, -1], converged


class DeterministicClass(str, enum.Enum):
    ASYMPTOTICALLY_PERIODIC = "AsymptoticallyPeriodic"
    PERIODIC_LIMIT_ONLY = "PeriodicLimitOnly"
    UNDETERMINED = "Undetermined"


@dataclass
class DeterministicReport:
    verdict: DeterministicClass
    omega: float
    n_max: int
    tol: float
    grid: np.ndarray
    limits: np.ndarray
    converged: np.ndarray
    sup_table: list  # (n, sup discrepancy) pairs
    sup_grid_points: int
    limit_source: str
    note: str = ""

    def verdict_record(self) -> dict:
        last = self.sup_table[-1][1] if self.sup_table else None
        return {
            "verdict": self.verdict.value,
            "omega": self.omega,
            "n_max": self.n_max,
            "tol": self.tol,
            "grid_points": int(len(self.grid)),
            "sup_grid_points": self.sup_grid_points,
            "all_points_converged": bool(np.all(self.converged)),
            "unconverged_points": [float(t) for t in self.grid[~self.converged]],
            "final_sup_discrepancy": last,
            "min_sup_discrepancy": min((s for _, s in self.sup_table), default=None),
            "limit_source": self.limit_source,
            "note": self.note,
        }


def default_grid(omega: float, points: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.arange(points) * (omega / points)


def classify_deterministic(
    f: PeriodicLimitFn,
    grid=None,
    n_max: int = 64,
    tol: float = DEFAULT_TOL,
    sup_refine: int = 1,
) -> tuple[DeterministicClass, DeterministicReport]:
    """Separate uniform from merely pointwise convergence of ``f(t + n omega)``.

    Pointwise convergence is tested at each ``grid`` point with
    :func:`estimate_pointwise_limit`.  The uniform criterion uses
    ``sup_t |f(t + n omega) - f~(t)|`` over the grid refined ``sup_refine``
    times, for ``n = 1..n_max``.  ``f~`` is ``f.known_limit`` if present,
    else the Cauchy estimate from a schedule extended to ``2 n_max``.

    All suprema are grid suprema.  A finite point set cannot tell the two
    classes apart as ``n`` grows without bound, so features narrower than
    the sup-grid spacing go unseen.
    """
    grid = default_grid(f.omega) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigurationError("classification grid is empty", key="grid")
    if sup_refine < 1:
        raise ConfigurationError("sup_refine must be >= 1", key="sup_refine")
    limits, converged = _pointwise_limits(f, grid, n_max, tol)

    sup_grid = grid
    if sup_refine > 1:
        fine = default_grid(f.omega, len(grid) * sup_refine)
        sup_grid = np.unique(np.concatenate([grid, fine]))

    if f.known_limit is not None:
        target = np.asarray(f.known_limit(sup_grid), dtype=float)
        source = "known"
    else:
        target, _ = _pointwise_limits(f, sup_grid, 2 * n_max, tol)
        source = f"cauchy estimate at n={2 * n_max}"

    table = []
    for n in range(1, n_max + 1):
        d = np.abs(f(sup_grid + n * f.omega) - target)
        table.append((n, float(np.max(d))))

    all_conv = bool(np.all(converged))
    final_sup = table[-1][1]
    if all_conv and final_sup <= tol:
        verdict = DeterministicClass.ASYMPTOTICALLY_PERIODIC
    elif all_conv:
        verdict = DeterministicClass.PERIODIC_LIMIT_ONLY
    else:
        verdict = DeterministicClass.UNDETERMINED
    report = DeterministicReport(
        verdict=verdict,
        omega=f.omega,
        n_max=n_max,
        tol=tol,
        grid=grid,
        limits=limits,
        converged=converged,
        sup_table=table,
        sup_grid_points=int(sup_grid.size),
        limit_source=source,
        note="uniform criterion evaluated as a grid supremum",
    )
    return verdict, report


# -- expression registry -------------------------------------------------------


def _sin(amp=1.0, omega=1.0, phase=0.0, **_):
    def ev(t):
        return amp * np.sin(2.0 * np.pi * t / omega + phase)

    return PeriodicLimitFn(omega, ev, abs(amp), ev, "sin", {"amp": amp, "omega": omega, "phase": phase})


def _const(value=0.0, omega=1.0, **_):
    def ev(t):
        return np.full(np.shape(t), float(value))

    return PeriodicLimitFn(omega, ev, abs(value), ev, "const", {"value": value, "omega": omega})


def _decaying_sin(amp=1.0, omega=1.0, rate=1.0, phase=0.0, **_):
    if rate <= 0:
        raise ConfigurationError("decaying_sin rate must be > 0", key="rate")

    def ev(t):
        return amp * (np.sin(2.0 * np.pi * t / omega + phase) + np.exp(-rate * t))

    def lim(t):
        return amp * np.sin(2.0 * np.pi * t / omega + phase)

    return PeriodicLimitFn(
        omega, ev, 2.0 * abs(amp), lim, "decaying_sin",
        {"amp": amp, "omega": omega, "rate": rate, "phase": phase},
    )


def _spike(k="harmonic", **_):
    if k not in SPIKE_FAMILIES:
        raise ConfigurationError(f"unknown spike width sequence {k!r}", key="k")
    return spike_function(SPIKE_FAMILIES[k])


def _spike_limit(**_):
    return PeriodicLimitFn(2.0, eval_spike_limit, 1.0, eval_spike_limit, "spike_limit", {})


def sum_fn(*fns: PeriodicLimitFn) -> PeriodicLimitFn:
    if not fns:
        raise ConfigurationError("sum needs at least one term", key="terms")
    # constants are periodic for every omega, so they adopt the others' period
    timed = [g for g in fns if g.name != "const"] or list(fns)
    omega = timed[0].omega
    if any(not math.isclose(g.omega, omega, rel_tol=1e-12) for g in timed):
        raise ConfigurationError("sum terms must share omega", key="terms")

    def ev(t):
        return sum(g(t) for g in fns)

    lim = None
    if all(g.known_limit is not None for g in fns):
        def lim(t):
            return sum(np.asarray(g.known_limit(t), dtype=float) for g in fns)

    return PeriodicLimitFn(omega, ev, sum(g.sup_bound for g in fns), lim, "sum")


def scale_fn(c: float, fn: PeriodicLimitFn) -> PeriodicLimitFn:
    lim = None
    if fn.known_limit is not None:
        def lim(t):
            return c * np.asarray(fn.known_limit(t), dtype=float)

    return PeriodicLimitFn(fn.omega, lambda t: c * fn(t), abs(c) * fn.sup_bound, lim, "scale")


def shift_fn(a: float, fn: PeriodicLimitFn) -> PeriodicLimitFn:
    if a < 0:
        raise ConfigurationError(f"shift must be >= 0, got {a}", key="by")
    lim = None
    if fn.known_limit is not None:
        def lim(t):
            return fn.known_limit(np.asarray(t, dtype=float) + a)

    return PeriodicLimitFn(fn.omega, lambda t: fn(np.asarray(t, dtype=float) + a), fn.sup_bound, lim, "shift")


REGISTRY = {
    "spike": _spike,
    "spike_limit": _spike_limit,
    "sin": _sin,
    "const": _const,
    "decaying_sin": _decaying_sin,
    "sum": None,
    "scale": None,
    "shift": None,
}


def build_expression(spec, key: str = "expr") -> PeriodicLimitFn:
    """Build a function from a registry spec such as ``{"name": "sin", "omega": 2}``.

    Composite names take sub-specs: ``sum`` under ``terms``, ``scale`` under
    ``of`` with ``factor``, ``shift`` under ``of`` with ``by``.  A bare number
    is shorthand for ``const``.
    """
    if isinstance(spec, (int, float)):
        return _const(float(spec))
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigurationError("expression must be a table with a 'name'", key=key)
    name = spec["name"]
    if name not in REGISTRY:
        raise ConfigurationError(f"unknown expression {name!r}", key=f"{key}.name")
    params = {k: v for k, v in spec.items() if k != "name"}
    try:
        if name == "sum":
            terms = params.get("terms") or []
            return sum_fn(*(build_expression(s, f"{key}.terms[{i}]") for i, s in enumerate(terms)))
        if name == "scale":
            return scale_fn(float(params.get("factor", 1.0)), build_expression(params.get("of"), f"{key}.of"))
        if name == "shift":
            return shift_fn(float(params.get("by", 0.0)), build_expression(params.get("of"), f"{key}.of"))
        return REGISTRY[name](**params)
    except ConfigurationError as exc:
        if exc.key and not exc.key.startswith(key):
            raise ConfigurationError(str(exc).split(": ", 1)[-1], key=f"{key}.{exc.key}") from None
        raise
    except TypeError as exc:
        raise ConfigurationError(str(exc), key=key) from None
