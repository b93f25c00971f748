"""Classifiers for square-mean periodic-limit behavior of ensembles.

The omega-periodic limit ``X~(t)`` of ``X(t + n omega)`` is never built.
Its existence is probed through the Cauchy quantity

    D(n, p, t) = E||X(t + (n + p) omega) - X(t + n omega)||^2,

which tends to 0 for every ``p`` exactly when the limit exists (L2 is
complete).  Pointwise decay at every grid offset is evidence for a
periodic limit; decay of the supremum over one period is evidence for
asymptotic periodicity.  Verdicts never claim a negative.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, HorizonError
from .process import PathEnsemble, estimate, omega_steps, shift_cauchy_metric

DEFAULT_N_SCHEDULE = (1, 2, 4, 8, 16)
DEFAULT_TOL = 1e-3
DEFAULT_DECAY_RATIO = 0.2
# normalized D below this is rounding noise; nothing is left to decay
DEFAULT_FLOOR = 1e-14


class Verdict(str, enum.Enum):
    ASYMPTOTICALLY_PERIODIC = "SquareMeanAsymptoticallyPeriodic"
    PERIODIC_LIMIT = "SquareMeanPeriodicLimit"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class PeriodicityPlan:
    omega: float
    t_grid: list
    n_schedule: list = field(default_factory=lambda: list(DEFAULT_N_SCHEDULE))
    p_list: list = field(default_factory=lambda: [1])
    pointwise_tol: float = DEFAULT_TOL
    uniform_tol: float = DEFAULT_TOL
    decay_ratio: float = DEFAULT_DECAY_RATIO
    floor: float = DEFAULT_FLOOR

    def __post_init__(self):
        self.t_grid = [float(t) for t in self.t_grid]
        self.n_schedule = [int(n) for n in self.n_schedule]
        self.p_list = [int(p) for p in self.p_list]
        if not self.omega > 0:
            raise ConfigurationError("must be > 0", key="diagnostics.omega")
        if not self.t_grid:
            raise ConfigurationError("grid is empty", key="diagnostics.t_grid")
        if any(t < 0 or t >= self.omega for t in self.t_grid):
            raise ConfigurationError("grid offsets must lie in [0, omega)", key="diagnostics.t_grid")
        if not self.n_schedule or any(b <= a for a, b in zip(self.n_schedule, self.n_schedule[1:])):
            raise ConfigurationError("must be strictly increasing", key="diagnostics.n_schedule")
        if self.n_schedule[0] < 0 or any(p < 1 for p in self.p_list) or not self.p_list:
            raise ConfigurationError("need n >= 0 and p >= 1", key="diagnostics.p_list")

    @classmethod
    def on_grid(cls, omega: float, dt: float, points: int = 8, **kw) -> "PeriodicityPlan":
        """Plan with ``points`` offsets spread over [0, omega) on the dt grid."""
        m = int(round(omega / dt))
        idx = sorted({int(i * m // points) for i in range(points)})
        return cls(omega=omega, t_grid=[i * dt for i in idx], **kw)

    @property
    def periods_needed(self) -> int:
        return self.n_schedule[-1] + max(max(self.p_list), 1)

    def horizon_needed(self) -> float:
        return max(self.t_grid) + self.periods_needed * self.omega

    def required_steps(self, dt: float, tail_n=()) -> list:
        """Every step index the classifier and estimators will read."""
        m = int(round(self.omega / dt))
        steps = {0}
        for t in self.t_grid:
            s = int(round(t / dt))
            steps.add(s)
            for n in self.n_schedule:
                steps.add(s + n * m)
                steps.add(s + (n + 1) * m)
                for p in self.p_list:
                    steps.add(s + (n + p) * m)
            for n in tail_n:
                steps.add(s + n * m)
        for n in tail_n:
            steps.add((n + 1) * m)
        return sorted(steps)


@dataclass
class PeriodicityReport:
    verdict: Verdict
    cauchy_table: list  # rows (t, n, p, D, std_error)
    sup_curve: list  # rows (n, p, sup_t D, std_error at the maximizing t)
    screen: list  # rows (t, n, |delta second moment|, std_error)
    evidence: dict
    scale: float

    def to_json(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "scale": self.scale,
            "evidence": self.evidence,
            "sup_curve": [list(r) for r in self.sup_curve],
        }


def _decay_ok(first: float, last: float, plan: PeriodicityPlan, scale: float):
    if first / scale <= plan.floor:
        return True, 0.0
    ratio = last / first
    return ratio <= plan.decay_ratio, ratio


def second_moment_period_check(ens: PathEnsemble, omega: float, n_schedule, t_grid=(0.0,)) -> list:
    """``|E||X(t + (n+1) omega)||^2 - E||X(t + n omega)||^2|`` with standard errors.

    Rows are ``(t, n, delta, std_error)``; differences are taken pathwise.
    Convergence in L2 forces these to vanish, so this is a cheap necessary
    condition.
    """
    m = omega_steps(ens, omega)
    rows = []
    for t in t_grid:
        s = ens.step_of(t)
        for n in n_schedule:
            hi = s + (n + 1) * m
            if hi > ens.n_steps:
                raise HorizonError(f"screen needs step {hi}, horizon is {ens.n_steps}")
            a, b = ens.at(hi), ens.at(s + n * m)
            e = estimate(np.sum(a * a, axis=1) - np.sum(b * b, axis=1))
            rows.append((float(t), int(n), abs(e.value), e.std_error))
    return rows


def _scale(ens: PathEnsemble) -> float:
    s = float(np.max(np.sum(ens.data * ens.data, axis=2).mean(axis=0)))
    return s if s > 0 else 1.0


def classify_process(ens: PathEnsemble, plan: PeriodicityPlan) -> PeriodicityReport:
    """Three-valued periodicity verdict for an ensemble.

    ``D`` values are compared after division by ``max_t E||X(t)||^2`` over
    the stored slices.  An offset passes when ``D`` at the last ``n`` is
    below ``pointwise_tol`` plus three standard errors and has shrunk by
    ``decay_ratio`` since the first ``n`` (or started at rounding level).
    The supremum over offsets must pass the same test with ``uniform_tol``
    for the asymptotically periodic verdict.  A failed second-moment screen
    short-circuits to ``Inconclusive``.
    """
    need = plan.horizon_needed()
    if need > ens.horizon + 1e-9 * max(1.0, need):
        raise HorizonError(f"plan needs horizon {need}, ensemble ends at {ens.horizon}")
    omega_steps(ens, plan.omega)
    scale = _scale(ens)
    n0, n1 = plan.n_schedule[0], plan.n_schedule[-1]

    screen = second_moment_period_check(ens, plan.omega, plan.n_schedule, plan.t_grid)
    screen_tol = 2.0 * math.sqrt(plan.pointwise_tol)
    screen_fail = [
        (t, d / scale) for t, n, d, se in screen if n == n1 and d / scale > screen_tol + 3 * se / scale
    ]
    evidence = {
        "n_schedule": plan.n_schedule,
        "p_list": plan.p_list,
        "grid": plan.t_grid,
        "screen_tolerance": screen_tol,
        "screen_failures": screen_fail,
        "note": "suprema over the offset grid only; criterion (iii) is not separately checked",
    }
    if screen_fail:
        evidence["reason"] = "second-moment screen failed"
        return PeriodicityReport(Verdict.INCONCLUSIVE, [], [], screen, evidence, scale)

    table = []
    cell = {}
    for t in plan.t_grid:
        for p in plan.p_list:
            for n in plan.n_schedule:
                e = shift_cauchy_metric(ens, t, n, p, plan.omega)
                table.append((t, n, p, e.value, e.std_error))
                cell[(t, n, p)] = e

    pointwise_ok = True
    worst = {"margin": -math.inf}
    ratios = []
    for t in plan.t_grid:
        for p in plan.p_list:
            first, last = cell[(t, n0, p)], cell[(t, n1, p)]
            level_ok = last.value / scale <= plan.pointwise_tol + 3 * last.std_error / scale
            decay_ok, ratio = _decay_ok(first.value, last.value, plan, scale)
            ratios.append(ratio)
            margin = last.value / scale - plan.pointwise_tol
            if margin > worst["margin"]:
                worst = {"margin": margin, "t": t, "p": p}
            pointwise_ok &= level_ok and decay_ok

    sup_curve = []
    sup_ok = True
    sup_ratio = {}
    for p in plan.p_list:
        for n in plan.n_schedule:
            best = max((cell[(t, n, p)] for t in plan.t_grid), key=lambda e: e.value)
            sup_curve.append((n, p, best.value, best.std_error))
        first = next(r for r in sup_curve if r[0] == n0 and r[1] == p)
        last = next(r for r in sup_curve if r[0] == n1 and r[1] == p)
        level_ok = last[2] / scale <= plan.uniform_tol + 3 * last[3] / scale
        decay_ok, ratio = _decay_ok(first[2], last[2], plan, scale)
        sup_ratio[p] = ratio
        sup_ok &= level_ok and decay_ok

    evidence.update(
        pointwise_pass=bool(pointwise_ok),
        uniform_pass=bool(sup_ok),
        max_pointwise_decay_ratio=float(max(ratios)),
        sup_decay_ratio={str(p): float(r) for p, r in sup_ratio.items()},
        worst_pointwise=worst,
    )
    if pointwise_ok and sup_ok:
        verdict = Verdict.ASYMPTOTICALLY_PERIODIC
    elif pointwise_ok:
        verdict = Verdict.PERIODIC_LIMIT
    else:
        verdict = Verdict.INCONCLUSIVE
    return PeriodicityReport(verdict, table, sup_curve, screen, evidence, scale)


@dataclass
class PeriodicPart:
    t_grid: np.ndarray
    mean: np.ndarray  # (len(t_grid), n_modes)
    std_error: np.ndarray
    seam_residual: float


def periodic_part_estimate(ens: PathEnsemble, omega: float, tail_n, t_grid) -> PeriodicPart:
    """Mean of ``X(t + n omega)`` over ``tail_n`` and paths, for ``t`` in one period.

    Standard errors come from per-path tail averages.  ``seam_residual`` is
    ``||m(0) - m(omega)||`` with ``m(omega)`` read one period later, which
    vanishes for an exactly periodic mean.
    """
    m = omega_steps(ens, omega)
    tail_n = [int(n) for n in tail_n]
    if not tail_n:
        raise ConfigurationError("tail_n is empty", key="diagnostics.tail_n")

    def tail_avg(s):
        acc = np.zeros((ens.n_paths, ens.n_modes))
        for n in tail_n:
            acc += ens.at(s + n * m)
        return acc / len(tail_n)

    means, ses = [], []
    for t in t_grid:
        per_path = tail_avg(ens.step_of(t))
        means.append(per_path.mean(axis=0))
        if ens.n_paths > 1:
            ses.append(per_path.std(axis=0, ddof=1) / math.sqrt(ens.n_paths))
        else:
            ses.append(np.zeros(ens.n_modes))
    m0 = tail_avg(ens.step_of(0.0)).mean(axis=0)
    m_omega = tail_avg(m).mean(axis=0)
    return PeriodicPart(np.asarray(t_grid, dtype=float), np.array(means), np.array(ses),
                        float(np.linalg.norm(m0 - m_omega)))
