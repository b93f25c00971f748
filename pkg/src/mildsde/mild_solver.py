"""Mild solutions of ``dX = AX dt + f(t, X) dt + g(t, X) dB``.

The scheme is exponential Euler in the eigenbasis of ``A``: per mode and
per step

    x <- decay * x + drift_weight * f_n(t_k, X_k) + noise_std * g_n(t_k, X_k) * xi_k

with the weights of :func:`mildsde.semigroup.convolution_weights` and one
scalar ``xi_k`` shared by all modes (the noise is one-dimensional).
Coefficients are frozen at the left endpoint, as for an Ito integral.

The same recursion, fed a *given* trajectory in the coefficients instead
of the running state, is the discretized fixed-point map ``Gamma``.  Its
fixed point is exactly the output of :func:`integrate` on the same driver,
which is what makes Picard iteration and direct integration comparable.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DivergenceError, HorizonError, ShapeError
from .periodic_limit import PeriodicLimitFn
from .process import BrownianDriver, PathEnsemble, estimate, shift_driver, sup_square_mean
from .semigroup import ExpStableSemigroup, SpectralField, convolution_weights

DEFAULT_CHUNK_PATHS = 1024


@dataclass(frozen=True, eq=False)
class CoefficientFn:
    """Drift or diffusion coefficient acting on spectral states.

    ``eval(t, x)`` maps a state array whose last axis indexes modes to an
    array of the same shape.  ``lipschitz`` uses the squared convention
    ``||f(t,x) - f(t,y)||^2 <= L ||x - y||^2``; ``lipschitz_unsquared`` is
    the constant in ``||f(t,x) - f(t,y)|| <= L ||x - y||`` where one is known.
    """

    eval: Callable[[float, np.ndarray], np.ndarray]
    lipschitz: float
    sup_bound: float
    lipschitz_unsquared: Optional[float] = None
    name: str = "custom"
    state_free: bool = False
    params: dict = field(default_factory=dict)

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"

    def __call__(self, t, x):
        return self.eval(t, x)


def zero_coefficient() -> CoefficientFn:
    return CoefficientFn(lambda t, x: np.zeros_like(x), 0.0, 0.0, 0.0, "zero", state_free=True)


def constant_coefficient(value, profile: PeriodicLimitFn | None = None) -> CoefficientFn:
    """State-independent coefficient ``value * profile(t)``; ``value`` may be per-mode."""
    value = np.asarray(value, dtype=float)
    bound = float(np.linalg.norm(np.broadcast_to(value, value.shape or (1,))))
    if profile is None:
        def ev(t, x):
            return np.broadcast_to(value, x.shape).copy()
    else:
        bound *= profile.sup_bound

        def ev(t, x):
            return np.broadcast_to(value * profile.value(t), x.shape).copy()

    return CoefficientFn(ev, 0.0, bound, 0.0, "constant", state_free=True,
                         params={"value": value.tolist()})


def linear_in_state(psi: PeriodicLimitFn) -> CoefficientFn:
    """The coefficient ``u * psi(t)`` of the heat example.

    Multiplying ``u(x)`` by the scalar ``psi(t)`` scales every mode, so the
    squared-convention Lipschitz constant is ``||psi||^2`` and the unsquared
    one is ``||psi||``.  The map is unbounded in ``u``.
    """
    def ev(t, x):
        return x * psi.value(t)

    return CoefficientFn(ev, psi.sup_bound**2, math.inf, psi.sup_bound, "linear_in_state",
                         params={"psi": psi.name, "psi_sup": psi.sup_bound})


@dataclass
class SolverConfig:
    """Discretization and Monte Carlo settings.

    ``initial`` is a :class:`SpectralField`, an array of shape ``(n_modes,)``
    or ``(n_paths, n_modes)``, or a callable ``paths -> (len(paths), n_modes)``.
    ``keep`` lists the step indices to retain (``None`` keeps all).
    ``refine`` > 1 builds each increment from finer base increments, so
    runs at ``dt`` and ``dt / refine`` share a Brownian path.
    """

    dt: float
    n_steps: int
    n_paths: int
    initial: object
    seed: int = 0
    t0: float = 0.0
    keep: Optional[Sequence[int]] = None
    refine: int = 1
    stream: int = 0
    threads: int = 1
    chunk_paths: int = DEFAULT_CHUNK_PATHS

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigurationError(f"must be > 0, got {self.dt}", key="solver.dt")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ConfigurationError(f"must be >= 1, got {self.n_steps}", key="solver.n_steps")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise ConfigurationError(f"must be >= 1, got {self.n_paths}", key="mc.paths")
        if self.threads < 1:
            raise ConfigurationError("must be >= 1", key="threads")

    def driver(self) -> BrownianDriver:
        return BrownianDriver(self.seed, self.dt, refine=self.refine, stream=self.stream)

    def initial_states(self, paths: np.ndarray, n_modes: int) -> np.ndarray:
        init = self.initial
        if isinstance(init, SpectralField):
            init = init.coeffs
        if callable(init):
            arr = np.asarray(init(paths), dtype=float)
        else:
            arr = np.asarray(init, dtype=float)
            if arr.ndim == 2:
                if arr.shape[0] != self.n_paths:
                    raise ShapeError(f"initial has {arr.shape[0]} rows for {self.n_paths} paths")
                arr = arr[paths]
        if arr.ndim < 2 and arr.shape[-1:] in ((), (1,), (n_modes,)):
            arr = np.broadcast_to(arr, (len(paths), n_modes))
        if arr.shape != (len(paths), n_modes):
            raise ShapeError(f"initial state has shape {arr.shape}, expected (*, {n_modes})")
        return np.array(arr, dtype=float)

    def kept_steps(self) -> np.ndarray:
        if self.keep is None:
            return np.arange(self.n_steps + 1)
        keep = np.unique(np.asarray(list(self.keep), dtype=np.int64))
        if keep.size == 0 or keep[0] < 0 or keep[-1] > self.n_steps:
            raise HorizonError(f"retained steps must lie in 0..{self.n_steps}")
        return keep


@dataclass
class PicardConfig:
    max_iters: int = 50
    tol: float = 1e-8
    kappa: float = math.nan

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigurationError("must be >= 1", key="picard.max_iters")
        if self.tol < 0:
            raise ConfigurationError("must be >= 0", key="picard.tol")


# -- contraction constants -----------------------------------------------------


def contraction_constant(M: float, a: float, L_f: float, L_g: float) -> float:
    """``kappa = 2 M^2 (L_f / a^2 + L_g / a)``."""
    if not a > 0:
        raise ConfigurationError(f"decay rate must be > 0 for exponential stability, got {a}", key="semigroup.a")
    if M < 1 or L_f < 0 or L_g < 0:
        raise ConfigurationError("need M >= 1 and non-negative Lipschitz constants")
    return 2.0 * M * M * (L_f / (a * a) + L_g / a)


def example_gate(psi_sup: float, phi_sup: float) -> tuple[bool, float, float]:
    """The heat-example condition ``||psi|| + ||phi|| pi^2 < pi^4 / 2``."""
    lhs = psi_sup + phi_sup * math.pi**2
    rhs = math.pi**4 / 2.0
    return lhs < rhs, lhs, rhs


def kappa_report(sg: ExpStableSemigroup, f: CoefficientFn, g: CoefficientFn) -> dict:
    """Contraction constants under both Lipschitz conventions.

    ``kappa_reported`` is the larger of the two whenever both exist.
    """
    out = {"M": sg.M, "a": sg.a,
           "L_f_squared": f.lipschitz, "L_g_squared": g.lipschitz,
           "kappa_squared_convention": contraction_constant(sg.M, sg.a, f.lipschitz, g.lipschitz)}
    if f.lipschitz_unsquared is not None and g.lipschitz_unsquared is not None:
        out["L_f_unsquared"] = f.lipschitz_unsquared
        out["L_g_unsquared"] = g.lipschitz_unsquared
        out["kappa_unsquared_convention"] = contraction_constant(
            sg.M, sg.a, f.lipschitz_unsquared, g.lipschitz_unsquared)
    out["kappa_reported"] = max(v for k, v in out.items() if k.startswith("kappa_"))
    out["contraction_guaranteed"] = out["kappa_reported"] < 1.0
    return out


# -- the sweep ----------------------------------------------------------------


def _chunks(n_paths: int, size: int):
    return [np.arange(s, min(s + size, n_paths)) for s in range(0, n_paths, size)]


def _sweep_chunk(sg, f, g, cfg: SolverConfig, paths, keep, source=None):
    # overflow is caught below and reported as DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        return _sweep(sg, f, g, cfg, paths, keep, source)


def _sweep(sg, f, g, cfg: SolverConfig, paths, keep, source):
    w = convolution_weights(sg, cfg.dt)
    y = cfg.initial_states(paths, sg.n_modes)
    out = np.empty((len(paths), len(keep), sg.n_modes))
    keep_slot = {int(s): i for i, s in enumerate(keep)}
    if 0 in keep_slot:
        out[:, keep_slot[0]] = y
    xi = None if g.is_zero else cfg.driver().normals(paths, 0, cfg.n_steps)
    for k in range(cfg.n_steps):
        t = cfg.t0 + k * cfg.dt
        state = y if source is None else source[:, k, :]
        nxt = w.decay * y
        if not f.is_zero:
            nxt += w.drift_weight * f(t, state)
        if xi is not None:
            nxt += w.noise_std * g(t, state) * xi[:, k, None]
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(k + 1)
        y = nxt
        slot = keep_slot.get(k + 1)
        if slot is not None:
            out[:, slot] = y
    return out


def _run(sg, f, g, cfg: SolverConfig, keep, source=None) -> np.ndarray:
    chunks = _chunks(cfg.n_paths, cfg.chunk_paths)

    def work(paths):
        src = None if source is None else source[paths]
        return _sweep_chunk(sg, f, g, cfg, paths, keep, src)

    if cfg.threads == 1 or len(chunks) == 1:
        parts = [work(p) for p in chunks]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(work, chunks))
    return np.concatenate(parts, axis=0)


def integrate(sg: ExpStableSemigroup, f: CoefficientFn, g: CoefficientFn, cfg: SolverConfig) -> PathEnsemble:
    """Exponential-Euler paths of the mild solution, frozen to ``cfg``'s driver."""
    keep = cfg.kept_steps()
    data = _run(sg, f, g, cfg, keep)
    return PathEnsemble(data, cfg.dt, cfg.t0, steps=keep, n_steps=cfg.n_steps,
                        meta={"seed": cfg.seed, "refine": cfg.refine})


def gamma_apply(X: PathEnsemble, sg, f, g, cfg: SolverConfig) -> PathEnsemble:
    """Apply the discretized fixed-point map to every path of ``X``.

    ``(Gamma X)(t_k) = T(t_k) c0 + sum_j [drift and noise weights] applied
    to f(t_j, X(t_j)) and g(t_j, X(t_j))``, evaluated by recursion with the
    noise of ``cfg``'s driver.  ``X`` is not modified.
    """
    if not X.is_full or X.data.shape != (cfg.n_paths, cfg.n_steps + 1, sg.n_modes):
        raise ShapeError(
            f"Gamma needs a full ensemble of shape {(cfg.n_paths, cfg.n_steps + 1, sg.n_modes)}, "
            f"got {X.data.shape}"
        )
    full = np.arange(cfg.n_steps + 1)
    data = _run(sg, f, g, cfg, full, source=X.data)
    return PathEnsemble(data, cfg.dt, cfg.t0, steps=full, n_steps=cfg.n_steps, meta=dict(X.meta))


def sup_distance(X: PathEnsemble, Y: PathEnsemble):
    """``max_k E||X_k - Y_k||^2`` and the standard error at the maximizing step."""
    diff = X.data - Y.data
    norms = np.sum(diff * diff, axis=2)
    n = norms.shape[0]
    mean = np.sum(norms, axis=0) / n
    k = int(np.argmax(mean))
    return float(mean[k]), estimate(norms[:, k]).std_error


def contraction_ratio(X: PathEnsemble, Y: PathEnsemble, sg, f, g, cfg) -> tuple[float, float]:
    """Measured ``||Gamma X - Gamma Y||^2 / ||X - Y||^2`` in the sup-square-mean norm.

    Returns the ratio and its Monte Carlo standard error.
    """
    den, _ = sup_distance(X, Y)
    if den == 0:
        raise ConfigurationError("X and Y coincide; the ratio is undefined")
    num, se = sup_distance(gamma_apply(X, sg, f, g, cfg), gamma_apply(Y, sg, f, g, cfg))
    return num / den, se / den


@dataclass
class PicardResult:
    ensemble: PathEnsemble
    iterations: int
    residuals: list
    converged: bool
    guaranteed: bool
    scale: float
    kappa: float

    @property
    def ratios(self) -> list:
        r = self.residuals
        return [r[i + 1] / r[i] if r[i] > 0 else 0.0 for i in range(len(r) - 1)]


def constant_ensemble(sg, cfg: SolverConfig) -> PathEnsemble:
    c0 = cfg.initial_states(np.arange(cfg.n_paths), sg.n_modes)
    data = np.repeat(c0[:, None, :], cfg.n_steps + 1, axis=1)
    return PathEnsemble(data, cfg.dt, cfg.t0, n_steps=cfg.n_steps)


def picard_solve(sg, f, g, cfg: SolverConfig, pc: PicardConfig) -> PicardResult:
    """Iterate ``X <- Gamma X`` from the constant-in-time ``c0`` ensemble.

    The residual of iteration ``k`` is ``max_t E||X_k(t) - X_{k-1}(t)||^2``;
    iteration stops once it is at most ``pc.tol`` times ``max_t E||X_k(t)||^2``.
    A state-independent map is constant, so one application is exact.
    Non-convergence is reported through ``converged``, never raised.
    """
    kappa = pc.kappa if not math.isnan(pc.kappa) else kappa_report(sg, f, g)["kappa_reported"]
    X = constant_ensemble(sg, cfg)
    residuals = []
    converged = False
    scale = 0.0
    for it in range(1, pc.max_iters + 1):
        nxt = gamma_apply(X, sg, f, g, cfg)
        res, _ = sup_distance(nxt, X)
        residuals.append(res)
        scale = sup_square_mean(nxt)
        X = nxt
        if f.state_free and g.state_free:
            converged = True
            break
        if res <= pc.tol * max(scale, np.finfo(float).tiny):
            converged = True
            break
    return PicardResult(X, it, residuals, converged, kappa < 1.0, scale, kappa)


# -- tail-convolution probes ---------------------------------------------------


@dataclass
class ProbeTable:
    """Second moments of the tail convolutions at one time ``t``.

    ``norm2[i]`` estimates ``E||X_n(t)||^2`` and ``diff[i]`` estimates
    ``E||X_{n+1}(t) - X_n(t)||^2`` for ``n = n_list[i]``; ``mean[i]`` is the
    path-averaged coefficient vector of ``X_n(t)``.
    """

    kind: str
    t: float
    omega: float
    n_list: list
    mean: np.ndarray
    norm2: np.ndarray
    norm2_se: np.ndarray
    diff: np.ndarray
    diff_se: np.ndarray
    envelope: np.ndarray

    def rows(self):
        for i, n in enumerate(self.n_list):
            yield (n, float(self.norm2[i]), float(self.norm2_se[i]), float(self.diff[i]),
                   float(self.diff_se[i]), float(self.envelope[i]))


def _probe_grid(omega: float, ds: float) -> int:
    m = omega / ds
    mi = int(round(m))
    if mi < 1 or abs(m - mi) > 1e-9 * m:
        raise ConfigurationError(f"omega={omega} must be an integer multiple of ds={ds}", key="tail.substeps")
    return mi


def _as_paths(v, n_paths, n_modes):
    v = np.asarray(v, dtype=float)
    return np.broadcast_to(v, (n_paths, n_modes))


def _summarize(kind, sg, t, omega, n_list, values, envelope):
    decay_t = np.exp(sg.modes * t)
    rows_mean, n2, n2se, dd, ddse = [], [], [], [], []
    for n in n_list:
        xn = values[n] * decay_t
        xn1 = values[n + 1] * decay_t
        rows_mean.append(np.mean(xn, axis=0))
        e = estimate(np.sum(xn * xn, axis=1))
        d = estimate(np.sum((xn1 - xn) ** 2, axis=1))
        n2.append(e.value)
        n2se.append(e.std_error)
        dd.append(d.value)
        ddse.append(d.std_error)
    return ProbeTable(kind, t, omega, list(n_list), np.array(rows_mean), np.array(n2), np.array(n2se),
                      np.array(dd), np.array(ddse), np.asarray(envelope, dtype=float))


def _check_probe_args(n_list, t):
    n_list = sorted(int(n) for n in n_list)
    if not n_list or n_list[0] < 1:
        raise ConfigurationError("n_list must hold positive integers", key="tail.n_list")
    if t < 0:
        raise ConfigurationError("probe time must be >= 0", key="tail.t")
    return n_list


def tail_convolution_probe_drift(sg, F, omega: float, n_list, t: float, *, ds: float,
                                 n_paths: int = 1, horizon: float | None = None) -> ProbeTable:
    """Deterministic tail convolutions ``X_n(t) = int_0^{n omega} T(t+s) F(n omega - s) ds``.

    ``F(u)`` returns an array of shape ``(n_paths, n_modes)`` or ``(n_modes,)``.
    Substituting ``u = n omega - s`` gives ``X_n(t) = T(t) y(n omega)`` where
    ``y`` solves ``y' = A y + F`` from ``y(0) = 0``; one exponential-Euler
    sweep with ``F`` frozen at the left of each cell yields every ``n``.
    The envelope column is ``(M^2 omega K / a) exp(-2 a n omega)`` with ``K``
    the largest observed ``E||F||^2``.  It bounds the part of the difference
    contributed by the newest window ``[n omega, (n+1) omega]``, hence the
    whole difference when ``F`` is omega-periodic.  For other ``F`` the
    remaining part shrinks only as ``F`` approaches its periodic limit.
    """
    n_list = _check_probe_args(n_list, t)
    m = _probe_grid(omega, ds)
    n_top = n_list[-1] + 1
    if horizon is not None and n_top * omega > horizon * (1 + 1e-12):
        raise HorizonError(f"probe needs F on [0, {n_top * omega}], available up to {horizon}")
    w = convolution_weights(sg, ds)
    y = np.zeros((n_paths, sg.n_modes))
    values = {0: y.copy()}
    K = 0.0
    for i in range(n_top * m):
        Fi = _as_paths(F(i * ds), n_paths, sg.n_modes)
        K = max(K, float(np.mean(np.sum(Fi * Fi, axis=1))))
        y = w.decay * y + w.drift_weight * Fi
        if not np.all(np.isfinite(y)):
            raise DivergenceError(i + 1)
        if (i + 1) % m == 0:
            values[(i + 1) // m] = y.copy()
    env = [sg.M**2 * omega * K / sg.a * math.exp(-2 * sg.a * n * omega) for n in n_list]
    return _summarize("drift", sg, t, omega, n_list, values, env)


def tail_convolution_probe_noise(sg, G, driver: BrownianDriver, omega: float, n_list, t: float, *,
                                 n_paths: int = 1, horizon: float | None = None) -> ProbeTable:
    """Stochastic tail convolutions ``Y_n(t) = int_{-n omega}^0 T(t-s) G(s + n omega) dB(s)``.

    Negative times are reached through the weak Markov property: with
    ``N = max(n_list) + 1`` the driver's step 0 stands for time ``-N omega``,
    and ``Y_n`` reads it through :func:`shift_driver` by ``(N - n) omega``.
    All ``Y_n`` therefore share one Brownian path, as they should.  The
    cell width is ``driver.dt``.  The envelope column is
    ``(2 M^2 K / a) exp(-2 a n omega)``, with the same scope as for the
    drift probe.
    """
    n_list = _check_probe_args(n_list, t)
    ds = driver.dt
    m = _probe_grid(omega, ds)
    n_top = n_list[-1] + 1
    if horizon is not None and n_top * omega > horizon * (1 + 1e-12):
        raise HorizonError(f"probe needs G on [0, {n_top * omega}], available up to {horizon}")
    w = convolution_weights(sg, ds)
    paths = np.arange(n_paths)
    needed = sorted(set(n_list) | {n + 1 for n in n_list})
    K = 0.0
    for i in range(n_top * m):
        Gi = _as_paths(G(i * ds), n_paths, sg.n_modes)
        K = max(K, float(np.mean(np.sum(Gi * Gi, axis=1))))
    values = {}
    for n in needed:
        drv = shift_driver(driver, (n_top - n) * m)
        xi = drv.normals(paths, 0, n * m)
        z = np.zeros((n_paths, sg.n_modes))
        for i in range(n * m):
            z = w.decay * z + w.noise_std * _as_paths(G(i * ds), n_paths, sg.n_modes) * xi[:, i, None]
        values[n] = z
    env = [2 * sg.M**2 * K / sg.a * math.exp(-2 * sg.a * n * omega) for n in n_list]
    return _summarize("noise", sg, t, omega, n_list, values, env)


def ensemble_sampler(ens: PathEnsemble, coef: CoefficientFn) -> Callable[[float], np.ndarray]:
    """``u -> coef(u, X(u))`` read from a stored ensemble (``u`` on its grid)."""
    def F(u):
        return coef(u, ens.at(ens.step_of(u)))

    return F
