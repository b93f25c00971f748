"""Run configuration: loading, defaults, validation and object construction.

Configs are TOML files with one table per component.  A run manifest
(JSON) is also accepted; its ``config`` entry is the fully resolved config
of the run that wrote it.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .diagnostics import PeriodicityPlan
from .errors import ConfigurationError
from .mild_solver import (
    CoefficientFn,
    constant_coefficient,
    example_gate,
    kappa_report,
    linear_in_state,
    zero_coefficient,
)
from .periodic_limit import build_expression
from .semigroup import ExpStableSemigroup, heat_semigroup, scalar_semigroup

EXPERIMENTS = ("simulate", "picard", "diagnose", "spike-demo", "gate-check", "tail-probe")
PRESETS = ("heat-example",)

_SPIKE_TENTH = {"name": "scale", "factor": 0.1, "of": {"name": "spike", "k": "harmonic"}}

DEFAULTS = {
    "experiment": "simulate",
    "preset": "",
    "semigroup": {"kind": "heat", "n_modes": 32},
    "initial": {"kind": "parabola", "amplitude": 1.0},
    "drift": {"kind": "zero"},
    "diffusion": {"kind": "zero"},
    "solver": {"dt": 0.01, "omega": 2.0, "horizon_periods": 0, "chunk_paths": 1024},
    "picard": {"max_iters": 50, "tol": 1e-8},
    "mc": {"paths": 1000, "seed": 20240611},
    "diagnostics": {
        "grid_points": 8,
        "n_schedule": [1, 2, 4, 8, 16],
        "p_list": [1],
        "pointwise_tol": 1e-3,
        "uniform_tol": 1e-3,
        "decay_ratio": 0.2,
        "floor": 1e-14,
        "tail_n": [],
    },
    "spike": {"k": "harmonic", "grid_points": 256, "n_max": 512, "tol": 1e-6, "sup_refine": 64},
    "gate": {},
    "tail": {"t": 0.0, "n_list": [1, 2, 3, 4, 5, 6, 7, 8], "source": "solution", "paths": 64},
    "output": {"physical_points": 101, "trajectory_stride": 0},
}

PRESET_DEFAULTS = {
    "heat-example": {
        "semigroup": {"kind": "heat", "n_modes": 32},
        "drift": {"kind": "linear_in_state", "expr": _SPIKE_TENTH},
        "diffusion": {"kind": "linear_in_state", "expr": _SPIKE_TENTH},
        "solver": {"omega": 2.0},
    }
}

_DEFAULT_HORIZON_PERIODS = 10


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("expr", "profile"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_raw(path) -> dict:
    path = Path(path)
    text = path.read_bytes()
    if path.suffix == ".json":
        doc = json.loads(text)
        return doc["config"] if "config" in doc and "schema_version" in doc else doc
    try:
        return tomllib.loads(text.decode())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}", key="<file>") from None


@dataclass
class Validation:
    config: dict
    errors: list = field(default_factory=list)
    advisories: list = field(default_factory=list)
    adjustments: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_json(self) -> dict:
        return {"ok": self.ok, "errors": self.errors, "advisories": self.advisories,
                "adjustments": self.adjustments}


def resolve(raw: dict) -> dict:
    """Fill in every default so the result fully describes the run."""
    cfg = _merge(DEFAULTS, {})
    preset = raw.get("preset", "")
    if preset in PRESET_DEFAULTS:
        cfg = _merge(cfg, PRESET_DEFAULTS[preset])
    return _merge(cfg, raw)


def build_semigroup(sec: dict) -> ExpStableSemigroup:
    kind = sec.get("kind")
    if kind == "heat":
        return heat_semigroup(sec.get("n_modes", 32))
    if kind == "scalar":
        if "lambda" not in sec:
            raise ConfigurationError("scalar semigroup needs a lambda list", key="semigroup.lambda")
        return scalar_semigroup(sec["lambda"])
    raise ConfigurationError(f"unknown kind {kind!r}", key="semigroup.kind")


def build_coefficient(sec: dict, key: str) -> CoefficientFn:
    kind = sec.get("kind", "zero")
    if kind == "zero":
        return zero_coefficient()
    if kind == "constant":
        profile = build_expression(sec["profile"], f"{key}.profile") if "profile" in sec else None
        return constant_coefficient(sec.get("value", 0.0), profile)
    if kind == "linear_in_state":
        if "expr" not in sec:
            raise ConfigurationError("linear_in_state needs an expr", key=f"{key}.expr")
        return linear_in_state(build_expression(sec["expr"], f"{key}.expr"))
    raise ConfigurationError(f"unknown kind {kind!r}", key=f"{key}.kind")


def build_initial(sec: dict, n_modes: int) -> np.ndarray:
    kind = sec.get("kind", "parabola")
    amp = float(sec.get("amplitude", 1.0))
    n = np.arange(1, n_modes + 1, dtype=float)
    if kind == "zero":
        return np.zeros(n_modes)
    if kind == "parabola":
        # <x(1-x), sqrt(2) sin(n pi x)> = 2 sqrt(2) (1 - (-1)^n) / (n pi)^3
        c = 2.0 * math.sqrt(2.0) * (1.0 - (-1.0) ** n) / (n * math.pi) ** 3
        return amp * c
    if kind == "mode":
        mode = int(sec.get("mode", 1))
        if not 1 <= mode <= n_modes:
            raise ConfigurationError(f"mode must lie in 1..{n_modes}", key="initial.mode")
        c = np.zeros(n_modes)
        c[mode - 1] = amp
        return c
    if kind == "coeffs":
        c = np.asarray(sec.get("coeffs", []), dtype=float)
        if c.shape != (n_modes,):
            raise ConfigurationError(f"need {n_modes} coefficients, got {c.size}", key="initial.coeffs")
        return amp * c
    raise ConfigurationError(f"unknown kind {kind!r}", key="initial.kind")


def adjusted_dt(dt: float, omega: float) -> tuple[float, int]:
    """Largest step ``<= dt`` dividing ``omega``; returns ``(dt, steps per omega)``."""
    m = max(1, math.ceil(omega / dt - 1e-9))
    return omega / m, m


def build_plan(cfg: dict, dt: float) -> PeriodicityPlan:
    d = cfg["diagnostics"]
    omega = float(cfg["solver"]["omega"])
    return PeriodicityPlan.on_grid(
        omega, dt, points=int(d["grid_points"]),
        n_schedule=d["n_schedule"], p_list=d["p_list"],
        pointwise_tol=d["pointwise_tol"], uniform_tol=d["uniform_tol"],
        decay_ratio=d["decay_ratio"], floor=d["floor"],
    )


def horizon_periods(cfg: dict) -> int:
    hp = int(cfg["solver"].get("horizon_periods") or 0)
    if hp > 0:
        return hp
    exp = cfg["experiment"]
    if exp == "diagnose":
        d = cfg["diagnostics"]
        need = int(d["n_schedule"][-1]) + max(int(p) for p in d["p_list"]) + 1
        return max([need] + [int(n) + 2 for n in d.get("tail_n", [])])
    if exp == "tail-probe":
        return max(int(n) for n in cfg["tail"]["n_list"]) + 1
    return _DEFAULT_HORIZON_PERIODS


def validate(raw: dict) -> Validation:
    """Static checks; every problem names its config key."""
    cfg = resolve(raw)
    v = Validation(cfg)
    err = v.errors.append

    exp = cfg.get("experiment")
    if exp not in EXPERIMENTS:
        err({"key": "experiment", "message": f"unknown experiment {exp!r}; choose from {EXPERIMENTS}"})
    if cfg.get("preset") and cfg["preset"] not in PRESETS:
        err({"key": "preset", "message": f"unknown preset {cfg['preset']!r}"})

    def attempt(key, fn):
        try:
            return fn()
        except ConfigurationError as exc:
            err({"key": exc.key or key, "message": str(exc).split(": ", 1)[-1]})
        except (TypeError, ValueError, KeyError) as exc:
            err({"key": key, "message": str(exc)})
        return None

    sg = attempt("semigroup", lambda: build_semigroup(cfg["semigroup"]))
    f = attempt("drift", lambda: build_coefficient(cfg["drift"], "drift"))
    g = attempt("diffusion", lambda: build_coefficient(cfg["diffusion"], "diffusion"))
    if sg is not None:
        attempt("initial", lambda: build_initial(cfg["initial"], sg.n_modes))

    solver = cfg["solver"]
    dt, omega = float(solver.get("dt", 0)), float(solver.get("omega", 0))
    if not dt > 0:
        err({"key": "solver.dt", "message": "must be > 0"})
    if not omega > 0:
        err({"key": "solver.omega", "message": "must be > 0"})
    if dt > 0 and omega > 0:
        new_dt, m = adjusted_dt(dt, omega)
        if not math.isclose(new_dt, dt, rel_tol=1e-12):
            v.adjustments.append({"key": "solver.dt", "from": dt, "to": new_dt,
                                  "reason": f"omega must be an integer multiple of dt ({m} steps per period)"})
        cfg["solver"]["dt"] = new_dt
        cfg["solver"]["horizon_periods"] = horizon_periods(cfg)
        if exp == "diagnose":
            plan = attempt("diagnostics", lambda: build_plan(cfg, new_dt))
            if plan is not None and plan.horizon_needed() > cfg["solver"]["horizon_periods"] * omega + 1e-9:
                err({"key": "solver.horizon_periods",
                     "message": f"diagnostics need horizon {plan.horizon_needed()}, "
                                f"configured {cfg['solver']['horizon_periods'] * omega}"})
    mc = cfg["mc"]
    if int(mc.get("paths", 0)) < 1:
        err({"key": "mc.paths", "message": "must be >= 1"})
    if not 0 <= int(mc.get("seed", -1)) < 2**64:
        err({"key": "mc.seed", "message": "must be an unsigned 64-bit integer"})
    if int(cfg["picard"].get("max_iters", 0)) < 1:
        err({"key": "picard.max_iters", "message": "must be >= 1"})

    if exp == "spike-demo":
        s = cfg["spike"]
        attempt("spike.k", lambda: build_expression({"name": "spike", "k": s["k"]}, "spike"))
        if "expr" in s:
            attempt("spike.expr", lambda: build_expression(s["expr"], "spike.expr"))
        if int(s["n_max"]) < 2:
            err({"key": "spike.n_max", "message": "must be >= 2"})
    if exp == "tail-probe" and cfg["tail"].get("source") not in ("solution", "zero_state"):
        err({"key": "tail.source", "message": "must be 'solution' or 'zero_state'"})
    if exp == "gate-check" and heat_gate(cfg, f, g) is None:
        err({"key": "gate", "message": "set gate.psi_sup and gate.phi_sup or select the heat-example preset"})

    if sg is not None and f is not None and g is not None:
        kr = kappa_report(sg, f, g)
        if not kr["contraction_guaranteed"]:
            v.advisories.append({"key": "drift/diffusion",
                                 "message": f"kappa = {kr['kappa_reported']:.6g} >= 1; "
                                            "no contraction guarantee (the solver still runs)"})
        gate = heat_gate(cfg, f, g)
        if gate is not None and not gate["holds"]:
            v.advisories.append({"key": "preset",
                                 "message": f"heat-example gate fails: {gate['lhs']:.6g} >= {gate['rhs']:.6g}; "
                                            "the condition is sufficient, not necessary"})
    return v


def heat_gate(cfg: dict, f: CoefficientFn | None, g: CoefficientFn | None):
    """Gate verdict for the heat example, or ``None`` when it does not apply."""
    gate = cfg.get("gate", {})
    if "psi_sup" in gate or "phi_sup" in gate:
        psi, phi = float(gate.get("psi_sup", 0.0)), float(gate.get("phi_sup", 0.0))
    elif cfg.get("preset") == "heat-example" and f is not None and g is not None:
        psi = f.lipschitz_unsquared or 0.0
        phi = g.lipschitz_unsquared or 0.0
    else:
        return None
    holds, lhs, rhs = example_gate(psi, phi)
    return {"psi_sup": psi, "phi_sup": phi, "holds": holds, "lhs": lhs, "rhs": rhs}
