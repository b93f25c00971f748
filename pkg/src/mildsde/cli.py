"""Batch experiment runner.

    mildsde --config run.toml --out results/ [--seed N] [--threads N]
            [--require-verdict] [--validate-only]

Exit status: 0 success, 2 validation error, 3 numerical divergence,
4 inconclusive verdict under ``--require-verdict``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import (
    build_coefficient,
    build_initial,
    build_plan,
    build_semigroup,
    heat_gate,
    load_raw,
    validate,
)
from .diagnostics import Verdict, classify_process, periodic_part_estimate
from .errors import ConfigurationError, DivergenceError, HorizonError
from .mild_solver import (
    PicardConfig,
    SolverConfig,
    ensemble_sampler,
    integrate,
    kappa_report,
    picard_solve,
    tail_convolution_probe_drift,
    tail_convolution_probe_noise,
)
from .periodic_limit import (
    DeterministicClass,
    build_expression,
    classify_deterministic,
    default_grid,
)
from .process import BrownianDriver, square_mean_curve
from .semigroup import physical_values

SCHEMA_VERSION = "1.0"

EXIT_OK, EXIT_VALIDATION, EXIT_DIVERGENCE, EXIT_INCONCLUSIVE = 0, 2, 3, 4


class Run:
    """Objects built from a validated config plus the output sink."""

    def __init__(self, cfg: dict, out: Path, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.sg = build_semigroup(cfg["semigroup"])
        self.f = build_coefficient(cfg["drift"], "drift")
        self.g = build_coefficient(cfg["diffusion"], "diffusion")
        self.c0 = build_initial(cfg["initial"], self.sg.n_modes)
        s = cfg["solver"]
        self.dt = float(s["dt"])
        self.omega = float(s["omega"])
        self.m = int(round(self.omega / self.dt))
        self.n_steps = int(s["horizon_periods"]) * self.m
        self.seed = int(cfg["mc"]["seed"])
        self.paths = int(cfg["mc"]["paths"])
        self.outputs: list[str] = []
        self.results: dict = {}
        self.verdict = None

    def solver_config(self, keep=None, n_steps=None, paths=None) -> SolverConfig:
        return SolverConfig(
            dt=self.dt, n_steps=n_steps or self.n_steps, n_paths=paths or self.paths,
            initial=self.c0, seed=self.seed, keep=keep, threads=self.threads,
            chunk_paths=int(self.cfg["solver"]["chunk_paths"]),
        )

    def stride_keep(self, extra=()) -> list:
        stride = int(self.cfg["output"].get("trajectory_stride") or max(1, self.m // 8))
        return sorted(set(range(0, self.n_steps + 1, stride)) | {self.n_steps} | set(extra))

    def write_csv(self, name: str, header, rows):
        with open(self.out / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow(r)
        self.outputs.append(name)

    def write_json(self, name: str, obj):
        (self.out / name).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")
        self.outputs.append(name)

    def write_trajectory(self, ens):
        t, mean, se = square_mean_curve(ens)
        self.write_csv("trajectory.csv", ("t", "E_norm2", "std_error"), zip(t.tolist(), mean.tolist(), se.tolist()))

    def write_snapshot(self, coeffs, name="snapshot.csv"):
        x = np.linspace(0.0, 1.0, int(self.cfg["output"]["physical_points"]))
        u = physical_values(np.asarray(coeffs), x)
        self.write_csv(name, ("x", "u"), zip(x.tolist(), u.tolist()))


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (Verdict, DeterministicClass)):
        return o.value
    raise TypeError(f"not serializable: {type(o).__name__}")


# -- experiments ---------------------------------------------------------------


def exp_simulate(run: Run):
    ens = integrate(run.sg, run.f, run.g, run.solver_config(keep=run.stride_keep()))
    run.write_trajectory(ens)
    run.write_snapshot(ens.at(run.n_steps).mean(axis=0))


def exp_picard(run: Run):
    p = run.cfg["picard"]
    res = picard_solve(run.sg, run.f, run.g, run.solver_config(),
                       PicardConfig(max_iters=int(p["max_iters"]), tol=float(p["tol"])))
    ratios = [""] + res.ratios
    run.write_csv("picard_residuals.csv", ("iteration", "residual", "ratio"),
                  ((i + 1, r, q) for i, (r, q) in enumerate(zip(res.residuals, ratios))))
    run.write_trajectory(res.ensemble)
    run.write_snapshot(res.ensemble.at(run.n_steps).mean(axis=0))
    run.results["picard"] = {"iterations": res.iterations, "converged": res.converged,
                             "final_residual": res.residuals[-1], "scale": res.scale,
                             "kappa": res.kappa, "guaranteed": res.guaranteed}


def exp_diagnose(run: Run):
    plan = build_plan(run.cfg, run.dt)
    tail_n = [int(n) for n in run.cfg["diagnostics"].get("tail_n", [])]
    keep = run.stride_keep(plan.required_steps(run.dt, tail_n))
    ens = integrate(run.sg, run.f, run.g, run.solver_config(keep=keep))
    report = classify_process(ens, plan)
    run.write_trajectory(ens)
    run.write_csv("cauchy.csv", ("t", "n", "p", "D", "std_error"), report.cauchy_table)
    run.write_csv("sup_curve.csv", ("n", "p", "sup_D", "std_error"), report.sup_curve)
    run.write_csv("screen.csv", ("t", "n", "delta_E_norm2", "std_error"), report.screen)
    run.write_json("report.json", report.to_json())
    if tail_n:
        part = periodic_part_estimate(ens, run.omega, tail_n, plan.t_grid)
        rows = ((float(t), k + 1, float(part.mean[i, k]), float(part.std_error[i, k]))
                for i, t in enumerate(part.t_grid) for k in range(run.sg.n_modes))
        run.write_csv("periodic_part.csv", ("t", "mode", "mean", "std_error"), rows)
        run.results["seam_residual"] = part.seam_residual
    run.verdict = report.verdict
    run.results["verdict"] = report.verdict.value


def exp_spike_demo(run: Run):
    s = run.cfg["spike"]
    fn = build_expression(s["expr"] if "expr" in s else {"name": "spike", "k": s["k"]}, "spike.expr")
    grid = default_grid(fn.omega, int(s["grid_points"]))
    verdict, rep = classify_deterministic(fn, grid, n_max=int(s["n_max"]), tol=float(s["tol"]),
                                          sup_refine=int(s["sup_refine"]))
    run.write_csv("spike_sup.csv", ("n", "sup_discrepancy"), rep.sup_table)
    run.write_csv("spike_pointwise.csv", ("t", "limit", "converged"),
                  zip(rep.grid.tolist(), rep.limits.tolist(), (int(c) for c in rep.converged)))
    run.write_json("spike_verdict.json", rep.verdict_record())
    run.verdict = verdict
    run.results["verdict"] = verdict.value


def exp_gate_check(run: Run):
    gate = heat_gate(run.cfg, run.f, run.g)
    if gate is None:
        raise ConfigurationError("set gate.psi_sup/gate.phi_sup or use the heat-example preset", key="gate")
    run.write_json("gate.json", {"gate": gate, "kappa": kappa_report(run.sg, run.f, run.g)})


def exp_tail_probe(run: Run):
    tl = run.cfg["tail"]
    n_list = [int(n) for n in tl["n_list"]]
    t = float(tl["t"])
    paths = int(tl["paths"])
    n_top = max(n_list) + 1
    if tl["source"] == "solution":
        ens = integrate(run.sg, run.f, run.g, run.solver_config(n_steps=n_top * run.m, paths=paths))
        F, G = ensemble_sampler(ens, run.f), ensemble_sampler(ens, run.g)
        horizon = ens.horizon
    else:
        zero = np.zeros((paths, run.sg.n_modes))
        F = lambda u: run.f(u, zero)  # noqa: E731
        G = lambda u: run.g(u, zero)  # noqa: E731
        horizon = None
    header = ("n", "E_norm2", "std_error", "D_successive", "D_std_error", "envelope")
    drift = tail_convolution_probe_drift(run.sg, F, run.omega, n_list, t, ds=run.dt,
                                         n_paths=paths, horizon=horizon)
    run.write_csv("tail_drift.csv", header, drift.rows())
    driver = BrownianDriver(run.seed, run.dt, stream=1)
    noise = tail_convolution_probe_noise(run.sg, G, driver, run.omega, n_list, t,
                                         n_paths=paths, horizon=horizon)
    run.write_csv("tail_noise.csv", header, noise.rows())


EXPERIMENTS = {
    "simulate": exp_simulate,
    "picard": exp_picard,
    "diagnose": exp_diagnose,
    "spike-demo": exp_spike_demo,
    "gate-check": exp_gate_check,
    "tail-probe": exp_tail_probe,
}

_INCONCLUSIVE = {Verdict.INCONCLUSIVE, DeterministicClass.UNDETERMINED}


# -- entry point ---------------------------------------------------------------


def parse_args(argv=None):
    ap = argparse.ArgumentParser(prog="mildsde", description=__doc__.split("\n\n")[0])
    ap.add_argument("--config", required=True, type=Path, help="TOML config or a previous manifest.json")
    ap.add_argument("--out", type=Path, default=Path("mildsde-out"), help="output directory")
    ap.add_argument("--seed", type=int, help="override mc.seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    ap.add_argument("--require-verdict", action="store_true", help="exit 4 on an inconclusive verdict")
    ap.add_argument("--validate-only", action="store_true", help="validate and exit")
    return ap.parse_args(argv)


def _versions() -> dict:
    return {"mildsde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def main(argv=None) -> int:
    args = parse_args(argv)
    try:
        raw = load_raw(args.config)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if args.seed is not None:
        raw.setdefault("mc", {})["seed"] = args.seed
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION

    v = validate(raw)
    for a in v.adjustments:
        print(f"adjusted {a['key']}: {a['from']!r} -> {a['to']!r} ({a['reason']})", file=sys.stderr)
    for a in v.advisories:
        print(f"advisory {a['key']}: {a['message']}", file=sys.stderr)
    for e in v.errors:
        print(f"error {e['key']}: {e['message']}", file=sys.stderr)
    if args.validate_only:
        print(json.dumps(v.to_json(), indent=2, default=_jsonable))
        return EXIT_OK if v.ok else EXIT_VALIDATION
    if not v.ok:
        return EXIT_VALIDATION

    cfg = v.config
    args.out.mkdir(parents=True, exist_ok=True)
    run = Run(cfg, args.out, args.threads)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "experiment": cfg["experiment"],
        "config": cfg,
        "seed": run.seed,
        "adjustments": v.adjustments,
        "advisories": v.advisories,
        "kappa": kappa_report(run.sg, run.f, run.g),
        "gate": heat_gate(cfg, run.f, run.g),
        "versions": _versions(),
        "runtime": {"threads": args.threads},
    }
    status = EXIT_OK
    try:
        EXPERIMENTS[cfg["experiment"]](run)
        manifest["status"] = "ok"
    except DivergenceError as exc:
        manifest["status"] = "diverged"
        manifest["error"] = {"step": exc.step, "message": str(exc)}
        print(f"error: divergence at step {exc.step}", file=sys.stderr)
        status = EXIT_DIVERGENCE
    except (ConfigurationError, HorizonError) as exc:
        manifest["status"] = "invalid"
        manifest["error"] = {"key": getattr(exc, "key", None), "message": str(exc)}
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_VALIDATION
    manifest["results"] = run.results
    manifest["outputs"] = run.outputs
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")

    if status == EXIT_OK and args.require_verdict and run.verdict in _INCONCLUSIVE:
        print(f"verdict: {run.verdict.value}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    if run.verdict is not None:
        print(f"verdict: {run.verdict.value}")
    return status


if __name__ == "__main__":
    sys.exit(main())
