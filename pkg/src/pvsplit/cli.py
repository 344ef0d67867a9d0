"""pvsplit command line: named, seeded experiments writing CSV data plus JSON metadata.

    pvsplit <experiment> --config <file> [--seed S] [--out DIR]

Exit status 0 on success, 2 for configuration errors, 3 for numerical failures
(a JSON error report is then written to the output directory).
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (FlowParams, TauSchedule, convergence_sweep, deterministic_trajectory,
                       interpolated_trajectory, jumping_trajectory, single_vortex_flow, deterministic_flow,
                       interpolated_flow, time_grid)
from .ensembles import (CanonicalParams, FlowSpec, MicrocanonicalParams, PUSH_PARAMS, invariance_test,
                        sample_canonical, sample_microcanonical)
from .errors import EmptyShell, InvalidInput, NearCollision, PVSplitError, TableAccuracy
from .kernel import GreenEvaluator, KernelMode, build_kernel_table
from .observables import energy_report, min_pair_distance
from .torus import Configuration, uniform_configuration

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_FLOW_DEFAULTS = {
    "rel_tol": 1e-10,
    "abs_tol": 1e-12,
    "max_step": 0.05,
    "collision_radius": 1e-6,
    "kernel_mode": "exact",
    "max_steps": 5_000_000,
}

# Per-experiment schema: every accepted field with its default.
DEFAULTS = {
    "simulate": {
        "configuration": {"xi": [1.0, -1.0, 1.0], "pos": None, "min_distance": 0.1},
        "flow_kind": "interpolated",
        "m": 16,
        "distribution": "exponential",
        "grid_points": 101,
        "flow": _FLOW_DEFAULTS,
    },
    "converge": {
        "configuration": {"xi": [1.0, -1.0, 1.0], "pos": None, "min_distance": 0.3},
        "m_list": [8, 16, 32, 64],
        "n_seeds": 10,
        "distribution": "exponential",
        "grid_points": 101,
        "flow": {**_FLOW_DEFAULTS, "kernel_mode": "regularized(0.05)"},
    },
    "conserve": {
        "n_vortices": [2, 4, 6],
        "m_list": [8, 32],
        "n_seeds": 20,
        "distribution": "exponential",
        "min_distance": 0.05,
        "grid_points": 101,
        "flow": _FLOW_DEFAULTS,
    },
    "liouville": {
        "xi": [1.0, -0.7],
        "t": 0.3,
        "points": 20,
        "m": 8,
        "fd_step": 1e-6,
        "min_distance": 0.1,
        "flow": {**_FLOW_DEFAULTS, "rel_tol": 1e-12, "abs_tol": 1e-14},
    },
    "ensemble-invariance": {
        "ensemble": "canonical",
        "xi": [1.0, 1.0, -1.0, -1.0],
        "count": 2000,
        "beta": 10.0,
        "energy": None,
        "shell_width": None,
        "proposal_scale": 0.1,
        "burn_in": 2000,
        "thinning": 500,
        "kernel_mode": "regularized(0.05)",
        "push": {"kind": "interpolated", "m": 16, "t": 0.5, "distribution": "exponential",
                 "rel_tol": PUSH_PARAMS.rel_tol, "abs_tol": PUSH_PARAMS.abs_tol, "fault_u_scale": 1.0},
        "alpha": 0.01,
    },
    "green-table": {
        "grid_size": 256,
        "target_accuracy": 1e-8,
        "ewald_alpha": 3.5,
        "real_cutoff": 2,
        "fourier_cutoff": 7,
    },
    "mindist-survey": {
        "xi": [1.0, -1.0, 1.0, -1.0],
        "configs": 500,
        "flow_kind": "interpolated",
        "m": 16,
        "distribution": "exponential",
        "grid_points": 101,
        "flow": _FLOW_DEFAULTS,
    },
}


class ConfigError(Exception):
    pass


def _merge(defaults: dict, given: dict, where: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if key not in defaults:
            raise ConfigError(f"unknown field {where}{key!r}")
        if isinstance(defaults[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"field {where}{key!r} must be an object")
            out[key] = _merge(defaults[key], val, f"{where}{key}.")
        else:
            out[key] = val
    return out


def resolve_config(experiment: str, doc: dict, seed=None, out=None) -> dict:
    """Validate a raw config document against the experiment's schema and fill defaults."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = dict(doc)
    named = doc.pop("experiment", experiment)
    if named != experiment:
        raise ConfigError(f"config is for {named!r}, not {experiment!r}")
    doc_seed = doc.pop("seed", None)
    doc_out = doc.pop("output", None)
    params = _merge(DEFAULTS[experiment], doc, "")
    seed = doc_seed if seed is None else seed
    if seed is None:
        raise ConfigError("a seed is required (config 'seed' or --seed)")
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed must be a nonnegative integer")
    return {"experiment": experiment, "seed": seed, "output": str(out or doc_out or "pvsplit-out"),
            "params": params}


# ---------------------------------------------------------------- helpers

def _flow_params(d: dict, **extra) -> FlowParams:
    return FlowParams(rel_tol=float(d["rel_tol"]), abs_tol=float(d["abs_tol"]), max_step=float(d["max_step"]),
                      collision_radius=float(d["collision_radius"]),
                      kernel_mode=KernelMode.parse(d["kernel_mode"]), max_steps=int(d["max_steps"]), **extra)


def _seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(int(n), dtype=np.uint32)]


def _configuration(d: dict, rng) -> Configuration:
    if d.get("pos") is not None:
        return Configuration(d["pos"], d["xi"])
    return uniform_configuration(d["xi"], rng, min_distance=float(d.get("min_distance", 0.0)))


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


class _Outputs:
    """Writes each artifact atomically (temp file then rename)."""

    def __init__(self, root: Path):
        self.root = root
        self.files = []

    def text(self, name: str, text: str) -> Path:
        path = self.root / name
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, path)
        self.files.append(name)
        return path

    def json(self, name: str, obj) -> Path:
        return self.text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def csv(self, name: str, header, rows) -> Path:
        return self.text(name, _csv_text(header, rows))


def _trajectory(kind, x, times, m, sched, p):
    if kind == "deterministic":
        return deterministic_trajectory(x, times, p)
    if kind == "jumping":
        return jumping_trajectory(x, times, m, sched, p)
    if kind == "interpolated":
        return interpolated_trajectory(x, times, m, sched, p)
    raise InvalidInput(f"unknown flow_kind {kind!r}")


# ---------------------------------------------------------------- experiments

def run_simulate(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    rng = np.random.default_rng(cfg["seed"])
    x = _configuration(q["configuration"], rng)
    p = _flow_params(q["flow"])
    sched = TauSchedule(q["distribution"], cfg["seed"])
    traj = _trajectory(q["flow_kind"], x, time_grid(q["grid_points"]), q["m"], sched, p)
    out.text("trajectory.csv", traj.csv_text())
    rep = energy_report(traj, p.kernel_mode)
    out.text("energy.csv", rep.csv_text())
    return {"initial": x.to_dict(), "flow_kind": traj.flow_kind, "energy_drift": rep.summary["sup_drift"]}


def run_converge(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    rng = np.random.default_rng(cfg["seed"])
    x = _configuration(q["configuration"], rng)
    p = _flow_params(q["flow"])
    seeds = _seeds(cfg["seed"], q["n_seeds"])
    table = convergence_sweep(x, q["m_list"], seeds, p, q["distribution"], time_grid(q["grid_points"]))
    out.csv("convergence.csv", ["m", "error"] + [f"seed_{s}" for s in seeds],
            [[r.m, r.error, *r.per_seed] for r in table.rows])
    return {"initial": x.to_dict(), "seeds": seeds, "decreasing_pairs": table.decreasing_pairs,
            "ratio_last_first": table.ratio_last_first}


def run_conserve(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    p = _flow_params(q["flow"])
    times = time_grid(q["grid_points"])
    rows = []
    for n in q["n_vortices"]:
        xi = [1.0 if k % 2 == 0 else -1.0 for k in range(n)]
        for m in q["m_list"]:
            for s in _seeds(cfg["seed"] + 7919 * n + m, q["n_seeds"]):
                x = uniform_configuration(xi, np.random.default_rng(s), min_distance=q["min_distance"])
                traj = interpolated_trajectory(x, times, m, TauSchedule(q["distribution"], s), p)
                rows.append([n, m, s, energy_report(traj, p.kernel_mode).summary["sup_drift"]])
    out.csv("conserve.csv", ["n", "m", "seed", "max_rel_drift"], rows)
    return {"max_rel_drift": max(r[3] for r in rows), "runs": len(rows)}


def fd_jacobian_det(fn, x: Configuration, h: float) -> float:
    """Determinant of the central-difference Jacobian of a configuration map in unwrapped coordinates."""
    base = x.pos.ravel()
    n = base.size
    jac = np.empty((n, n))
    for k in range(n):
        cols = []
        for sgn in (1.0, -1.0):
            q = base.copy()
            q[k] += sgn * h
            cols.append(fn(Configuration(q.reshape(-1, 2), x.xi)).pos.ravel())
        d = cols[0] - cols[1]
        jac[:, k] = (d - np.round(d)) / (2 * h)
    return float(np.linalg.det(jac))


def run_liouville(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    p = _flow_params(q["flow"])
    rng = np.random.default_rng(cfg["seed"])
    t, m, h = float(q["t"]), int(q["m"]), float(q["fd_step"])
    rows = []
    for k in range(int(q["points"])):
        x = uniform_configuration(q["xi"], rng, min_distance=q["min_distance"])
        sched = TauSchedule("exponential", cfg["seed"], stream=k)
        maps = {
            "deterministic": lambda c: deterministic_flow(c, t, p),
            "single_0": lambda c: single_vortex_flow(c, 0, t, p),
            "interpolated": lambda c: interpolated_flow(c, t, m, sched, p),
        }
        for name, fn in maps.items():
            rows.append([k, name, fd_jacobian_det(fn, x, h)])
    out.csv("liouville.csv", ["point", "flow", "det"], rows)
    return {"max_abs_det_minus_one": max(abs(r[2] - 1.0) for r in rows)}


def run_ensemble_invariance(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    mode = KernelMode.parse(q["kernel_mode"])
    xi = np.asarray(q["xi"], dtype=float)
    template = uniform_configuration(xi, np.random.default_rng(cfg["seed"]), min_distance=0.1)
    common = {"proposal_scale": q["proposal_scale"], "burn_in": q["burn_in"], "thinning": q["thinning"],
              "seed": cfg["seed"], "kernel_mode": mode}
    if q["ensemble"] == "canonical":
        sample = sample_canonical(template, CanonicalParams(beta=float(q["beta"]), **common), q["count"])
    elif q["ensemble"] == "microcanonical":
        if q["energy"] is None:
            raise InvalidInput("microcanonical ensemble needs 'energy'")
        sample = sample_microcanonical(template, MicrocanonicalParams(
            energy=float(q["energy"]), shell_width=q["shell_width"], **common), q["count"])
    else:
        raise InvalidInput(f"unknown ensemble {q['ensemble']!r}")
    tmp = sample.write_jsonl(out.root / "sample.jsonl.tmp")
    os.replace(tmp, out.root / "sample.jsonl")
    out.files.append("sample.jsonl")
    push = q["push"]
    fp = PUSH_PARAMS.replace(kernel_mode=mode, rel_tol=float(push["rel_tol"]), abs_tol=float(push["abs_tol"]),
                             fault_u_scale=float(push["fault_u_scale"]))
    flow = FlowSpec(push["kind"], int(push["m"]), float(push["t"]), push["distribution"], cfg["seed"], fp)
    rep = invariance_test(sample, flow, alpha=float(q["alpha"]))
    out.csv("invariance.csv", ["observable", "ks_distance", "critical_value", "autocorrelation", "passed"],
            [[r.observable, r.ks_distance, r.critical_value, r.autocorrelation, int(r.passed)]
             for r in rep.results])
    return {"acceptance_rate": sample.acceptance_rate, "autocorrelation": sample.autocorrelation,
            "passed": rep.passed}


def run_green_table(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    ge = GreenEvaluator(ewald_alpha=float(q["ewald_alpha"]), real_cutoff=int(q["real_cutoff"]),
                        fourier_cutoff=int(q["fourier_cutoff"]))
    table = build_kernel_table(ge, int(q["grid_size"]), float(q["target_accuracy"]), seed=cfg["seed"])
    path = table.write(out.root / "kernel_table.bin")
    out.files += ["kernel_table.bin", "kernel_table.bin.json"]
    return {"grid_size": table.grid_size, "max_probe_error": table.max_probe_error, "file": Path(str(path)).name}


def run_mindist_survey(cfg, out: _Outputs) -> dict:
    q = cfg["params"]
    p = _flow_params(q["flow"])
    times = time_grid(q["grid_points"])
    rng = np.random.default_rng(cfg["seed"])
    rows = []
    for k in range(int(q["configs"])):
        x = uniform_configuration(q["xi"], rng)
        sched = TauSchedule(q["distribution"], cfg["seed"], stream=k)
        traj = _trajectory(q["flow_kind"], x, times, q["m"], sched, p)
        rows.append([k, min(min_pair_distance(c) for c in traj.configurations())])
    out.csv("mindist.csv", ["config", "min_distance"], rows)
    d = np.sort([r[1] for r in rows])
    frac = np.arange(1, d.size + 1) / d.size
    out.csv("mindist_ecdf.csv", ["distance", "cdf"], zip(d.tolist(), frac.tolist()))
    return {"median": float(np.median(d)), "min": float(d[0])}


RUNNERS = {
    "simulate": run_simulate,
    "converge": run_converge,
    "conserve": run_conserve,
    "liouville": run_liouville,
    "ensemble-invariance": run_ensemble_invariance,
    "green-table": run_green_table,
    "mindist-survey": run_mindist_survey,
}


def run(cfg: dict) -> int:
    """Execute a resolved config; returns the process exit status."""
    root = Path(cfg["output"])
    root.mkdir(parents=True, exist_ok=True)
    out = _Outputs(root)
    out.json("resolved_config.json", cfg)
    started = time.time()
    try:
        summary = RUNNERS[cfg["experiment"]](cfg, out)
    except InvalidInput as exc:
        print(f"pvsplit: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NearCollision, EmptyShell, TableAccuracy, PVSplitError) as exc:
        report = {"experiment": cfg["experiment"], "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, NearCollision):
            report.update(t=exc.t, distance=exc.distance)
        out.json("error.json", report)
        print(f"pvsplit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    out.json("metadata.json", {"experiment": cfg["experiment"], "version": __version__,
                               "started": started, "elapsed_s": time.time() - started,
                               "files": sorted(out.files), "summary": _jsonable(summary)})
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else str(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="pvsplit", description="Point vortex splitting-flow experiments.")
    ap.add_argument("experiment", choices=sorted(DEFAULTS))
    ap.add_argument("--config", required=True, help="JSON config file")
    ap.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    ap.add_argument("--out", default=None, help="output directory")
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else 0
    try:
        doc = json.loads(Path(args.config).read_text())
        cfg = resolve_config(args.experiment, doc, args.seed, args.out)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"pvsplit: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
