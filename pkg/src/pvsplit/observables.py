"""Scalar functionals of configurations and trajectories."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import optimize

from . import _core
from .errors import SingularConfiguration
from .kernel import Kernel, default_evaluator
from .torus import Configuration, min_image

# Factor applied to N(N-1)/(2 pi) in the log-distance bound on L.
L_SLOPE_FACTOR = 1.1
GREEN_MIN_GRID = 1024


def hamiltonian(x: Configuration, kernel_mode="exact") -> float:
    """H(x) = sum_{i != j} xi_i xi_j G(x_i - x_j) (each unordered pair counted twice).

    In regularized mode G is replaced by the bounded potential of K_delta.
    """
    kernel = Kernel.build(kernel_mode)
    h = _core.hamiltonian(x.pos, x.xi, kernel.kp, kernel.fcoef)
    if not math.isfinite(h):
        raise SingularConfiguration("Hamiltonian undefined: coincident vortices")
    return h


@lru_cache(maxsize=None)
def green_minimum(n: int = GREEN_MIN_GRID) -> float:
    """Minimum of G over the n x n node grid (G is bounded below)."""
    ge = default_evaluator()
    return float(_core.green_grid(n, ge.kp, ge.fcoef).min())


def l_constant(n_vortices: int) -> float:
    """Additive constant c = N(N-1) max(0, -min G) making L nonnegative."""
    return n_vortices * (n_vortices - 1) * max(0.0, -green_minimum())


def l_functional(x: Configuration) -> float:
    """L(x) = sum_{i != j} G(x_i - x_j) + c; intensities play no role."""
    ge = default_evaluator()
    s = _core.green_sum_pairs(x.pos, ge.kp, ge.fcoef)
    if not math.isfinite(s):
        raise SingularConfiguration("L undefined: coincident vortices")
    return s + l_constant(x.n)


@lru_cache(maxsize=None)
def pair_log_bound() -> float:
    """B = max over the torus of G(y) + L_SLOPE_FACTOR log|y| / (2 pi).

    Dense grid sweep, then local refinement from the best node.
    """
    ge = default_evaluator()
    n = 512
    grid = _core.green_grid(n, ge.kp, ge.fcoef)
    u = min_image(np.arange(n) / n)
    r = np.hypot(u[:, None], u[None, :])
    r[0, 0] = 1.0
    f = grid + L_SLOPE_FACTOR * np.log(r) / (2 * np.pi)
    f[0, 0] = -np.inf
    a, b = np.unravel_index(np.argmax(f), f.shape)

    def neg(y):
        if np.hypot(*min_image(y)) < 1e-12:
            return np.inf
        return -(ge.green(y) + L_SLOPE_FACTOR * np.log(np.hypot(*min_image(y))) / (2 * np.pi))

    res = optimize.minimize(neg, [u[a], u[b]], method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14})
    return float(max(f[a, b], -res.fun))


def l_estimate_constants(n_vortices: int) -> tuple[float, float]:
    """(C_hat, offset) with L(x) + C_hat log(min pair distance) <= offset on T^{2N}.

    Each of the N(N-1) ordered terms obeys G(d_ij) + 1.1 log(d_min)/(2 pi) <= B,
    since d_min <= d_ij, which gives offset = c + N(N-1) B.
    """
    pairs = n_vortices * (n_vortices - 1)
    c_hat = pairs * L_SLOPE_FACTOR / (2 * np.pi)
    return c_hat, l_constant(n_vortices) + pairs * pair_log_bound()


def min_pair_distance(x) -> float:
    """Smallest torus distance between two distinct vortices of x (Configuration or (N,2) array)."""
    pos = x.pos if isinstance(x, Configuration) else np.asarray(x, dtype=float)
    return float(_core.min_pair_distance(pos))


def _pair_distances(pos):
    d = min_image(pos[:, None, :] - pos[None, :, :])
    r = np.hypot(d[..., 0], d[..., 1])
    np.fill_diagonal(r, np.inf)
    return r


def mean_nearest_neighbor_distance(x: Configuration, same_sign: bool = False) -> float:
    """Mean over vortices of the distance to the nearest (same-sign) other vortex."""
    r = _pair_distances(x.pos)
    if same_sign:
        s = np.sign(x.xi)
        r = np.where(s[:, None] == s[None, :], r, np.inf)
    nn = r.min(axis=1)
    nn = nn[np.isfinite(nn)]
    return float(nn.mean()) if nn.size else math.nan


def center_of_vorticity(x: Configuration) -> np.ndarray:
    """Circular intensity-weighted mean of each coordinate, in [0, 1)."""
    z = np.exp(2j * np.pi * x.pos) * x.xi[:, None]
    ang = np.angle(z.sum(axis=0)) / (2 * np.pi)
    return ang - np.floor(ang)


@dataclass(frozen=True, eq=False)
class ObservableReport:
    name: str
    times: np.ndarray
    values: np.ndarray
    summary: dict = field(default_factory=dict)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()

    def write(self, prefix) -> tuple[Path, Path]:
        prefix = Path(prefix)
        a, b = prefix.with_suffix(".csv"), prefix.with_suffix(".json")
        a.write_text(self.csv_text())
        b.write_text(json.dumps({"name": self.name, **self.summary}, indent=2, sort_keys=True))
        return a, b


def relative_drift(values) -> float:
    """max_t |v(t) - v(0)| / max(1, |v(0)|)."""
    v = np.asarray(values, dtype=float)
    return float(np.max(np.abs(v - v[0])) / max(1.0, abs(v[0])))


def observe(traj, fn, name: str) -> ObservableReport:
    """Evaluate fn(Configuration) along a Trajectory."""
    vals = np.array([fn(c) for c in traj.configurations()], dtype=float)
    summary = {"min": float(vals.min()), "max": float(vals.max()), "mean": float(vals.mean()),
               "sup_drift": relative_drift(vals)}
    return ObservableReport(name, traj.times.copy(), vals, summary)


def energy_report(traj, kernel_mode="exact") -> ObservableReport:
    return observe(traj, lambda c: hamiltonian(c, kernel_mode), "hamiltonian")


def sup_l_along(traj) -> float:
    """Supremum of L over the trajectory's sample times."""
    return max(l_functional(c) for c in traj.configurations())
