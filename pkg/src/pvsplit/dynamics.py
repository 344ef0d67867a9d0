"""Deterministic, single-vortex, jumping and interpolated point-vortex flows.

Vortex indices are 0-based throughout: one sweep of the split flows moves
vortex 0 first and vortex N-1 last. Random times tau_1, tau_2, ... form one
global 1-based sequence shared by the jumping and interpolated flows: factor
k of the jumping flow and slot k-1 of the interpolated flow both use tau_k.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _core
from .errors import IntegrationError, InvalidInput, NearCollision, SingularConfiguration
from .kernel import Kernel, KernelMode
from .torus import Configuration, distance_positions, min_image

DISTRIBUTIONS = ("exponential", "uniform", "constant")
_CHUNK = 1024


class TauSchedule:
    """I.i.d. mean-one random times, drawn lazily in fixed-size chunks.

    ``exponential`` is Exp(1), ``uniform`` is U(0, 2), ``constant`` is always 1.
    The same (distribution, seed, stream) reproduces the same sequence bit for
    bit regardless of how far or in what order it is read. Not thread safe:
    give every worker its own instance (see ``spawn``).
    """

    def __init__(self, distribution: str = "exponential", seed: int = 0, stream: int = 0):
        if distribution not in DISTRIBUTIONS:
            raise InvalidInput(f"unknown tau distribution {distribution!r}")
        self.distribution = distribution
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._rng = np.random.Generator(np.random.PCG64(ss))
        self._draws = np.empty(0)

    def spawn(self, stream: int) -> "TauSchedule":
        return TauSchedule(self.distribution, self.seed, stream)

    def _extend(self, n):
        chunks = [self._draws]
        have = self._draws.size
        while have < n:
            if self.distribution == "exponential":
                c = self._rng.standard_exponential(_CHUNK)
            elif self.distribution == "uniform":
                c = 2.0 * self._rng.random(_CHUNK)
            else:
                c = np.ones(_CHUNK)
            chunks.append(c)
            have += _CHUNK
        self._draws = np.concatenate(chunks)

    def prefix(self, n: int) -> np.ndarray:
        """(tau_1, ..., tau_n) as a read-only view."""
        if n > self._draws.size:
            self._extend(n)
        out = self._draws[:n]
        out.flags.writeable = False
        return out

    def __getitem__(self, k: int) -> float:
        """tau_k, 1-based."""
        if k < 1:
            raise IndexError("tau indices start at 1")
        return float(self.prefix(k)[k - 1])

    @property
    def fingerprint(self) -> str:
        s = f"{self.distribution}:{self.seed}:{self.stream}"
        return hashlib.sha256(s.encode()).hexdigest()[:16]

    def to_dict(self):
        return {"distribution": self.distribution, "seed": self.seed, "stream": self.stream}

    def __repr__(self):
        return f"TauSchedule({self.distribution!r}, seed={self.seed}, stream={self.stream})"


@dataclass(frozen=True)
class FlowParams:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    max_step: float = 0.05
    collision_radius: float = 1e-6
    kernel_mode: KernelMode = field(default_factory=KernelMode)
    max_steps: int = 5_000_000
    # debug only: scales the first velocity coordinate of the split flows and
    # disables the level-set projection (negative controls)
    fault_u_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kernel_mode", KernelMode.parse(self.kernel_mode))
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not (1e-14 <= v <= 1e-3):
                raise InvalidInput(f"{name} must lie in [1e-14, 1e-3], got {v}")
        if not self.max_step > 0 or not self.collision_radius > 0:
            raise InvalidInput("max_step and collision_radius must be positive")
        if self.max_steps < 1:
            raise InvalidInput("max_steps must be positive")

    @property
    def kernel(self) -> Kernel:
        return Kernel.build(self.kernel_mode)

    def replace(self, **kw) -> "FlowParams":
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(kw)
        return FlowParams(**d)

    def to_dict(self):
        d = asdict(self)
        d["kernel_mode"] = self.kernel_mode.to_dict()
        return d


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-stamped configurations of one flow run."""

    times: np.ndarray
    positions: np.ndarray     # (T, N, 2), wrapped
    xi: np.ndarray
    flow_kind: str
    schedule_ref: str | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 3 or p.shape[0] != t.size or p.shape[2] != 2 or p.shape[1] != len(self.xi):
            raise InvalidInput("positions must have shape (len(times), N, 2)")
        if np.any(np.diff(t) <= 0):
            raise InvalidInput("trajectory times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))

    def __len__(self):
        return self.times.size

    def __getitem__(self, k) -> Configuration:
        return Configuration(self.positions[k], self.xi)

    def configurations(self) -> list[Configuration]:
        return [self[k] for k in range(len(self))]

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "vortex", "u", "v"])
        for t, frame in zip(self.times, self.positions):
            for j, (u, v) in enumerate(frame):
                w.writerow([repr(float(t)), j, repr(float(u)), repr(float(v))])
        return buf.getvalue()

    def metadata(self) -> dict:
        d = {"flow_kind": self.flow_kind, "schedule": self.schedule_ref, "n_vortices": int(len(self.xi)),
             "xi": [float(x) for x in self.xi], "n_samples": len(self)}
        d.update(self.meta)
        return d

    def write(self, prefix) -> tuple[Path, Path]:
        """Write ``<prefix>.csv`` and ``<prefix>.json``."""
        prefix = Path(prefix)
        csv_path = prefix.with_suffix(".csv")
        meta_path = prefix.with_suffix(".json")
        csv_path.write_text(self.csv_text())
        meta_path.write_text(json.dumps(self.metadata(), indent=2, sort_keys=True, default=str))
        return csv_path, meta_path


# ---------------------------------------------------------------- helpers

def _coincident_pairs(pos, only=None):
    d = min_image(pos[:, None, :] - pos[None, :, :])
    r = np.hypot(d[..., 0], d[..., 1])
    np.fill_diagonal(r, np.inf)
    bad = r < _core.SINGULAR_R
    if only is not None:
        return bool(bad[only].any())
    return bool(bad.any())


def _check_exact(x: Configuration, kernel: Kernel, only=None):
    if kernel.regularized:
        return
    if _coincident_pairs(x.pos, only):
        who = "vortex %d coincides with another" % only if only is not None else "coincident vortices"
        raise SingularConfiguration(f"{who} (kernel mode {kernel.mode})")


def _check_index(x: Configuration, i: int) -> int:
    i = int(i)
    if not 0 <= i < x.n:
        raise InvalidInput(f"vortex index {i} out of range for N={x.n}")
    return i


def _check_time(t, upper=1.0):
    if not (0.0 <= t <= upper) or not math.isfinite(t):
        raise InvalidInput(f"time must lie in [0, {upper}], got {t}")


def _check_m(m):
    if int(m) != m or m < 1:
        raise InvalidInput(f"m must be a positive integer, got {m}")
    return int(m)


def _snap_floor(q: float) -> int:
    """floor(q) treating values within roundoff of an integer as that integer."""
    r = round(q)
    if abs(q - r) <= 1e-9 * max(1.0, abs(q)):
        return int(r)
    return int(math.floor(q))


def _raise_single(status, i):
    if status == _core.SINGULAR:
        raise SingularConfiguration(f"vortex {i} met a coincident vortex")
    if status == _core.BUDGET:
        raise IntegrationError("step budget exhausted in single-vortex flow")
    if status == _core.UNDERFLOW:
        raise IntegrationError("step size underflow in single-vortex flow")


def _move(pos, xi, i, span, speed, p: FlowParams, kernel: Kernel):
    """In-place single-vortex move, then wrap."""
    if span <= 0.0 or speed == 0.0:
        return
    project = p.fault_u_scale == 1.0
    status, _, _ = _core.integrate_single(pos, xi, i, span, speed, 0.0, p.rel_tol, p.abs_tol,
                                          p.max_step, p.max_steps, project, p.fault_u_scale,
                                          kernel.kp, kernel.fcoef, kernel.tab)
    _raise_single(status, i)
    _core.wrap_inplace(pos)


# ---------------------------------------------------------------- velocity

def velocity(x: Configuration, kernel_mode="exact") -> np.ndarray:
    """(v_1, ..., v_N) with v_i = sum_{j != i} xi_j K(x_i - x_j), shape (N, 2)."""
    kernel = Kernel.build(kernel_mode)
    _check_exact(x, kernel)
    out = np.empty((x.n, 2))
    _core.velocity_all(x.pos, x.xi, kernel.kp, kernel.fcoef, kernel.tab, out)
    return out


def single_component_velocity(x: Configuration, i: int, kernel_mode="exact") -> np.ndarray:
    i = _check_index(x, i)
    kernel = Kernel.build(kernel_mode)
    _check_exact(x, kernel, only=i)
    vx, vy, _ = _core.velocity_one(x.pos[i, 0], x.pos[i, 1], i, x.pos, x.xi,
                                   kernel.kp, kernel.fcoef, kernel.tab)
    return np.array([vx, vy])


# ---------------------------------------------------------------- deterministic flow

def _full_segment(pos, xi, span, h, p: FlowParams, kernel: Kernel, t0: float):
    status, t_reached, h_last, _, dmin = _core.integrate_full(
        pos, xi, span, h, p.rel_tol, p.abs_tol, p.max_step, p.max_steps,
        p.collision_radius, kernel.kp, kernel.fcoef, kernel.tab)
    if status in (_core.COLLISION, _core.SINGULAR):
        raise NearCollision(t0 + t_reached, dmin)
    if status == _core.BUDGET:
        raise IntegrationError(f"step budget exhausted at t={t0 + t_reached:.6g}")
    if status == _core.UNDERFLOW:
        raise NearCollision(t0 + t_reached, dmin)
    return h_last


def deterministic_trajectory(x: Configuration, times, p: FlowParams | None = None) -> Trajectory:
    """Phi_t(x) sampled at the given increasing times (t >= 0).

    Energy is not projected; the relative drift at the final time is stored as
    ``meta["energy_drift"]``.
    """
    p = p or FlowParams()
    kernel = p.kernel
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise InvalidInput("times must be a nonempty increasing sequence of nonnegative reals")
    _check_exact(x, kernel)
    pos = np.array(x.pos, dtype=float)
    out = np.empty((times.size, x.n, 2))
    t = 0.0
    h = 0.0
    for k, tk in enumerate(times):
        if tk > t:
            h = _full_segment(pos, x.xi, tk - t, h, p, kernel, t)
            t = tk
        frame = pos.copy()
        _core.wrap_inplace(frame)
        out[k] = frame
    h0 = _core.hamiltonian(x.pos, x.xi, kernel.kp, kernel.fcoef)
    h1 = _core.hamiltonian(out[-1], x.xi, kernel.kp, kernel.fcoef)
    drift = abs(h1 - h0) / max(1.0, abs(h0))
    return Trajectory(times, out, x.xi, "deterministic",
                      meta={"energy_drift": drift, "params": p.to_dict()})


def deterministic_flow(x: Configuration, t: float, p: FlowParams | None = None) -> Configuration:
    """Phi_t(x), adaptive Dormand-Prince integration of the full point-vortex system.

    Raises NearCollision if two vortices come closer than p.collision_radius.
    """
    if not (t >= 0.0) or not math.isfinite(t):
        raise InvalidInput(f"time must be nonnegative, got {t}")
    if t == 0.0:
        return x
    return deterministic_trajectory(x, [t], p)[0]


# ---------------------------------------------------------------- split flows

def single_vortex_flow(x: Configuration, i: int, s: float, p: FlowParams | None = None) -> Configuration:
    """Phi^(i)_s(x): vortex i advected by the frozen field of the others.

    Only row i changes. At the end of the span vortex i is projected back onto
    its stream-function level set, so H is preserved to roundoff.
    """
    p = p or FlowParams()
    i = _check_index(x, i)
    if not (s >= 0.0) or not math.isfinite(s):
        raise InvalidInput(f"duration must be nonnegative, got {s}")
    kernel = p.kernel
    _check_exact(x, kernel)
    if s == 0.0:
        return x
    pos = np.array(x.pos, dtype=float)
    _move(pos, x.xi, i, s, 1.0, p, kernel)
    return Configuration(pos, x.xi)


def _sweep_states(x: Configuration, sweeps: int, m: int, sched: TauSchedule,
                  p: FlowParams, kernel: Kernel):
    """Yield the state after each completed sweep 1..sweeps of the jumping flow."""
    n = x.n
    taus = sched.prefix(sweeps * n)
    pos = np.array(x.pos, dtype=float)
    for s in range(sweeps):
        for j in range(n):
            _move(pos, x.xi, j, taus[s * n + j] / m, 1.0, p, kernel)
        yield pos.copy()


def jumping_flow(x: Configuration, t: float, m: int, sched: TauSchedule,
                 p: FlowParams | None = None) -> Configuration:
    """Phi^m_t(x): floor(m t) full sweeps of single-vortex flows with durations tau_k / m."""
    p = p or FlowParams()
    m = _check_m(m)
    _check_time(t)
    kernel = p.kernel
    _check_exact(x, kernel)
    sweeps = _snap_floor(m * t)
    state = x.pos
    for state in _sweep_states(x, sweeps, m, sched, p, kernel):
        pass
    return Configuration(state, x.xi)


def jumping_trajectory(x: Configuration, times, m: int, sched: TauSchedule,
                       p: FlowParams | None = None) -> Trajectory:
    p = p or FlowParams()
    m = _check_m(m)
    times = _check_times(times)
    kernel = p.kernel
    _check_exact(x, kernel)
    sweeps = [_snap_floor(m * t) for t in times]
    states = [np.array(x.pos)]
    states.extend(_sweep_states(x, sweeps[-1], m, sched, p, kernel))
    out = np.stack([states[s] for s in sweeps])
    return Trajectory(times, out, x.xi, f"jumping({m})", sched.fingerprint,
                      meta={"m": m, "schedule": sched.to_dict(), "params": p.to_dict()})


def _check_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0):
        raise InvalidInput("times must be a nonempty strictly increasing sequence")
    if times[0] < 0 or times[-1] > 1.0:
        raise InvalidInput("times must lie in [0, 1]")
    return times


def interpolated_trajectory(x: Configuration, times, m: int, sched: TauSchedule,
                            p: FlowParams | None = None) -> Trajectory:
    """Psi^m at the given times.

    Slot k (0-based) covers [k/(N m), (k+1)/(N m)); during it only vortex k mod N
    moves, with velocity N tau_{k+1} v_j. Integration runs in physical time t.
    """
    p = p or FlowParams()
    m = _check_m(m)
    times = _check_times(times)
    kernel = p.kernel
    _check_exact(x, kernel)
    n = x.n
    slot_len = 1.0 / (n * m)
    last_slot = _snap_floor(n * m * times[-1])
    taus = sched.prefix(last_slot + 1)
    pos = np.array(x.pos, dtype=float)
    out = np.empty((times.size, n, 2))
    slot = 0
    done = 0.0        # time already spent inside the current slot
    for k, t in enumerate(times):
        target = _snap_floor(n * m * t)
        while slot < target:
            _move(pos, x.xi, slot % n, slot_len - done, n * taus[slot], p, kernel)
            slot += 1
            done = 0.0
        frac = t - slot * slot_len
        if frac > 1e-15:
            _move(pos, x.xi, slot % n, frac - done, n * taus[slot], p, kernel)
            done = frac
        out[k] = pos
    return Trajectory(times, out, x.xi, f"interpolated({m})", sched.fingerprint,
                      meta={"m": m, "schedule": sched.to_dict(), "params": p.to_dict()})


def interpolated_flow(x: Configuration, t: float, m: int, sched: TauSchedule,
                      p: FlowParams | None = None) -> Configuration:
    """Psi^m_t(x); equals jumping_flow when m t is an integer."""
    _check_time(t)
    return interpolated_trajectory(x, [t], m, sched, p)[0]


def time_grid(n: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


# ---------------------------------------------------------------- convergence

@dataclass(frozen=True)
class ConvergenceRow:
    m: int
    error: float                 # seed average of sup_t d_T(Psi^m_t, Phi_t)
    per_seed: tuple


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple
    decreasing_pairs: int        # consecutive m pairs with strictly smaller error
    ratio_last_first: float

    def as_rows(self):
        return [(r.m, r.error) for r in self.rows]


def sup_distance(a: Trajectory, b: Trajectory) -> float:
    return max(distance_positions(pa, pb) for pa, pb in zip(a.positions, b.positions))


def convergence_sweep(x: Configuration, m_list, seeds, p: FlowParams | None = None,
                      distribution: str = "exponential", times=None, threads: int | None = None,
                      reference: Trajectory | None = None) -> ConvergenceTable:
    """Seed-averaged sup over a time grid of d_T(Psi^m_t(x), Phi_t(x)), one row per m."""
    from ._parallel import pmap

    p = p or FlowParams()
    times = time_grid() if times is None else _check_times(times)
    if p.kernel_mode.kind == "regularized":
        from .observables import min_pair_distance
        if min_pair_distance(x) <= 2 * p.kernel_mode.delta:
            raise InvalidInput("initial vortices must be more than 2 delta apart")
    ref = reference if reference is not None else deterministic_trajectory(x, times, p)
    rows = []
    for m in m_list:
        def one(seed, m=m):
            traj = interpolated_trajectory(x, times, m, TauSchedule(distribution, seed), p)
            return sup_distance(traj, ref)
        errs = pmap(one, list(seeds), threads)
        rows.append(ConvergenceRow(int(m), float(np.mean(errs)), tuple(errs)))
    dec = sum(1 for a, b in zip(rows, rows[1:]) if b.error < a.error)
    ratio = rows[-1].error / rows[0].error if rows[0].error > 0 else 0.0
    return ConvergenceTable(tuple(rows), dec, ratio)
