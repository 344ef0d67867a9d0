"""Periodic Green function of -Laplacian on the unit torus, Biot-Savart kernel and its regularization.

G is evaluated by Ewald splitting of the heat-kernel representation

    G(x) = 1/(4 pi) sum_n E1(alpha^2 |x - n|^2) - 1/(4 alpha^2)
           + sum_{k != 0} exp(-pi^2 |k|^2 / alpha^2) cos(2 pi k.x) / (4 pi^2 |k|^2)

which is the zero-mean solution of -Lap G = delta_0 - 1. The velocity kernel is
K = -grad_perp G = (dG/dy, -dG/dx).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate, ndimage

from . import _core
from .errors import InvalidInput, SingularPoint, TableAccuracy
from .torus import min_image


@dataclass(frozen=True)
class GreenEvaluator:
    """Ewald evaluator for G and grad G.

    The defaults give roughly 1e-15 absolute accuracy: images beyond
    alpha^2 r^2 = 40 and Fourier modes with exp(-pi^2 k^2/alpha^2) < 1e-17 are dropped.
    """

    ewald_alpha: float = 3.5
    real_cutoff: int = 2
    fourier_cutoff: int = 7
    target_accuracy: float = 1e-10
    check: bool = True
    kp: np.ndarray = field(init=False, repr=False, compare=False)
    fcoef: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.ewald_alpha > 0:
            raise InvalidInput("ewald_alpha must be positive")
        if self.real_cutoff < 1 or self.fourier_cutoff < 1:
            raise InvalidInput("cutoffs must be >= 1")
        if not self.target_accuracy > 0:
            raise InvalidInput("target_accuracy must be positive")
        a2 = self.ewald_alpha ** 2
        kc = self.fourier_cutoff
        k1 = np.arange(0, kc + 1)[:, None]
        k2 = np.arange(0, kc + 1)[None, :]
        ksq = (k1 * k1 + k2 * k2).astype(float)
        mult = np.where(k1 > 0, 2.0, 1.0) * np.where(k2 > 0, 2.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            c = mult * np.exp(-np.pi ** 2 * ksq / a2) / (4.0 * np.pi ** 2 * ksq)
        c[0, 0] = 0.0
        fcoef = c
        kp = np.zeros(_core.KP_SIZE)
        kp[_core.KP_MODE] = _core.MODE_EXACT
        kp[_core.KP_ALPHA2] = a2
        kp[_core.KP_SHELLS] = self.real_cutoff
        kp[_core.KP_MEANSHIFT] = 1.0 / (4.0 * a2)
        kp[_core.KP_UMAX] = 40.0
        kp[_core.KP_FOURIER_K] = kc
        object.__setattr__(self, "kp", kp)
        object.__setattr__(self, "fcoef", np.ascontiguousarray(fcoef))
        if self.check:
            self._check_invariants()

    def truncation_bound(self) -> float:
        """A priori bound on the dropped image and Fourier terms (value and gradient)."""
        a2 = self.ewald_alpha ** 2
        s = self.real_cutoff + 0.5          # nearest dropped image from the fundamental cell
        u = a2 * s * s
        real = 8 * (self.real_cutoff + 1) * max(_core.exp1(u) / (4 * np.pi), np.exp(-u) / (2 * np.pi * s))
        k = self.fourier_cutoff + 1
        four = 8 * k * np.exp(-np.pi ** 2 * k * k / a2) * max(1 / (4 * np.pi ** 2 * k * k), 1 / (2 * np.pi * k))
        return float(real + four)

    def _check_invariants(self):
        bound = self.truncation_bound()
        if bound > self.target_accuracy:
            raise TableAccuracy(f"cutoffs give truncation error up to {bound:.2e} > {self.target_accuracy:.1e}")
        mean = zero_mean_residual(self)
        if abs(mean) > 10 * self.target_accuracy:
            raise TableAccuracy(f"Green function mean {mean:.3e} exceeds tolerance")
        rng = np.random.default_rng(12345)
        pts = rng.random((32, 2)) - 0.5
        for p in pts:
            if abs(self.green(p) - self.green(-p)) > self.target_accuracy:
                raise TableAccuracy("Green function is not even at a sampled point")

    def _checked(self, x):
        d = min_image(np.asarray(x, dtype=float))
        if d.shape != (2,) or not np.all(np.isfinite(d)):
            raise InvalidInput(f"bad torus point {x!r}")
        if np.hypot(d[0], d[1]) < _core.SINGULAR_R:
            raise SingularPoint("kernel evaluated at the origin")
        return d

    def green(self, x) -> float:
        d = self._checked(x)
        return _core.green_grad_exact(d[0], d[1], self.kp, self.fcoef)[0]

    def grad_green(self, x) -> np.ndarray:
        d = self._checked(x)
        _, gx, gy = _core.green_grad_exact(d[0], d[1], self.kp, self.fcoef)
        return np.array([gx, gy])

    def biot_savart(self, x) -> np.ndarray:
        g = self.grad_green(x)
        return np.array([g[1], -g[0]])

    def regular_part_at_origin(self) -> float:
        """lim_{x -> 0} G(x) + log|x| / (2 pi)."""
        return _green_regular_limit(self)


def zero_mean_residual(ge: GreenEvaluator, n: int = 128) -> float:
    """Mean of G over T^2, by midpoint rule on G - G_sing plus the radial integral of G_sing.

    G_sing = -log(r) b(r) / (2 pi) with a smooth bump b, so the remainder is smooth and
    periodic and the midpoint rule converges spectrally.
    """
    r1, r2 = 0.1, 0.4
    bump = np.vectorize(lambda r: _core.smooth_bump(r, r1, r2))
    xs = (np.arange(n) + 0.5) / n
    total = 0.0
    for x in xs:
        d = min_image(np.stack([np.full(n, x), xs], axis=1))
        r = np.hypot(d[:, 0], d[:, 1])
        g = np.array([_core.green_grad_exact(a, b, ge.kp, ge.fcoef)[0] for a, b in d])
        total += np.sum(g + np.log(r) * bump(r) / (2 * np.pi))
    grid_mean = total / n ** 2
    sing, _ = integrate.quad(lambda r: -r * np.log(r) * _core.smooth_bump(r, r1, r2), 0.0, r2,
                             points=[r1], epsabs=1e-14, epsrel=1e-13, limit=200)
    return grid_mean + sing


def _green_regular_limit(ge: GreenEvaluator) -> float:
    # G + log r / (2 pi) = g0 + r^2/4 + O(r^4): Richardson in r^2
    r1, r2 = 1e-3, 2e-3
    f1 = ge.green((r1, 0.0)) + np.log(r1) / (2 * np.pi)
    f2 = ge.green((r2, 0.0)) + np.log(r2) / (2 * np.pi)
    return (4 * f1 - f2) / 3


@lru_cache(maxsize=None)
def default_evaluator() -> GreenEvaluator:
    return GreenEvaluator()


def green(x, ge: GreenEvaluator | None = None) -> float:
    """Zero-mean Green function of -Laplacian at torus point x."""
    return (ge or default_evaluator()).green(x)


def grad_green(x, ge: GreenEvaluator | None = None) -> np.ndarray:
    return (ge or default_evaluator()).grad_green(x)


def biot_savart(x, ge: GreenEvaluator | None = None) -> np.ndarray:
    """K(x) = -grad_perp G(x) with (a, b)_perp = (-b, a)."""
    return (ge or default_evaluator()).biot_savart(x)


@dataclass(frozen=True)
class Mollifier:
    """Cutoff chi_delta, written as a C^2 quintic smoothstep of the Green function value.

    chi = 1 where G >= g_hi (min of G on |x| = delta/2) and chi = 0 where
    G <= g_lo (max of G on |x| = delta). Since G decreases radially on the
    fundamental cell this gives chi = 1 on |x| <= delta/2 and chi = 0 on
    |x| >= delta. Because chi is a function of G, (1 - chi) K is again a
    perpendicular gradient, of F(G) with F' = 1 - chi.
    """

    delta: float
    ge: GreenEvaluator = field(default_factory=default_evaluator)
    g_lo: float = field(init=False)
    g_hi: float = field(init=False)

    def __post_init__(self):
        if not (0.0 < self.delta <= 0.25):
            raise InvalidInput(f"delta must lie in (0, 1/4], got {self.delta}")
        th = np.linspace(0.0, 2 * np.pi, 512, endpoint=False)
        outer = [self.ge.green((self.delta * np.cos(t), self.delta * np.sin(t))) for t in th]
        inner = [self.ge.green((0.5 * self.delta * np.cos(t), 0.5 * self.delta * np.sin(t))) for t in th]
        object.__setattr__(self, "g_lo", float(max(outer)) + 1e-13)
        object.__setattr__(self, "g_hi", float(min(inner)) - 1e-13)

    def chi(self, x) -> float:
        d = min_image(np.asarray(x, dtype=float))
        r = np.hypot(d[0], d[1])
        if r < 0.5 * self.delta:
            return 1.0
        return _core.smoothstep5((self.ge.green(d) - self.g_lo) / (self.g_hi - self.g_lo))


def regularized_kernel(x, delta: float, ge: GreenEvaluator | None = None) -> np.ndarray:
    """K_delta(x) = (1 - chi_delta(x)) K(x); smooth, vanishing on |x| < delta/2."""
    if not (0.0 < delta <= 0.25):
        raise InvalidInput(f"delta must lie in (0, 1/4], got {delta}")
    ge = ge or default_evaluator()
    mode = KernelMode.regularized(delta)
    kern = Kernel.build(mode, ge)
    d = min_image(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(d)):
        raise InvalidInput(f"bad torus point {x!r}")
    kx, ky, _ = _core.pair_kernel(d[0], d[1], kern.kp, kern.fcoef, kern.tab)
    return np.array([kx, ky])


def regularized_green(x, delta: float, ge: GreenEvaluator | None = None) -> float:
    """F(G(x)): the potential whose perpendicular gradient gives -K_delta."""
    kern = Kernel.build(KernelMode.regularized(delta), ge or default_evaluator())
    d = min_image(np.asarray(x, dtype=float))
    return _core.pair_green(d[0], d[1], kern.kp, kern.fcoef)[0]


# ---------------------------------------------------------------- kernel table

TABLE_MAGIC = b"PVKT"
TABLE_VERSION = 1
_BUMP_R1 = 0.02
_BUMP_R2 = 0.49


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Periodic bicubic (cubic B-spline) table of the regular part of K.

    K = K_reg + b(r) (-y, x) / (2 pi r^2); K_reg is smooth on the torus and is
    tabulated on the grid_size^2 nodes j/grid_size. The singular part is added
    analytically at evaluation, so the table is usable everywhere except at 0.
    """

    grid_size: int
    values: np.ndarray          # (2, n, n) node samples of K_reg
    coeffs: np.ndarray          # (2, n, n) B-spline coefficients
    target_accuracy: float
    max_probe_error: float
    params: dict

    def __call__(self, x) -> np.ndarray:
        d = min_image(np.asarray(x, dtype=float))
        if np.hypot(d[0], d[1]) < _core.SINGULAR_R:
            raise SingularPoint("kernel table evaluated at the origin")
        kp = _table_kp(self.grid_size)
        kx, ky, _ = _core.pair_kernel(d[0], d[1], kp, _EMPTY_F, self.coeffs)
        return np.array([kx, ky])

    def write(self, path) -> Path:
        """Binary table file plus a JSON sidecar ``<path>.json``."""
        path = Path(path)
        header = TABLE_MAGIC + struct.pack("<IId", TABLE_VERSION, self.grid_size, self.target_accuracy)
        payload = np.ascontiguousarray(np.moveaxis(self.values, 0, -1), dtype="<f8")
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload.tobytes())
        sidecar = dict(self.params)
        sidecar.update(grid_size=self.grid_size, target_accuracy=self.target_accuracy,
                       max_probe_error=self.max_probe_error,
                       payload="row-major (u, v) nodes j/grid_size; f64 pairs (Kx_reg, Ky_reg)",
                       singular_part={"kind": "bump * (-y, x) / (2 pi r^2)",
                                      "bump_r1": _BUMP_R1, "bump_r2": _BUMP_R2})
        Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
        return path

    @classmethod
    def read(cls, path) -> "KernelTable":
        raw = Path(path).read_bytes()
        if raw[:4] != TABLE_MAGIC:
            raise InvalidInput("not a PVKT kernel table")
        version, n, acc = struct.unpack("<IId", raw[4:20])
        if version != TABLE_VERSION:
            raise InvalidInput(f"unsupported table version {version}")
        vals = np.frombuffer(raw[20:], dtype="<f8")
        if vals.size != 2 * n * n:
            raise InvalidInput("table payload size mismatch")
        values = np.moveaxis(vals.reshape(n, n, 2), -1, 0).copy()
        sidecar = Path(str(path) + ".json")
        params = json.loads(sidecar.read_text()) if sidecar.exists() else {}
        return cls(n, values, _prefilter(values), acc, float(params.get("max_probe_error", np.nan)),
                   {k: params[k] for k in ("ewald_alpha", "real_cutoff", "fourier_cutoff") if k in params})


_EMPTY_F = np.zeros((1, 1))


def _table_kp(n):
    kp = np.zeros(_core.KP_SIZE)
    kp[_core.KP_MODE] = _core.MODE_TABLE
    kp[_core.KP_TABLE_N] = n
    kp[_core.KP_BUMP_R1] = _BUMP_R1
    kp[_core.KP_BUMP_R2] = _BUMP_R2
    return kp


def _prefilter(values):
    return np.stack([ndimage.spline_filter(v, order=3, mode="grid-wrap") for v in values])


def build_kernel_table(ge: GreenEvaluator, grid_size: int, target_accuracy: float | None = None,
                       field_fn=None, probes: int = 100, seed: int = 0) -> KernelTable:
    """Tabulate K on a grid and validate against direct evaluation.

    field_fn, if given, replaces K (debug injection; must be smooth and periodic,
    no singular part is added back for it). Raises TableAccuracy if any probe
    with |x| > 0.05 misses by more than 10 * target_accuracy.
    """
    if grid_size < 64:
        raise InvalidInput("grid_size must be >= 64")
    target = ge.target_accuracy if target_accuracy is None else target_accuracy
    n = grid_size
    values = np.zeros((2, n, n))
    kp = _table_kp(n)
    for a in range(n):
        for b in range(n):
            d = min_image(np.array([a / n, b / n]))
            if field_fn is not None:
                values[:, a, b] = field_fn(d)
                continue
            if a == 0 and b == 0:
                continue  # K_reg(0) = 0 by oddness
            _, gx, gy = _core.green_grad_exact(d[0], d[1], ge.kp, ge.fcoef)
            sx, sy = _core.singular_part_k(d[0], d[1], kp)
            values[0, a, b] = gy - sx
            values[1, a, b] = -gx - sy
    coeffs = _prefilter(values)
    rng = np.random.default_rng(seed)
    worst = 0.0
    got = 0
    while got < probes:
        p = rng.random(2)
        d = min_image(p)
        if np.hypot(*d) <= 0.05:
            continue
        got += 1
        if field_fn is not None:
            ref = np.asarray(field_fn(d))
            approx = np.array([_core.bspline_eval(coeffs[0], p[0], p[1]),
                               _core.bspline_eval(coeffs[1], p[0], p[1])])
        else:
            ref = ge.biot_savart(d)
            kx, ky, _ = _core.pair_kernel(d[0], d[1], kp, _EMPTY_F, coeffs)
            approx = np.array([kx, ky])
        worst = max(worst, float(np.max(np.abs(approx - ref))))
    params = {"ewald_alpha": ge.ewald_alpha, "real_cutoff": ge.real_cutoff,
              "fourier_cutoff": ge.fourier_cutoff, "probes": probes, "probe_seed": seed}
    table = KernelTable(n, values, coeffs, target, worst, params)
    if worst > 10 * target:
        raise TableAccuracy(f"table probe error {worst:.3e} exceeds 10 x {target:.1e}")
    return table


# ---------------------------------------------------------------- kernel modes

@dataclass(frozen=True)
class KernelMode:
    """One of exact, table or regularized(delta)."""

    kind: str = "exact"
    delta: float | None = None
    grid_size: int = 256

    def __post_init__(self):
        if self.kind not in ("exact", "table", "regularized"):
            raise InvalidInput(f"unknown kernel mode {self.kind!r}")
        if self.kind == "regularized":
            if self.delta is None or not (0.0 < self.delta <= 0.25):
                raise InvalidInput(f"regularized mode needs delta in (0, 1/4], got {self.delta}")

    @classmethod
    def regularized(cls, delta: float) -> "KernelMode":
        return cls("regularized", float(delta))

    @classmethod
    def parse(cls, spec) -> "KernelMode":
        """Accepts a KernelMode, 'exact', 'table', 'regularized(0.05)' or a dict."""
        if isinstance(spec, KernelMode):
            return spec
        if spec is None:
            return cls()
        if isinstance(spec, dict):
            return cls(**spec)
        s = str(spec).strip()
        if s.startswith("regularized"):
            inner = s[len("regularized"):].strip("() ")
            try:
                return cls.regularized(float(inner))
            except ValueError as exc:
                raise InvalidInput(f"bad kernel mode {spec!r}") from exc
        return cls(s)

    def __str__(self):
        return f"regularized({self.delta:g})" if self.kind == "regularized" else self.kind

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "regularized":
            d["delta"] = self.delta
        if self.kind == "table":
            d["grid_size"] = self.grid_size
        return d


@dataclass(frozen=True, eq=False)
class Kernel:
    """Compiled-kernel argument bundle (kp, fcoef, tab) for a given mode."""

    mode: KernelMode
    kp: np.ndarray
    fcoef: np.ndarray
    tab: np.ndarray

    @staticmethod
    def build(mode, ge: GreenEvaluator | None = None) -> "Kernel":
        mode = KernelMode.parse(mode)
        return _build_kernel(mode, ge or default_evaluator())

    @property
    def regularized(self) -> bool:
        return self.mode.kind == "regularized"


_NO_TABLE = np.zeros((2, 1, 1))


@lru_cache(maxsize=32)
def _build_kernel(mode: KernelMode, ge: GreenEvaluator) -> Kernel:
    kp = ge.kp.copy()
    tab = _NO_TABLE
    if mode.kind == "regularized":
        moll = Mollifier(mode.delta, ge)
        kp[_core.KP_MODE] = _core.MODE_REGULARIZED
        kp[_core.KP_GLO] = moll.g_lo
        kp[_core.KP_GHI] = moll.g_hi
        kp[_core.KP_DELTA] = mode.delta
    elif mode.kind == "table":
        table = build_kernel_table(ge, mode.grid_size, target_accuracy=max(ge.target_accuracy, 1e-8))
        kp[_core.KP_MODE] = _core.MODE_TABLE
        kp[_core.KP_TABLE_N] = mode.grid_size
        kp[_core.KP_BUMP_R1] = _BUMP_R1
        kp[_core.KP_BUMP_R2] = _BUMP_R2
        tab = table.coeffs
    return Kernel(mode, kp, ge.fcoef, tab)
