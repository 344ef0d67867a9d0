"""Canonical and microcanonical samplers, and flow-invariance checks of the ensembles."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import _core
from ._parallel import pmap
from .dynamics import FlowParams, TauSchedule, interpolated_flow, jumping_flow
from .errors import EmptyShell, InvalidInput, InvalidTemperature, SingularConfiguration
from .kernel import Kernel, KernelMode
from .observables import center_of_vorticity, mean_nearest_neighbor_distance, min_pair_distance
from .torus import Configuration


def beta_upper_limit(xi) -> float:
    """4 pi / min_i |xi_i|: inverse temperatures at or above this are refused."""
    return 4 * np.pi / float(np.min(np.abs(xi)))


def pair_integrability_window(xi) -> tuple[float, float]:
    """Open beta interval where every pair factor exp(-2 beta xi_i xi_j G) is locally integrable.

    With G ~ -log r / (2 pi) a pair contributes r^(beta xi_i xi_j / pi); integrability
    in two dimensions needs beta xi_i xi_j > -2 pi for every pair.
    """
    xi = np.asarray(xi, dtype=float)
    prod = np.outer(xi, xi)[np.triu_indices(xi.size, 1)]
    lo = -2 * np.pi / prod[prod > 0].max() if np.any(prod > 0) else -np.inf
    hi = 2 * np.pi / (-prod[prod < 0]).max() if np.any(prod < 0) else np.inf
    return lo, hi


@dataclass(frozen=True)
class CanonicalParams:
    beta: float
    proposal_scale: float = 0.1
    burn_in: int = 2000
    thinning: int = 10
    seed: int = 0
    kernel_mode: KernelMode = field(default_factory=KernelMode)

    def __post_init__(self):
        object.__setattr__(self, "kernel_mode", KernelMode.parse(self.kernel_mode))
        if not self.proposal_scale > 0 or self.burn_in < 0 or self.thinning < 1:
            raise InvalidInput("proposal_scale > 0, burn_in >= 0 and thinning >= 1 required")
        if not math.isfinite(self.beta):
            raise InvalidTemperature("beta must be finite")


@dataclass(frozen=True)
class MicrocanonicalParams:
    energy: float
    shell_width: float | None = None
    proposal_scale: float = 0.1
    burn_in: int = 2000
    thinning: int = 10
    seed: int = 0
    kernel_mode: KernelMode = field(default_factory=KernelMode)
    search_budget: int = 20000

    def __post_init__(self):
        object.__setattr__(self, "kernel_mode", KernelMode.parse(self.kernel_mode))
        if self.shell_width is None:
            object.__setattr__(self, "shell_width", 0.01 * abs(self.energy))
        if not self.shell_width > 0:
            raise InvalidInput("shell_width must be positive (set it explicitly when energy is 0)")
        if not self.proposal_scale > 0 or self.burn_in < 0 or self.thinning < 1:
            raise InvalidInput("proposal_scale > 0, burn_in >= 0 and thinning >= 1 required")


@dataclass(frozen=True, eq=False)
class EnsembleSample:
    positions: np.ndarray            # (count, N, 2)
    xi: np.ndarray
    acceptance_rate: float
    n_accepted: int
    n_proposed: int
    autocorrelation: dict
    params: dict
    log: dict | None = None          # per-proposal delta_h / accept draws / accepted

    def __len__(self):
        return self.positions.shape[0]

    def __getitem__(self, k) -> Configuration:
        return Configuration(self.positions[k], self.xi)

    def configurations(self) -> list[Configuration]:
        return [self[k] for k in range(len(self))]

    def diagnostics(self) -> dict:
        return {"acceptance_rate": self.acceptance_rate, "n_accepted": self.n_accepted,
                "n_proposed": self.n_proposed, "count": len(self),
                "integrated_autocorrelation": self.autocorrelation, "params": self.params}

    def write_jsonl(self, path) -> Path:
        """One configuration per line, then a ``{"diagnostics": ...}`` footer line."""
        path = Path(path)
        with open(path, "w") as fh:
            for c in self.configurations():
                fh.write(c.to_json() + "\n")
            fh.write(json.dumps({"diagnostics": self.diagnostics()}, default=str) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "EnsembleSample":
        lines = Path(path).read_text().splitlines()
        diag = json.loads(lines[-1])["diagnostics"]
        confs = [Configuration.from_json(s) for s in lines[:-1]]
        pos = np.stack([c.pos for c in confs])
        return cls(pos, confs[0].xi, diag["acceptance_rate"], diag["n_accepted"], diag["n_proposed"],
                   diag["integrated_autocorrelation"], diag["params"])


def integrated_autocorrelation(series, c: float = 5.0) -> float:
    """Integrated autocorrelation time with automatic windowing (smallest M >= c tau(M))."""
    x = np.asarray(series, dtype=float)
    n = x.size
    x = x - x.mean()
    var = np.dot(x, x) / n
    if n < 4 or var == 0:
        return 1.0
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (var * n)
    tau = 2.0 * np.cumsum(acf) - 1.0
    for m in range(1, n):
        if m >= c * tau[m]:
            return float(tau[m])
    return float(tau[-1])


def _chain_diagnostics(positions, xi, kernel: Kernel):
    h = np.array([_core.hamiltonian(p, xi, kernel.kp, kernel.fcoef) for p in positions])
    dmin = np.array([_core.min_pair_distance(p) for p in positions])
    out = {"min_pair_distance": integrated_autocorrelation(dmin)}
    if np.all(np.isfinite(h)):
        out["hamiltonian"] = integrated_autocorrelation(h)
    return out


def _draws(seed, n_vortices, total):
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = rng.integers(0, n_vortices, total)
    radii = rng.random(total)
    angles = rng.random(total)
    accept_u = rng.random(total)
    return picks, radii, angles, accept_u


def sample_canonical(template: Configuration, p: CanonicalParams, count: int) -> EnsembleSample:
    """Metropolis chain for exp(-beta H) dx^N with single-vortex uniform-disk proposals.

    The chain starts from template's positions; returned states follow burn_in and
    are thinned by p.thinning.
    """
    if count < 1:
        raise InvalidInput("count must be positive")
    limit = beta_upper_limit(template.xi)
    if p.beta >= limit:
        raise InvalidTemperature(f"beta={p.beta} >= 4 pi / min|xi| = {limit:.6g}: partition function infinite")
    kernel = Kernel.build(p.kernel_mode)
    if not kernel.regularized:
        lo, hi = pair_integrability_window(template.xi)
        if not lo < p.beta < hi:
            warnings.warn(f"beta={p.beta} lies outside the pair-integrability window ({lo:.4g}, {hi:.4g}) "
                          "of the exact kernel; the chain will drift toward collapsed pairs",
                          RuntimeWarning, stacklevel=2)
        if not template.is_admissible():
            raise SingularConfiguration("template has coincident vortices")
    total = p.burn_in + count * p.thinning
    picks, radii, angles, accept_u = _draws(p.seed, template.n, total)
    pos = np.array(template.pos, dtype=float)
    samples = np.empty((count, template.n, 2))
    delta_h = np.empty(total)
    accepted = np.empty(total, dtype=np.bool_)
    n_acc = _core.metropolis_chain(pos, template.xi, float(p.beta), float(p.proposal_scale), picks, radii,
                                   angles, accept_u, p.burn_in, p.thinning, count, kernel.kp, kernel.fcoef,
                                   samples, delta_h, accepted)
    params = asdict(p)
    params["kernel_mode"] = p.kernel_mode.to_dict()
    params["ensemble"] = "canonical"
    return EnsembleSample(samples, template.xi.copy(), n_acc / total, int(n_acc), total,
                          _chain_diagnostics(samples, template.xi, kernel), params,
                          {"delta_h": delta_h, "accept_u": accept_u, "accepted": accepted})


def _find_shell(xi, p: MicrocanonicalParams, kernel: Kernel, rng) -> np.ndarray:
    n = xi.size
    e, w = p.energy, p.shell_width

    def energy(pos):
        return _core.hamiltonian(pos, xi, kernel.kp, kernel.fcoef)

    best, best_gap = None, np.inf
    n_random = p.search_budget // 2
    for _ in range(n_random):
        pos = rng.random((n, 2))
        gap = abs(energy(pos) - e)
        if gap <= w:
            return pos
        if gap < best_gap:
            best, best_gap = pos, gap
    # greedy descent on |H - E| from the best random start
    pos = best.copy()
    scale = p.proposal_scale
    for k in range(p.search_budget - n_random):
        i = rng.integers(n)
        trial = pos.copy()
        trial[i] = (trial[i] + scale * (2 * rng.random(2) - 1)) % 1.0
        gap = abs(energy(trial) - e)
        if gap < best_gap:
            pos, best_gap = trial, gap
            if gap <= w:
                return pos
        if k % 500 == 499:
            scale = max(scale * 0.7, 1e-4)
    raise EmptyShell(f"no configuration with |H - {e}| <= {w} found in {p.search_budget} trials")


def sample_microcanonical(template: Configuration, p: MicrocanonicalParams, count: int) -> EnsembleSample:
    """Metropolis chain uniform on the thickened energy shell {|H - E| <= shell_width}."""
    if count < 1:
        raise InvalidInput("count must be positive")
    kernel = Kernel.build(p.kernel_mode)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(p.seed, spawn_key=(1,))))
    h0 = _core.hamiltonian(template.pos, template.xi, kernel.kp, kernel.fcoef)
    if abs(h0 - p.energy) <= p.shell_width:
        pos = np.array(template.pos, dtype=float)
    else:
        pos = _find_shell(template.xi, p, kernel, rng)
    total = p.burn_in + count * p.thinning
    picks, radii, angles, _ = _draws(p.seed, template.n, total)
    samples = np.empty((count, template.n, 2))
    energies = np.empty(count)
    n_acc = _core.shell_chain(pos, template.xi, float(p.energy), float(p.shell_width), float(p.proposal_scale),
                              picks, radii, angles, p.burn_in, p.thinning, count, kernel.kp, kernel.fcoef,
                              samples, energies)
    params = asdict(p)
    params["kernel_mode"] = p.kernel_mode.to_dict()
    params["ensemble"] = "microcanonical"
    return EnsembleSample(samples, template.xi.copy(), n_acc / total, int(n_acc), total,
                          _chain_diagnostics(samples, template.xi, kernel), params,
                          {"energies": energies})


# ---------------------------------------------------------------- invariance

DEFAULT_OBSERVABLES = {
    "min_pair_distance": min_pair_distance,
    "same_sign_nn_distance": lambda c: mean_nearest_neighbor_distance(c, same_sign=True),
    "center_of_vorticity_u": lambda c: center_of_vorticity(c)[0],
    "center_of_vorticity_v": lambda c: center_of_vorticity(c)[1],
}


# Pushes only need distributional accuracy; the projection still pins H to roundoff.
PUSH_PARAMS = FlowParams(rel_tol=1e-8, abs_tol=1e-10)


@dataclass(frozen=True)
class FlowSpec:
    """Which split flow to push samples through; sample k uses schedule stream k."""

    kind: str = "interpolated"      # interpolated | jumping | identity
    m: int = 16
    t: float = 0.5
    distribution: str = "exponential"
    seed: int = 0
    params: FlowParams = field(default_factory=lambda: PUSH_PARAMS)

    def __post_init__(self):
        if self.kind not in ("interpolated", "jumping", "identity"):
            raise InvalidInput(f"unknown flow kind {self.kind!r}")

    def apply(self, x: Configuration, k: int) -> Configuration:
        if self.kind == "identity" or self.t == 0:
            return x
        sched = TauSchedule(self.distribution, self.seed, stream=k)
        fn = interpolated_flow if self.kind == "interpolated" else jumping_flow
        return fn(x, self.t, self.m, sched, self.params)


def ks_critical_value(n: int, m: int, alpha: float = 0.01) -> float:
    """Asymptotic two-sample KS critical value c(alpha) sqrt((n + m) / (n m))."""
    return math.sqrt(-math.log(alpha / 2) / 2) * math.sqrt((n + m) / (n * m))


@dataclass(frozen=True)
class InvarianceResult:
    observable: str
    ks_distance: float
    critical_value: float
    autocorrelation: float = 1.0     # of the unpushed series; the critical value assumes ~1

    @property
    def passed(self) -> bool:
        return self.ks_distance < self.critical_value


@dataclass(frozen=True)
class InvarianceReport:
    n: int
    alpha: float
    flow: dict
    results: tuple

    def __getitem__(self, name) -> InvarianceResult:
        for r in self.results:
            if r.observable == name:
                return r
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self):
        return {"n": self.n, "alpha": self.alpha, "flow": self.flow,
                "results": [{"observable": r.observable, "ks_distance": r.ks_distance,
                             "critical_value": r.critical_value, "autocorrelation": r.autocorrelation,
                             "passed": r.passed} for r in self.results]}


def push_sample(sample: EnsembleSample, flow: FlowSpec, threads=None) -> np.ndarray:
    confs = sample.configurations()
    out = pmap(lambda k: flow.apply(confs[k], k).pos, range(len(confs)), threads)
    return np.stack(out)


def invariance_test(sample: EnsembleSample, flow: FlowSpec, observables=None, alpha: float = 0.01,
                    threads=None, min_size: int = 500, max_autocorrelation: float = 2.0) -> InvarianceReport:
    """Two-sample KS distance between {O(x_k)} and {O(flow(x_k))} for each observable.

    Warns when an observable's series is too autocorrelated for the
    independent-sample critical value to mean anything.
    """
    if len(sample) < min_size:
        raise InvalidInput(f"sample size {len(sample)} below {min_size}")
    obs = DEFAULT_OBSERVABLES if observables is None else observables
    if not isinstance(obs, dict):
        obs = {name: DEFAULT_OBSERVABLES[name] for name in obs}
    pushed = push_sample(sample, flow, threads)
    before = sample.configurations()
    after = [Configuration(p, sample.xi) for p in pushed]
    n = len(before)
    crit = ks_critical_value(n, n, alpha)
    results = []
    for name, fn in obs.items():
        a = np.array([fn(c) for c in before])
        b = np.array([fn(c) for c in after])
        a, b = a[np.isfinite(a)], b[np.isfinite(b)]
        if a.size == 0 or b.size == 0:
            continue        # undefined for this intensity vector (e.g. no same-sign pair)
        d = float(stats.ks_2samp(a, b).statistic)
        tau = integrated_autocorrelation(a)
        if tau > max_autocorrelation:
            warnings.warn(f"{name}: integrated autocorrelation {tau:.1f} of the sample; the KS critical "
                          "value assumes independent states (increase thinning)", RuntimeWarning, stacklevel=2)
        results.append(InvarianceResult(name, d, crit, tau))
    fd = {"kind": flow.kind, "m": flow.m, "t": flow.t, "distribution": flow.distribution,
          "seed": flow.seed, "params": flow.params.to_dict()}
    return InvarianceReport(n, alpha, fd, tuple(results))
