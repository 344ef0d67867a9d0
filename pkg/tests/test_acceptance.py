"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is printed in the pytest terminal summary.
Run on its own with ``pytest tests/test_acceptance.py -v``.
"""
import time

import numpy as np
import pytest
from scipy import stats
from scipy.stats import qmc

from oracles import green_oracle
from pvsplit import NearCollision
from pvsplit._parallel import pmap
from pvsplit.dynamics import (FlowParams, TauSchedule, convergence_sweep, deterministic_flow,
                              interpolated_flow, interpolated_trajectory, jumping_flow, single_vortex_flow,
                              time_grid)
from pvsplit.ensembles import (PUSH_PARAMS, CanonicalParams, FlowSpec, invariance_test, ks_critical_value,
                               sample_canonical)
from pvsplit.kernel import biot_savart, green
from pvsplit.observables import energy_report, l_estimate_constants, l_functional, min_pair_distance
from pvsplit.torus import Configuration, config_distance, min_image, uniform_configuration

REG = "regularized(0.05)"


def alternating(n):
    return [1.0 if k % 2 == 0 else -1.0 for k in range(n)]


def test_kernel_oracle_equivalence(acceptance):
    pts = qmc.Sobol(2, scramble=True, seed=0).random(2048)
    pts = pts[np.hypot(*min_image(pts).T) > 0.05][:1000]
    assert len(pts) == 1000
    start = time.perf_counter()
    ours = np.array([green(p) for p in pts])
    elapsed = time.perf_counter() - start
    err = np.max(np.abs(ours - np.array([green_oracle(p) for p in pts])))
    ok = acceptance(1, "kernel oracle equivalence", err < 1e-8 and elapsed < 10,
                    f"max err {err:.1e}, {elapsed:.2f} s")
    assert ok


def test_half_period_zeros_and_antisymmetry(acceptance):
    zeros = max(np.hypot(*biot_savart(p)) for p in [(0.5, 0.0), (0.0, 0.5), (0.5, 0.5)])
    xs = np.random.default_rng(0).random((1000, 2))
    odd = max(np.max(np.abs(biot_savart(x) + biot_savart(-x))) for x in xs)
    ok = acceptance(2, "half-period zeros and antisymmetry", zeros < 1e-10 and odd < 1e-12,
                    f"zeros {zeros:.1e}, antisymmetry {odd:.1e}")
    assert ok


def test_first_integral_preservation(acceptance):
    times = time_grid(101)
    jobs = [(n, m, s) for n in (2, 4, 6) for m in (8, 32) for s in range(20)]

    def drift(job):
        n, m, s = job
        x = uniform_configuration(alternating(n), np.random.default_rng(s), min_distance=0.05)
        traj = interpolated_trajectory(x, times, m, TauSchedule("exponential", s))
        return energy_report(traj).summary["sup_drift"]

    start = time.perf_counter()
    worst = max(pmap(drift, jobs))
    elapsed = time.perf_counter() - start
    ok = acceptance(3, "exact first-integral preservation", worst < 1e-8 and elapsed < 120,
                    f"max drift {worst:.1e}, {elapsed:.1f} s")
    assert ok


def test_interpolated_meets_jumping_at_grid_times(acceptance):
    worst = 0.0
    for m in (4, 16):
        for s in range(10):
            x = uniform_configuration(alternating(3), np.random.default_rng(s), min_distance=0.1)
            sched = TauSchedule("exponential", s)
            times = np.arange(0, m + 1) / m
            psi = interpolated_trajectory(x, times, m, sched)
            for k, t in enumerate(times):
                worst = max(worst, config_distance(psi[k], jumping_flow(x, t, m, sched)))
    ok = acceptance(4, "interpolated and jumping flows agree at k/m", worst < 1e-9, f"max d_T {worst:.1e}")
    assert ok


def test_convergence_to_deterministic_flow(acceptance):
    p = FlowParams(kernel_mode=REG)
    x = uniform_configuration([1.0, -1.0, 1.0], np.random.default_rng(0), min_distance=0.3)
    start = time.perf_counter()
    table = convergence_sweep(x, [8, 16, 32, 64], seeds=range(10), p=p)
    elapsed = time.perf_counter() - start
    errs = [r.error for r in table.rows]
    monotone = all(b < a for a, b in zip(errs, errs[1:]))
    ok = acceptance(5, "convergence of the split flows",
                    monotone and errs[-1] < 0.5 * errs[0] and elapsed < 300,
                    "errors " + " ".join(f"{e:.3f}" for e in errs) + f", {elapsed:.1f} s")
    assert ok


def _jacobian_det(fn, x, h=1e-6):
    base = x.pos.ravel()
    jac = np.empty((base.size, base.size))
    for k in range(base.size):
        q = base.copy()
        q[k] += h
        plus = fn(Configuration(q.reshape(-1, 2), x.xi)).pos.ravel()
        q[k] -= 2 * h
        minus = fn(Configuration(q.reshape(-1, 2), x.xi)).pos.ravel()
        jac[:, k] = min_image(plus - minus) / (2 * h)
    return np.linalg.det(jac)


def test_liouville_volume_preservation(acceptance):
    t, m = 0.3, 8
    p = FlowParams(rel_tol=1e-12, abs_tol=1e-14)
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(20):
        x = uniform_configuration([1.0, -0.7], rng, min_distance=0.1)
        sched = TauSchedule("exponential", 0, stream=k)
        maps = [lambda c: deterministic_flow(c, t, p),
                lambda c: single_vortex_flow(c, 0, t, p),
                lambda c: single_vortex_flow(c, 1, t, p),
                lambda c: interpolated_flow(c, t, m, sched, p)]
        for fn in maps:
            worst = max(worst, abs(_jacobian_det(fn, x) - 1.0))
    ok = acceptance(6, "Liouville volume preservation", worst < 1e-4, f"max |det - 1| {worst:.1e}")
    assert ok


@pytest.mark.slow
def test_ensemble_invariance(acceptance):
    xi = [1.0, 1.0, -1.0, -1.0]
    start = time.perf_counter()
    template = uniform_configuration(xi, np.random.default_rng(0), min_distance=0.1)
    # thinning 500 brings every observable's autocorrelation time to about 1,
    # which the independent-sample KS critical value relies on
    sample = sample_canonical(template, CanonicalParams(beta=10.0, thinning=500, seed=0, kernel_mode=REG), 2000)
    names = ["min_pair_distance", "center_of_vorticity_u", "center_of_vorticity_v"]
    params = PUSH_PARAMS.replace(kernel_mode=REG)
    good = invariance_test(sample, FlowSpec(m=16, t=0.5, seed=0, params=params), names)
    # negative control: first velocity coordinate scaled by 1.5, level-set projection off
    bad = invariance_test(sample, FlowSpec(m=16, t=0.5, seed=0, params=params.replace(fault_u_scale=1.5)),
                          names)
    elapsed = time.perf_counter() - start
    crit = ks_critical_value(2000, 2000)
    good_max = max(r.ks_distance for r in good.results)
    bad_max = max(r.ks_distance for r in bad.results)
    acceptance(7, "ensemble invariance under the interpolated flow",
               good.passed and bad_max > crit and elapsed < 300,
               f"KS {good_max:.4f} < {crit:.4f}; fault KS {bad_max:.4f} should exceed it; {elapsed:.0f} s")
    assert good.passed, good.to_dict()
    assert elapsed < 300
    assert bad_max > crit, f"negative control not detected: {bad.to_dict()}"


def test_beta_zero_sampler_is_uniform(acceptance):
    template = uniform_configuration([1.0, 1.0, -1.0, -1.0], np.random.default_rng(0))
    p = CanonicalParams(beta=0.0, proposal_scale=0.5, burn_in=1000, thinning=40, seed=0)
    s = sample_canonical(template, p, 5000)
    coords = s.positions.reshape(5000, -1)
    pvals = [stats.kstest(coords[:, k], "uniform").pvalue for k in range(coords.shape[1])]
    ok = acceptance(8, "beta = 0 sampler uniformity", min(pvals) > 0.01, f"min p-value {min(pvals):.3f}")
    assert ok


def _config_with_min_distance(n, d, rng):
    # uniform configuration whose closest pair sits exactly at distance d
    while True:
        pos = rng.random((n, 2))
        ang = 2 * np.pi * rng.random()
        pos[1] = (pos[0] + d * np.array([np.cos(ang), np.sin(ang)])) % 1.0
        if abs(min_pair_distance(pos) - d) < 1e-6 * d:
            return Configuration(pos, np.ones(n))


def test_l_functional_inequality(acceptance):
    rng = np.random.default_rng(0)
    violations, worst = 0, -np.inf
    for k in range(1000):
        n = 2 + k % 5
        d = 10 ** rng.uniform(-5, np.log10(0.2))
        x = _config_with_min_distance(n, d, rng)
        c_hat, offset = l_estimate_constants(n)
        gap = l_functional(x) + c_hat * np.log(min_pair_distance(x)) - offset
        worst = max(worst, gap)
        violations += gap > 0
    ok = acceptance(9, "L-functional inequality", violations == 0,
                    f"{violations} violations, largest L + C log d - offset {worst:.3f}")
    assert ok


def test_split_flows_globally_defined(acceptance):
    rng = np.random.default_rng(0)
    xi = alternating(4)
    configs = []
    for _ in range(100):
        pos = rng.random((4, 2))
        ang = 2 * np.pi * rng.random()
        pos[1] = pos[0] + 1e-4 * np.array([np.cos(ang), np.sin(ang)])
        configs.append(Configuration(pos, xi))
    split = FlowParams(kernel_mode=REG)
    det = FlowParams(kernel_mode=REG, collision_radius=1e-5)

    def run(k):
        x, sched = configs[k], TauSchedule("exponential", 0, stream=k)
        jumping_flow(x, 1.0, 16, sched, split)
        interpolated_flow(x, 1.0, 16, sched, split)
        try:
            deterministic_flow(x, 1.0, det)
        except NearCollision:
            return True
        return False

    collisions = sum(pmap(run, range(100)))
    ok = acceptance(10, "split flows globally defined near collisions", collisions >= 1,
                    f"split flows completed 100/100; deterministic NearCollision on {collisions}/100")
    assert ok
