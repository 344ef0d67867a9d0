import numpy as np
import pytest
from scipy import stats

from pvsplit import EmptyShell, InvalidInput, InvalidTemperature
from pvsplit.dynamics import FlowParams
from pvsplit.ensembles import (CanonicalParams, EnsembleSample, FlowSpec, MicrocanonicalParams,
                               beta_upper_limit, integrated_autocorrelation, invariance_test,
                               ks_critical_value, pair_integrability_window, push_sample,
                               sample_canonical, sample_microcanonical)
from pvsplit.kernel import regularized_green
from pvsplit.observables import hamiltonian, min_pair_distance
from pvsplit.torus import Configuration

REG = "regularized(0.05)"
DIPOLE = Configuration([[0.1, 0.1], [0.6, 0.6]], [1, -1])


def test_beta_limit_raises():
    assert beta_upper_limit([1, -2]) == pytest.approx(4 * np.pi)
    with pytest.raises(InvalidTemperature):
        sample_canonical(DIPOLE, CanonicalParams(beta=4 * np.pi), 10)
    with pytest.raises(InvalidTemperature):
        CanonicalParams(beta=np.inf)


def test_integrability_window_and_warning():
    lo, hi = pair_integrability_window([1, -1, 1])
    assert (lo, hi) == pytest.approx((-2 * np.pi, 2 * np.pi))
    assert pair_integrability_window([1, 1])[1] == np.inf
    with pytest.warns(RuntimeWarning):
        sample_canonical(DIPOLE, CanonicalParams(beta=10.0, burn_in=0, thinning=1), 5)


def test_metropolis_log_is_detailed_balance_rule():
    s = sample_canonical(Configuration([[0.1, 0.1], [0.6, 0.6], [0.3, 0.8]], [1, -1, 1]),
                         CanonicalParams(beta=2.0, proposal_scale=0.2, burn_in=100, thinning=3, seed=5,
                                         kernel_mode=REG), 300)
    dh, u, acc = s.log["delta_h"], s.log["accept_u"], s.log["accepted"]
    with np.errstate(over="ignore"):
        expected = u < np.minimum(1.0, np.exp(-2.0 * dh))
    assert np.array_equal(acc, expected)
    assert s.n_accepted == acc.sum() and s.n_proposed == acc.size
    assert 0 < s.acceptance_rate < 1


def test_canonical_pair_distance_matches_quadrature():
    # for N = 2 the separation y has density proportional to exp(-beta H(y)) on the torus
    beta = 3.0
    s = sample_canonical(DIPOLE, CanonicalParams(beta=beta, proposal_scale=0.3, burn_in=1000, thinning=5,
                                                 seed=3, kernel_mode=REG), 20000)
    r = np.sort([min_pair_distance(c) for c in s.positions])
    n = 300
    u = (np.arange(n) + 0.5) / n - 0.5
    g = np.array([[regularized_green((a, b), 0.05) for b in u] for a in u])
    w = np.exp(2 * beta * g).ravel()
    w /= w.sum()
    rad = np.hypot(*np.meshgrid(u, u, indexing="ij")).ravel()
    order = np.argsort(rad)
    cdf = np.cumsum(w[order])
    ecdf = np.searchsorted(r, rad[order], side="right") / r.size
    assert np.max(np.abs(ecdf - cdf)) < 0.02
    # the attraction is clearly visible against the uniform law
    assert np.max(np.abs(ecdf - np.arange(1, n * n + 1) / (n * n))) > 0.1


def test_canonical_reproducible_and_diagnostics(tmp_path):
    p = CanonicalParams(beta=1.0, burn_in=50, thinning=2, seed=9, kernel_mode=REG)
    a = sample_canonical(DIPOLE, p, 50)
    b = sample_canonical(DIPOLE, p, 50)
    assert np.array_equal(a.positions, b.positions)
    assert set(a.autocorrelation) == {"min_pair_distance", "hamiltonian"}
    back = EnsembleSample.read_jsonl(a.write_jsonl(tmp_path / "s.jsonl"))
    assert np.array_equal(back.positions, a.positions) and back.n_accepted == a.n_accepted


def test_microcanonical_stays_in_shell_and_flow_keeps_it():
    xi = [1, -1, 1]
    tpl = Configuration([[0.1, 0.1], [0.4, 0.2], [0.7, 0.7]], xi)
    e = hamiltonian(tpl, REG)
    p = MicrocanonicalParams(energy=e, shell_width=0.05, burn_in=200, thinning=2, seed=1, kernel_mode=REG)
    s = sample_microcanonical(tpl, p, 40)
    h = np.array([hamiltonian(c, REG) for c in s.configurations()])
    assert np.all(np.abs(h - e) <= 0.05)
    flow = FlowSpec(m=2, t=0.5, seed=4, params=FlowParams(rel_tol=1e-8, abs_tol=1e-10, kernel_mode=REG))
    pushed = push_sample(s, flow)
    h2 = np.array([hamiltonian(Configuration(q, xi), REG) for q in pushed])
    assert np.max(np.abs(h2 - h)) < 1e-10


def test_microcanonical_searches_for_shell():
    tpl = Configuration([[0.1, 0.1], [0.6, 0.6]], [1, 1])
    p = MicrocanonicalParams(energy=0.3, shell_width=0.01, burn_in=10, seed=2)
    s = sample_microcanonical(tpl, p, 5)
    assert all(abs(hamiltonian(c) - 0.3) <= 0.01 for c in s.configurations())


def test_microcanonical_empty_shell():
    # a +- pair has H = -2 G <= -2 min G, about 0.11
    p = MicrocanonicalParams(energy=5.0, shell_width=0.01, search_budget=2000)
    with pytest.raises(EmptyShell):
        sample_microcanonical(DIPOLE, p, 5)
    with pytest.raises(InvalidInput):
        MicrocanonicalParams(energy=0.0)


def test_wide_shell_is_uniform():
    tpl = Configuration([[0.1, 0.1], [0.6, 0.6]], [1, -1])
    p = MicrocanonicalParams(energy=0.0, shell_width=1e6, proposal_scale=0.5, burn_in=100, thinning=5,
                             seed=3, kernel_mode=REG)
    s = sample_microcanonical(tpl, p, 4000)
    assert stats.kstest(s.positions[:, 0, 0], "uniform").pvalue > 0.001


def test_autocorrelation_of_ar1():
    rng = np.random.default_rng(0)
    rho, n = 0.8, 200_000
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0]
    for k in range(1, n):
        x[k] = rho * x[k - 1] + e[k]
    assert integrated_autocorrelation(x) == pytest.approx((1 + rho) / (1 - rho), rel=0.05)
    assert integrated_autocorrelation(rng.standard_normal(50_000)) == pytest.approx(1.0, abs=0.1)


def test_ks_critical_value_matches_kolmogorov_quantile():
    for n, m in ((2000, 2000), (500, 800)):
        ref = stats.kstwobign.ppf(0.99) * np.sqrt((n + m) / (n * m))
        assert ks_critical_value(n, m) == pytest.approx(ref, rel=1e-3)


def test_identity_flow_has_zero_ks_and_small_samples_rejected():
    s = sample_canonical(DIPOLE, CanonicalParams(beta=0.0, proposal_scale=0.5, burn_in=0, thinning=20, seed=1),
                         600)
    rep = invariance_test(s, FlowSpec(kind="identity"))
    assert rep.passed and all(r.ks_distance == 0.0 for r in rep.results)
    assert rep["min_pair_distance"].critical_value == pytest.approx(ks_critical_value(600, 600))
    with pytest.raises(InvalidInput):
        invariance_test(s, FlowSpec(kind="identity"), min_size=1000)
    with pytest.raises(InvalidInput):
        FlowSpec(kind="warp")


def test_correlated_sample_warns():
    s = sample_canonical(DIPOLE, CanonicalParams(beta=0.0, proposal_scale=0.02, burn_in=0, thinning=1, seed=1),
                         600)
    with pytest.warns(RuntimeWarning, match="autocorrelation"):
        rep = invariance_test(s, FlowSpec(kind="identity"), ["min_pair_distance"])
    assert rep["min_pair_distance"].autocorrelation > 2.0
