import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special, stats

from spikeslab.diagnostics import (OmegaEvent, binomial_tail_exact, chi2_norm_bounds,
                                   chi2_tail_bound, evidence_ratio_check, omega_event_frequency,
                                   pelekis_bound, phi_statistics, posterior_ratio_bound,
                                   selection_rate)
from spikeslab.eigen import united_lambda
from spikeslab.model_core import (ModelIndex, ProblemInstance, RegularityConstants, epsilon_n,
                                  generate_design, generate_instance, projection_matrix)
from spikeslab.priors import ModelSelectionPrior, PriorSpec, SlabDist, SpikeDist, VariancePrior

mpmath.mp.dps = 40


def chi2_sf_mp(t, d):
    return float(mpmath.gammainc(mpmath.mpf(d) / 2, mpmath.mpf(t) / 2, mpmath.inf, regularized=True))


# --- chi-square -----------------------------------------------------------------

def test_chi2_tail_reference_values():
    c = chi2_tail_bound(1, 4.0)
    assert c.bound_value == pytest.approx(math.exp(-(math.sqrt(7) - 1) ** 2 / 4), rel=1e-14)
    assert c.bound_value == pytest.approx(0.5081, abs=5e-5)
    assert c.exact_or_mc_value == pytest.approx(math.erfc(math.sqrt(2.0)), rel=1e-12)
    assert c.exact_or_mc_value == pytest.approx(0.04550, abs=5e-6)
    assert c.holds and c.context == {"d": 1, "t": 4.0}


def test_chi2_tail_near_precondition_edge():
    c = chi2_tail_bound(1, 0.5 + 1e-12)
    assert c.bound_value == pytest.approx(math.exp(-0.25), abs=1e-5)
    assert c.exact_or_mc_value == pytest.approx(math.erfc(0.5), abs=1e-9)
    assert c.holds
    for d in (1, 4, 7):
        with pytest.raises(ValueError):
            chi2_tail_bound(d, d / 2)
    with pytest.raises(ValueError):
        chi2_tail_bound(0, 3.0)


@given(st.integers(1, 300), st.floats(1.0, 8.0))
def test_chi2_tail_bound_holds_once_t_reaches_d(d, ratio):
    c = chi2_tail_bound(d, d * ratio)
    assert c.exact_or_mc_value == pytest.approx(chi2_sf_mp(d * ratio, d), rel=1e-8, abs=1e-300)
    assert c.holds


def test_chi2_tail_bound_fails_between_half_d_and_d():
    # exp(-(sqrt(2t-d)-sqrt(d))^2/4) is below the true tail here
    c = chi2_tail_bound(30, 20.0)
    assert c.exact_or_mc_value == pytest.approx(chi2_sf_mp(20.0, 30), rel=1e-10)
    assert c.exact_or_mc_value > c.bound_value and not c.holds


def test_chi2_norm_reference_values():
    up, lo = chi2_norm_bounds(100, 0, 0.5)
    assert up.bound_value == pytest.approx(math.exp(-3.125), rel=1e-14)
    assert up.bound_value == pytest.approx(0.04394, abs=5e-6)
    assert up.exact_or_mc_value == pytest.approx(chi2_sf_mp(150, 100), rel=1e-10)
    assert up.exact_or_mc_value == pytest.approx(0.000904, abs=5e-6)
    assert up.holds and lo.holds
    up, lo = chi2_norm_bounds(200, 10, 0.3)
    assert up.exact_or_mc_value == pytest.approx(chi2_sf_mp(260, 190), rel=1e-10)
    assert lo.exact_or_mc_value == pytest.approx(1 - chi2_sf_mp(140, 190), rel=1e-8)
    assert up.holds and lo.holds


def test_chi2_norm_vacuous_deviation():
    prev = 0.0
    for eps in (1e-1, 1e-2, 1e-3, 1e-5):
        up, lo = chi2_norm_bounds(100, 0, eps)
        assert up.bound_value < 1 and lo.bound_value < 1
        assert up.bound_value == lo.bound_value > prev
        prev = up.bound_value
    assert prev > 0.9999


def test_chi2_norm_preconditions():
    with pytest.raises(ValueError):
        chi2_norm_bounds(100, 10, 0.1)
    with pytest.raises(ValueError):
        chi2_norm_bounds(100, 100, 2.0)


def test_chi2_norm_bounds_on_random_parameters():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(2, 3000))
        d = int(rng.integers(0, n))
        eps = float(rng.uniform(d / n, 3.0))
        if not n * eps > d:
            continue
        up, lo = chi2_norm_bounds(n, d, eps)
        assert up.holds and lo.holds, (n, d, eps)


# --- binomial ---------------------------------------------------------------------

def test_pelekis_counterexample():
    c = pelekis_bound(10, 0.1, 2)
    assert c.context["t_tilde"] == 1
    assert c.bound_value == pytest.approx(0.1 ** 4 / 2 * 45, rel=1e-14)
    assert c.bound_value == pytest.approx(0.00225, rel=1e-12)
    exact = 1 - Fraction(9, 10) ** 10 - 10 * Fraction(1, 10) * Fraction(9, 10) ** 9
    assert c.exact_or_mc_value == pytest.approx(float(exact), rel=1e-12)
    assert c.exact_or_mc_value == pytest.approx(0.263901, abs=5e-7)
    assert not c.holds


def test_pelekis_far_tail_and_small_mu():
    c = pelekis_bound(20, 0.01, 19)
    assert c.bound_value < 1e-30 and c.exact_or_mc_value < 1e-30
    assert c.exact_or_mc_value == pytest.approx(float(binomial_tail_exact(20, Fraction(1, 100), 18)),
                                                rel=1e-10)
    vals = [pelekis_bound(10, mu, 3) for mu in (1e-2, 1e-4, 1e-6)]
    assert all(b.bound_value < a.bound_value and b.exact_or_mc_value < a.exact_or_mc_value
               for a, b in zip(vals, vals[1:]))
    assert vals[-1].exact_or_mc_value < 1e-15
    with pytest.raises(ValueError):
        pelekis_bound(10, 0.5, 3)
    with pytest.raises(ValueError):
        pelekis_bound(10, 0.1, 10)


@given(st.integers(1, 40), st.fractions(0, 1), st.data())
def test_binomial_tail_exact_matches_scipy(p, q, data):
    t = data.draw(st.integers(-1, p))
    got = binomial_tail_exact(p, q, t)
    assert isinstance(got, Fraction) and 0 <= got <= 1
    assert float(got) == pytest.approx(stats.binom.sf(t, p, float(q)), rel=1e-9, abs=1e-15)


# --- selection rate and ratio bound ------------------------------------------------

def _prior(p, sel=None, slab=1.0):
    return PriorSpec(VariancePrior(), sel or ModelSelectionPrior.bernoulli(p), SpikeDist("dirac"),
                     SlabDist("gaussian", slab))


def test_bernoulli_size_factor():
    rep = selection_rate(_prior(100), 400, 100, 1, 1.0, 0.1, 1.0)
    q = Fraction(1, 100)
    oracle = math.comb(100, 2) * q ** 2 * (1 - q) ** 98 / (q * (1 - q) ** 99)
    assert oracle == 50
    assert rep.size_factors[0] == pytest.approx(50.0, rel=1e-12)
    per = selection_rate(_prior(100), 400, 100, 1, 1.0, 0.1, 1.0, per_model=True)
    assert per.size_factors[0] == pytest.approx(1 / 99, rel=1e-12)
    assert per.per_model and not rep.per_model


def test_gaussian_slab_factor():
    tau, n, p, lam, eta = 1.7, 300, 50, 0.4, 0.2
    rep = selection_rate(_prior(p, slab=tau), n, p, 2, lam, eta, 2.0)
    expect = p ** (1 + eta) / (math.sqrt(2 * math.pi) * tau * math.sqrt(n * lam))
    assert rep.slab_factor == pytest.approx(expect, rel=1e-12)
    assert len(rep.size_factors) == 4


@given(st.integers(5, 400), st.integers(1, 4), st.floats(0.01, 10), st.floats(0.01, 1),
       st.floats(0.5, 3), st.sampled_from(["bernoulli", "csv"]))
def test_selection_rate_recomposes(p, s, lam, eta, K, kind):
    sel = ModelSelectionPrior.bernoulli(p) if kind == "bernoulli" else ModelSelectionPrior.csv_power(p, 1.0)
    rep = selection_rate(_prior(p, sel), 200, p, s, lam, eta, K)
    if rep.size_factors:
        assert rep.recompose() == pytest.approx(rep.r_n, rel=1e-12)
        assert rep.below_one == (rep.r_n < 1)
    # the slab factor alone shrinks as lambda grows
    big = selection_rate(_prior(p, sel), 200, p, s, lam * 1e8, eta, K)
    assert big.r_n == pytest.approx(rep.r_n * 1e-4, rel=1e-9)


def test_selection_rate_vanishes_with_lambda():
    vals = [selection_rate(_prior(50), 100, 50, 2, lam, 0.1, 2.0).r_n for lam in (1, 1e4, 1e8, 1e16)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] == pytest.approx(vals[0] * 1e-8, rel=1e-9)
    with pytest.raises(ValueError):
        selection_rate(_prior(50), 100, 50, 2, 0.0, 0.1, 2.0)


def test_posterior_ratio_bound_values():
    sup = 1 / math.sqrt(2 * math.pi)
    assert posterior_ratio_bound(0, 400, 100, 1.0, 0.1, sup) == 2.0
    one = posterior_ratio_bound(1, 400, 100, 1.0, 0.1, sup)
    assert one == pytest.approx(2 * math.sqrt(2 * math.pi / 400) * sup * 100 ** 1.1, rel=1e-14)
    assert one == pytest.approx(15.85, abs=5e-3)
    # doubling p^(1+eta) doubles the single-column bound
    p2 = 100 * 2 ** (1 / 1.1)
    assert posterior_ratio_bound(1, 400, p2, 1.0, 0.1, sup) == pytest.approx(2 * one, rel=1e-12)
    assert posterior_ratio_bound(3, 400, 100, 1.0, 0.1, sup) == pytest.approx(2 * (one / 2) ** 3)
    with pytest.raises(ValueError):
        posterior_ratio_bound(1, 400, 100, 0.0, 0.1, sup)
    with pytest.raises(ValueError):
        posterior_ratio_bound(-1, 400, 100, 1.0, 0.1, sup)


# --- test statistics ------------------------------------------------------------------

def test_phi1_on_noiseless_data():
    rng = np.random.default_rng(0)
    X = generate_design(400, 8, "iid-gaussian", rng)
    beta = np.zeros(8)
    beta[[1, 4]] = [1.0, -2.0]
    inst = ProblemInstance(X=X, Y=X @ beta, beta_star=beta, sigma_star=1.0)
    phi = phi_statistics(inst, RegularityConstants(), 0.0, 0.5)
    assert phi.stat1 == pytest.approx(1.0, abs=1e-12)
    assert phi.phi1 and phi.threshold1 < 1
    assert phi.stat2 == pytest.approx(0.0, abs=1e-10) and not phi.phi2


def test_phi3_null_frequency_matches_chi_square():
    n, p, draws = 100, 10, 1000
    consts = RegularityConstants(K=0.5, M3=0.5)
    X = generate_design(n, p, "iid-gaussian", np.random.default_rng(1))
    star = ModelIndex.of([0], p)
    eps = epsilon_n(n, p, 1)
    prob = float(stats.chi2.cdf(consts.M3 ** 2 * n * eps ** 2 / 4, 1))
    rng = np.random.default_rng(2)
    hits = 0
    for _ in range(draws):
        e = rng.standard_normal(n)
        Y = e - e.mean()
        inst = ProblemInstance(X=X, Y=Y, beta_star=np.zeros(p), sigma_star=1.0)
        hits += phi_statistics(inst, consts, 0.0, 1.0, xi_star=star).phi3
    se = math.sqrt(prob * (1 - prob) / draws)
    assert abs(hits / draws - prob) <= 3 * se


def test_phi3_rejects_nothing_under_strong_orthogonal_signal():
    n, p, s = 100, 10, 2
    consts = RegularityConstants()
    signal = 3 * consts.M3 * epsilon_n(n, p, s)
    zeros = 0
    for seed in range(100):
        inst = generate_instance(n, p, s, signal, 1.0, "orthogonal", seed)
        zeros += not phi_statistics(inst, consts, 0.0, 1.0).phi3
    assert zeros >= 99


def test_phi_statistics_are_deterministic():
    inst = generate_instance(50, 9, 2, 0.5, 1.0, "iid-gaussian", 3)
    consts = RegularityConstants()
    a = phi_statistics(inst, consts, 0.1, 0.3)
    b = phi_statistics(inst, consts, 0.1, 0.3)
    assert a == b
    assert a.witness1.issuperset(inst.xi_star) and a.witness2.issuperset(inst.xi_star)
    assert a.witness3 is not None and not a.witness3.issuperset(inst.xi_star)


# --- noise event -------------------------------------------------------------------

def test_omega_without_supersets_is_the_norm_event():
    X = generate_design(30, 6, "iid-gaussian", np.random.default_rng(0))
    rep = omega_event_frequency(X, ModelIndex.of([2], 6), 0.5, 0.5, 5000, 1)
    assert rep.supersets == 0 and rep.omega1_frequency == 0
    assert rep.frequency == rep.omega2_frequency < 1e-3
    assert rep.union_bound == pytest.approx(stats.chi2.sf(120, 30), rel=1e-12)


def test_omega_frequency_within_union_bound():
    X = generate_design(100, 12, "iid-gaussian", np.random.default_rng(3))
    rep = omega_event_frequency(X, ModelIndex.of([0], 12), 2.0, 0.5, 10_000, 4)
    logp = math.log(12)
    ub = sum(12 ** j * stats.chi2.sf((2 + 0.5) * j * logp, j) for j in (1, 2)) + stats.chi2.sf(400, 100)
    assert rep.union_bound == pytest.approx(ub, rel=1e-12)
    assert rep.supersets == 11 + 55
    assert rep.frequency <= rep.union_bound + 3 * rep.standard_error


def test_omega_large_eta_leaves_only_the_norm_event():
    X = generate_design(40, 8, "iid-gaussian", np.random.default_rng(5))
    rep = omega_event_frequency(X, ModelIndex.of([1], 8), 2.0, 1e6, 2000, 6)
    assert rep.omega1_frequency == 0 and rep.frequency == rep.omega2_frequency


def test_omega_indicator_against_projection_matrices():
    n, p = 40, 7
    X = generate_design(n, p, "iid-gaussian", np.random.default_rng(8))
    star = ModelIndex.of([0, 3], p)
    ev = OmegaEvent(X, star, 1.0, 0.3)
    rng = np.random.default_rng(9)
    P0 = projection_matrix(X, star)
    for _ in range(50):
        e = rng.standard_normal(n) * rng.uniform(0.5, 2.5)
        hit = False
        for extra in [(j,) for j in range(p) if j not in (0, 3)] + \
                     [(i, j) for i in range(p) for j in range(i + 1, p) if {i, j}.isdisjoint({0, 3})]:
            xi = star.union(ModelIndex.of(extra, p))
            v = (projection_matrix(X, xi) - P0) @ e
            hit |= float(v @ v) >= (2.3) * len(extra) * math.log(p)
        o1, o2 = ev.indicators(e)
        assert bool(o1[0]) == hit
        assert bool(o2[0]) == (float(e @ e) >= 4 * n)


def test_evidence_ratio_check_context():
    inst = generate_instance(100, 12, 1, 1.0, 1.0, "iid-gaussian", 4, support=[0])
    consts = RegularityConstants()
    lam = united_lambda(inst.X, inst.xi_star, consts.united_order(1))[0]
    pr = _prior(12)
    gamma = ModelIndex.of([0, 5], 12)
    c = evidence_ratio_check(inst, pr, gamma, consts, lam, draws=500)
    assert c.name == "evidence_ratio" and c.context["t_minus_s"] == 1
    assert c.bound_value == pytest.approx(
        posterior_ratio_bound(1, 100, 12, lam, consts.eta, 1 / math.sqrt(2 * math.pi)))
    ev = OmegaEvent(inst.X, inst.xi_star, consts.K, consts.eta)
    assert c.context["omega_complement"] == (not ev(inst.noise))
    assert c.row()["inputs"].startswith("gamma={1,6};t_minus_s=1;lambda=")
    with pytest.raises(ValueError):
        evidence_ratio_check(inst, pr, ModelIndex.of([0], 12), consts, lam)
    with pytest.raises(ValueError):
        evidence_ratio_check(inst, pr, ModelIndex.of([3, 5], 12), consts, lam)
