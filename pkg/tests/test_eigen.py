import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikeslab.eigen import (_svd_eigs, eigen_report, mnev, mnev_premise, mrev, msev, muev,
                             muev_search, schur_bound_check, united_lambda)
from spikeslab.model_core import (EnumerationBudgetError, ModelIndex, design_from_gram,
                                  generate_design, standardize_columns)


def brute(X, t, star=(), kind="muev"):
    """Independent oracle: loop over every subset and use numpy.linalg.eigvalsh."""
    n, p = X.shape
    star = tuple(star)
    best = math.inf
    pool = [j for j in range(p) if j not in star] if kind == "muev" else list(range(p))
    kmax = t - len(star) if kind == "muev" else t
    for k in range(0, kmax + 1):
        for D in itertools.combinations(pool, k):
            cols = sorted(star + D) if kind == "muev" else list(D)
            if not cols:
                continue
            if kind == "muev" and D and np.linalg.matrix_rank(X[:, list(D)]) < len(D):
                continue
            ev = np.linalg.eigvalsh(X[:, cols].T @ X[:, cols] / n)
            if kind == "mnev":
                nz = ev[ev > 1e-9 * max(ev[-1], 1)]
                v = nz[0] if nz.size else math.inf
            else:
                v = max(ev[0], 0.0) if np.linalg.matrix_rank(X[:, cols]) == len(cols) else 0.0
            best = min(best, v)
    return best


def exact_equicorrelated(n, p, rho, seed=0):
    gram = (1 - rho) * np.eye(p) + rho * np.ones((p, p))
    return design_from_gram(n, gram, np.random.default_rng(seed))


# --- closed-form cases -------------------------------------------------------

def test_orthogonal_design_all_one():
    X = generate_design(40, 8, "orthogonal", np.random.default_rng(0))
    star = ModelIndex.of([2], 8)
    for t in (1, 3, 5):
        assert muev(X, star, max(t, 1)).value == pytest.approx(1.0, abs=1e-12)
        assert msev(X, t).value == pytest.approx(1.0, abs=1e-12)
        assert mnev(X, t).value == pytest.approx(1.0, abs=1e-12)
        assert mrev(X, t, 1.0, "randomized", restarts=5).value == pytest.approx(1.0, abs=1e-9)
    assert mnev_premise(X, star, 4)


def test_duplicate_column_design():
    X = generate_design(40, 12, "duplicate-column-demo", np.random.default_rng(1))
    star = ModelIndex.of([0], 12)
    v, w = muev(X, star, 2)
    assert v == 0.0 and w == ModelIndex.of([1], 12) and str(w) == "{2}"
    assert msev(X, 2).value == 0.0
    assert not mnev_premise(X, star, 2)
    lam_min, lam_nz, full = _svd_eigs(X, [0, 1])
    assert (lam_min, full) == (0.0, False)
    assert lam_nz == pytest.approx(2.0, rel=1e-12)


def test_duplicate_pair_nonzero_eigenvalue():
    x = standardize_columns(np.random.default_rng(2).standard_normal((30, 1)))
    X = np.hstack([x, x])
    assert mnev(X, 2).value == pytest.approx(1.0)       # singletons
    assert mnev(X, 2).witness.members == (0,)
    assert msev(X, 2).value == 0.0


def test_equicorrelated_muev_and_mnev():
    X = exact_equicorrelated(60, 8, 0.5)
    assert muev(X, ModelIndex.of([0], 8), 3).value == pytest.approx(0.5, abs=1e-12)
    X9 = exact_equicorrelated(60, 6, 0.9)
    assert mnev(X9, 2).value == pytest.approx(0.1, abs=1e-12)
    # explicit feasible point (1, -1)/sqrt(2) on a 2-column design
    X2 = exact_equicorrelated(50, 2, 0.5)
    assert mrev(X2, 1, 1.0, "dense-grid").value <= 0.5 + 1e-6
    assert mrev(X2, 1, 1.0, "randomized", restarts=20).value <= 0.5 + 1e-6


def test_single_column_sparse_eigenvalue_is_one():
    X = standardize_columns(np.random.default_rng(3).standard_normal((25, 7)))
    assert msev(X, 1).value == pytest.approx(1.0, abs=1e-12)


def test_empty_truth_premise_is_vacuous():
    X = generate_design(20, 5, "duplicate-column-demo", np.random.default_rng(0))
    assert mnev_premise(X, ModelIndex.empty(5), 3)


# --- oracle comparisons and ordering ------------------------------------------

@given(st.integers(0, 2**31 - 1), st.integers(3, 8), st.data())
def test_functionals_match_brute_force(seed, p, data):
    r = np.random.default_rng(seed)
    design = data.draw(st.sampled_from(["iid-gaussian", "equicorrelated(0.6)", "duplicate-column-demo"]))
    X = generate_design(max(p + 2, 12), p, design, r)
    s = data.draw(st.integers(1, 2))
    star = tuple(sorted(r.choice([j for j in range(p) if not (design == "duplicate-column-demo" and j == 1)],
                                 size=s, replace=False).tolist()))
    t = data.draw(st.integers(s, min(p, s + 3)))
    assert muev(X, ModelIndex(star, p), t).value == pytest.approx(brute(X, t, star, "muev"), abs=1e-9)
    assert msev(X, t).value == pytest.approx(brute(X, t, kind="msev"), abs=1e-9)
    assert mnev(X, t).value == pytest.approx(brute(X, t, kind="mnev"), abs=1e-9)


@given(st.integers(0, 2**31 - 1), st.data())
def test_ordering_and_monotonicity(seed, data):
    r = np.random.default_rng(seed)
    p = 9
    X = standardize_columns(r.standard_normal((14, p)))
    star = ModelIndex.of(r.choice(p, size=2, replace=False), p)
    t = data.draw(st.integers(3, 6))
    mu, ms, mn = muev(X, star, t).value, msev(X, t).value, mnev(X, t).value
    assert mu >= ms - 1e-9
    if mnev_premise(X, star, t):
        assert mu >= mn - 1e-9
    assert muev(X, star, t + 1).value <= mu + 1e-12
    assert msev(X, t + 1).value <= ms + 1e-12
    assert mnev(X, t + 1).value <= mn + 1e-12
    assert min(mu, ms, mn) >= 0


def test_mrev_dense_grid_below_msev_plus_slack():
    for seed in range(4):
        X = standardize_columns(np.random.default_rng(seed).standard_normal((20, 5)))
        for t in (1, 2, 3):
            est = mrev(X, t, 1.0, "dense-grid")
            assert msev(X, t).value >= est.value - est.grid_slack
            assert est.resolution_deg >= 2.0 and est.grid_slack > 0


def test_mrev_whole_space_when_t_reaches_p():
    X = standardize_columns(np.random.default_rng(5).standard_normal((20, 4)))
    est = mrev(X, 4, 1.0, "dense-grid")
    assert est.value == pytest.approx(np.linalg.eigvalsh(X.T @ X / 20)[0], abs=1e-12)


def test_mrev_argument_checks():
    X = standardize_columns(np.random.default_rng(5).standard_normal((20, 8)))
    with pytest.raises(ValueError):
        mrev(X, 2, 0.5)
    with pytest.raises(ValueError):
        mrev(X, 2, 1.0, "dense-grid")
    with pytest.raises(ValueError):
        mrev(X, 2, 1.0, "annealing")


# --- search, budget, workers ------------------------------------------------

def test_search_is_an_upper_bound_and_finds_exact_on_small_designs():
    for seed in range(5):
        X = standardize_columns(np.random.default_rng(seed).standard_normal((30, 14)))
        star = ModelIndex.of([0, 5], 14)
        exact = muev(X, star, 5).value
        found = muev_search(X, star, 5, restarts=8, seed=seed).value
        assert found >= exact - 1e-12
        assert found == pytest.approx(exact, rel=1e-6)


def test_united_lambda_switches_to_search():
    X = standardize_columns(np.random.default_rng(0).standard_normal((30, 40)))
    star = ModelIndex.of([1], 40)
    v, _, how = united_lambda(X, star, 4, budget=100)
    assert how == "search" and v > 0
    v2, _, how2 = united_lambda(X, star, 3)
    assert how2 == "exact"


def test_budget_error():
    X = standardize_columns(np.random.default_rng(0).standard_normal((30, 20)))
    with pytest.raises(EnumerationBudgetError):
        msev(X, 6, budget=1000)
    with pytest.raises(EnumerationBudgetError):
        muev(X, ModelIndex.of([0], 20), 6, budget=1000)


def test_worker_count_does_not_change_results():
    X = standardize_columns(np.random.default_rng(9).standard_normal((25, 10)))
    star = ModelIndex.of([3], 10)
    assert muev(X, star, 4, workers=2) == muev(X, star, 4, workers=1)
    assert mnev(X, 3, workers=2) == mnev(X, 3, workers=1)


def test_eigen_report_ordering_flag():
    X = standardize_columns(np.random.default_rng(4).standard_normal((40, 6)))
    rep = eigen_report(X, ModelIndex.of([1], 6), 3, K=2.0)
    assert rep.ordering_holds and rep.mrev_method == "dense-grid"
    assert rep.lam == pytest.approx(muev(X, ModelIndex.of([1], 6), 3).value)


# --- Schur complement ---------------------------------------------------------

def test_schur_identity_and_block_diagonal():
    lhs, rhs, ok = schur_bound_check(np.eye(5), [0, 2])
    assert (lhs, rhs, ok) == (pytest.approx(1.0), pytest.approx(1.0), True)
    A = np.diag([3.0, 2.0])
    B = np.array([[0.5, 0.1], [0.1, 0.7]])
    S = np.block([[A, np.zeros((2, 2))], [np.zeros((2, 2)), B]])
    lhs, rhs, ok = schur_bound_check(S, [0, 1])
    assert lhs == pytest.approx(np.linalg.eigvalsh(B)[0], abs=1e-12) and ok


@given(st.integers(0, 2**31 - 1), st.integers(2, 8), st.data())
def test_schur_bound_on_wishart_draws(seed, m, data):
    r = np.random.default_rng(seed)
    Z = r.standard_normal((m + r.integers(0, 5), m))
    S = Z.T @ Z
    q = data.draw(st.integers(1, m - 1))
    block = r.choice(m, size=q, replace=False)
    try:
        lhs, rhs, ok = schur_bound_check(S, block)
    except ValueError:
        return  # ill-conditioned leading block
    assert ok


def test_schur_errors():
    S = np.ones((3, 3))
    with pytest.raises(ValueError):
        schur_bound_check(S, [0, 1])
    with pytest.raises(ValueError):
        schur_bound_check(np.eye(3), [0, 1, 2])
