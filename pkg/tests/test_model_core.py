import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikeslab.model_core import (EnumerationBudgetError, ModelIndex, ProblemInstance,
                                  RankDeficientError, RegularityConstants, epsilon_n,
                                  generate_design, generate_instance, is_full_rank,
                                  load_instance, project_onto_model, projection_matrix,
                                  read_matrix_csv, save_instance, standardize_columns,
                                  write_matrix_csv)


# --- ModelIndex -------------------------------------------------------------

def test_model_index_text_is_one_based():
    xi = ModelIndex.parse("1,3,7", 10)
    assert xi.members == (0, 2, 6)
    assert str(xi) == "{1,3,7}"
    assert ModelIndex.parse("{1,3,7}", 10) == xi
    assert ModelIndex.parse("", 10) == ModelIndex.empty(10)


@pytest.mark.parametrize("members", [(2, 1), (1, 1), (-1,), (10,)])
def test_model_index_rejects_bad_members(members):
    with pytest.raises(ValueError):
        ModelIndex(members, 10)


def test_model_index_rejects_duplicates_in_of():
    with pytest.raises(ValueError):
        ModelIndex.of([3, 3], 5)


sets = st.sets(st.integers(0, 11), max_size=12)


@given(sets, sets)
def test_set_operations_match_python_sets(a, b):
    A, B = ModelIndex.of(a, 12), ModelIndex.of(b, 12)
    assert set(A.union(B)) == a | b
    assert set(A.intersection(B)) == a & b
    assert set(A.difference(B)) == a - b
    assert set(A.complement()) == set(range(12)) - a
    assert len(A) == len(a)
    assert A.issubset(B) == (a <= b)
    assert A.issuperset(B) == (a >= b)
    assert ModelIndex.from_mask(A.mask, 12) == A
    assert ModelIndex.parse(str(A), 12) == A


def test_models_over_different_p_do_not_mix():
    with pytest.raises(ValueError):
        ModelIndex.of([1], 5).union(ModelIndex.of([1], 6))


# --- RegularityConstants ----------------------------------------------------

def test_constants_validate_positive():
    with pytest.raises(ValueError):
        RegularityConstants(K=0)
    with pytest.raises(ValueError):
        RegularityConstants(M1=-1)


def test_constant_premises():
    c = RegularityConstants(A1=1.0, A2=2.0, A3=0.5, K=2.0, M1=6.0, M2=5.0, M3=2.9)
    pr = c.premises()
    assert pr["A1+A3+1<A2K"]               # 2.5 < 4
    assert pr["M1>sqrt(8max(A2,1)K)"]      # 6 > sqrt(32)
    assert not pr["M2>sqrt(8max(A2,1)K)"]  # 5 < sqrt(32)
    assert pr["M3>sqrt(8A3K)"]             # 2.9 > sqrt(8)
    assert c.overfit_cap(3) == 6
    assert c.united_order(3) == 9
    assert RegularityConstants(K=0.5).overfit_cap(1) == 0


# --- epsilon_n --------------------------------------------------------------

@pytest.mark.parametrize("n,p,s", [(100, 100, 1), (400, 400, 4), (57, 13, 2)])
def test_epsilon_n_against_high_precision(n, p, s):
    mpmath.mp.dps = 40
    ref = float(mpmath.sqrt(s * mpmath.log(p) / n))
    assert epsilon_n(n, p, s) == pytest.approx(ref, rel=1e-14)


def test_epsilon_n_frozen_values():
    assert epsilon_n(100, 100, 1) == pytest.approx(0.21460, abs=5e-6)
    assert epsilon_n(400, 400, 4) == pytest.approx(0.24477, abs=5e-6)


@given(st.integers(2, 10_000), st.integers(2, 10_000), st.integers(1, 50))
def test_epsilon_n_halving_identity(n, p, s):
    assert epsilon_n(2 * n, p, s) * math.sqrt(2) == pytest.approx(epsilon_n(n, p, s), rel=1e-13)


@pytest.mark.parametrize("args", [(1, 10, 1), (10, 1, 1), (10, 10, 0)])
def test_epsilon_n_preconditions(args):
    with pytest.raises(ValueError):
        epsilon_n(*args)


# --- projections and rank ---------------------------------------------------

def test_empty_projection_is_zero(rng):
    X = standardize_columns(rng.standard_normal((10, 4)))
    v = rng.standard_normal(10)
    assert np.array_equal(project_onto_model(X, ModelIndex.empty(4), v), np.zeros(10))


def test_projection_fixed_point_and_pythagoras(rng):
    X = standardize_columns(rng.standard_normal((10, 5)))
    xi = ModelIndex.of([0, 2, 4], 5)
    w = X[:, [0, 2, 4]] @ rng.standard_normal(3)
    assert np.allclose(project_onto_model(X, xi, w), w, atol=1e-9)
    v = rng.standard_normal(10)
    # dense oracle: normal equations
    A = X[:, [0, 2, 4]]
    Pv = A @ np.linalg.solve(A.T @ A, A.T @ v)
    got = project_onto_model(X, xi, v)
    assert np.allclose(got, Pv, atol=1e-10)
    assert got @ got + (v - got) @ (v - got) == pytest.approx(v @ v, abs=1e-9)


def test_projection_matrix_is_symmetric_idempotent(rng):
    X = standardize_columns(rng.standard_normal((12, 6)))
    P = projection_matrix(X, ModelIndex.of([1, 3], 6))
    assert np.allclose(P, P.T, atol=1e-12)
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.trace(P) == pytest.approx(2.0)


def test_rank_deficient_projection_reports_rank(rng):
    X = generate_design(20, 4, "duplicate-column-demo", rng)
    with pytest.raises(RankDeficientError) as info:
        project_onto_model(X, ModelIndex.of([0, 1], 4), rng.standard_normal(20))
    assert info.value.rank == 1


def test_full_rank_checks(rng):
    X = generate_design(20, 4, "duplicate-column-demo", rng)
    assert is_full_rank(X, ModelIndex.empty(4)) == (True, 0)
    assert is_full_rank(X, ModelIndex.of([0, 1], 4)) == (False, 1)
    assert is_full_rank(X, ModelIndex.of([0, 2, 3], 4)) == (True, 3)
    wide = standardize_columns(rng.standard_normal((3, 6)))
    assert is_full_rank(wide, ModelIndex.of(range(5), 6))[0] is False


@given(st.integers(0, 2**31 - 1), st.sets(st.integers(0, 7), max_size=6), st.data())
def test_projection_properties(seed, a, data):
    r = np.random.default_rng(seed)
    X = standardize_columns(r.standard_normal((15, 8)))
    v = r.standard_normal(15)
    sub = data.draw(st.sets(st.sampled_from(sorted(a)), max_size=len(a)) if a else st.just(set()))
    big, small = ModelIndex.of(a, 8), ModelIndex.of(sub, 8)
    Pv = project_onto_model(X, big, v)
    assert np.linalg.norm(project_onto_model(X, big, Pv) - Pv) <= 1e-8 * np.linalg.norm(v)
    assert (np.linalg.norm(project_onto_model(X, small, v))
            <= np.linalg.norm(Pv) + 1e-8 * np.linalg.norm(v))


# --- instance generation ----------------------------------------------------

@given(st.integers(0, 2**31 - 1), st.integers(3, 40), st.integers(1, 12), st.data(),
       st.sampled_from(["iid-gaussian", "equicorrelated(0.3)", "equicorrelated(-0.05)",
                        "orthogonal", "duplicate-column-demo"]))
def test_generated_instances_satisfy_invariants(seed, n, p, data, design):
    if design == "orthogonal":
        p = min(p, n - 1)
    if design == "duplicate-column-demo":
        p = max(p, 2)
    if design == "equicorrelated(-0.05)":
        p = min(p, 20)
    s = data.draw(st.integers(0, min(p - (design == "duplicate-column-demo"), n - 1, 3)))
    inst = generate_instance(n, p, s, 1.5, 0.7, design, seed)
    norms = np.linalg.norm(inst.X, axis=0)
    assert np.all(np.abs(norms - math.sqrt(n)) <= 1e-9 * math.sqrt(n))
    assert set(inst.xi_star) == set(np.flatnonzero(inst.beta_star))
    assert is_full_rank(inst.X, inst.xi_star)[0]
    assert abs(inst.Y.mean()) < 1e-10
    assert np.allclose(np.abs(inst.beta_star[list(inst.xi_star)]), 1.5)


def test_null_instance_response_moments():
    inst = generate_instance(20_000, 10, 0, 1.0, 1.0, "iid-gaussian", 3)
    assert abs(inst.Y.mean()) < 1e-12
    assert inst.Y.var() == pytest.approx(1.0, abs=0.03)


@pytest.mark.parametrize("kwargs", [dict(s=11), dict(sigma_star=0.0), dict(design="equicorrelated(1.0)"),
                                    dict(design="equicorrelated(-0.2)")])
def test_generate_instance_errors(kwargs):
    args = dict(n=30, p=10, s=2, signal=1.0, sigma_star=1.0, design="iid-gaussian", seed=0)
    args.update(kwargs)
    with pytest.raises(ValueError):
        generate_instance(**args)


def test_equicorrelated_design_has_requested_correlation():
    X = generate_design(200_000, 3, "equicorrelated(0.5)", np.random.default_rng(1))
    C = X.T @ X / X.shape[0]
    assert np.allclose(C[np.triu_indices(3, 1)], 0.5, atol=0.01)


def test_orthogonal_design_gram_is_identity(rng):
    X = generate_design(30, 8, "orthogonal", rng)
    assert np.allclose(X.T @ X / 30, np.eye(8), atol=1e-12)


def test_restricted_ols_recovers_truth():
    """OLS on the true support stays within 3 sigma sqrt(s / lambda_min(X'X))
    in at least 95 of 100 seeds (the error norm is below that with probability
    above 0.97 under exact normal theory for s = 3)."""
    hits = 0
    for seed in range(100):
        inst = generate_instance(200, 20, 3, 2.0, 1.0, "iid-gaussian", seed)
        A = inst.X[:, list(inst.xi_star)]
        b = np.linalg.lstsq(A, inst.Y, rcond=None)[0]
        err = np.linalg.norm(b - inst.beta_star[list(inst.xi_star)])
        lam = np.linalg.eigvalsh(A.T @ A)[0]
        hits += err <= 3.0 * inst.sigma_star * math.sqrt(3 / lam)
    assert hits >= 95


def test_instance_rejects_bad_inputs(rng):
    X = standardize_columns(rng.standard_normal((10, 3)))
    with pytest.raises(ValueError):
        ProblemInstance(X=X * 2, Y=np.zeros(10))
    with pytest.raises(ValueError):
        ProblemInstance(X=X, Y=np.zeros(10), beta_star=np.array([1.0, 0, 0]), sigma_star=-1.0)
    with pytest.raises(ValueError):
        ProblemInstance(X=X, Y=np.zeros(10), beta_star=np.array([1.0, 0, 0]), sigma_star=1.0,
                        xi_star=ModelIndex.of([1], 3))
    D = X.copy()
    D[:, 1] = D[:, 0]
    with pytest.raises(RankDeficientError):
        ProblemInstance(X=D, Y=np.zeros(10), beta_star=np.array([1.0, 1.0, 0]), sigma_star=1.0)


def test_instance_arrays_are_read_only():
    inst = generate_instance(20, 5, 2, 1.0, 1.0, "iid-gaussian", 0)
    with pytest.raises(ValueError):
        inst.X[0, 0] = 1.0


# --- I/O --------------------------------------------------------------------

def test_matrix_csv_round_trip(tmp_path, rng):
    A = rng.standard_normal((7, 3))
    path = tmp_path / "A.csv"
    write_matrix_csv(path, A)
    assert path.read_text().splitlines()[0] == "x1,x2,x3"
    assert np.array_equal(read_matrix_csv(path), A)


def test_instance_bundle_round_trip(tmp_path):
    inst = generate_instance(25, 6, 2, 1.0, 0.5, "equicorrelated(0.2)", 9)
    path = tmp_path / "inst.json"
    save_instance(path, inst)
    back = load_instance(path)
    for name in ("X", "Y", "beta_star", "noise"):
        assert np.array_equal(getattr(back, name), getattr(inst, name))
    assert back.xi_star == inst.xi_star and back.seed == 9 and back.sigma_star == 0.5


def test_budget_error_is_runtime_error():
    assert issubclass(EnumerationBudgetError, RuntimeError)
