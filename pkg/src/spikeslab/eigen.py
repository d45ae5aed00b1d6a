"""Local eigenvalue functionals of the normalized Gram matrix.

muev: min over full-rank xi with |xi u xi*| <= t of lambda_min of the united Gram.
msev: min over |xi| <= t of lambda_min(X_xi'X_xi / n).
mnev: same with the smallest nonzero eigenvalue.
mrev: min Rayleigh quotient over the cone ||b_{xi^c}||_1 <= alpha ||b_xi||_1.

Exact functionals enumerate subsets size by size in lexicographic order.  Each
batch of Grams is gathered from the precomputed p x p Gram and diagonalized in
one call; near-singular members are re-examined through the SVD of X_xi with
the module-wide rank threshold.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import NamedTuple

import numpy as np
from scipy import optimize

from .model_core import RANK_RTOL, EnumerationBudgetError, ModelIndex

DEFAULT_BUDGET = 1_000_000
_CHUNK = 20_000
# Gram-based eigenvalues this small relative to the largest get an SVD recheck
_SUSPECT = 1e-7


class Witnessed(NamedTuple):
    value: float
    witness: ModelIndex


# ---------------------------------------------------------------------------
# batched eigenvalues


def _svd_eigs(X: np.ndarray, cols) -> tuple[float, float, bool]:
    """(lambda_min, smallest nonzero lambda, full rank) of X_cols'X_cols / n via SVD."""
    n = X.shape[0]
    A = X[:, list(cols)]
    sv = np.linalg.svd(A, compute_uv=False)
    tol = sv[0] * max(A.shape) * RANK_RTOL
    nz = sv[sv > tol]
    full = nz.size == len(cols)
    lam_min = float(nz[-1] ** 2 / n) if full else 0.0
    lam_nz = float(nz[-1] ** 2 / n) if nz.size else math.inf
    return lam_min, lam_nz, full


def _batch_eigs(G: np.ndarray, X: np.ndarray, idx: np.ndarray):
    """Eigen summaries for every row of idx (m x k index array).

    Returns lam_min, lam_nonzero, full_rank arrays.
    """
    m, k = idx.shape
    if k == 0:
        return np.full(m, math.inf), np.full(m, math.inf), np.ones(m, bool)
    sub = G[idx[:, :, None], idx[:, None, :]]
    ev = np.linalg.eigvalsh(sub)
    lam_min = ev[:, 0].copy()
    lam_nz = lam_min.copy()
    full = np.ones(m, bool)
    suspect = np.flatnonzero(ev[:, 0] <= _SUSPECT * ev[:, -1])
    for i in suspect:
        lam_min[i], lam_nz[i], full[i] = _svd_eigs(X, idx[i])
    return lam_min, lam_nz, full


def _count(m: int, max_k: int, min_k: int = 0) -> int:
    return sum(math.comb(m, k) for k in range(min_k, min(max_k, m) + 1))


def _check_budget(total: int, budget: int, what: str):
    if total > budget:
        raise EnumerationBudgetError(
            f"{what} needs {total} subsets, above the budget of {budget}; "
            "use a smaller t or p, or raise the budget")


def _combos(pool: np.ndarray, k: int, lead: int | None):
    """Lexicographic k-subsets of pool, optionally only those starting at pool[lead]."""
    if lead is None:
        return itertools.combinations(pool.tolist(), k)
    if k == 0:
        return iter(())
    head = int(pool[lead])
    return ((head,) + c for c in itertools.combinations(pool[lead + 1:].tolist(), k - 1))


def _scan(G, X, pool, base, sizes, kind, lead=None):
    """Minimum of the requested functional over base u D, D a subset of pool.

    kind: 'muev' (D must be full rank), 'msev', 'mnev'.
    Returns (value, size, members of D) with lexicographic tie-breaking.
    """
    base = tuple(base)
    best = (math.inf, math.inf, ())
    for k in sizes:
        it = _combos(pool, k, lead)
        if k == 0 and lead is None:
            it = iter([()])
        while True:
            chunk = list(itertools.islice(it, _CHUNK))
            if not chunk:
                break
            D = np.array(chunk, dtype=np.intp).reshape(len(chunk), k)
            if base:
                idx = np.hstack([np.broadcast_to(np.array(base, dtype=np.intp), (len(chunk), len(base))), D])
            else:
                idx = D
            if idx.shape[1] == 0:
                continue
            lam_min, lam_nz, full = _batch_eigs(G, X, idx)
            if kind == "mnev":
                vals = lam_nz
            else:
                vals = np.where(full, lam_min, 0.0)
            if kind == "muev":
                # a singular union only counts when D itself is full rank
                for i in np.flatnonzero(~full):
                    if k and not _svd_eigs(X, D[i])[2]:
                        vals[i] = math.inf
            i = int(np.argmin(vals))
            cand = (float(vals[i]), k, tuple(int(j) for j in D[i]))
            if cand < best:
                best = cand
    return best


def _run(G, X, pool, base, sizes, kind, workers):
    if workers <= 1 or len(pool) < 2:
        return _scan(G, X, pool, base, sizes, kind)
    # partition by leading element; the empty subset goes with the serial part
    parts = []
    if 0 in sizes:
        parts.append(_scan(G, X, pool, base, [0], kind))
    nz_sizes = [k for k in sizes if k > 0]
    fn = partial(_scan, G, X, pool, base, nz_sizes, kind)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts.extend(ex.map(_lead_scan, [(fn, i) for i in range(len(pool))]))
    return min(parts)


def _lead_scan(args):
    fn, lead = args
    return fn(lead=lead)


def _gram(X):
    return X.T @ X / X.shape[0]


def muev(X: np.ndarray, xi_star: ModelIndex, t: int, *, budget: int = DEFAULT_BUDGET,
         workers: int = 1) -> Witnessed:
    """Minimum united eigenvalue of order t, exact by enumeration."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    s = len(xi_star)
    if t < s:
        raise ValueError("t must be at least |xi*|")
    pool = np.array([j for j in range(p) if j not in xi_star], dtype=np.intp)
    kmax = min(t - s, pool.size)
    _check_budget(_count(pool.size, kmax), budget, "muev")
    val, _, D = _run(_gram(X), X, pool, tuple(xi_star.members), list(range(kmax + 1)), "muev", workers)
    if s == 0 and kmax == 0:
        return Witnessed(math.inf, ModelIndex.empty(p))
    return Witnessed(val, ModelIndex.of(D, p))


def msev(X: np.ndarray, t: int, *, budget: int = DEFAULT_BUDGET, workers: int = 1) -> Witnessed:
    """Minimum sparse eigenvalue of order t (rank-deficient models give 0)."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    kmax = min(t, p)
    _check_budget(_count(p, kmax, 1), budget, "msev")
    val, _, S = _run(_gram(X), X, np.arange(p, dtype=np.intp), (), list(range(1, kmax + 1)), "msev", workers)
    return Witnessed(val, ModelIndex.of(S, p))


def mnev(X: np.ndarray, t: int, *, budget: int = DEFAULT_BUDGET, workers: int = 1) -> Witnessed:
    """Minimum nonzero eigenvalue of order t."""
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    kmax = min(t, p)
    _check_budget(_count(p, kmax, 1), budget, "mnev")
    val, _, S = _run(_gram(X), X, np.arange(p, dtype=np.intp), (), list(range(1, kmax + 1)), "mnev", workers)
    return Witnessed(val, ModelIndex.of(S, p))


def mnev_premise(X: np.ndarray, xi_star: ModelIndex, t: int, *,
                 budget: int = DEFAULT_BUDGET) -> bool:
    """True iff X_{xi*} keeps a nonzero residual off span(X_xi) for every
    xi not containing xi* with |xi| <= t."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    s = len(xi_star)
    if s == 0:
        return True
    kmax = min(t, p)
    _check_budget(_count(p, kmax), budget, "mnev_premise")
    Xs = X[:, list(xi_star.members)]
    scale = np.linalg.norm(Xs)
    star = set(xi_star.members)
    # xi = {} leaves X_{xi*} itself, which is nonzero for standardized columns
    for k in range(1, kmax + 1):
        it = (c for c in itertools.combinations(range(p), k) if not star <= set(c))
        while True:
            chunk = list(itertools.islice(it, 4096))
            if not chunk:
                break
            idx = np.array(chunk, dtype=np.intp)
            A = np.transpose(X[:, idx], (1, 0, 2))  # m x n x k
            U, sv, _ = np.linalg.svd(A, full_matrices=False)
            tol = sv[:, :1] * max(n, k) * RANK_RTOL
            U = U * (sv > tol)[:, None, :]
            R = Xs[None] - U @ (np.swapaxes(U, 1, 2) @ Xs[None])
            res = np.sqrt(np.sum(R * R, axis=(1, 2)))
            if np.any(res <= scale * max(n, k + s) * RANK_RTOL):
                return False
    return True


# ---------------------------------------------------------------------------
# search-based united eigenvalue for large p


def muev_search(X: np.ndarray, xi_star: ModelIndex, t: int, *, restarts: int = 8,
                seed: int = 0, max_passes: int = 50) -> Witnessed:
    """Upper bound on muev(t) by greedy construction plus swap local search.

    Adding columns never raises lambda_min, so the search works with exactly
    t - |xi*| extra columns.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    base = list(xi_star.members)
    k = min(t - len(base), p - len(base))
    if k < 0:
        raise ValueError("t must be at least |xi*|")
    G = _gram(X)
    pool = np.array([j for j in range(p) if j not in xi_star], dtype=np.intp)
    if k == 0:
        if not base:
            return Witnessed(math.inf, ModelIndex.empty(p))
        lam, _, full = _batch_eigs(G, X, np.array([base], dtype=np.intp))
        return Witnessed(float(lam[0]) if full[0] else 0.0, ModelIndex.empty(p))
    rng = np.random.default_rng(seed)

    def evaluate(rows):
        idx = np.array(rows, dtype=np.intp)
        lam, _, full = _batch_eigs(G, X, idx)
        return np.where(full, lam, 0.0)

    def polish(D):
        D = list(D)
        cur = float(evaluate([base + sorted(D)])[0])
        for _ in range(max_passes):
            improved = False
            for pos in range(k):
                rest = D[:pos] + D[pos + 1:]
                cand = np.array([j for j in pool if j not in D], dtype=np.intp)
                rows = [base + sorted(rest + [int(j)]) for j in cand]
                vals = evaluate(rows)
                i = int(np.argmin(vals))
                if vals[i] < cur - 1e-14:
                    D = rest + [int(cand[i])]
                    cur = float(vals[i])
                    improved = True
            if not improved:
                break
        return cur, tuple(sorted(D))

    # greedy start
    D: list[int] = []
    for _ in range(k):
        cand = np.array([j for j in pool if j not in D], dtype=np.intp)
        vals = evaluate([base + sorted(D + [int(j)]) for j in cand])
        D.append(int(cand[int(np.argmin(vals))]))
    best = polish(D)
    for _ in range(restarts):
        start = rng.choice(pool, size=k, replace=False).tolist()
        best = min(best, polish(start))
    value, D = best
    return Witnessed(value, ModelIndex.of(D, p))


def united_lambda(X: np.ndarray, xi_star: ModelIndex, t: int, *, budget: int = DEFAULT_BUDGET,
                  restarts: int = 8, seed: int = 0, workers: int = 1) -> tuple[float, ModelIndex, str]:
    """muev(t) exactly when enumeration fits the budget, else the search bound.

    Returns (value, witness, method) with method 'exact' or 'search'.
    """
    p = X.shape[1]
    pool = p - len(xi_star)
    if _count(pool, min(t - len(xi_star), pool)) <= budget:
        v, w = muev(X, xi_star, t, budget=budget, workers=workers)
        return v, w, "exact"
    v, w = muev_search(X, xi_star, t, restarts=restarts, seed=seed)
    return v, w, "search"


# ---------------------------------------------------------------------------
# restricted eigenvalue


@dataclass(frozen=True)
class MrevEstimate:
    value: float
    method: str
    beta: np.ndarray
    resolution_deg: float | None = None
    grid_slack: float | None = None
    grid_points: int = 0

    def __float__(self):
        return self.value


def _cone_feasible(B: np.ndarray, t: int, alpha: float, rtol: float = 1e-9) -> np.ndarray:
    a = np.sort(np.abs(B), axis=1)[:, ::-1]
    top = a[:, :t].sum(axis=1)
    rest = a[:, t:].sum(axis=1)
    return rest <= alpha * top + rtol * (top + rest)


def _quotient(B, G):
    return np.einsum("ij,jk,ik->i", B, G, B) / np.einsum("ij,ij->i", B, B)


def _polish(G: np.ndarray, b0: np.ndarray, t: int, alpha: float) -> tuple[float, np.ndarray]:
    """Local descent on the sphere inside the cone piece containing b0: signs of
    b0 fixed and the top-t support of b0 used as the restricted set."""
    p = b0.size
    b0 = b0 / np.linalg.norm(b0)
    sgn = np.where(b0 >= 0, 1.0, -1.0)
    order = np.argsort(-np.abs(b0), kind="stable")
    inS = np.zeros(p, bool)
    inS[order[:t]] = True
    w = np.where(inS, alpha * sgn, -sgn)
    cons = [
        {"type": "eq", "fun": lambda b: b @ b - 1.0, "jac": lambda b: 2.0 * b},
        {"type": "ineq", "fun": lambda b: sgn * b, "jac": lambda b: np.diag(sgn)},
        {"type": "ineq", "fun": lambda b: np.array([w @ b]), "jac": lambda b: w[None, :]},
    ]
    res = optimize.minimize(lambda b: b @ G @ b, b0, jac=lambda b: 2.0 * G @ b, method="SLSQP",
                            constraints=cons, options={"maxiter": 200, "ftol": 1e-13})
    b = res.x
    nb = np.linalg.norm(b)
    start = float(b0 @ G @ b0)
    if not np.all(np.isfinite(b)) or nb == 0:
        return start, b0
    b = b / nb
    if not _cone_feasible(b[None], t, alpha)[0]:
        return start, b0
    q = float(b @ G @ b)
    return (q, b) if q < start else (start, b0)


def _sphere_points(p: int, h_deg: float, start: int, stop: int) -> np.ndarray:
    """Points start..stop-1 of the hyperspherical angle grid on a half sphere."""
    m1 = int(round(180.0 / h_deg)) + 1  # inclusive [0, pi]
    m2 = int(round(180.0 / h_deg))      # [0, pi): antipodes identified
    flat = np.arange(start, stop)
    shape = (m1,) * (p - 2) + (m2,)
    ang = np.stack(np.unravel_index(flat, shape), axis=1).astype(float)
    ang[:, : p - 2] *= math.pi / (m1 - 1)
    ang[:, p - 2] *= math.pi / m2
    out = np.empty((flat.size, p))
    sin_prod = np.ones(flat.size)
    for i in range(p - 1):
        out[:, i] = sin_prod * np.cos(ang[:, i])
        sin_prod = sin_prod * np.sin(ang[:, i])
    out[:, p - 1] = sin_prod
    return out


def _grid_size(p: int, h_deg: float) -> int:
    m1 = int(round(180.0 / h_deg)) + 1
    m2 = int(round(180.0 / h_deg))
    return m1 ** (p - 2) * m2


def mrev(X: np.ndarray, t: int, alpha: float = 1.0, method: str = "dense-grid", *,
         restarts: int = 50, seed: int = 0, resolution_deg: float = 2.0,
         max_points: int = 2_000_000, max_polish: int = 200) -> MrevEstimate:
    """Upper-bound estimate of the restricted eigenvalue of order t.

    dense-grid (p <= 6): evaluate the quotient on an angle grid, keep the best
    feasible point of each (support, sign) cone piece, and polish the best
    pieces by constrained descent.  The grid step is coarsened until the grid
    fits ``max_points``; the step actually used is reported.
    randomized: the same descent from ``restarts`` random feasible starts.
    """
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    if alpha < 1:
        raise ValueError("alpha must be >= 1")
    if t < 1:
        raise ValueError("t must be >= 1")
    G = _gram(X)
    evals = np.linalg.eigvalsh(G)
    if t >= p:
        # the cone is the whole space
        v = np.linalg.eigh(G)[1][:, 0]
        return MrevEstimate(float(evals[0]), method, v, resolution_deg=None, grid_slack=0.0)
    if method == "dense-grid":
        if p > 6:
            raise ValueError("dense-grid is limited to p <= 6")
        if p == 1:
            return MrevEstimate(float(G[0, 0]), method, np.ones(1), 0.0, 0.0, 1)
        h = float(resolution_deg)
        while _grid_size(p, h) > max_points:
            h *= 1.05
        total = _grid_size(p, h)
        best_q = {}
        best_b = {}
        step = 200_000
        weights = 1 << np.arange(p)
        for lo in range(0, total, step):
            B = _sphere_points(p, h, lo, min(total, lo + step))
            q = _quotient(B, G)
            ok = _cone_feasible(B, t, alpha)
            B, q = B[ok], q[ok]
            if q.size == 0:
                continue
            order = np.argsort(-np.abs(B), axis=1, kind="stable")[:, :t]
            supp = np.zeros_like(B, dtype=np.int64)
            np.put_along_axis(supp, order, 1, axis=1)
            key = (supp @ weights) * (1 << p) + ((B < 0).astype(np.int64) @ weights)
            srt = np.lexsort((q, key))
            first = srt[np.r_[True, key[srt][1:] != key[srt][:-1]]]
            for i in first:
                kk = int(key[i])
                if q[i] < best_q.get(kk, math.inf):
                    best_q[kk] = float(q[i])
                    best_b[kk] = B[i].copy()
        if not best_q:
            raise RuntimeError("no feasible grid point")
        ranked = sorted(best_q, key=lambda kk: (best_q[kk], kk))
        value, beta = best_q[ranked[0]], best_b[ranked[0]]
        for kk in ranked[:max_polish]:
            q, b = _polish(G, best_b[kk], t, alpha)
            if q < value:
                value, beta = q, b
        slack = float((evals[-1] - evals[0]) * math.sqrt(p - 1) * math.radians(h))
        # plus rounding in the quotients and in msev's own eigenvalues
        slack += 16.0 * p * np.finfo(float).eps * max(abs(evals[-1]), 1.0)
        return MrevEstimate(float(value), method, beta, resolution_deg=h, grid_slack=slack,
                            grid_points=total)
    if method == "randomized":
        rng = np.random.default_rng(seed)
        value, beta = math.inf, None
        for _ in range(restarts):
            b = rng.standard_normal(p)
            a = np.sort(np.abs(b))[::-1]
            top, rest = a[:t].sum(), a[t:].sum()
            if rest > alpha * top:
                thr = a[t - 1]
                small = np.abs(b) < thr
                b[small] *= 0.999 * alpha * top / rest
            q, bb = _polish(G, b, t, alpha)
            if q < value:
                value, beta = q, bb
        return MrevEstimate(float(value), method, beta)
    raise ValueError(f"unknown mrev method {method!r}")


# ---------------------------------------------------------------------------
# Schur complement


def schur_bound_check(S: np.ndarray, block) -> tuple[float, float, bool]:
    """lambda_min of the Schur complement of S[block, block] versus lambda_min(S)."""
    S = np.asarray(S, dtype=float)
    m = S.shape[0]
    b1 = sorted(int(i) for i in block)
    b2 = [i for i in range(m) if i not in set(b1)]
    if not b2:
        raise ValueError("the complement block is empty")
    S11 = S[np.ix_(b1, b1)]
    if b1 and np.linalg.cond(S11) > 1e12:
        raise ValueError("S11 is singular")
    S22 = S[np.ix_(b2, b2)]
    if b1:
        S21 = S[np.ix_(b2, b1)]
        C = S22 - S21 @ np.linalg.solve(S11, S21.T)
    else:
        C = S22
    lhs = float(np.linalg.eigvalsh((C + C.T) / 2)[0])
    rhs = float(np.linalg.eigvalsh(S)[0])
    return lhs, rhs, lhs >= rhs - 1e-9


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class EigenReport:
    t: int
    alpha: float
    muev: float
    msev: float
    mnev: float
    mrev_estimate: float
    mrev_method: str
    mrev_resolution_deg: float | None
    mrev_grid_slack: float | None
    mnev_premise: bool
    muev_witness: ModelIndex
    msev_witness: ModelIndex
    mnev_witness: ModelIndex
    lam: float | None = None
    lam_method: str | None = None

    @property
    def ordering_holds(self) -> bool:
        ok = self.muev >= self.msev - 1e-9
        if self.mnev_premise:
            ok = ok and self.muev >= self.mnev - 1e-9
        return ok


def eigen_report(X: np.ndarray, xi_star: ModelIndex, t: int, alpha: float = 1.0, *,
                 mrev_method: str | None = None, K: float | None = None,
                 restarts: int = 50, seed: int = 0, budget: int = DEFAULT_BUDGET,
                 workers: int = 1) -> EigenReport:
    X = np.asarray(X, dtype=float)
    p = X.shape[1]
    mu = muev(X, xi_star, t, budget=budget, workers=workers)
    ms = msev(X, t, budget=budget, workers=workers)
    mn = mnev(X, t, budget=budget, workers=workers)
    method = mrev_method or ("dense-grid" if p <= 6 else "randomized")
    mr = mrev(X, t, alpha, method, restarts=restarts, seed=seed)
    premise = mnev_premise(X, xi_star, t, budget=budget)
    lam = lam_method = None
    if K is not None:
        order = int(math.floor((K + 1) * len(xi_star) + 1e-12))
        lam, _, lam_method = united_lambda(X, xi_star, order, budget=budget, seed=seed,
                                           workers=workers)
    return EigenReport(t=t, alpha=alpha, muev=mu.value, msev=ms.value, mnev=mn.value,
                       mrev_estimate=mr.value, mrev_method=mr.method,
                       mrev_resolution_deg=mr.resolution_deg, mrev_grid_slack=mr.grid_slack,
                       mnev_premise=premise, muev_witness=mu.witness, msev_witness=ms.witness,
                       mnev_witness=mn.witness, lam=lam, lam_method=lam_method)
