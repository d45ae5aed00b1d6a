"""Computable bounds, rates and test statistics, each paired with an exact or
Monte-Carlo reference value."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .model_core import (RANK_RTOL, EnumerationBudgetError, ModelIndex, ProblemInstance,
                         RegularityConstants, epsilon_n)
from .inference import conditional_posterior_ratio
from .priors import PriorSpec, compute_z0n


@dataclass(frozen=True)
class BoundComparison:
    name: str
    bound_value: float
    exact_or_mc_value: float
    holds: bool
    context: dict = field(default_factory=dict)

    def row(self) -> dict:
        ctx = format_inputs(self.context)
        return {"check": self.name, "inputs": ctx, "bound": self.bound_value,
                "exact": self.exact_or_mc_value, "holds": self.holds}


def format_inputs(params: dict) -> str:
    """k=v pairs joined by ';' (floats at full precision)."""
    return ";".join(f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in params.items())


# ---------------------------------------------------------------------------
# chi-square bounds


def chi2_tail_bound(d: int, t: float) -> BoundComparison:
    """P(chi2_d >= t) against exp(-(sqrt(2t - d) - sqrt(d))^2 / 4), for 2t > d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 2.0 * t > d:
        raise ValueError("need 2t > d")
    bound = math.exp(-(math.sqrt(2.0 * t - d) - math.sqrt(d)) ** 2 / 4.0)
    exact = float(stats.chi2.sf(t, d))
    return BoundComparison("chi2_tail", bound, exact, exact <= bound * (1 + 1e-12),
                           {"d": d, "t": t})


def chi2_norm_bounds(n: int, d: int, eps: float) -> tuple[BoundComparison, BoundComparison]:
    """Upper and lower deviation bounds for chi2_{n-d}/n around 1."""
    if not (0 <= d < n):
        raise ValueError("need 0 <= d < n")
    if not n * eps > d:
        raise ValueError("need n eps > d")
    m = n - d
    up_dev = n * eps + d
    lo_dev = n * eps - d
    up_bound = math.exp(-min(up_dev ** 2 / (8.0 * m), up_dev / 8.0))
    lo_bound = math.exp(-min(lo_dev ** 2 / (8.0 * m), lo_dev / 8.0))
    up_exact = float(stats.chi2.sf(n * (1.0 + eps), m))
    lo_exact = float(stats.chi2.cdf(n * (1.0 - eps), m)) if eps < 1 else 0.0
    ctx = {"n": n, "d": d, "eps": eps}
    return (BoundComparison("chi2_norm_upper", up_bound, up_exact, up_exact <= up_bound * (1 + 1e-12), ctx),
            BoundComparison("chi2_norm_lower", lo_bound, lo_exact, lo_exact <= lo_bound * (1 + 1e-12), ctx))


# ---------------------------------------------------------------------------
# binomial tail


def pelekis_bound(p: int, mu: float, t: int) -> BoundComparison:
    """The binomial tail formula mu^{2(tt+1)}/2 * C(p, tt+1)/C(t, tt+1) with
    tt = floor((t - p mu)/(1 - mu)), next to the exact P(T >= t).  The verdict
    is reported, not assumed."""
    if not (0 < mu < 1):
        raise ValueError("mu must lie in (0, 1)")
    if not (p * mu < t <= p - 1):
        raise ValueError("need p mu < t <= p - 1")
    tt = math.floor((t - p * mu) / (1.0 - mu))
    formula = mu ** (2 * (tt + 1)) / 2.0 * math.comb(p, tt + 1) / math.comb(t, tt + 1)
    exact = float(stats.binom.sf(t - 1, p, mu))
    return BoundComparison("pelekis", formula, exact, exact <= formula,
                           {"p": p, "mu": mu, "t": t, "t_tilde": tt})


def binomial_tail_exact(p: int, q: Fraction | float, t: int) -> Fraction:
    """P(T > t) for T ~ Binomial(p, q), summed in rational arithmetic."""
    q = Fraction(q)
    if t < 0:
        return Fraction(1)
    # sum the shorter side
    if t + 1 <= p - t:
        head = sum((math.comb(p, u) * q ** u * (1 - q) ** (p - u) for u in range(t + 1)), Fraction(0))
        return 1 - head
    return sum((math.comb(p, u) * q ** u * (1 - q) ** (p - u) for u in range(t + 1, p + 1)),
               Fraction(0))


# ---------------------------------------------------------------------------
# test statistics


@dataclass(frozen=True)
class PhiStatistics:
    phi1: bool
    phi2: bool
    phi3: bool
    stat1: float
    stat2: float
    stat3: float
    threshold1: float
    threshold2: float
    threshold3: float
    witness1: ModelIndex
    witness2: ModelIndex
    witness3: ModelIndex | None
    z0n: float


def _basis(X: np.ndarray, cols) -> tuple[np.ndarray, int]:
    cols = list(cols)
    if not cols:
        return np.zeros((X.shape[0], 0)), 0
    A = X[:, cols]
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    tol = sv[0] * max(A.shape) * RANK_RTOL
    r = int(np.sum(sv > tol))
    return U[:, :r], r


def phi_statistics(instance: ProblemInstance, consts: RegularityConstants, z0n: float, lam: float,
                   *, xi_star: ModelIndex | None = None, budget: int = 1_000_000) -> PhiStatistics:
    """The three test statistics over full-rank xi with |xi minus xi*| <= K s.

    ``xi_star`` overrides the instance's true support (the statistics only use
    it as an index set; beta* is still taken from the instance).
    """
    instance.require_truth()
    X, Y = instance.X, instance.Y
    n, p = X.shape
    star = xi_star if xi_star is not None else instance.xi_star
    s = len(star)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    eps = epsilon_n(n, p, max(s, 1))
    sig = instance.sigma_star
    beta_star = instance.beta_star
    cap = consts.overfit_cap(s)
    pool = [j for j in range(p) if j not in star]
    kmax = min(cap, len(pool))
    n_unions = sum(math.comb(len(pool), k) for k in range(kmax + 1))
    if n_unions * max(1, 2 ** s) > budget:
        raise EnumerationBudgetError(f"phi statistics need about {n_unions * 2 ** s} models, above {budget}")

    thr1 = consts.M1 * eps
    thr2 = consts.M2 * sig * eps / (2.0 * math.sqrt(lam))
    thr3 = consts.M3 * sig * math.sqrt(n) * eps / 2.0
    best1 = (-math.inf, ())
    best2 = (-math.inf, ())
    best3 = (math.inf, None)
    star_m = list(star.members)
    proj_cache: dict[tuple, np.ndarray] = {}

    def proj(cols):
        key = tuple(sorted(cols))
        v = proj_cache.get(key)
        if v is None:
            Q, _ = _basis(X, key)
            v = Q @ (Q.T @ Y)
            proj_cache[key] = v
        return v

    for k in range(kmax + 1):
        for D in itertools.combinations(pool, k):
            if k and _basis(X, D)[1] < k:
                continue  # no full-rank xi has this extra part
            U = sorted(star_m + list(D))
            PU = proj(U)
            r = Y - PU
            s1 = abs(float(r @ r) / (n * sig ** 2) - 1.0)
            if s1 > best1[0]:
                best1 = (s1, tuple(D))
            Q, rank = _basis(X, U)
            if rank == len(U):
                coef = np.linalg.lstsq(X[:, U], Y, rcond=None)[0] if U else np.zeros(0)
                s2 = float(np.linalg.norm(coef - beta_star[U]))
                if s2 > best2[0]:
                    best2 = (s2, tuple(D))
            # xi not containing xi*: D plus a proper subset of xi*
            for a in range(s):
                for A in itertools.combinations(star_m, a):
                    xi = sorted(list(A) + list(D))
                    if xi and _basis(X, xi)[1] < len(xi):
                        continue
                    s3 = float(np.linalg.norm(PU - proj(xi)))
                    if s3 < best3[0]:
                        best3 = (s3, tuple(xi))
    w3 = ModelIndex(best3[1], p) if best3[1] is not None else None
    return PhiStatistics(
        phi1=best1[0] > thr1, phi2=best2[0] > thr2, phi3=best3[0] < thr3,
        stat1=best1[0], stat2=best2[0], stat3=best3[0],
        threshold1=thr1, threshold2=thr2, threshold3=thr3,
        witness1=ModelIndex(best1[1], p).union(star), witness2=ModelIndex(best2[1], p).union(star),
        witness3=w3, z0n=z0n)


# ---------------------------------------------------------------------------
# selection rate and ratio bound


@dataclass(frozen=True)
class SelectionRateReport:
    r_n: float
    size_factors: tuple[float, ...]
    slab_factor: float
    log_size_factors: tuple[float, ...]
    log_slab_factor: float
    per_model: bool

    @property
    def below_one(self) -> bool:
        return self.r_n < 1.0

    def recompose(self) -> float:
        return max(f * self.slab_factor for f in self.size_factors) if self.size_factors else 0.0


def selection_rate(prior: PriorSpec, n: int, p: int, s: int, lam: float, eta: float, K: float,
                   *, per_model: bool = False) -> SelectionRateReport:
    """r_n = max_j [pi(|xi| = s + j) / pi(xi*)]^{1/j} * sup h1 * p^{1+eta} / sqrt(n lam).

    pi(|xi| = s + j) is the total prior mass on models of that size, or the
    mass of a single such model when ``per_model`` is set.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if prior.p != p:
        raise ValueError("prior and p disagree")
    sel = prior.selection
    log_star = float(sel.log_mass_of_size(s))
    jmax = int(math.floor(K * s + 1e-12))
    logs = []
    for j in range(1, jmax + 1):
        if s + j > p:
            break
        num = float(sel.log_mass_of_size(s + j) if per_model else sel.log_size_marginal(s + j))
        logs.append((num - log_star) / j)
    log_slab = math.log(prior.slab.sup_density) + (1.0 + eta) * math.log(p) - 0.5 * math.log(n * lam)
    sizes = tuple(math.exp(v) for v in logs)
    r = math.exp(max(logs) + log_slab) if logs else 0.0
    return SelectionRateReport(r_n=r, size_factors=sizes, slab_factor=math.exp(log_slab),
                               log_size_factors=tuple(logs), log_slab_factor=log_slab,
                               per_model=per_model)


def posterior_ratio_bound(t_minus_s: int, n: int, p: int, lam: float, eta: float,
                          sup_h1: float) -> float:
    """2 (sqrt(2 pi / (n lam)) sup h1 p^{1+eta})^{t-s}."""
    if t_minus_s < 0 or not (n > 0 and p > 0 and lam > 0 and eta > 0 and sup_h1 > 0):
        raise ValueError("inputs must be positive")
    base = math.sqrt(2.0 * math.pi / (n * lam)) * sup_h1 * p ** (1.0 + eta)
    return 2.0 * base ** t_minus_s


# ---------------------------------------------------------------------------
# noise events


class OmegaEvent:
    """Noise event: some full-rank superset xi of xi* with |xi| <= (K+1)s has
    ||(P_xi - P_xi*) eps||^2 >= (2 + eta)(|xi| - s) log p, or ||eps|| >= 2 sqrt(n)."""

    def __init__(self, X: np.ndarray, xi_star: ModelIndex, K: float, eta: float, *,
                 budget: int = 1_000_000):
        X = np.asarray(X, dtype=float)
        self.n, self.p = X.shape
        s = len(xi_star)
        jmax = int(math.floor(K * s + 1e-12))
        pool = [j for j in range(self.p) if j not in xi_star]
        jmax = min(jmax, len(pool))
        total = sum(math.comb(len(pool), j) for j in range(1, jmax + 1))
        if total > budget:
            raise EnumerationBudgetError(f"omega event needs {total} supersets, above {budget}")
        Qs, _ = _basis(X, xi_star.members)
        self.bases = []
        self.thresholds = []
        logp = math.log(self.p)
        for j in range(1, jmax + 1):
            for D in itertools.combinations(pool, j):
                if _basis(X, list(xi_star.members) + list(D))[1] < s + j:
                    continue
                R = X[:, list(D)] - Qs @ (Qs.T @ X[:, list(D)])
                Q, _ = np.linalg.qr(R)
                self.bases.append(Q)
                self.thresholds.append((2.0 + eta) * j * logp)
        self.jmax = jmax

    def indicators(self, E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(omega1, omega2) indicators for noise draws in the columns of E."""
        E = np.asarray(E, dtype=float)
        if E.ndim == 1:
            E = E[:, None]
        o1 = np.zeros(E.shape[1], bool)
        for Q, thr in zip(self.bases, self.thresholds):
            Z = Q.T @ E
            o1 |= np.sum(Z * Z, axis=0) >= thr
        o2 = np.sum(E * E, axis=0) >= 4.0 * self.n
        return o1, o2

    def __call__(self, eps: np.ndarray) -> bool:
        o1, o2 = self.indicators(eps)
        return bool(o1[0] or o2[0])


@dataclass(frozen=True)
class OmegaReport:
    frequency: float
    standard_error: float
    omega1_frequency: float
    omega2_frequency: float
    union_bound: float
    draws: int
    supersets: int


def omega_event_frequency(X: np.ndarray, xi_star: ModelIndex, K: float, eta: float, draws: int,
                          seed: int, *, budget: int = 1_000_000) -> OmegaReport:
    """Monte-Carlo frequency of the noise event against its chi-square union bound."""
    ev = OmegaEvent(X, xi_star, K, eta, budget=budget)
    n, p = ev.n, ev.p
    rng = np.random.default_rng(seed)
    hits = h1 = h2 = 0
    chunk = max(1, min(draws, 4_000_000 // max(n, 1)))
    done = 0
    while done < draws:
        m = min(chunk, draws - done)
        E = rng.standard_normal((n, m))
        o1, o2 = ev.indicators(E)
        hits += int(np.sum(o1 | o2))
        h1 += int(np.sum(o1))
        h2 += int(np.sum(o2))
        done += m
    freq = hits / draws
    logp = math.log(p)
    ub = sum(p ** j * float(stats.chi2.sf((2.0 + eta) * j * logp, j)) for j in range(1, ev.jmax + 1))
    ub += float(stats.chi2.sf(4.0 * n, n))
    return OmegaReport(frequency=freq, standard_error=math.sqrt(max(freq * (1 - freq), 1e-300) / draws),
                       omega1_frequency=h1 / draws, omega2_frequency=h2 / draws, union_bound=ub,
                       draws=draws, supersets=len(ev.bases))


def evidence_ratio_check(instance: ProblemInstance, prior: PriorSpec, gamma: ModelIndex,
                         consts: RegularityConstants, lam: float, *, draws: int = 4000,
                         seed: int = 0) -> BoundComparison:
    """Measured conditional posterior ratio of an overfitted gamma against its bound.

    The context records whether the instance's noise lies outside the noise
    event, the only case the bound speaks about.
    """
    instance.require_truth()
    star = instance.xi_star
    if not (gamma.issuperset(star) and len(gamma) > len(star)):
        raise ValueError("gamma must strictly contain the true model")
    ts = len(gamma) - len(star)
    bound = posterior_ratio_bound(ts, instance.n, instance.p, lam, consts.eta,
                                  prior.slab.sup_density)
    z0n = compute_z0n(prior.spike, instance.n)
    m = conditional_posterior_ratio(instance, prior, gamma, consts, lam, z0n, draws=draws, seed=seed)
    ev = OmegaEvent(instance.X, star, consts.K, consts.eta)
    outside = not ev(np.asarray(instance.noise))
    return BoundComparison("evidence_ratio", bound, m.ratio, bool(m.ratio <= bound),
                           {"gamma": str(gamma), "t_minus_s": ts, "lambda": lam,
                            "omega_complement": outside, "seed": instance.seed})
