"""Posterior computation for the spike-and-slab regression model.

Conditionally on the model xi and on the coordinate prior variances v (in z
units), Y ~ N(0, sigma^2 (I + X_A diag(v) X_A')) where A holds the
coordinates with a continuous prior.  Integrating sigma^2 against an
inverse-gamma(a, b) prior gives

    log E = lgamma(a + n/2) - lgamma(a) + a log b - (n/2) log(2 pi)
            - 1/2 [log|diag(v)| + log|diag(1/v) + X_A'X_A|]
            - (a + n/2) log(b + Q/2),
    Q = Y'Y - r_A' (diag(1/v) + X_A'X_A)^{-1} r_A,   r = X'Y.

With a gaussian spike narrower than the slab, the spike part is folded into
a base covariance B = I + tau0^2 X X' (handled through the SVD of X) and each
slab coordinate adds tau1^2 - tau0^2 on top of it.
"""
from __future__ import annotations

import bisect
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, special

from .eigen import _svd_eigs
from .model_core import (EnumerationBudgetError, ModelIndex, ProblemInstance,
                         RankDeficientError, RegularityConstants, epsilon_n)
from .priors import PriorSpec

LOG_2PI = math.log(2.0 * math.pi)


class NonConjugatePriorError(ValueError):
    """Raised when a closed-form evidence is requested for a laplace component."""


# ---------------------------------------------------------------------------
# evidence kernel


class EvidenceKernel:
    """Sufficient statistics and closed-form evidence for one (instance, prior)."""

    def __init__(self, instance: ProblemInstance, prior: PriorSpec):
        if prior.p != instance.p:
            raise ValueError("prior and instance disagree on p")
        self.instance = instance
        self.prior = prior
        X, Y = instance.X, instance.Y
        self.n, self.p = X.shape
        self.G = X.T @ X
        self.r = X.T @ Y
        self.yy = float(Y @ Y)
        a, b = prior.variance.a, prior.variance.b
        self.a_post = a + self.n / 2.0
        self.const = (special.gammaln(self.a_post) - special.gammaln(a) + a * math.log(b)
                      - 0.5 * self.n * LOG_2PI)
        spike, slab = prior.spike, prior.slab
        self.conjugate = prior.is_conjugate
        # defaults: raw statistics, members carry the slab variance
        self.Gt, self.rt, self.yyt, self.logdet_base = self.G, self.r, self.yy, 0.0
        self.w = slab.scale ** 2 if slab.kind == "gaussian" else None
        if not self.conjugate:
            self.mode = "augmented"
        elif spike.kind == "dirac":
            self.mode = "dirac"
        else:
            t0, t1 = spike.scale ** 2, slab.scale ** 2
            if t1 >= t0:
                self.mode = "woodbury"
                U, sv, Vt = np.linalg.svd(X, full_matrices=False)
                uy = U.T @ Y
                d = 1.0 + t0 * sv ** 2
                self.logdet_base = float(np.sum(np.log(d)))
                self.Gt = (Vt.T * (sv ** 2 / d)) @ Vt
                self.rt = Vt.T @ (sv / d * uy)
                self.yyt = float(self.yy - np.sum((t0 * sv ** 2 / d) * uy ** 2))
                self.w = t1 - t0
            else:
                self.mode = "dense"
        self._rank_cache: dict[tuple, bool] = {}

    # -- rank -------------------------------------------------------------
    def full_rank(self, members: tuple) -> bool:
        hit = self._rank_cache.get(members)
        if hit is not None:
            return hit
        k = len(members)
        if k == 0:
            ok = True
        elif k > self.n:
            ok = False
        else:
            idx = list(members)
            ev = np.linalg.eigvalsh(self.G[np.ix_(idx, idx)])
            ok = bool(ev[0] > 1e-7 * ev[-1]) or _svd_eigs(self.instance.X, idx)[2]
        self._rank_cache[members] = ok
        return ok

    # -- evidence ---------------------------------------------------------
    def _finish(self, logdet: float, Q: float) -> float:
        bq = self.prior.variance.b + 0.5 * max(Q, 0.0)
        out = self.const - 0.5 * (self.logdet_base + logdet) - self.a_post * math.log(bq)
        if self.prior.variance.truncated:
            out += self.prior.variance.log_evidence_adjustment(self.a_post, bq)
        return out

    def log_evidence_active(self, active, v) -> float:
        """Evidence with the given active coordinates and z-variances v, using
        the kernel's base statistics."""
        active = list(active)
        if not active:
            return self._finish(0.0, self.yyt)
        v = np.broadcast_to(np.asarray(v, dtype=float), (len(active),))
        M = self.Gt[np.ix_(active, active)] + np.diag(1.0 / v)
        L = linalg.cholesky(M, lower=True, check_finite=False)
        u = linalg.solve_triangular(L, self.rt[active], lower=True, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L)))) + float(np.sum(np.log(v)))
        return self._finish(logdet, self.yyt - float(u @ u))

    def coordinate_variances(self, members: tuple, omega1=None, omega0=None) -> tuple[list, np.ndarray]:
        """Active coordinates and their z-variances on the raw statistics."""
        spike, slab = self.prior.spike, self.prior.slab
        p = self.p
        inm = np.zeros(p, bool)
        inm[list(members)] = True
        v1 = np.full(p, slab.scale ** 2) if slab.kind == "gaussian" else np.asarray(omega1)
        if spike.kind == "dirac":
            idx = list(members)
            return idx, v1[idx]
        v0 = np.full(p, spike.scale ** 2) if spike.kind == "gaussian" else np.asarray(omega0)
        return list(range(p)), np.where(inm, v1, v0)

    def log_evidence(self, members: tuple) -> float:
        """Closed-form log evidence of a model (conjugate priors only)."""
        if not self.conjugate:
            raise NonConjugatePriorError("closed-form evidence needs a gaussian slab and a dirac or gaussian spike")
        if self.mode in ("dirac", "woodbury"):
            if self.w == 0.0:
                return self._finish(0.0, self.yyt)
            return self.log_evidence_active(members, self.w)
        idx, v = self.coordinate_variances(members)
        return self.log_evidence_active(idx, v)

    def raw_log_evidence(self, members: tuple, omega1=None, omega0=None) -> float:
        """Evidence on raw statistics given explicit latent variances (augmented sampler)."""
        idx, v = self.coordinate_variances(members, omega1, omega0)
        if not idx:
            return self._finish_raw(0.0, self.yy)
        M = self.G[np.ix_(idx, idx)] + np.diag(1.0 / v)
        L = linalg.cholesky(M, lower=True, check_finite=False)
        u = linalg.solve_triangular(L, self.r[idx], lower=True, check_finite=False)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L)))) + float(np.sum(np.log(v)))
        return self._finish_raw(logdet, self.yy - float(u @ u))

    def _finish_raw(self, logdet, Q):
        bq = self.prior.variance.b + 0.5 * max(Q, 0.0)
        out = self.const - 0.5 * logdet - self.a_post * math.log(bq)
        if self.prior.variance.truncated:
            out += self.prior.variance.log_evidence_adjustment(self.a_post, bq)
        return out

    def log_evidence_cap(self) -> float:
        """Upper bound on the evidence of every model (all coordinates on the slab
        give the smallest Q; the determinant term is at most the base one)."""
        if not self.conjugate:
            raise NonConjugatePriorError("evidence cap needs a conjugate prior")
        X, Y = self.instance.X, self.instance.Y
        t_big = max(self.prior.slab.scale, self.prior.spike.scale or 0.0) ** 2
        U, sv, _ = np.linalg.svd(X, full_matrices=False)
        uy = U.T @ Y
        Q = float(self.yy - np.sum((t_big * sv ** 2 / (1.0 + t_big * sv ** 2)) * uy ** 2))
        bq = self.prior.variance.b + 0.5 * max(Q, 0.0)
        logdet_floor = self.logdet_base if self.mode == "woodbury" else 0.0
        out = self.const - 0.5 * logdet_floor - self.a_post * math.log(bq)
        if self.prior.variance.truncated:
            out -= self.prior.variance.log_normalizer()
        return out

    # -- conditional draws --------------------------------------------------
    def conditional_moments(self, members: tuple, omega1=None, omega0=None):
        """(active, L, mean, Q) for beta_A | xi, sigma^2 ~ N(mean, sigma^2 (LL')^{-1})."""
        idx, v = self.coordinate_variances(members, omega1, omega0)
        if not idx:
            return idx, None, np.zeros(0), self.yy
        M = self.G[np.ix_(idx, idx)] + np.diag(1.0 / v)
        L = linalg.cholesky(M, lower=True, check_finite=False)
        mean = linalg.cho_solve((L, True), self.r[idx], check_finite=False)
        return idx, L, mean, self.yy - float(self.r[idx] @ mean)

    def draw(self, members: tuple, m: int, rng: np.random.Generator, omega1=None, omega0=None):
        """m joint draws of (sigma^2, beta) given xi; returns (s2, beta (m x p), cond_mean (p,))."""
        idx, L, mean, Q = self.conditional_moments(members, omega1, omega0)
        b_post = self.prior.variance.b + 0.5 * max(Q, 0.0)
        s2 = np.atleast_1d(self.prior.variance.sample_conditional(self.a_post, b_post, rng, size=m))
        beta = np.zeros((m, self.p))
        cmean = np.zeros(self.p)
        if idx:
            Z = rng.standard_normal((len(idx), m))
            dev = linalg.solve_triangular(L.T, Z, lower=False, check_finite=False)
            beta[:, idx] = (mean[:, None] + np.sqrt(s2)[None, :] * dev).T
            cmean[idx] = mean
        return s2, beta, cmean


def log_model_evidence(xi: ModelIndex, instance: ProblemInstance, prior: PriorSpec) -> float:
    """log of the marginal likelihood of Y under model xi, beta and sigma^2 integrated out."""
    if not prior.is_conjugate:
        raise NonConjugatePriorError("closed-form evidence needs a gaussian slab and a dirac or gaussian spike")
    kern = EvidenceKernel(instance, prior)
    members = tuple(xi.members)
    if not kern.full_rank(members):
        from .model_core import is_full_rank
        raise RankDeficientError(f"model {xi} is not of full rank", is_full_rank(instance.X, xi)[1])
    return kern.log_evidence(members)


# ---------------------------------------------------------------------------
# exact posterior


@dataclass
class ModelPosterior:
    """Normalized posterior over the enumerated full-rank models."""

    p: int
    models: list[tuple]
    log_evidence: np.ndarray
    log_prior: np.ndarray
    mass: np.ndarray
    log_normalizer: float
    max_size: int
    truncated_mass_bound: float
    rank_deficient_excluded: int
    kernel: EvidenceKernel = field(repr=False)

    note = "only full-rank models carry mass; rank-deficient models have mass exactly 0"

    def mass_of(self, xi) -> float:
        key = tuple(xi.members) if isinstance(xi, ModelIndex) else tuple(xi)
        i = self._index().get(key)
        return 0.0 if i is None else float(self.mass[i])

    def _index(self):
        if not hasattr(self, "_idx"):
            self._idx = {m: i for i, m in enumerate(self.models)}
        return self._idx

    def as_dict(self) -> dict[tuple, float]:
        return {m: float(w) for m, w in zip(self.models, self.mass)}

    def modal_model(self) -> ModelIndex:
        return ModelIndex(self.models[int(np.argmax(self.mass))], self.p)


def _count_models(p: int, max_size: int) -> int:
    return sum(math.comb(p, k) for k in range(min(max_size, p) + 1))


def exact_posterior(instance: ProblemInstance, prior: PriorSpec, max_size: int, *,
                    budget: int = 1_000_000) -> ModelPosterior:
    """Enumerate all full-rank models with |xi| <= max_size."""
    if not prior.is_conjugate:
        raise NonConjugatePriorError("exact enumeration needs a conjugate prior")
    p = instance.p
    max_size = min(max_size, p)
    total = _count_models(p, max_size)
    if total > budget:
        raise EnumerationBudgetError(f"{total} models exceed the enumeration budget {budget}")
    kern = EvidenceKernel(instance, prior)
    models, logev = [], []
    excluded = 0
    if kern.mode in ("dirac", "woodbury") and kern.w > 0:
        excluded = _dfs(kern, max_size, models, logev)
    else:
        for k in range(max_size + 1):
            for c in itertools.combinations(range(p), k):
                if kern.full_rank(c):
                    models.append(c)
                    logev.append(kern.log_evidence(c))
                else:
                    excluded += 1
    order = sorted(range(len(models)), key=lambda i: (len(models[i]), models[i]))
    models = [models[i] for i in order]
    logev = np.array([logev[i] for i in order])
    sizes = np.array([len(m) for m in models])
    logpri = np.asarray(prior.selection.log_mass_of_size(sizes), dtype=float)
    logpost = logev + logpri
    lz = float(special.logsumexp(logpost))
    mass = np.exp(logpost - lz)
    bound = 0.0
    if max_size < p:
        tail = prior.selection.tail(max_size)
        if tail > 0:
            log_r = math.log(tail) + kern.log_evidence_cap() - lz
            r = math.exp(min(log_r, 700.0))
            bound = min(1.0, r / (1.0 + r))
    return ModelPosterior(p=p, models=models, log_evidence=logev, log_prior=logpri, mass=mass,
                          log_normalizer=lz, max_size=max_size, truncated_mass_bound=bound,
                          rank_deficient_excluded=excluded, kernel=kern)


def _dfs(kern: EvidenceKernel, max_size: int, models: list, logev: list) -> int:
    """Depth-first enumeration with incremental Cholesky factors.

    Two factors grow along each branch: one of diag(1/w) + G~ for the
    evidence, one of the raw Gram for rank screening.  A rank-deficient
    model prunes its whole subtree since every superset is deficient too.
    """
    p, n = kern.p, kern.n
    Gt, rt, w = kern.Gt, kern.rt, kern.w
    G = kern.G
    excluded = 0
    models.append(())
    logev.append(kern._finish(0.0, kern.yyt))
    log_w = math.log(w)

    def rec(S, L, u, logdiag, R, start, fragile):
        nonlocal excluded
        k = len(S)
        for j in range(start, p):
            cand = S + [j]
            # raw Gram pivot for rank screening; once a branch has a tiny but
            # genuine pivot its factor is unreliable and ranks are checked directly
            if fragile:
                g, d_raw = None, 0.0
                ok = kern.full_rank(tuple(cand))
                child_fragile = True
            else:
                if k:
                    g = linalg.solve_triangular(R, G[S, j], lower=True, check_finite=False)
                    d_raw = G[j, j] - g @ g
                else:
                    g = np.zeros(0)
                    d_raw = G[j, j]
                child_fragile = k + 1 > n or d_raw <= 1e-8 * n
                ok = True
                if child_fragile:
                    ok = k + 1 <= n and _svd_eigs(kern.instance.X, cand)[2]
            if not ok:
                excluded += _count_models(p - j - 1, max_size - k - 1)
                continue
            # evidence factor
            if k:
                l = linalg.solve_triangular(L, Gt[S, j], lower=True, check_finite=False)
                d = Gt[j, j] + 1.0 / w - l @ l
                uj = (rt[j] - l @ u) / math.sqrt(d)
            else:
                l = np.zeros(0)
                d = Gt[j, j] + 1.0 / w
                uj = rt[j] / math.sqrt(d)
            L2 = np.zeros((k + 1, k + 1))
            L2[:k, :k] = L
            L2[k, :k] = l
            L2[k, k] = math.sqrt(d)
            u2 = np.append(u, uj)
            logdiag2 = logdiag + 0.5 * math.log(d)
            logdet = 2.0 * logdiag2 + (k + 1) * log_w
            models.append(tuple(cand))
            logev.append(kern._finish(logdet, kern.yyt - float(u2 @ u2)))
            if k + 1 < max_size:
                R2 = None
                if not child_fragile:
                    R2 = np.zeros((k + 1, k + 1))
                    R2[:k, :k] = R
                    R2[k, :k] = g
                    R2[k, k] = math.sqrt(d_raw)
                rec(cand, L2, u2, logdiag2, R2, j + 1, child_fragile)

    if max_size >= 1:
        rec([], np.zeros((0, 0)), np.zeros(0), 0.0, np.zeros((0, 0)), 0, False)
    return excluded


# ---------------------------------------------------------------------------
# MCMC


MOVES = ("add", "delete", "swap")


@dataclass(frozen=True)
class SamplerConfig:
    """sweeps counts every sweep including burn-in; a sweep is
    ``moves_per_sweep`` proposals on xi (default p)."""

    sweeps: int = 2000
    burn_in: int = 200
    thin: int = 1
    move_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    seed: int = 0
    moves_per_sweep: int | None = None
    proposal: str = "uniform"      # or "screened": inclusion candidates favour large |X_j'Y|
    screen_mix: float = 0.5        # uniform share of the screened proposal
    init: object = "empty"         # "empty", "truth", or 0-based indices
    draw_parameters: bool = True
    record_transitions: bool = False

    def __post_init__(self):
        w = self.move_weights
        if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ValueError("move weights must be three nonnegative numbers summing to 1")
        if not (0 <= self.burn_in < self.sweeps):
            raise ValueError("need 0 <= burn_in < sweeps")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.proposal not in ("uniform", "screened"):
            raise ValueError("proposal must be 'uniform' or 'screened'")
        if not 0 < self.screen_mix <= 1:
            raise ValueError("screen_mix must lie in (0, 1]")
        if self.moves_per_sweep is not None and self.moves_per_sweep < 1:
            raise ValueError("moves_per_sweep must be >= 1")


@dataclass
class Chain:
    """Recorded states of one chain (one record per kept sweep)."""

    p: int
    models: list[tuple]
    log_target: np.ndarray
    sigma2: np.ndarray | None
    beta: np.ndarray | None
    cond_mean: np.ndarray | None
    accepted: dict[str, int]
    proposed: dict[str, int]
    config: SamplerConfig
    transitions: Counter | None = None

    def frequencies(self) -> dict[tuple, float]:
        c = Counter(self.models)
        m = len(self.models)
        return {k: v / m for k, v in sorted(c.items(), key=lambda kv: (len(kv[0]), kv[0]))}

    def acceptance_rate(self) -> float:
        tot = sum(self.proposed.values())
        return sum(self.accepted.values()) / tot if tot else 0.0

    def ess(self) -> float:
        return effective_sample_size(self.log_target)


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of autocorrelations; nan for a
    constant trace."""
    x = np.asarray(x, dtype=float)
    m = x.size
    if m < 4:
        return float(m)
    x = x - x.mean()
    var = float(x @ x) / m
    if var <= 1e-300 * max(1.0, float(np.max(np.abs(x))) ** 2) or var == 0.0:
        return math.nan
    nfft = 1 << (2 * m - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    acf = np.fft.irfft(f * np.conj(f), nfft)[:m] / (m * var)
    s = 0.0
    for k in range(1, m - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        s += pair
    tau = -1.0 + 2.0 * (acf[0] + s) if s else 1.0
    return float(m / max(tau, 1e-12))


def _initial_state(cfg: SamplerConfig, instance: ProblemInstance) -> tuple:
    if isinstance(cfg.init, str):
        if cfg.init == "empty":
            return ()
        if cfg.init == "truth":
            instance.require_truth()
            return tuple(instance.xi_star.members)
        raise ValueError(f"unknown init {cfg.init!r}")
    if isinstance(cfg.init, ModelIndex):
        return tuple(cfg.init.members)
    return tuple(sorted(int(j) for j in cfg.init))


def mcmc_sample(instance: ProblemInstance, prior: PriorSpec, config: SamplerConfig) -> Chain:
    """Metropolis-Hastings over xi with add/delete/swap moves.

    Conjugate priors: collapsed moves with beta and sigma^2 integrated out,
    followed by conditional draws of (sigma^2, beta) at recorded sweeps.
    Laplace components: the exponential scale mixture is carried as latent
    variances; each sweep runs the xi moves given them, then draws
    (sigma^2, beta) and refreshes the latent variances.
    """
    kern = EvidenceKernel(instance, prior)
    p = instance.p
    rng = np.random.default_rng(config.seed)
    moves = config.moves_per_sweep or p
    sel = prior.selection
    log_pi = np.asarray(sel.log_mass_of_size(np.arange(p + 1)), dtype=float)

    # inclusion proposal weights
    if config.proposal == "screened":
        c = kern.r ** 2
        tot = float(np.sum(c))
        q = config.screen_mix / p + (1 - config.screen_mix) * (c / tot if tot > 0 else 1.0 / p)
    else:
        q = np.full(p, 1.0 / p)
    q = q / q.sum()
    cdf = np.cumsum(q)
    cdf[-1] = 1.0
    logq = np.log(q)
    uniform = config.proposal == "uniform"

    augmented = not kern.conjugate
    slab, spike = prior.slab, prior.spike
    omega1 = omega0 = None
    if augmented:
        if slab.kind == "laplace":
            omega1 = rng.exponential(2.0 / slab.scale ** 2, size=p)
        if spike.kind == "laplace":
            omega0 = rng.exponential(2.0 / spike.scale ** 2, size=p)

    cache: dict[tuple, float] = {}

    def target(members: tuple) -> float:
        v = cache.get(members)
        if v is None:
            if not kern.full_rank(members):
                v = -math.inf
            elif augmented:
                v = log_pi[len(members)] + kern.raw_log_evidence(members, omega1, omega0)
            else:
                v = log_pi[len(members)] + kern.log_evidence(members)
            cache[members] = v
        return v

    def draw_outside(members_set) -> int:
        # draw j ~ q restricted to non-members by rejection
        while True:
            if uniform:
                j = int(rng.integers(p))
            else:
                j = int(np.searchsorted(cdf, rng.random(), side="right"))
                j = min(j, p - 1)
            if j not in members_set:
                return j

    state = _initial_state(config, instance)
    cur = target(state)
    if cur == -math.inf:
        raise RankDeficientError("initial model is not of full rank", -1)
    members_set = set(state)
    q_in = float(sum(q[j] for j in state))  # proposal weight held by members

    w_add, w_del, w_swap = config.move_weights
    lw_add = math.log(w_add) if w_add > 0 else -math.inf
    lw_del = math.log(w_del) if w_del > 0 else -math.inf
    cum = (w_add, w_add + w_del)

    accepted = dict.fromkeys(MOVES, 0)
    proposed = dict.fromkeys(MOVES, 0)
    transitions = Counter() if config.record_transitions else None
    rec_models, rec_lt, rec_s2, rec_beta, rec_mean = [], [], [], [], []

    for sweep in range(config.sweeps):
        if augmented:
            cache.clear()
            cur = target(state)
        U = rng.random((moves, 3))
        for mv in range(moves):
            u0, u1, u2 = U[mv]
            k = len(state)
            if u0 < cum[0]:
                move = "add"
                proposed[move] += 1
                if k == p:
                    continue
                j = draw_outside(members_set)
                pos = bisect.bisect_left(state, j)
                prop = state[:pos] + (j,) + state[pos:]
                lfwd = lw_add + logq[j] - math.log(max(1.0 - q_in, 1e-300))
                lrev = lw_del - math.log(k + 1)
                dq = q[j]
            elif u0 < cum[1]:
                move = "delete"
                proposed[move] += 1
                if k == 0:
                    continue
                i = int(u1 * k)
                j = state[i]
                prop = state[:i] + state[i + 1:]
                lfwd = lw_del - math.log(k)
                lrev = lw_add + logq[j] - math.log(max(1.0 - q_in + q[j], 1e-300))
                dq = -q[j]
            else:
                move = "swap"
                proposed[move] += 1
                if k == 0 or k == p:
                    continue
                i = int(u1 * k)
                out = state[i]
                j = draw_outside(members_set)
                rest = state[:i] + state[i + 1:]
                pos = bisect.bisect_left(rest, j)
                prop = rest[:pos] + (j,) + rest[pos:]
                lfwd = logq[j] - math.log(max(1.0 - q_in, 1e-300))
                lrev = logq[out] - math.log(max(1.0 - q_in - q[j] + q[out], 1e-300))
                dq = q[j] - q[out]
            new = target(prop)
            if new == -math.inf:
                continue
            if math.log(u2) < new - cur + lrev - lfwd:
                if transitions is not None:
                    transitions[(state, prop)] += 1
                state = prop
                cur = new
                q_in += dq
                accepted[move] += 1
                if move == "add":
                    members_set.add(j)
                elif move == "delete":
                    members_set.discard(j)
                else:
                    members_set.discard(out)
                    members_set.add(j)
        if augmented:
            q_in = float(sum(q[j] for j in state))  # guard against drift
            s2, beta, cmean = kern.draw(state, 1, rng, omega1, omega0)
            s2, beta = float(s2[0]), beta[0]
            z = beta / math.sqrt(s2)
            inm = np.zeros(p, bool)
            inm[list(state)] = True
            if slab.kind == "laplace":
                omega1 = _refresh_scale(omega1, z, inm, slab.scale, rng)
            if spike.kind == "laplace":
                omega0 = _refresh_scale(omega0, z, ~inm, spike.scale, rng)
        if sweep >= config.burn_in and (sweep - config.burn_in) % config.thin == 0:
            rec_models.append(state)
            rec_lt.append(cur)
            if augmented:
                rec_s2.append(s2)
                rec_beta.append(beta)
                rec_mean.append(cmean)

    sigma2 = beta_arr = cmean_arr = None
    if augmented:
        sigma2, beta_arr, cmean_arr = np.array(rec_s2), np.array(rec_beta), np.array(rec_mean)
    elif config.draw_parameters and rec_models:
        sigma2, beta_arr, cmean_arr = _collapsed_draws(kern, rec_models, rng)
    return Chain(p=p, models=rec_models, log_target=np.array(rec_lt), sigma2=sigma2, beta=beta_arr,
                 cond_mean=cmean_arr, accepted=accepted, proposed=proposed, config=config,
                 transitions=transitions)


def _refresh_scale(omega, z, active, rate, rng):
    """Latent variances of a laplace component: inverse-gaussian full
    conditional where the component is in use, prior draw elsewhere."""
    out = rng.exponential(2.0 / rate ** 2, size=omega.size)
    idx = np.flatnonzero(active)
    if idx.size:
        az = np.maximum(np.abs(z[idx]), 1e-12)
        inv = rng.wald(rate / az, rate ** 2)
        out[idx] = 1.0 / inv
    return out


def _collapsed_draws(kern: EvidenceKernel, models: list[tuple], rng):
    """One (sigma^2, beta) draw per recorded state, grouped by model."""
    m = len(models)
    s2 = np.empty(m)
    beta = np.zeros((m, kern.p))
    cmean = np.zeros((m, kern.p))
    groups: dict[tuple, list[int]] = {}
    for i, key in enumerate(models):
        groups.setdefault(key, []).append(i)
    for key in sorted(groups, key=lambda k: (len(k), k)):
        pos = groups[key]
        d_s2, d_beta, mean = kern.draw(key, len(pos), rng)
        s2[pos] = d_s2
        beta[pos] = d_beta
        cmean[pos] = mean
    return s2, beta, cmean


# ---------------------------------------------------------------------------
# posterior summaries


@dataclass(frozen=True)
class PosteriorSummary:
    mode: str
    prob_true_model: float
    p_sigma_interval: float
    p_overfit_cap: float
    p_superset: float
    p_spike_bound: float
    p_l2_ball: float
    p_l2_ball_restricted: float
    p_theta_hat: float
    p_theta_hat_superset: float
    p_theta_tilde: float
    post_mean_beta: np.ndarray
    post_mean_l2_error: float
    ess: float | None
    draws: int

    FIELDS = ("mode", "prob_true_model", "p_sigma_interval", "p_overfit_cap", "p_superset",
              "p_spike_bound", "p_l2_ball", "p_l2_ball_restricted", "p_theta_hat",
              "p_theta_hat_superset", "p_theta_tilde", "post_mean_l2_error", "ess", "draws")

    def row(self) -> dict:
        return {f: getattr(self, f) for f in self.FIELDS}


@dataclass(frozen=True)
class _Targets:
    s2_lo: float
    s2_hi: float
    cap: int
    l2_radius: float
    z0n: float
    beta_star: np.ndarray
    star: frozenset
    star_key: tuple


def _targets(instance, consts, lam, z0n) -> _Targets:
    instance.require_truth()
    if lam is None or not lam > 0:
        raise ValueError("lambda must be positive")
    n, p, s = instance.n, instance.p, instance.s
    eps = epsilon_n(n, p, max(s, 1))
    m1 = consts.M1 * eps
    s2s = instance.sigma_star ** 2
    lo = s2s * (1 - m1) / (1 + m1)
    hi = s2s * (1 + m1) / (1 - m1) if m1 < 1 else math.inf
    return _Targets(s2_lo=lo, s2_hi=hi, cap=consts.overfit_cap(s),
                    l2_radius=consts.M2 * instance.sigma_star * eps / math.sqrt(lam), z0n=z0n,
                    beta_star=np.asarray(instance.beta_star), star=frozenset(instance.xi_star.members),
                    star_key=tuple(instance.xi_star.members))


def _clauses(tg: _Targets, members: tuple, s2: np.ndarray, beta: np.ndarray) -> dict[str, np.ndarray]:
    """Per-draw clause indicators for draws sharing one model."""
    m = s2.size
    mset = set(members)
    over = len(mset - tg.star) <= tg.cap
    sup = tg.star <= mset
    sig = (s2 >= tg.s2_lo) & (s2 <= tg.s2_hi)
    off = np.ones(beta.shape[1], bool)
    off[list(members)] = False
    if off.any():
        spike = np.max(np.abs(beta[:, off]), axis=1) <= np.sqrt(s2) * tg.z0n
    else:
        spike = np.ones(m, bool)
    diff = beta - tg.beta_star
    l2 = np.linalg.norm(diff, axis=1) <= tg.l2_radius
    idx = list(members)
    l2r = np.linalg.norm(diff[:, idx], axis=1) <= tg.l2_radius if idx else np.ones(m, bool)
    ones = np.ones(m, bool)
    hat = sig & over & spike & l2
    return {
        "true": ones * (members == tg.star_key),
        "sigma": sig, "overfit": ones * over, "superset": ones * sup, "spike": spike,
        "l2": l2, "l2r": l2r, "hat": hat, "hat_sup": hat & sup,
        "tilde": sig & over & sup & spike & l2r,
    }


def summarize(post, instance: ProblemInstance, consts: RegularityConstants, lam: float,
              z0n: float, *, draws_per_model: int = 1000, seed: int = 0,
              min_mass: float = 1e-12) -> PosteriorSummary:
    """Posterior probabilities of the good-set clauses.

    For an exact posterior, beta-dependent clauses use conditional Monte Carlo
    within each model carrying at least ``min_mass``; the posterior mean is
    analytic.  For a chain, every recorded state contributes one draw and the
    posterior mean averages the conditional means.
    """
    tg = _targets(instance, consts, lam, z0n)
    keys = ("true", "sigma", "overfit", "superset", "spike", "l2", "l2r", "hat", "hat_sup", "tilde")
    acc = dict.fromkeys(keys, 0.0)
    if isinstance(post, ModelPosterior):
        rng = np.random.default_rng(seed)
        kern = post.kernel
        mean = np.zeros(instance.p)
        used = 0
        for key, w in zip(post.models, post.mass):
            if w < min_mass:
                continue
            s2, beta, cmean = kern.draw(key, draws_per_model, rng)
            mean += w * cmean
            cl = _clauses(tg, key, s2, beta)
            for k in keys:
                acc[k] += w * float(np.mean(cl[k]))
            used += draws_per_model
        total = float(np.sum(post.mass[post.mass >= min_mass]))
        acc = {k: v / total for k, v in acc.items()}
        mean = mean / total
        mode, ess = "exact", None
    elif isinstance(post, Chain):
        if post.sigma2 is None:
            raise ValueError("chain has no parameter draws; run with draw_parameters=True")
        groups: dict[tuple, list[int]] = {}
        for i, key in enumerate(post.models):
            groups.setdefault(key, []).append(i)
        m = len(post.models)
        for key, pos in groups.items():
            cl = _clauses(tg, key, post.sigma2[pos], post.beta[pos])
            for k in keys:
                acc[k] += float(np.sum(cl[k]))
        acc = {k: v / m for k, v in acc.items()}
        mean = post.cond_mean.mean(axis=0)
        mode, ess, used = "mcmc", post.ess(), m
    else:
        raise TypeError("summarize expects a ModelPosterior or a Chain")
    return PosteriorSummary(
        mode=mode, prob_true_model=acc["true"], p_sigma_interval=acc["sigma"],
        p_overfit_cap=acc["overfit"], p_superset=acc["superset"], p_spike_bound=acc["spike"],
        p_l2_ball=acc["l2"], p_l2_ball_restricted=acc["l2r"], p_theta_hat=acc["hat"],
        p_theta_hat_superset=acc["hat_sup"], p_theta_tilde=acc["tilde"], post_mean_beta=mean,
        post_mean_l2_error=float(np.linalg.norm(mean - tg.beta_star)), ess=ess, draws=used)


@dataclass(frozen=True)
class RatioMeasurement:
    ratio: float
    log_evidence_gamma: float
    log_evidence_star: float
    p_tilde_gamma: float
    p_tilde_star: float


def conditional_posterior_ratio(instance: ProblemInstance, prior: PriorSpec, gamma: ModelIndex,
                                consts: RegularityConstants, lam: float, z0n: float, *,
                                draws: int = 4000, seed: int = 0) -> RatioMeasurement:
    """[E(gamma) P(good set | Y, gamma)] / [E(xi*) P(good set | Y, xi*)], the
    good set being the overfitted-selection set and E the model evidence."""
    tg = _targets(instance, consts, lam, z0n)
    kern = EvidenceKernel(instance, prior)
    rng = np.random.default_rng(seed)
    out = []
    for key in (tuple(gamma.members), tg.star_key):
        if not kern.full_rank(key):
            raise RankDeficientError(f"model {ModelIndex(key, instance.p)} is not of full rank", -1)
        le = kern.log_evidence(key)
        s2, beta, _ = kern.draw(key, draws, rng)
        pt = float(np.mean(_clauses(tg, key, s2, beta)["tilde"]))
        out.append((le, pt))
    (lg, pg), (ls, ps) = out
    if ps == 0:
        ratio = math.inf if pg > 0 else math.nan
    else:
        ratio = math.exp(lg - ls) * pg / ps
    return RatioMeasurement(ratio, lg, ls, pg, ps)
