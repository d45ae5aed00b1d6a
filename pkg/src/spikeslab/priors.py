"""Spike-and-slab prior components and checks of the prior conditions.

Spike and slab densities live on the standardized scale z = beta_j / sigma,
so beta_j | sigma^2 has density h(beta_j / sigma) / sigma.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import special, stats

from .model_core import ModelIndex, ProblemInstance, RegularityConstants, epsilon_n

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# variance prior g


def _log_diff_exp(la: float, lb: float) -> float:
    """log(exp(la) - exp(lb)) for la >= lb."""
    if lb == -math.inf:
        return la
    if la <= lb:
        return -math.inf
    return la + math.log1p(-math.exp(lb - la))


@dataclass(frozen=True)
class VariancePrior:
    """Inverse-gamma(a, b) prior on sigma^2, optionally truncated to [lo, hi]."""

    kind: str = "inverse-gamma"
    a: float = 1.0
    b: float = 1.0
    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.kind not in ("inverse-gamma", "truncated-inverse-gamma"):
            raise ValueError(f"unknown variance prior {self.kind!r}")
        if not (self.a > 0 and self.b > 0):
            raise ValueError("inverse-gamma needs a, b > 0")
        if self.truncated:
            lo, hi = self.lo, self.hi
            if lo is None or hi is None or not (0 <= lo < hi <= math.inf):
                raise ValueError("truncation needs 0 <= lo < hi")
        elif self.lo is not None or self.hi is not None:
            raise ValueError("lo/hi only apply to the truncated kind")

    @property
    def truncated(self) -> bool:
        return self.kind == "truncated-inverse-gamma"

    @property
    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi) if self.truncated else (0.0, math.inf)

    @staticmethod
    def _log_interval(a: float, b: float, lo: float, hi: float) -> float:
        # IG(a, b) cdf at x is Q(a, b / x)
        lower = special.gammaincc(a, b / lo) if lo > 0 else 0.0   # P(s2 <= lo)
        upper = special.gammainc(a, b / hi) if hi < math.inf else 0.0  # P(s2 >= hi)
        mass = 1.0 - lower - upper
        if mass > 1e-8:
            return math.log(mass)
        # far in one tail: difference of the small side
        if lower < 0.5:
            return _log_diff_exp(math.log(max(special.gammaincc(a, b / hi), 1e-320)),
                                 math.log(lower) if lower > 0 else -math.inf)
        return _log_diff_exp(math.log(max(special.gammainc(a, b / lo), 1e-320)),
                             math.log(upper) if upper > 0 else -math.inf)

    def log_normalizer(self) -> float:
        """log of the IG(a, b) mass on the support (0 when untruncated)."""
        if not self.truncated:
            return 0.0
        return self._log_interval(self.a, self.b, self.lo, self.hi)

    def log_evidence_adjustment(self, a_post: float, b_post: float) -> float:
        """Correction to the conjugate log evidence caused by truncation."""
        if not self.truncated:
            return 0.0
        return self._log_interval(a_post, b_post, self.lo, self.hi) - self.log_normalizer()

    def logpdf(self, s2):
        s2 = np.asarray(s2, dtype=float)
        lo, hi = self.support
        with np.errstate(divide="ignore"):
            out = stats.invgamma.logpdf(s2, self.a, scale=self.b) - self.log_normalizer()
        inside = (s2 > 0) & (s2 >= lo) & (s2 <= hi)
        return np.where(inside, out, -np.inf)

    def pdf(self, s2):
        return np.exp(self.logpdf(s2))

    def sample_conditional(self, a_post: float, b_post: float, rng: np.random.Generator,
                           size=None):
        """Draw from IG(a_post, b_post) restricted to the support."""
        if not self.truncated:
            return b_post / rng.gamma(a_post, 1.0, size=size)
        lo, hi = self.support
        f_lo = special.gammaincc(a_post, b_post / lo) if lo > 0 else 0.0
        f_hi = special.gammaincc(a_post, b_post / hi) if hi < math.inf else 1.0
        u = f_lo + (f_hi - f_lo) * rng.random(size=size)
        u = np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
        x = b_post / special.gammainccinv(a_post, u)
        return np.clip(x, lo, hi)


# ---------------------------------------------------------------------------
# spike h0 and slab h1


@dataclass(frozen=True)
class SpikeDist:
    """Spike density on the z scale: dirac, gaussian(tau0) or laplace(rho0).

    ``scale`` is the standard deviation for gaussian and the rate for laplace.
    """

    kind: str = "dirac"
    scale: float | None = None

    def __post_init__(self):
        if self.kind not in ("dirac", "gaussian", "laplace"):
            raise ValueError(f"unknown spike {self.kind!r}")
        if self.kind != "dirac" and not (self.scale is not None and self.scale > 0):
            raise ValueError(f"{self.kind} spike needs a positive scale")

    @property
    def is_point_mass(self) -> bool:
        return self.kind == "dirac"

    def pdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return stats.norm.pdf(z, scale=self.scale)
        if self.kind == "laplace":
            return 0.5 * self.scale * np.exp(-self.scale * np.abs(z))
        raise ValueError("the dirac spike has no density")

    def tail_mass(self, z):
        """P(|Z| > z) for z >= 0."""
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return special.erfc(z / (self.scale * math.sqrt(2.0)))
        if self.kind == "laplace":
            return np.exp(-self.scale * z)
        return np.zeros_like(z)

    def variance(self) -> float:
        if self.kind == "gaussian":
            return self.scale ** 2
        if self.kind == "laplace":
            return 2.0 / self.scale ** 2
        return 0.0


@dataclass(frozen=True)
class SlabDist:
    """Slab density on the z scale: gaussian(tau1) or laplace(rho1)."""

    kind: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplace"):
            raise ValueError(f"unknown slab {self.kind!r}")
        if not (self.scale is not None and self.scale > 0):
            raise ValueError("slab needs a positive scale")

    def logpdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "gaussian":
            return -0.5 * LOG_2PI - math.log(self.scale) - 0.5 * (z / self.scale) ** 2
        return math.log(0.5 * self.scale) - self.scale * np.abs(z)

    def pdf(self, z):
        return np.exp(self.logpdf(z))

    @property
    def sup_density(self) -> float:
        return float(self.pdf(0.0))

    def log_lipschitz(self, z1: float) -> float:
        """Lipschitz constant of log h1 on [-z1, z1]."""
        if self.kind == "gaussian":
            return z1 / self.scale ** 2
        return float(self.scale)

    def variance(self) -> float:
        return self.scale ** 2 if self.kind == "gaussian" else 2.0 / self.scale ** 2


def compute_z0n(spike: SpikeDist, n: int) -> float:
    """Symmetric spike quantile with two-sided tail mass exp(-n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if spike.kind == "dirac":
        return 0.0
    if spike.kind == "laplace":
        return n / spike.scale
    # upper normal quantile at exp(-n)/2, evaluated in log space
    return spike.scale * float(-special.ndtri_exp(-n - math.log(2.0)))


def slab_floor(slab: SlabDist, z1n: float) -> float:
    """inf of h1 over [-z1n, z1n]; both slab kinds are unimodal and symmetric."""
    if z1n < 0:
        raise ValueError("z1n must be nonnegative")
    return float(slab.pdf(z1n))


# ---------------------------------------------------------------------------
# model selection prior pi


def _log_binom(p: int, k):
    k = np.asarray(k, dtype=float)
    return special.gammaln(p + 1) - special.gammaln(k + 1) - special.gammaln(p - k + 1)


@dataclass(frozen=True)
class ModelSelectionPrior:
    """Prior over models.  bernoulli: independent inclusion with probability q
    (default 1/p).  csv: size weights w(0..p) spread uniformly within a size."""

    kind: str
    p: int
    q: float | None = None
    log_weights: tuple[float, ...] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.kind == "bernoulli":
            q = 1.0 / self.p if self.q is None else float(self.q)
            if not 0 < q < 1:
                raise ValueError("inclusion probability must lie in (0, 1)")
            object.__setattr__(self, "q", q)
        elif self.kind == "csv":
            lw = np.asarray(self.log_weights, dtype=float)
            if lw.shape != (self.p + 1,):
                raise ValueError("csv needs p + 1 weights")
            if np.any(np.isnan(lw)) or np.all(np.isneginf(lw)):
                raise ValueError("csv weights must be nonnegative with positive total")
            lw = lw - special.logsumexp(lw)
            object.__setattr__(self, "log_weights", tuple(float(v) for v in lw))
        else:
            raise ValueError(f"unknown selection prior {self.kind!r}")

    @classmethod
    def bernoulli(cls, p: int, q: float | None = None) -> "ModelSelectionPrior":
        return cls("bernoulli", p, q=q)

    @classmethod
    def csv(cls, weights) -> "ModelSelectionPrior":
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or not np.sum(w) > 0:
            raise ValueError("csv weights must be nonnegative with positive total")
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        return cls("csv", len(w) - 1, log_weights=tuple(lw))

    @classmethod
    def csv_geometric(cls, p: int, base: float) -> "ModelSelectionPrior":
        """w(t) proportional to base^(-t)."""
        if not base > 0:
            raise ValueError("csv base must be positive")
        t = np.arange(p + 1)
        return cls("csv", p, log_weights=tuple(-t * math.log(base)))

    @classmethod
    def csv_power(cls, p: int, power: float) -> "ModelSelectionPrior":
        """w(t) proportional to p^(-power t)."""
        return cls.csv_geometric(p, float(p) ** power)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_size_marginal(np.arange(self.p + 1)))

    def log_size_marginal(self, t):
        """log of the total mass on models of size t."""
        t = np.asarray(t)
        if self.kind == "bernoulli":
            return stats.binom.logpmf(t, self.p, self.q)
        lw = np.asarray(self.log_weights)
        out = np.full(t.shape, -np.inf)
        ok = (t >= 0) & (t <= self.p)
        out[ok] = lw[t[ok]]
        return out if out.ndim else float(out)

    def size_marginal(self, t):
        return np.exp(self.log_size_marginal(t))

    def log_mass_of_size(self, k):
        """log pi(xi) for any single model with |xi| = k."""
        if self.kind == "bernoulli":
            k = np.asarray(k, dtype=float)
            return k * math.log(self.q) + (self.p - k) * math.log1p(-self.q)
        return self.log_size_marginal(k) - _log_binom(self.p, k)

    def log_mass(self, xi: ModelIndex) -> float:
        return float(self.log_mass_of_size(len(xi)))

    def mass(self, xi: ModelIndex) -> float:
        return math.exp(self.log_mass(xi))

    def tail(self, t: int) -> float:
        """Total mass on models with |xi| > t."""
        if self.kind == "bernoulli":
            return float(stats.binom.sf(t, self.p, self.q))
        if t >= self.p:
            return 0.0
        return float(np.sum(self.size_marginal(np.arange(t + 1, self.p + 1))))


def selection_mass(selection: ModelSelectionPrior, xi: ModelIndex) -> float:
    """Prior mass of xi, normalized over all 2^p models."""
    return selection.mass(xi)


# ---------------------------------------------------------------------------
# full prior


@dataclass(frozen=True)
class PriorSpec:
    variance: VariancePrior
    selection: ModelSelectionPrior
    spike: SpikeDist
    slab: SlabDist

    @property
    def p(self) -> int:
        return self.selection.p

    @property
    def is_conjugate(self) -> bool:
        return self.slab.kind == "gaussian" and self.spike.kind in ("dirac", "gaussian")


def default_prior(p: int) -> PriorSpec:
    return PriorSpec(VariancePrior(), ModelSelectionPrior.bernoulli(p), SpikeDist("dirac"),
                     SlabDist("gaussian", 1.0))


def _get(mapping, key, default=None, cast=str):
    v = mapping.get(key)
    if v is None or (isinstance(v, str) and v.strip() == ""):
        return default
    return cast(v)


def prior_from_mapping(mapping: Mapping[str, str], p: int) -> PriorSpec:
    """Build a prior from flat dotted keys (variance.kind, selection.csv_base, ...)."""
    known = {"variance.kind", "variance.a", "variance.b", "variance.lo", "variance.hi",
             "selection.kind", "selection.q", "selection.csv_base", "selection.csv_power",
             "spike.kind", "spike.scale", "slab.kind", "slab.scale"}
    unknown = set(mapping) - known
    if unknown:
        raise ValueError(f"unknown prior keys: {sorted(unknown)}")
    vkind = _get(mapping, "variance.kind", "inverse-gamma")
    variance = VariancePrior(vkind, _get(mapping, "variance.a", 1.0, float),
                             _get(mapping, "variance.b", 1.0, float),
                             _get(mapping, "variance.lo", None, float),
                             _get(mapping, "variance.hi", None, float))
    skind = _get(mapping, "selection.kind", "bernoulli")
    if skind == "bernoulli":
        selection = ModelSelectionPrior.bernoulli(p, _get(mapping, "selection.q", None, float))
    elif skind == "csv":
        base = _get(mapping, "selection.csv_base", None, float)
        power = _get(mapping, "selection.csv_power", None, float)
        if (base is None) == (power is None):
            raise ValueError("csv selection needs exactly one of csv_base, csv_power")
        selection = (ModelSelectionPrior.csv_geometric(p, base) if base is not None
                     else ModelSelectionPrior.csv_power(p, power))
    else:
        raise ValueError(f"unknown selection kind {skind!r}")
    spike = SpikeDist(_get(mapping, "spike.kind", "dirac"), _get(mapping, "spike.scale", None, float))
    slab = SlabDist(_get(mapping, "slab.kind", "gaussian"), _get(mapping, "slab.scale", 1.0, float))
    return PriorSpec(variance, selection, spike, slab)


# ---------------------------------------------------------------------------
# prior condition audit


@dataclass(frozen=True)
class ClauseVerdict:
    clause: str
    value: float
    threshold: float
    holds: bool


@dataclass(frozen=True)
class PriorDiagnostics:
    n: int
    p: int
    s: int
    z0n: float
    z1n: float
    slab_floor: float
    sup_density: float
    pi_true: float
    tail: dict[int, float]
    clauses: tuple[ClauseVerdict, ...]
    premises: dict[str, bool]

    def verdict(self, prefix: str) -> bool:
        """All clause checks whose name starts with ``prefix`` hold."""
        return all(c.holds for c in self.clauses if c.clause.startswith(prefix))


def audit_assumption1(prior: PriorSpec, instance: ProblemInstance,
                      consts: RegularityConstants, t_max: int) -> PriorDiagnostics:
    """Evaluate the four prior conditions at the instance's (n, p, s)."""
    instance.require_truth()
    n, p, s = instance.n, instance.p, instance.s
    if not 1 <= t_max <= p:
        raise ValueError("need 1 <= t_max <= p")
    if prior.p != p:
        raise ValueError("prior and instance disagree on p")
    clauses = []

    # (a) g positive and finite across a wide grid of its support
    lo, hi = prior.variance.support
    grid = np.logspace(-6, 6, 241)
    grid = grid[(grid >= lo) & (grid <= hi)]
    if prior.variance.truncated:
        grid = np.concatenate([grid, np.linspace(lo, min(hi, lo + 1e6), 101)[1:-1]])
    # positivity judged on log g: g itself underflows near sigma^2 = 0
    logd = prior.variance.logpdf(grid)
    lmin = float(np.min(logd)) if logd.size else -math.inf
    ok = bool(logd.size and np.all(np.isfinite(logd)))
    clauses.append(ClauseVerdict("a:g_positive", lmin, -math.inf, ok))

    # (b) mass of the true model and size tails
    pi_true = prior.selection.mass(instance.xi_star)
    thr = p ** (-consts.A1 * s)
    clauses.append(ClauseVerdict("b:pi_true", pi_true, thr, pi_true >= thr))
    tail = {}
    for t in range(1, t_max + 1):
        tail[t] = prior.selection.tail(t)
        thr = p ** (-consts.A2 * t)
        clauses.append(ClauseVerdict(f"b:tail({t})", tail[t], thr, tail[t] <= thr))

    # (c) spike width against (1/p) sqrt(log p / n)
    z0n = compute_z0n(prior.spike, n)
    scale_c = math.sqrt(math.log(p) / n) / p
    clauses.append(ClauseVerdict("c:z0n_ratio", z0n / scale_c, 1.0, z0n / scale_c < 1.0))

    # (d) slab floor over the signal range
    s_eff = max(s, 1)
    zmax = float(np.max(np.abs(instance.beta_star))) / instance.sigma_star if s else 0.0
    z1n = zmax + epsilon_n(n, p, s_eff)
    floor = slab_floor(prior.slab, z1n)
    thr = p ** (-consts.A3)
    clauses.append(ClauseVerdict("d:slab_floor", floor, thr, floor >= thr))

    return PriorDiagnostics(n=n, p=p, s=s, z0n=z0n, z1n=z1n, slab_floor=floor,
                            sup_density=prior.slab.sup_density, pi_true=pi_true, tail=tail,
                            clauses=tuple(clauses), premises=consts.premises())
