"""Linear-model data structures, synthetic data, and projection/rank primitives.

Indices are stored 0-based internally.  Anything rendered for people (CSV
cells, CLI flags, ``str(ModelIndex)``) is 1-based.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# singular values below sigma_max * max(n, k) * RANK_RTOL count as zero
RANK_RTOL = 1e-12


class RankDeficientError(ValueError):
    """Raised when a model's design columns are linearly dependent."""

    def __init__(self, message: str, rank: int):
        super().__init__(f"{message} (numerical rank {rank})")
        self.rank = rank


class EnumerationBudgetError(RuntimeError):
    """Raised when a subset enumeration would exceed its configured cap."""


# ---------------------------------------------------------------------------
# ModelIndex


@dataclass(frozen=True, order=True)
class ModelIndex:
    """A model: strictly increasing 0-based column indices out of ``p``."""

    members: tuple[int, ...]
    p: int

    def __post_init__(self):
        members = tuple(int(j) for j in self.members)
        object.__setattr__(self, "members", members)
        if self.p < 0:
            raise ValueError("p must be nonnegative")
        for a, b in zip(members, members[1:]):
            if b <= a:
                raise ValueError(f"members must be strictly increasing: {members}")
        if members and (members[0] < 0 or members[-1] >= self.p):
            raise ValueError(f"members out of range for p={self.p}: {members}")

    @classmethod
    def of(cls, members: Iterable[int], p: int) -> "ModelIndex":
        """Build from any iterable of 0-based indices (sorted, duplicates rejected)."""
        m = sorted(int(j) for j in members)
        if len(set(m)) != len(m):
            raise ValueError(f"duplicate members: {m}")
        return cls(tuple(m), p)

    @classmethod
    def from_one_based(cls, members: Iterable[int], p: int) -> "ModelIndex":
        return cls.of((int(j) - 1 for j in members), p)

    @classmethod
    def parse(cls, text: str, p: int) -> "ModelIndex":
        """Parse 1-based text such as ``"1,3,7"``, ``"{1,3,7}"`` or ``""``."""
        tokens = [t for t in re.split(r"[\s,;{}|]+", text.strip()) if t]
        return cls.from_one_based((int(t) for t in tokens), p)

    @classmethod
    def empty(cls, p: int) -> "ModelIndex":
        return cls((), p)

    @classmethod
    def from_mask(cls, mask: int, p: int) -> "ModelIndex":
        return cls(tuple(j for j in range(p) if (mask >> j) & 1), p)

    @property
    def mask(self) -> int:
        """Compact bitmask encoding (bit j set iff j is a member)."""
        out = 0
        for j in self.members:
            out |= 1 << j
        return out

    def one_based(self) -> tuple[int, ...]:
        return tuple(j + 1 for j in self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __contains__(self, j) -> bool:
        return j in self.members

    def __str__(self) -> str:
        return "{" + ",".join(str(j) for j in self.one_based()) + "}"

    def _check(self, other: "ModelIndex"):
        if other.p != self.p:
            raise ValueError("models over different p")

    def union(self, other: "ModelIndex") -> "ModelIndex":
        self._check(other)
        return ModelIndex(tuple(sorted(set(self.members) | set(other.members))), self.p)

    def intersection(self, other: "ModelIndex") -> "ModelIndex":
        self._check(other)
        return ModelIndex(tuple(sorted(set(self.members) & set(other.members))), self.p)

    def difference(self, other: "ModelIndex") -> "ModelIndex":
        self._check(other)
        return ModelIndex(tuple(sorted(set(self.members) - set(other.members))), self.p)

    def complement(self) -> "ModelIndex":
        s = set(self.members)
        return ModelIndex(tuple(j for j in range(self.p) if j not in s), self.p)

    def issubset(self, other: "ModelIndex") -> bool:
        return set(self.members) <= set(other.members)

    def issuperset(self, other: "ModelIndex") -> bool:
        return set(self.members) >= set(other.members)

    def add(self, j: int) -> "ModelIndex":
        return ModelIndex.of(self.members + (j,), self.p)

    def remove(self, j: int) -> "ModelIndex":
        return ModelIndex(tuple(i for i in self.members if i != j), self.p)


# ---------------------------------------------------------------------------
# constants


@dataclass(frozen=True)
class RegularityConstants:
    """Constants of the prior and design conditions and of the posterior sets."""

    A1: float = 5.2
    A2: float = 3.5
    A3: float = 0.5
    K: float = 2.0
    M1: float = 8.0
    M2: float = 8.0
    M3: float = 3.0
    eta: float = 0.1

    def __post_init__(self):
        for name in ("A1", "A2", "A3", "K", "M1", "M2", "M3", "eta"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive real, got {v!r}")

    def premises(self) -> dict[str, bool]:
        """Which of the constant inequalities used by the posterior results hold."""
        m12 = math.sqrt(8.0 * max(self.A2, 1.0) * self.K)
        return {
            "A1+A3+1<A2K": self.A1 + self.A3 + 1.0 < self.A2 * self.K,
            "M1>sqrt(8max(A2,1)K)": self.M1 > m12,
            "M2>sqrt(8max(A2,1)K)": self.M2 > m12,
            "M3>sqrt(8A3K)": self.M3 > math.sqrt(8.0 * self.A3 * self.K),
        }

    def overfit_cap(self, s: int) -> int:
        """Largest allowed number of false inclusions, floor(K s)."""
        return int(math.floor(self.K * s + 1e-12))

    def united_order(self, s: int) -> int:
        """Order (K+1)s at which the united eigenvalue lambda is taken."""
        return int(math.floor((self.K + 1.0) * s + 1e-12))


# ---------------------------------------------------------------------------
# rank and projections


def numerical_rank(A: np.ndarray) -> int:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0
    sv = np.linalg.svd(A, compute_uv=False)
    tol = sv[0] * max(A.shape) * RANK_RTOL
    return int(np.sum(sv > tol))


def _columns(X: np.ndarray, xi) -> tuple[int, ...]:
    return tuple(xi.members) if isinstance(xi, ModelIndex) else tuple(xi)


def is_full_rank(X: np.ndarray, xi) -> tuple[bool, int]:
    """Return (full_rank, rank) for the columns of X indexed by xi."""
    cols = _columns(X, xi)
    if not cols:
        return True, 0
    if len(cols) > X.shape[0]:
        return False, numerical_rank(X[:, cols])
    r = numerical_rank(X[:, cols])
    return r == len(cols), r


def _orthobasis(X: np.ndarray, cols: tuple[int, ...]) -> np.ndarray:
    A = X[:, cols]
    U, sv, _ = np.linalg.svd(A, full_matrices=False)
    tol = sv[0] * max(A.shape) * RANK_RTOL if sv.size else 0.0
    rank = int(np.sum(sv > tol))
    if rank < len(cols):
        raise RankDeficientError(f"columns {[c + 1 for c in cols]} are linearly dependent", rank)
    return U


def project_onto_model(X: np.ndarray, xi, v: np.ndarray) -> np.ndarray:
    """P_xi v, using an orthonormal basis from the SVD of X_xi."""
    v = np.asarray(v, dtype=float)
    cols = _columns(X, xi)
    if not cols:
        return np.zeros_like(v)
    U = _orthobasis(X, cols)
    return U @ (U.T @ v)


def projection_matrix(X: np.ndarray, xi) -> np.ndarray:
    cols = _columns(X, xi)
    if not cols:
        return np.zeros((X.shape[0], X.shape[0]))
    U = _orthobasis(X, cols)
    return U @ U.T


def epsilon_n(n: int, p: int, s: int) -> float:
    """Estimation rate sqrt(s log p / n)."""
    if n < 2 or p < 2:
        raise ValueError("need n, p >= 2")
    if s < 1:
        raise ValueError("need s >= 1")
    return math.sqrt(s * math.log(p) / n)


# ---------------------------------------------------------------------------
# instances


def _frozen(a, dtype=float):
    if a is None:
        return None
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """Design, response and (in simulation mode) the ground truth."""

    X: np.ndarray
    Y: np.ndarray
    beta_star: np.ndarray | None = None
    sigma_star: float | None = None
    xi_star: ModelIndex | None = None
    seed: int | None = None
    noise: np.ndarray | None = field(default=None, repr=False)
    design: str | None = None

    def __post_init__(self):
        X = _frozen(self.X)
        Y = _frozen(self.Y)
        if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
            raise ValueError("X must be a nonempty n x p matrix")
        n, p = X.shape
        if Y.shape != (n,):
            raise ValueError("Y must be an n-vector")
        norms = np.linalg.norm(X, axis=0)
        if np.any(np.abs(norms - math.sqrt(n)) > 1e-9 * math.sqrt(n)):
            raise ValueError("columns of X must have Euclidean norm sqrt(n); see standardize_columns")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "noise", _frozen(self.noise))
        if self.beta_star is not None:
            b = _frozen(self.beta_star)
            if b.shape != (p,):
                raise ValueError("beta_star must be a p-vector")
            object.__setattr__(self, "beta_star", b)
            support = ModelIndex(tuple(int(j) for j in np.flatnonzero(b)), p)
            if self.xi_star is None:
                object.__setattr__(self, "xi_star", support)
            elif self.xi_star != support:
                raise ValueError("xi_star must equal the support of beta_star")
            if self.sigma_star is None or not self.sigma_star > 0:
                raise ValueError("sigma_star must be positive when ground truth is given")
            object.__setattr__(self, "sigma_star", float(self.sigma_star))
            ok, r = is_full_rank(X, support)
            if not ok:
                raise RankDeficientError("true support is not of full rank", r)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def s(self) -> int:
        return len(self.xi_star) if self.xi_star is not None else 0

    @property
    def has_truth(self) -> bool:
        return self.beta_star is not None

    def require_truth(self):
        if not self.has_truth:
            raise ValueError("this operation needs ground truth (simulation mode)")


def standardize_columns(X: np.ndarray) -> np.ndarray:
    """Center each column, then rescale it to Euclidean norm sqrt(n)."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    Xc = X - X.mean(axis=0)
    norms = np.linalg.norm(Xc, axis=0)
    if np.any(norms <= 1e-300):
        raise ValueError("a column is constant and cannot be standardized")
    return Xc * (math.sqrt(n) / norms)


_DESIGN_RE = re.compile(r"^\s*([a-z\-]+)\s*(?:\(\s*(?:rho\s*=\s*)?([-+0-9.eE]+)\s*\))?\s*$")


def parse_design(design) -> tuple[str, float | None]:
    """Parse ``"iid-gaussian"``, ``"equicorrelated(0.5)"``, ``"duplicate-column-demo"``
    or ``"orthogonal"`` into ``(kind, rho)``."""
    if isinstance(design, tuple):
        return design[0], (None if len(design) < 2 else float(design[1]))
    m = _DESIGN_RE.match(str(design))
    if not m:
        raise ValueError(f"unrecognized design spec {design!r}")
    kind, arg = m.group(1), m.group(2)
    if kind not in ("iid-gaussian", "equicorrelated", "duplicate-column-demo", "orthogonal"):
        raise ValueError(f"unknown design kind {kind!r}")
    if kind == "equicorrelated":
        if arg is None:
            raise ValueError("equicorrelated design needs rho")
        return kind, float(arg)
    return kind, None


def design_from_gram(n: int, gram: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Centered design whose normalized Gram X'X/n equals ``gram`` exactly
    (up to rounding).  ``gram`` must be a correlation matrix and p <= n - 1."""
    gram = np.asarray(gram, dtype=float)
    p = gram.shape[0]
    if p > n - 1:
        raise ValueError("an exact Gram needs p <= n - 1 centered directions")
    Z = rng.standard_normal((n, p))
    Z -= Z.mean(axis=0)
    Q, _ = np.linalg.qr(Z)
    L = np.linalg.cholesky(gram)
    return math.sqrt(n) * Q @ L.T


def generate_design(n: int, p: int, design, rng: np.random.Generator) -> np.ndarray:
    """Standardized n x p design of the given kind."""
    if n < 2 or p < 1:
        raise ValueError("need n >= 2 and p >= 1")
    kind, rho = parse_design(design)
    if kind == "orthogonal":
        return design_from_gram(n, np.eye(p), rng)
    if kind == "equicorrelated":
        lo = -1.0 / (p - 1) if p > 1 else -math.inf
        if not (lo < rho < 1.0):
            raise ValueError(f"rho={rho} outside ({lo}, 1)")
        # one shared factor plus idiosyncratic noise gives corr rho
        Z = rng.standard_normal((n, p))
        if rho >= 0:
            X = math.sqrt(1 - rho) * Z + math.sqrt(rho) * rng.standard_normal((n, 1))
        else:
            S = (1 - rho) * np.eye(p) + rho * np.ones((p, p))
            X = Z @ np.linalg.cholesky(S).T
        return standardize_columns(X)
    X = standardize_columns(rng.standard_normal((n, p)))
    if kind == "duplicate-column-demo":
        if p < 2:
            raise ValueError("duplicate-column-demo needs p >= 2")
        X[:, 1] = X[:, 0]
    return X


def simulate_response(X: np.ndarray, beta_star: np.ndarray, sigma_star: float,
                      noise_rng: np.random.Generator, *, seed: int | None = None,
                      design: str | None = None) -> ProblemInstance:
    """Y = X beta* + sigma* eps with eps standard normal, then centered."""
    if not sigma_star > 0:
        raise ValueError("sigma_star must be positive")
    eps = noise_rng.standard_normal(X.shape[0])
    Y = X @ beta_star + sigma_star * eps
    Y = Y - Y.mean()
    return ProblemInstance(X=X, Y=Y, beta_star=beta_star, sigma_star=sigma_star,
                           seed=seed, noise=eps, design=design)


def draw_truth(p: int, s: int, signal, rng: np.random.Generator, design=None,
               support: Sequence[int] | None = None) -> np.ndarray:
    """beta* with s nonzero entries.

    ``signal`` is a magnitude (random signs) or an explicit length-s sequence.
    """
    if s > p:
        raise ValueError("s must not exceed p")
    if support is None:
        candidates = np.arange(p)
        if design is not None and parse_design(design)[0] == "duplicate-column-demo":
            candidates = candidates[candidates != 1]
        support = np.sort(rng.choice(candidates, size=s, replace=False))
    support = np.asarray(sorted(int(j) for j in support), dtype=int)
    if support.size != s:
        raise ValueError("support size must equal s")
    beta = np.zeros(p)
    if np.ndim(signal) == 0:
        if s and not float(signal) != 0:
            raise ValueError("signal magnitude must be nonzero")
        signs = rng.choice(np.array([-1.0, 1.0]), size=s)
        beta[support] = abs(float(signal)) * signs
    else:
        vals = np.asarray(signal, dtype=float)
        if vals.shape != (s,) or np.any(vals == 0):
            raise ValueError("explicit signal needs s nonzero values")
        beta[support] = vals
    return beta


def generate_instance(n: int, p: int, s: int, signal, sigma_star: float, design, seed: int,
                      *, support: Sequence[int] | None = None,
                      noise_seed: int | None = None) -> ProblemInstance:
    """Synthetic instance.  ``seed`` drives the design, support and signs; the
    noise comes from ``noise_seed`` when given (else from the same stream)."""
    if s > p:
        raise ValueError("s must not exceed p")
    if not sigma_star > 0:
        raise ValueError("sigma_star must be positive")
    rng = np.random.default_rng(seed)
    X = generate_design(n, p, design, rng)
    beta = draw_truth(p, s, signal, rng, design=design, support=support)
    noise_rng = rng if noise_seed is None else np.random.default_rng(noise_seed)
    return simulate_response(X, beta, sigma_star, noise_rng, seed=seed, design=str(design))


# ---------------------------------------------------------------------------
# I/O


def write_matrix_csv(path, A: np.ndarray, prefix: str = "x") -> None:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"{prefix}{j + 1}" for j in range(A.shape[1])])
        for row in A:
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise ValueError(f"{path}: need a header and at least one data row")
    return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)


BUNDLE_FORMAT = "spikeslab-instance"


def save_instance(path, inst: ProblemInstance) -> None:
    doc = {
        "format": BUNDLE_FORMAT,
        "version": 1,
        "n": inst.n,
        "p": inst.p,
        "seed": inst.seed,
        "design": inst.design,
        "sigma_star": inst.sigma_star,
        "xi_star": list(inst.xi_star.one_based()) if inst.xi_star is not None else None,
        "beta_star": inst.beta_star.tolist() if inst.beta_star is not None else None,
        "noise": inst.noise.tolist() if inst.noise is not None else None,
        "Y": inst.Y.tolist(),
        "X": inst.X.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_instance(path) -> ProblemInstance:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"{path}: not an instance bundle")
    X = np.array(doc["X"], dtype=float)
    beta = doc.get("beta_star")
    inst = ProblemInstance(
        X=X,
        Y=np.array(doc["Y"], dtype=float),
        beta_star=None if beta is None else np.array(beta, dtype=float),
        sigma_star=doc.get("sigma_star"),
        seed=doc.get("seed"),
        noise=None if doc.get("noise") is None else np.array(doc["noise"], dtype=float),
        design=doc.get("design"),
    )
    if doc.get("xi_star") is not None and inst.xi_star is not None:
        if inst.xi_star.one_based() != tuple(doc["xi_star"]):
            raise ValueError(f"{path}: xi_star disagrees with beta_star")
    return inst
