"""Seeded batch studies over (n, p, s) grids, written as headered CSV files.

Seeds: the design of grid point g comes from SeedSequence(master, spawn_key=(g,))
and replication r of that point from SeedSequence(master, spawn_key=(g, r)).
Every task is self-contained, so serial and pooled runs give the same rows,
which are merged in (grid, replication, arm) order.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from .diagnostics import (chi2_norm_bounds, chi2_tail_bound, evidence_ratio_check, format_inputs,
                          omega_event_frequency, pelekis_bound, posterior_ratio_bound,
                          selection_rate)
from .eigen import eigen_report, united_lambda
from .inference import PosteriorSummary, SamplerConfig, exact_posterior, mcmc_sample, summarize
from .model_core import (ModelIndex, RegularityConstants, draw_truth, epsilon_n, generate_design,
                         generate_instance, parse_design, simulate_response)
from .priors import audit_assumption1, compute_z0n, prior_from_mapping

STUDIES = ("contract", "select", "audit-prior", "audit-eigen", "bounds")
SIGNAL_UNITS = ("absolute", "rate", "beta-min")
_SAMPLER_KEYS = {"sweeps": int, "burn_in": int, "thin": int, "moves_per_sweep": int,
                 "proposal": str, "screen_mix": float, "init": str}


def load_schema() -> dict:
    text = resources.files("spikeslab").joinpath("schemas/study_row.json").read_text()
    return json.loads(text)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ExperimentConfig:
    study: str
    grid: tuple[tuple[int, int, int], ...]
    design: str = "iid-gaussian"
    sigma_star: float = 1.0
    signal: float = 1.0
    signal_units: str = "absolute"
    arms: tuple[tuple[str, float], ...] = (("main", 1.0),)
    prior: dict = field(default_factory=dict)
    constants: RegularityConstants = field(default_factory=RegularityConstants)
    replications: int = 1
    seed: int = 0
    inference: str = "mcmc"
    max_size: int | None = None
    sampler: dict = field(default_factory=dict)
    draws_per_model: int = 200
    lambda_restarts: int = 8
    budget: int = 1_000_000
    audit: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    out_dir: str = "results"
    workers: int = 1

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ValueError(f"study must be one of {STUDIES}")
        if not self.grid and self.study != "bounds":
            raise ValueError("grid must be nonempty")
        for n, p, s in self.grid:
            if not (n >= 2 and p >= 1 and 0 <= s <= p):
                raise ValueError(f"bad grid point (n={n}, p={p}, s={s})")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.signal_units not in SIGNAL_UNITS:
            raise ValueError(f"signal_units must be one of {SIGNAL_UNITS}")
        if not self.arms or len({a for a, _ in self.arms}) != len(self.arms):
            raise ValueError("arms must be nonempty with distinct names")
        if self.inference not in ("mcmc", "exact"):
            raise ValueError("inference must be 'mcmc' or 'exact'")
        if not self.sigma_star > 0:
            raise ValueError("sigma_star must be positive")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        parse_design(self.design)

    def canonical(self) -> dict:
        """Everything that determines the output rows (not out_dir or workers)."""
        d = asdict(self)
        d.pop("out_dir")
        d.pop("workers")
        d["constants"] = asdict(self.constants)
        return d

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, default=list)
        return hashlib.sha256(text.encode()).hexdigest()

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(seed=seed, **self.sampler)


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _grid(sec) -> tuple:
    if "points" in sec:
        pts = []
        for item in sec["points"].replace(";", ",").split(","):
            if item.strip():
                n, p, s = (int(v) for v in item.strip().split(":"))
                pts.append((n, p, s))
        return tuple(pts)
    ns = _ints(sec.get("n", ""))
    ss = _ints(sec.get("s", "1"))
    ptext = sec.get("p", "n").strip()
    pts = []
    for n in ns:
        ps = [n] if ptext == "n" else _ints(ptext)
        for p in ps:
            for s in ss:
                pts.append((n, p, s))
    return tuple(pts)


def _arms(text: str) -> tuple:
    out = []
    for item in text.split(","):
        if item.strip():
            name, _, mult = item.strip().partition(":")
            out.append((name.strip(), float(mult) if mult else 1.0))
    return tuple(out)


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str  # keep A1, M2, ... as written
    return cp


def load_config(path: str, **overrides) -> ExperimentConfig:
    """Read an INI file with [experiment], [grid], [prior], [constants],
    [sampler], [audit] and [bounds] sections.  Keyword overrides with value
    None are ignored."""
    cp = _parser()
    with open(path) as fh:
        cp.read_file(fh)
    return config_from_parser(cp, **overrides)


def config_from_text(text: str, **overrides) -> ExperimentConfig:
    cp = _parser()
    cp.read_string(text)
    return config_from_parser(cp, **overrides)


def config_from_parser(cp: configparser.ConfigParser, **overrides) -> ExperimentConfig:
    known = {"experiment", "grid", "prior", "constants", "sampler", "audit", "bounds"}
    extra = set(cp.sections()) - known
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")
    if not cp.has_section("experiment"):
        raise ValueError("config needs an [experiment] section")
    ex = cp["experiment"]
    kw = {"study": ex.get("study", "").strip()}
    if "design" in ex:
        kw["design"] = ex["design"].strip()
    for key, cast in (("sigma_star", float), ("signal", float), ("replications", int),
                      ("seed", int), ("max_size", int), ("draws_per_model", int),
                      ("lambda_restarts", int), ("budget", int), ("workers", int)):
        if key in ex:
            kw[key] = cast(ex[key])
    for key in ("signal_units", "inference", "out_dir"):
        if key in ex:
            kw[key] = ex[key].strip()
    if "arms" in ex:
        kw["arms"] = _arms(ex["arms"])
    known_ex = {"study", "design", "sigma_star", "signal", "replications", "seed", "max_size",
                "draws_per_model", "lambda_restarts", "budget", "workers", "signal_units",
                "inference", "out_dir", "arms"}
    if set(ex) - known_ex:
        raise ValueError(f"unknown [experiment] keys: {sorted(set(ex) - known_ex)}")
    kw["grid"] = _grid(cp["grid"]) if cp.has_section("grid") else ()
    kw["prior"] = dict(cp["prior"]) if cp.has_section("prior") else {}
    if cp.has_section("constants"):
        kw["constants"] = RegularityConstants(**{k: float(v) for k, v in cp["constants"].items()})
    if cp.has_section("sampler"):
        sam = {}
        for k, v in cp["sampler"].items():
            if k not in _SAMPLER_KEYS:
                raise ValueError(f"unknown [sampler] key {k!r}")
            sam[k] = _SAMPLER_KEYS[k](v.strip())
        kw["sampler"] = sam
    kw["audit"] = dict(cp["audit"]) if cp.has_section("audit") else {}
    kw["bounds"] = dict(cp["bounds"]) if cp.has_section("bounds") else {}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kw)


# ---------------------------------------------------------------------------
# seeds and output


def design_seed(master: int, g: int) -> int:
    return int(np.random.SeedSequence(master, spawn_key=(g,)).generate_state(1, np.uint64)[0])


def audit_design_seed(master: int, g: int, r: int) -> int:
    """Audits redraw the design in every replication."""
    return int(np.random.SeedSequence(master, spawn_key=(g, r, 1)).generate_state(1, np.uint64)[0])


def replication_seeds(master: int, g: int, r: int) -> tuple[int, int]:
    """(noise seed, inference seed) for replication r of grid point g."""
    a, b = np.random.SeedSequence(master, spawn_key=(g, r)).generate_state(2, np.uint64)
    return int(a), int(b)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: str, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if set(row) != set(columns):
                raise ValueError(f"row keys differ from the schema: {sorted(set(row) ^ set(columns))}")
            w.writerow([_cell(row[c]) for c in columns])


def read_rows(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def write_manifest(config: ExperimentConfig, files: list[str], wall: float) -> str:
    path = os.path.join(config.out_dir, "manifest.json")
    doc = {"tool": "spikeslab", "version": __version__, "study": config.study,
           "config_sha256": config.digest(), "config": config.canonical(),
           "master_seed": config.seed, "workers": config.workers,
           "wall_time_s": round(wall, 3),
           "files": {os.path.basename(f): _sha256(f) for f in files}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=list)
        fh.write("\n")
    return path


def _map(fn, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


# ---------------------------------------------------------------------------
# contraction and selection studies


@dataclass(frozen=True)
class _Point:
    g: int
    n: int
    p: int
    s: int
    design_seed: int
    X: np.ndarray | None
    beta_unit: np.ndarray | None
    lam: float | None
    lam_method: str | None
    eps: float
    rate_scale: float | None
    r_n: float | None
    unit: float | None
    error: str | None = None


def _united_order(consts: RegularityConstants, s: int) -> int:
    # with an empty truth the united eigenvalue of order 1 is used
    return max(consts.united_order(s), 1)


def _prepare_point(args) -> _Point:
    cfg, g, (n, p, s) = args
    dseed = design_seed(cfg.seed, g)
    eps = epsilon_n(n, p, max(s, 1))
    try:
        rng = np.random.default_rng(dseed)
        X = generate_design(n, p, cfg.design, rng)
        beta_unit = draw_truth(p, s, 1.0, rng, design=cfg.design)
        star = ModelIndex.of(np.flatnonzero(beta_unit), p)
        lam, _, method = united_lambda(X, star, min(_united_order(cfg.constants, s), p),
                                       budget=cfg.budget, restarts=cfg.lambda_restarts, seed=dseed)
        if not lam > 0:
            raise ValueError(f"united eigenvalue is {lam!r}; the design violates the eigenvalue condition")
        prior = prior_from_mapping(cfg.prior, p)
        c = cfg.constants
        r_n = selection_rate(prior, n, p, s, lam, c.eta, c.K).r_n
        rate_scale = cfg.sigma_star * eps / math.sqrt(lam)
        if cfg.signal_units == "absolute":
            unit = 1.0
        elif cfg.signal_units == "rate":
            unit = cfg.sigma_star * math.sqrt(math.log(p) / n)
        else:
            unit = c.M3 * rate_scale
        return _Point(g, n, p, s, dseed, X, beta_unit, lam, method, eps, rate_scale, r_n, unit)
    except Exception as exc:  # reported on every row of the grid point
        return _Point(g, n, p, s, dseed, None, None, None, None, eps, None, None, None,
                      error=f"{type(exc).__name__}: {exc}")


def _blank_summary() -> dict:
    return dict.fromkeys(PosteriorSummary.FIELDS)


def _replicate(args) -> list[dict]:
    cfg, pt, r = args
    noise_seed, inf_seed = replication_seeds(cfg.seed, pt.g, r)
    rows = []
    for arm, mult in cfg.arms:
        row = {"study": cfg.study, "arm": arm, "grid_index": pt.g, "n": pt.n, "p": pt.p, "s": pt.s,
               "replication": r, "master_seed": cfg.seed, "design_seed": pt.design_seed,
               "noise_seed": noise_seed, "inference_seed": inf_seed,
               "signal": None, "lambda": pt.lam, "lambda_method": pt.lam_method,
               "epsilon_n": pt.eps, "rate_scale": pt.rate_scale,
               "beta_min_threshold": None if pt.rate_scale is None else cfg.constants.M3 * pt.rate_scale,
               "r_n": pt.r_n, "r_n_below_one": None if pt.r_n is None else pt.r_n < 1.0,
               "acceptance_rate": None, "status": "ok", "error": ""}
        row.update(_blank_summary())
        try:
            if pt.error:
                raise RuntimeError(f"grid point {pt.g} (n={pt.n}, p={pt.p}, s={pt.s}): {pt.error}")
            magnitude = mult * cfg.signal * pt.unit
            row["signal"] = magnitude
            inst = simulate_response(pt.X, magnitude * pt.beta_unit, cfg.sigma_star,
                                     np.random.default_rng(noise_seed), seed=pt.design_seed,
                                     design=cfg.design)
            prior = prior_from_mapping(cfg.prior, pt.p)
            z0n = compute_z0n(prior.spike, pt.n)
            if cfg.inference == "exact":
                max_size = cfg.max_size if cfg.max_size is not None else pt.p
                post = exact_posterior(inst, prior, max_size, budget=cfg.budget)
                summ = summarize(post, inst, cfg.constants, pt.lam, z0n,
                                 draws_per_model=cfg.draws_per_model, seed=inf_seed)
            else:
                post = mcmc_sample(inst, prior, cfg.sampler_config(inf_seed))
                summ = summarize(post, inst, cfg.constants, pt.lam, z0n)
                row["acceptance_rate"] = post.acceptance_rate()
            row.update(summ.row())
        except Exception as exc:
            row["status"] = "error"
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def _median(xs):
    return statistics.median(xs) if xs else None


def _mean(xs):
    return math.fsum(xs) / len(xs) if xs else None


def aggregate(rows: list[dict], cfg: ExperimentConfig) -> list[dict]:
    out = []
    keys = []
    for row in rows:
        k = (row["grid_index"], row["arm"])
        if k not in keys:
            keys.append(k)
    order = {name: i for i, (name, _) in enumerate(cfg.arms)}
    keys.sort(key=lambda k: (k[0], order[k[1]]))
    for g, arm in keys:
        grp = [r for r in rows if r["grid_index"] == g and r["arm"] == arm]
        ok = [r for r in grp if r["status"] == "ok"]
        first = grp[0]
        within = [r["post_mean_l2_error"] <= 3.0 * r["rate_scale"] for r in ok]
        out.append({
            "study": cfg.study, "arm": arm, "grid_index": g, "n": first["n"], "p": first["p"],
            "s": first["s"], "signal": ok[0]["signal"] if ok else None,
            "lambda": first["lambda"], "epsilon_n": first["epsilon_n"],
            "rate_scale": first["rate_scale"], "r_n": first["r_n"],
            "r_n_below_one": first["r_n_below_one"], "replications_ok": len(ok),
            "replications_error": len(grp) - len(ok),
            "median_post_mean_l2_error": _median([r["post_mean_l2_error"] for r in ok]),
            "frac_l2_error_within_3_rate": _mean([float(w) for w in within]),
            "mean_prob_true_model": _mean([r["prob_true_model"] for r in ok]),
            "mean_p_overfit_cap": _mean([r["p_overfit_cap"] for r in ok]),
            "mean_p_theta_hat": _mean([r["p_theta_hat"] for r in ok]),
            "mean_p_theta_tilde": _mean([r["p_theta_tilde"] for r in ok]),
        })
    return out


def _posterior_study(cfg: ExperimentConfig, expected: str) -> tuple[list[dict], list[dict]]:
    if cfg.study != expected:
        raise ValueError(f"config study is {cfg.study!r}, expected {expected!r}")
    points = _map(_prepare_point, [(cfg, g, gp) for g, gp in enumerate(cfg.grid)], cfg.workers)
    tasks = [(cfg, pt, r) for pt in points for r in range(cfg.replications)]
    rows = [row for batch in _map(_replicate, tasks, cfg.workers) for row in batch]
    return rows, aggregate(rows, cfg)


def _write_study(cfg, rows, agg, t0) -> list[str]:
    schema = load_schema()
    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = cfg.study.replace("-", "_")
    rpath = os.path.join(cfg.out_dir, f"{stem}_rows.csv")
    apath = os.path.join(cfg.out_dir, f"{stem}_aggregate.csv")
    write_rows(rpath, rows, schema["study_row"])
    write_rows(apath, agg, schema["aggregate_row"])
    files = [rpath, apath]
    write_manifest(cfg, files, time.perf_counter() - t0)
    return files


def run_contraction_study(cfg: ExperimentConfig, *, write: bool = True):
    """Posterior good-set probabilities and errors per grid point and replication."""
    t0 = time.perf_counter()
    rows, agg = _posterior_study(cfg, "contract")
    if write:
        _write_study(cfg, rows, agg, t0)
    return rows, agg


def run_selection_study(cfg: ExperimentConfig, *, write: bool = True):
    """Same as the contraction study, with paired signal arms around the beta-min level."""
    t0 = time.perf_counter()
    rows, agg = _posterior_study(cfg, "select")
    if write:
        _write_study(cfg, rows, agg, t0)
    return rows, agg


# ---------------------------------------------------------------------------
# audits


def _audit_instance(cfg, g, r, n, p, s):
    dseed = audit_design_seed(cfg.seed, g, r)
    noise_seed, inf_seed = replication_seeds(cfg.seed, g, r)
    if cfg.signal_units == "absolute":
        signal = cfg.signal
    else:
        signal = cfg.signal * cfg.sigma_star * math.sqrt(math.log(p) / n)
    support = None
    if cfg.audit.get("support"):
        # 1-based indices, as written in config files
        support = [j - 1 for j in _ints(cfg.audit["support"])]
    inst = generate_instance(n, p, s, signal, cfg.sigma_star, cfg.design, dseed,
                             support=support, noise_seed=noise_seed)
    return inst, dseed, inf_seed


def _audit_prior_task(args) -> dict:
    cfg, g, (n, p, s), r = args
    row = {"study": cfg.study, "grid_index": g, "n": n, "p": p, "s": s, "replication": r,
           "master_seed": cfg.seed, "design_seed": audit_design_seed(cfg.seed, g, r), "status": "ok",
           "error": ""}
    cols = ("z0n", "z1n", "slab_floor", "sup_density", "pi_true", "tail_1", "tail_t_max", "t_max",
            "a_g_positive", "b_pi_true", "b_tails", "c_spike_width", "d_slab_floor", "premises")
    row.update(dict.fromkeys(cols))
    try:
        inst, _, _ = _audit_instance(cfg, g, r, n, p, s)
        prior = prior_from_mapping(cfg.prior, p)
        t_max = int(cfg.audit.get("t_max", min(p, max(cfg.constants.overfit_cap(s), 1))))
        t_max = min(t_max, p)
        d = audit_assumption1(prior, inst, cfg.constants, t_max)
        row.update(z0n=d.z0n, z1n=d.z1n, slab_floor=d.slab_floor, sup_density=d.sup_density,
                   pi_true=d.pi_true, tail_1=d.tail[1], tail_t_max=d.tail[t_max], t_max=t_max,
                   a_g_positive=d.verdict("a:"), b_pi_true=d.verdict("b:pi_true"),
                   b_tails=d.verdict("b:tail"), c_spike_width=d.verdict("c:"),
                   d_slab_floor=d.verdict("d:"), premises=all(d.premises.values()))
    except Exception as exc:
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def _audit_eigen_task(args) -> dict:
    cfg, g, (n, p, s), r = args
    row = {"study": cfg.study, "grid_index": g, "n": n, "p": p, "s": s, "replication": r,
           "master_seed": cfg.seed, "design_seed": audit_design_seed(cfg.seed, g, r), "status": "ok",
           "error": ""}
    cols = ("xi_star", "t", "alpha", "muev", "msev", "mnev", "mnev_premise", "mrev", "mrev_method",
            "mrev_grid_slack", "lambda", "lambda_method", "eigen_condition", "ordering_holds")
    row.update(dict.fromkeys(cols))
    try:
        inst, dseed, _ = _audit_instance(cfg, g, r, n, p, s)
        t = int(cfg.audit.get("t", _united_order(cfg.constants, s)))
        t = min(t, p)
        alpha = float(cfg.audit.get("alpha", 1.0))
        rep = eigen_report(inst.X, inst.xi_star, t, alpha, mrev_method=cfg.audit.get("mrev_method"),
                           K=cfg.constants.K, restarts=int(cfg.audit.get("restarts", 50)),
                           seed=dseed, budget=cfg.budget)
        lam = rep.lam
        if s == 0:
            lam = united_lambda(inst.X, inst.xi_star, 1, budget=cfg.budget)[0]
        row.update(xi_star=str(inst.xi_star), t=t, alpha=alpha, muev=rep.muev, msev=rep.msev,
                   mnev=rep.mnev, mnev_premise=rep.mnev_premise, mrev=rep.mrev_estimate,
                   mrev_method=rep.mrev_method, mrev_grid_slack=rep.mrev_grid_slack,
                   eigen_condition=bool(lam > 1e-12), ordering_holds=rep.ordering_holds)
        row["lambda"] = lam
        row["lambda_method"] = rep.lam_method if s else "exact"
    except Exception as exc:
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_audit(cfg: ExperimentConfig, *, write: bool = True) -> list[dict]:
    """Prior-condition or eigenvalue audit, one row per grid point and replication."""
    t0 = time.perf_counter()
    if cfg.study == "audit-prior":
        fn, key, name = _audit_prior_task, "audit_prior_row", "audit_prior.csv"
    elif cfg.study == "audit-eigen":
        fn, key, name = _audit_eigen_task, "audit_eigen_row", "audit_eigen.csv"
    else:
        raise ValueError("run_audit needs study audit-prior or audit-eigen")
    tasks = [(cfg, g, gp, r) for g, gp in enumerate(cfg.grid) for r in range(cfg.replications)]
    rows = _map(fn, tasks, cfg.workers)
    if write:
        os.makedirs(cfg.out_dir, exist_ok=True)
        path = os.path.join(cfg.out_dir, name)
        write_rows(path, rows, load_schema()[key])
        write_manifest(cfg, [path], time.perf_counter() - t0)
    return rows


# ---------------------------------------------------------------------------
# bound checks


BOUND_CHECKS = ("chi2", "pelekis", "ratio", "rn", "omega")


def parse_params(text: str) -> dict[str, str]:
    out = {}
    for item in (text or "").split(","):
        if item.strip():
            k, sep, v = item.partition("=")
            if not sep:
                raise ValueError(f"parameter {item!r} is not of the form key=value")
            out[k.strip()] = v.strip()
    return out


def _take(params: dict, key: str, cast, default=None):
    if key in params:
        return cast(params[key])
    if default is None:
        raise ValueError(f"missing parameter {key!r}")
    return default


def run_bounds(check: str, params: dict[str, str]) -> list[dict]:
    """Rows of (check, inputs, bound, exact, holds) for one bound family."""
    if check not in BOUND_CHECKS:
        raise ValueError(f"check must be one of {BOUND_CHECKS}")
    allowed = {
        "chi2": {"d", "t", "n", "eps"},
        "pelekis": {"p", "mu", "t"},
        "ratio": {"n", "p", "s", "t_minus_s", "signal", "sigma", "seed", "design", "eta", "K",
                  "slab_scale", "draws", "lambda", "sup_h1"},
        "rn": {"n", "p", "s", "lambda", "eta", "K", "q", "csv_power", "csv_base", "slab_scale",
               "per_model"},
        "omega": {"n", "p", "s", "K", "eta", "draws", "seed", "design"},
    }[check]
    if set(params) - allowed:
        raise ValueError(f"unknown parameters for {check}: {sorted(set(params) - allowed)}")
    if check == "chi2":
        if "n" in params:
            comps = list(chi2_norm_bounds(_take(params, "n", int), _take(params, "d", int),
                                          _take(params, "eps", float)))
        else:
            comps = [chi2_tail_bound(_take(params, "d", int), _take(params, "t", float))]
        return [c.row() for c in comps]
    if check == "pelekis":
        return [pelekis_bound(_take(params, "p", int), _take(params, "mu", float),
                              _take(params, "t", int)).row()]
    if check == "rn":
        p = _take(params, "p", int)
        mapping = {"slab.scale": params.get("slab_scale", "1.0")}
        if "csv_power" in params or "csv_base" in params:
            mapping["selection.kind"] = "csv"
            for k in ("csv_power", "csv_base"):
                if k in params:
                    mapping[f"selection.{k}"] = params[k]
        elif "q" in params:
            mapping["selection.q"] = params["q"]
        prior = prior_from_mapping(mapping, p)
        rep = selection_rate(prior, _take(params, "n", int), p, _take(params, "s", int),
                             _take(params, "lambda", float), _take(params, "eta", float, 0.1),
                             _take(params, "K", float, 2.0),
                             per_model=params.get("per_model", "false").lower() in ("1", "true", "yes"))
        return [{"check": "rn", "inputs": format_inputs(params),
                 "bound": 1.0, "exact": rep.r_n, "holds": rep.below_one}]
    if check == "omega":
        n, p, s = _take(params, "n", int), _take(params, "p", int), _take(params, "s", int)
        inst = generate_instance(n, p, s, 1.0, 1.0, params.get("design", "iid-gaussian"),
                                 _take(params, "seed", int, 0))
        rep = omega_event_frequency(inst.X, inst.xi_star, _take(params, "K", float, 2.0),
                                    _take(params, "eta", float, 0.5), _take(params, "draws", int, 10000),
                                    _take(params, "seed", int, 0))
        return [{"check": "omega", "inputs": format_inputs(params),
                 "bound": rep.union_bound, "exact": rep.frequency,
                 "holds": rep.frequency <= rep.union_bound + 3.0 * rep.standard_error}]
    # ratio: bound alone from explicit lambda and sup_h1, or measured on a synthetic instance
    ts = _take(params, "t_minus_s", int)
    if "sup_h1" in params:
        b = posterior_ratio_bound(ts, _take(params, "n", int), _take(params, "p", int),
                                  _take(params, "lambda", float), _take(params, "eta", float, 0.1),
                                  _take(params, "sup_h1", float))
        return [{"check": "ratio", "inputs": format_inputs(params),
                 "bound": b, "exact": None, "holds": None}]
    n, p, s = _take(params, "n", int), _take(params, "p", int), _take(params, "s", int)
    seed = _take(params, "seed", int, 0)
    consts = RegularityConstants(K=_take(params, "K", float, 2.0), eta=_take(params, "eta", float, 0.1))
    inst = generate_instance(n, p, s, _take(params, "signal", float, 1.0), _take(params, "sigma", float, 1.0),
                             params.get("design", "iid-gaussian"), seed)
    prior = prior_from_mapping({"slab.scale": params.get("slab_scale", "1.0")}, p)
    lam = united_lambda(inst.X, inst.xi_star, consts.united_order(s), seed=seed)[0]
    extra = [j for j in range(p) if j not in inst.xi_star][:ts]
    gamma = ModelIndex.of(list(inst.xi_star.members) + extra, p)
    c = evidence_ratio_check(inst, prior, gamma, consts, lam, draws=_take(params, "draws", int, 4000),
                             seed=seed)
    row = c.row()
    head = {k: v for k, v in params.items() if k not in c.context}
    row["inputs"] = format_inputs(head) + ";" + row["inputs"]
    return [row]


def write_bounds(out_dir: str, rows: list[dict], cfg: ExperimentConfig | None = None,
                 wall: float = 0.0) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "bounds.csv")
    write_rows(path, rows, load_schema()["bounds_row"])
    if cfg is not None:
        write_manifest(cfg, [path], wall)
    return path


def run_study(cfg: ExperimentConfig, *, write: bool = True):
    """Dispatch on cfg.study."""
    if cfg.study == "contract":
        return run_contraction_study(cfg, write=write)
    if cfg.study == "select":
        return run_selection_study(cfg, write=write)
    if cfg.study in ("audit-prior", "audit-eigen"):
        return run_audit(cfg, write=write)
    t0 = time.perf_counter()
    check = cfg.bounds.get("check", "")
    params = {k: v for k, v in cfg.bounds.items() if k != "check"}
    rows = run_bounds(check, params)
    if write:
        write_bounds(cfg.out_dir, rows, cfg, time.perf_counter() - t0)
    return rows
