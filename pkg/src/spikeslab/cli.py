"""Command line entry point: ``spikeslab <subcommand> [options]``."""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .eigen import eigen_report, united_lambda
from .harness import (ExperimentConfig, _cell, load_config, load_schema, parse_params,
                      run_audit, run_bounds, run_contraction_study, run_selection_study,
                      write_bounds, write_rows)
from .inference import SamplerConfig, exact_posterior, mcmc_sample, summarize
from .model_core import (ModelIndex, ProblemInstance, RegularityConstants, generate_instance,
                         load_instance, read_matrix_csv, save_instance, standardize_columns,
                         write_matrix_csv)
from .priors import compute_z0n, prior_from_mapping

log = logging.getLogger("spikeslab")

STUDY_COMMANDS = {
    "contract-study": ("contract", run_contraction_study),
    "select-study": ("select", run_selection_study),
    "audit-prior": ("audit-prior", run_audit),
    "audit-eigen": ("audit-eigen", run_audit),
}


def _global_flags(default) -> argparse.ArgumentParser:
    # accepted before or after the subcommand; the copy after it must not
    # reset values given before it, hence SUPPRESS there
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", default=default, help="INI experiment file")
    g.add_argument("--out", default=default, help="output directory")
    g.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
    g.add_argument("--workers", type=int, default=default,
                   help="worker processes (results do not depend on it)")
    return g


def build_parser() -> argparse.ArgumentParser:
    flags = _global_flags(argparse.SUPPRESS)
    ap = argparse.ArgumentParser(prog="spikeslab", parents=[_global_flags(None)],
                                 description="Spike-and-slab regression studies and bound checks.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name in STUDY_COMMANDS:
        sp = sub.add_parser(name, parents=[flags], help=f"run the {name} study from --config")
        if name == "audit-eigen":
            sp.add_argument("--matrix", help="design CSV; reports one row instead of a study")
            sp.add_argument("--xi-star", default="", help="1-based true support, e.g. 1,3,7")
            sp.add_argument("--t", type=int, help="order of the functionals")
            sp.add_argument("--alpha", type=float, default=1.0)
            sp.add_argument("--K", type=float, help="also report lambda at order (K+1)s")

    b = sub.add_parser("bounds", parents=[flags], help="compare a bound with its exact value")
    b.add_argument("--check", choices=("chi2", "pelekis", "ratio", "rn", "omega"))
    b.add_argument("--params", default="", help="comma separated key=value pairs")

    pp = sub.add_parser("posterior", parents=[flags], help="model posterior for one data set")
    pp.add_argument("--instance", help="instance bundle written by generate-instance")
    pp.add_argument("--X", dest="x_csv", help="design matrix CSV (header row)")
    pp.add_argument("--Y", dest="y_csv", help="response CSV (one column, header row)")
    pp.add_argument("--mode", choices=("exact", "mcmc"), default="exact")
    pp.add_argument("--max-size", type=int, help="largest model size enumerated (exact mode)")
    pp.add_argument("--prior", default="",
                    help="INI file with a [prior] section, or key=value pairs such as slab.scale=2")
    pp.add_argument("--sweeps", type=int, default=2000)
    pp.add_argument("--burn-in", type=int, default=200)
    pp.add_argument("--top", type=int, default=20, help="models printed to stdout")

    g = sub.add_parser("generate-instance", parents=[flags], help="write a synthetic data set")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--s", type=int, required=True)
    g.add_argument("--signal", type=float, default=1.0)
    g.add_argument("--sigma", type=float, default=1.0)
    g.add_argument("--design", default="iid-gaussian")
    g.add_argument("--support", help="1-based true support, e.g. 1,3,7")
    return ap


def _config(args, study: str) -> ExperimentConfig:
    if not args.config:
        raise SystemExit(f"{args.command} needs --config")
    cfg = load_config(args.config, seed=args.seed, workers=args.workers, out_dir=args.out)
    if cfg.study != study:
        raise SystemExit(f"config study is {cfg.study!r}; {args.command} expects {study!r}")
    return cfg


def _cmd_eigen_matrix(args) -> int:
    X = read_matrix_csv(args.matrix)
    n, p = X.shape
    norms = np.linalg.norm(X, axis=0)
    if np.any(np.abs(norms - math.sqrt(n)) > 1e-9 * math.sqrt(n)):
        X = standardize_columns(X)
    star = ModelIndex.parse(args.xi_star, p) if args.xi_star.strip() else ModelIndex.empty(p)
    t = args.t if args.t is not None else max(len(star), 1)
    rep = eigen_report(X, star, t, args.alpha, K=args.K,
                       seed=args.seed if args.seed is not None else 0)
    row = {"t": t, "alpha": args.alpha, "muev": rep.muev, "msev": rep.msev, "mnev": rep.mnev,
           "mrev_estimate": rep.mrev_estimate, "mrev_method": rep.mrev_method,
           "mrev_grid_slack": rep.mrev_grid_slack, "mnev_premise": rep.mnev_premise,
           "muev_witness": str(rep.muev_witness), "msev_witness": str(rep.msev_witness),
           "mnev_witness": str(rep.mnev_witness), "lambda": rep.lam}
    _emit([row], list(row), args.out, "eigen_report.csv")
    return 0


def _emit(rows, cols, out_dir, name):
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r[c]) for c in cols])
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_rows(os.path.join(out_dir, name), rows, cols)


def _cmd_study(args) -> int:
    if args.command == "audit-eigen" and args.matrix:
        return _cmd_eigen_matrix(args)
    study, fn = STUDY_COMMANDS[args.command]
    cfg = _config(args, study)
    t0 = time.perf_counter()
    out = fn(cfg)
    rows = out[0] if isinstance(out, tuple) else out
    bad = sum(r["status"] != "ok" for r in rows)
    log.info("%s: %d rows (%d errors) in %.1f s -> %s", study, len(rows), bad,
             time.perf_counter() - t0, cfg.out_dir)
    print(f"{study}: {len(rows)} rows, {bad} errors, written to {cfg.out_dir}")
    return 0


def _cmd_bounds(args) -> int:
    t0 = time.perf_counter()
    cfg = None
    if args.config:
        cfg = load_config(args.config, seed=args.seed, workers=args.workers, out_dir=args.out)
        if cfg.study != "bounds":
            raise SystemExit("bounds expects a config with study = bounds")
        check = args.check or cfg.bounds.get("check")
        params = {k: v for k, v in cfg.bounds.items() if k != "check"}
        params.update(parse_params(args.params))
    else:
        check, params = args.check, parse_params(args.params)
    if not check:
        raise SystemExit("bounds needs --check")
    rows = run_bounds(check, params)
    _emit(rows, load_schema()["bounds_row"], None, None)
    if args.out or cfg is not None:
        write_bounds(args.out or cfg.out_dir, rows, cfg, time.perf_counter() - t0)
    return 0


def _load_data(args) -> ProblemInstance:
    if args.instance:
        return load_instance(args.instance)
    if not (args.x_csv and args.y_csv):
        raise SystemExit("posterior needs --instance or both --X and --Y")
    X = standardize_columns(read_matrix_csv(args.x_csv))
    Y = read_matrix_csv(args.y_csv).ravel()
    return ProblemInstance(X=X, Y=Y - Y.mean())


def _cmd_posterior(args) -> int:
    inst = _load_data(args)
    consts = RegularityConstants()
    mapping = {}
    if args.config:
        cfg = load_config(args.config)
        mapping = dict(cfg.prior)
        consts = cfg.constants
    if args.prior and os.path.isfile(args.prior):
        cp = configparser.ConfigParser(interpolation=None)
        cp.read(args.prior)
        mapping.update(cp["prior"] if cp.has_section("prior") else {})
    else:
        mapping.update(parse_params(args.prior))
    prior = prior_from_mapping(mapping, inst.p)
    seed = args.seed if args.seed is not None else 0
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    if args.mode == "exact":
        post = exact_posterior(inst, prior, args.max_size if args.max_size is not None else inst.p)
        ranked = sorted(zip(post.mass, post.models, post.log_evidence, post.log_prior),
                        key=lambda t: (-t[0], len(t[1]), t[1]))
        path = os.path.join(out, "models.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "size", "log_evidence", "log_prior", "posterior_mass"])
            for mass, key, le, lp in ranked:
                w.writerow([str(ModelIndex(key, inst.p)), len(key), repr(float(le)), repr(float(lp)),
                            repr(float(mass))])
        print(f"truncated mass bound: {post.truncated_mass_bound:.3g}")
    else:
        post = mcmc_sample(inst, prior, SamplerConfig(sweeps=args.sweeps, burn_in=args.burn_in,
                                                      seed=seed, proposal="screened"))
        ranked = sorted(((f, k) for k, f in post.frequencies().items()),
                        key=lambda t: (-t[0], len(t[1]), t[1]))
        path = os.path.join(out, "models.csv")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "size", "posterior_mass"])
            for f, key in ranked:
                w.writerow([str(ModelIndex(key, inst.p)), len(key), repr(float(f))])
        print(f"acceptance rate: {post.acceptance_rate():.3f}")
    for row in ranked[: args.top]:
        print(f"{row[0]:.6f}  {ModelIndex(row[1], inst.p)}")
    if inst.has_truth:
        lam = united_lambda(inst.X, inst.xi_star, max(consts.united_order(inst.s), 1), seed=seed)[0]
        if lam > 0:
            summ = summarize(post, inst, consts, lam, compute_z0n(prior.spike, inst.n), seed=seed)
            spath = os.path.join(out, "summary.csv")
            with open(spath, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["lambda", *summ.FIELDS])
                w.writerow([_cell(lam), *[_cell(v) for v in summ.row().values()]])
            print(f"P(true model) = {summ.prob_true_model:.4f}")
    return 0


def _cmd_generate(args) -> int:
    seed = args.seed if args.seed is not None else 0
    support = None
    if args.support:
        support = [int(v) - 1 for v in args.support.split(",") if v.strip()]
    inst = generate_instance(args.n, args.p, args.s, args.signal, args.sigma, args.design, seed,
                             support=support)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    save_instance(os.path.join(out, "instance.json"), inst)
    write_matrix_csv(os.path.join(out, "X.csv"), inst.X)
    write_matrix_csv(os.path.join(out, "Y.csv"), inst.Y[:, None], prefix="y")
    print(f"instance n={inst.n} p={inst.p} true model {inst.xi_star} written to {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in STUDY_COMMANDS:
        return _cmd_study(args)
    if args.command == "bounds":
        return _cmd_bounds(args)
    if args.command == "posterior":
        return _cmd_posterior(args)
    return _cmd_generate(args)


if __name__ == "__main__":
    sys.exit(main())
