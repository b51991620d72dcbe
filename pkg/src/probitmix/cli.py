"""Command-line entry points: fit, step, predict, simulate, evaluate."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
import yaml

from . import io as runio
from .errors import ConfigError, IntegrityError
from .predictive import credible_band, per_particle_risks, profile_predictive
from .smc import merge_pools, run_parallel_instances
from .synthetic import ScenarioSpec, discrete_kl, generate_scenario, benchmark_model

log = logging.getLogger("probitmix")


def _setup_logging():
    level = os.environ.get("PROBITMIX_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load_config_with_overrides(args) -> runio.RunConfig:
    cfg = runio.load_run_config(args.config)
    if getattr(args, "data", None):
        cfg.data = runio.DataLayout(
            path=args.data,
            delimiter=cfg.data.delimiter if cfg.data else ",",
            period_column=cfg.data.period_column if cfg.data else 0,
            covariate_columns=cfg.data.covariate_columns if cfg.data
            else tuple(range(1, cfg.model.covariate_count + 1)),
            response_columns=cfg.data.response_columns if cfg.data
            else tuple(range(cfg.model.covariate_count + 1,
                             cfg.model.covariate_count + 1 + cfg.model.outcome_count)),
        )
    if getattr(args, "priors", None):
        cfg.priors_path = args.priors
    if cfg.data is None:
        raise ConfigError(["no dataset: provide a config data block or --data"])
    if cfg.priors_path is None:
        raise ConfigError(["no membership priors: provide priors_path or --priors"])
    return cfg


def cmd_fit(args) -> int:
    cfg = _load_config_with_overrides(args)
    model = cfg.model
    prior = cfg.make_prior()
    batches = runio.assemble_batches(cfg.data, cfg.priors_path, model)
    os.makedirs(args.out, exist_ok=True)

    results = run_parallel_instances(batches, model, prior, cfg.filter,
                                     workers=args.workers)
    wall = {}
    for batch, result in zip(batches, results):
        snap_path = os.path.join(args.out, f"snapshot_{batch.period}.json")
        runio.save_snapshot(snap_path, result.instance_pools, batch.period,
                            cfg.fingerprint(), model)
        wall[str(batch.period)] = result.wall_seconds
        log.info("period %s done in %.2fs -> %s", batch.period,
                 result.wall_seconds, snap_path)

    profiles = []
    if args.profiles:
        profiles = runio.load_profiles(args.profiles, model)
    merged_by_period = {r.merged.period: r.merged for r in results}
    runio.emit_report(merged_by_period, profiles, model, cfg, args.out,
                      data_hash=runio.file_sha256(cfg.data.path),
                      predict_seed=cfg.filter.seed, wall_clock=wall)
    return 0


def cmd_step(args) -> int:
    cfg = _load_config_with_overrides(args)
    snap = runio.load_snapshot(args.snapshot)
    if snap.config_fingerprint != cfg.fingerprint():
        raise IntegrityError(
            f"snapshot was produced under config fingerprint "
            f"{snap.config_fingerprint}, current config is {cfg.fingerprint()}")
    model = cfg.model
    prior = cfg.make_prior()
    layout = runio.DataLayout(path=args.batch, delimiter=cfg.data.delimiter,
                              period_column=cfg.data.period_column,
                              covariate_columns=cfg.data.covariate_columns,
                              response_columns=cfg.data.response_columns)
    batches = runio.assemble_batches(layout, cfg.priors_path, model)
    if len(batches) != 1:
        raise ConfigError(
            [f"step expects a single-period batch file, found periods "
             f"{[b.period for b in batches]}"])
    batch = batches[0]
    if batch.period <= snap.period:
        raise ConfigError(
            [f"batch period {batch.period} does not follow snapshot period "
             f"{snap.period}"])
    results = run_parallel_instances([batch], model, prior, cfg.filter,
                                     initial_pools=snap.instance_pools,
                                     workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    snap_path = os.path.join(args.out, f"snapshot_{batch.period}.json")
    runio.save_snapshot(snap_path, results[0].instance_pools, batch.period,
                        cfg.fingerprint(), model)
    log.info("stepped to period %s -> %s", batch.period, snap_path)
    return 0


def cmd_predict(args) -> int:
    snap = runio.load_snapshot(args.snapshot)
    model = snap.model
    profiles = runio.load_profiles(args.profiles, model)
    pool = merge_pools(snap.instance_pools, seed=0)
    rows = []
    for prof_idx, profile in enumerate(profiles):
        for p_idx, outcome in enumerate(model.outcomes):
            for cut in range(1, outcome.categories):
                rng = np.random.default_rng(np.random.SeedSequence(
                    [args.seed, snap.period, prof_idx, p_idx, cut]))
                risks = per_particle_risks(profile, pool, model, rng, p_idx, cut)
                mean_risk = float(np.average(risks,
                                             weights=pool.normalized_weights()))
                lo, hi = credible_band(risks, args.level)
                rows.append([profile.label, outcome.name, cut, snap.period,
                             mean_risk, lo, hi])
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["profile", "outcome", "cutpoint", "period",
                         "risk", "lower", "upper"])
        writer.writerows(rows)
    if args.pmf_dir:
        os.makedirs(args.pmf_dir, exist_ok=True)
        for prof_idx, profile in enumerate(profiles):
            rng = np.random.default_rng(np.random.SeedSequence(
                [args.seed, snap.period, prof_idx]))
            pmf = profile_predictive(profile, pool, model, rng)
            name = profile.label.replace(os.sep, "_") or f"profile-{prof_idx}"
            runio.save_pmf(os.path.join(args.pmf_dir, f"{name}.csv"), pmf, model)
    log.info("wrote %d prediction rows -> %s", len(rows), args.out)
    return 0


def cmd_simulate(args) -> int:
    with open(args.scenario) as fh:
        raw = yaml.safe_load(fh)
    spec = ScenarioSpec(
        n_per_period=tuple(raw["n_per_period"]),
        q=int(raw["q"]),
        k=int(raw["k"]),
        sparsity=float(raw["sparsity"]),
        replications=int(raw.get("replications", 20)),
        seed=int(raw.get("seed", 0)),
        sigma_eta=float(raw.get("sigma_eta", 0.5)),
    )
    model = benchmark_model(spec.q, spec.k)
    os.makedirs(args.out, exist_ok=True)
    root = np.random.SeedSequence(spec.seed)
    for rep, child in enumerate(root.spawn(spec.replications)):
        rng = np.random.default_rng(child)
        truth, batches = generate_scenario(spec, rng, model)
        rep_dir = os.path.join(args.out, f"rep_{rep:03d}")
        os.makedirs(rep_dir, exist_ok=True)
        runio.save_dataset(os.path.join(rep_dir, "data.csv"), batches)
        runio.save_membership_priors(
            os.path.join(rep_dir, "priors.yaml"),
            [p for b in batches for p in b.membership_priors],
            shared_cov=spec.sigma_eta ** 2 * np.eye(spec.k - 1))
        with open(os.path.join(rep_dir, "truth.json"), "w") as fh:
            json.dump({
                "b1": truth.b1.tolist(), "b2": truth.b2.tolist(),
                "b1_raw": truth.b1_raw.tolist(), "b2_raw": truth.b2_raw.tolist(),
                "memberships": truth.memberships.tolist(),
                "eta_bar": truth.eta_bar.tolist(),
                "theta_bar": truth.theta_bar.tolist(),
            }, fh)
        config = {
            "seed": spec.seed,
            "model": runio.model_to_block(model),
            "prior": {"kind": "nonlocal_sas"},
            "filter": {},
            "data": {
                "path": "data.csv",
                "delimiter": ",",
                "period_column": 0,
                "covariate_columns": list(range(1, spec.q + 1)),
                "response_columns": list(range(spec.q + 1, spec.q + 5)),
            },
            "priors_path": "priors.yaml",
        }
        with open(os.path.join(rep_dir, "config.yaml"), "w") as fh:
            yaml.safe_dump(config, fh, sort_keys=False)
    log.info("wrote %d replications under %s", spec.replications, args.out)
    return 0


def cmd_evaluate(args) -> int:
    pmf_a = runio.load_pmf(args.pmf_a)
    pmf_b = runio.load_pmf(args.pmf_b)
    kl = discrete_kl(pmf_a, pmf_b)
    print(f"{kl:.12g}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"kl_nats": kl, "pmf_a": args.pmf_a, "pmf_b": args.pmf_b}, fh)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="probitmix",
        description="Online filtering for dynamic mixtures of ordered-probit "
                    "regressions with topic-informed memberships.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="run the filter over all periods in a dataset")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", help="override the config's dataset path")
    p_fit.add_argument("--priors", help="override the membership priors path")
    p_fit.add_argument("--profiles", help="profiles file for the report")
    p_fit.add_argument("--out", required=True, help="output directory")
    p_fit.add_argument("--workers", type=int, default=None)
    p_fit.set_defaults(func=cmd_fit)

    p_step = sub.add_parser("step", help="advance one period from a snapshot")
    p_step.add_argument("--config", required=True)
    p_step.add_argument("--snapshot", required=True)
    p_step.add_argument("--batch", required=True, help="single-period data file")
    p_step.add_argument("--priors", help="membership priors for the batch")
    p_step.add_argument("--out", required=True)
    p_step.add_argument("--workers", type=int, default=None)
    p_step.set_defaults(func=cmd_step)

    p_pred = sub.add_parser("predict", help="risk table from a snapshot")
    p_pred.add_argument("--snapshot", required=True)
    p_pred.add_argument("--profiles", required=True)
    p_pred.add_argument("--out", required=True, help="output CSV")
    p_pred.add_argument("--level", type=float, default=0.9)
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--pmf-dir", help="also write one pmf CSV per profile")
    p_pred.set_defaults(func=cmd_predict)

    p_sim = sub.add_parser("simulate", help="generate benchmark scenario data")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--out", required=True)
    p_sim.set_defaults(func=cmd_simulate)

    p_eval = sub.add_parser("evaluate", help="KL divergence between two pmf files")
    p_eval.add_argument("--pmf-a", required=True)
    p_eval.add_argument("--pmf-b", required=True)
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, IntegrityError) as exc:
        for line in str(exc).split("; "):
            print(f"error: {line}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
