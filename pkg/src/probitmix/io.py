"""Run configuration, dataset/prior/snapshot persistence, and reporting.

Everything that crosses a process boundary lives in files: YAML for
configuration, membership priors, topic hyperparameters, and profiles;
delimiter-separated text for datasets; checksummed JSON for particle
snapshots. Snapshots are the only cross-period state, so a run can resume
from any period boundary and reproduce an uninterrupted run bit-exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, ContractViolation, IntegrityError
from .membership import DocumentCounts, LogisticNormalPosterior, StmHyper
from .model import ModelSpec, OutcomeSpec, PeriodBatch, Respondent
from .predictive import Profile
from .shrinkage import (GaussianRandomWalkPrior, NonlocalPrior,
                        ShrinkagePriorSpec)
from .smc import FilterConfig, ParticlePool

log = logging.getLogger(__name__)

SNAPSHOT_FORMAT = "probitmix-snapshot"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class DataLayout:
    """Column layout of a dataset file, declared in the run configuration."""

    path: str
    delimiter: str = ","
    period_column: int = 0
    covariate_columns: tuple[int, ...] = ()
    response_columns: tuple[int, ...] = ()


@dataclass(frozen=True)
class ReportConfig:
    credible_level: float = 0.9
    baseline_profile: str | None = None


@dataclass
class RunConfig:
    """Validated run configuration with its canonical dictionary form."""

    model: ModelSpec
    prior_kind: str
    prior_spec: ShrinkagePriorSpec | None
    rw_init_sd: float
    rw_walk_sd: float
    filter: FilterConfig
    data: DataLayout | None
    priors_path: str | None
    report: ReportConfig
    canonical: dict = field(repr=False, default_factory=dict)

    def make_prior(self):
        if self.prior_kind == "nonlocal_sas":
            return NonlocalPrior(self.prior_spec)
        return GaussianRandomWalkPrior(self.rw_init_sd, self.rw_walk_sd)

    def fingerprint(self) -> str:
        payload = json.dumps(self.canonical, sort_keys=True,
                             separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()

    def to_dict(self) -> dict:
        return json.loads(json.dumps(self.canonical))


_FILTER_DEFAULTS = FilterConfig()
_PRIOR_DEFAULTS = ShrinkagePriorSpec()


def _canonical_config(model_block, prior_block, filter_block, data_block,
                      priors_path, report_block, seed) -> dict:
    return {
        "seed": seed,
        "model": model_block,
        "prior": prior_block,
        "filter": filter_block,
        "data": data_block,
        "priors_path": priors_path,
        "report": report_block,
    }


def load_run_config(path: str) -> RunConfig:
    """Parse and validate a YAML run configuration.

    Collects every validation problem before raising, so a broken file is
    fixed in one pass. Optional keys get defaults, echoed into the canonical
    form (and therefore into the fingerprint).
    """
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"])
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError([f"YAML parse error{where}: {exc}"])
    if not isinstance(raw, dict):
        raise ConfigError(["config root must be a mapping"])
    return build_run_config(raw, base_dir=os.path.dirname(os.path.abspath(path)))


def build_run_config(raw: dict, base_dir: str = ".") -> RunConfig:
    errors: list[str] = []

    def _resolve(p):
        return p if p is None or os.path.isabs(p) else os.path.join(base_dir, p)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        errors.append(f"seed must be a nonnegative integer, got {seed!r}")
        seed = 0

    # model block
    model = None
    model_raw = raw.get("model")
    model_block = {}
    if not isinstance(model_raw, dict):
        errors.append("missing or invalid 'model' block")
    else:
        outcomes = []
        out_raw = model_raw.get("outcomes", [])
        if not isinstance(out_raw, list) or not out_raw:
            errors.append("model.outcomes must be a nonempty list")
        else:
            for i, o in enumerate(out_raw):
                try:
                    name = str(o.get("name", f"y{i + 1}"))
                    spec = OutcomeSpec.from_thresholds(name, o["thresholds"])
                    if "categories" in o and o["categories"] != spec.categories:
                        errors.append(
                            f"model.outcomes[{i}]: categories {o['categories']} "
                            f"inconsistent with {len(o['thresholds'])} thresholds")
                    outcomes.append(spec)
                except (KeyError, TypeError, ContractViolation) as exc:
                    errors.append(f"model.outcomes[{i}]: {exc}")
        try:
            model = ModelSpec(outcomes=tuple(outcomes),
                              covariate_count=int(model_raw.get("covariate_count", 0)),
                              group_count=int(model_raw.get("group_count", 0)))
        except (ContractViolation, ValueError) as exc:
            errors.append(f"model block: {exc}")
        model_block = {
            "covariate_count": model_raw.get("covariate_count"),
            "group_count": model_raw.get("group_count"),
            "outcomes": [{"name": o.name, "thresholds": list(o.thresholds)}
                         for o in outcomes],
        }

    # prior block
    prior_raw = raw.get("prior") or {}
    prior_kind = prior_raw.get("kind", "nonlocal_sas")
    prior_spec = None
    rw_init_sd = float(prior_raw.get("rw_init_sd", 1.0))
    rw_walk_sd = float(prior_raw.get("rw_walk_sd", 0.5))
    if prior_kind not in ("nonlocal_sas", "gaussian_rw"):
        errors.append(f"prior.kind must be nonlocal_sas or gaussian_rw, "
                      f"got {prior_kind!r}")
    else:
        try:
            prior_spec = ShrinkagePriorSpec(
                mu_neg=float(prior_raw.get("mu_neg", _PRIOR_DEFAULTS.mu_neg)),
                mu_pos=float(prior_raw.get("mu_pos", _PRIOR_DEFAULTS.mu_pos)),
                sigma_neg=float(prior_raw.get("sigma_neg", _PRIOR_DEFAULTS.sigma_neg)),
                sigma_zero=float(prior_raw.get("sigma_zero", _PRIOR_DEFAULTS.sigma_zero)),
                sigma_pos=float(prior_raw.get("sigma_pos", _PRIOR_DEFAULTS.sigma_pos)),
                xi=float(prior_raw.get("xi", _PRIOR_DEFAULTS.xi)),
                initial_weights=tuple(prior_raw.get(
                    "init_weights", _PRIOR_DEFAULTS.initial_weights)),
            )
        except (ContractViolation, TypeError, ValueError) as exc:
            errors.append(f"prior block: {exc}")
        if prior_kind == "gaussian_rw" and (rw_init_sd <= 0 or rw_walk_sd <= 0):
            errors.append("prior.rw_init_sd and prior.rw_walk_sd must be positive")
    prior_block = {"kind": prior_kind}
    if prior_spec is not None:
        prior_block.update({
            "mu_neg": prior_spec.mu_neg, "mu_pos": prior_spec.mu_pos,
            "sigma_neg": prior_spec.sigma_neg, "sigma_zero": prior_spec.sigma_zero,
            "sigma_pos": prior_spec.sigma_pos, "xi": prior_spec.xi,
            "init_weights": list(prior_spec.initial_weights),
        })
    if prior_kind == "gaussian_rw":
        prior_block.update({"rw_init_sd": rw_init_sd, "rw_walk_sd": rw_walk_sd})

    # filter block
    filt_raw = raw.get("filter") or {}
    filt = None
    try:
        filt = FilterConfig(
            particles_per_instance=int(filt_raw.get(
                "particles_per_instance", _FILTER_DEFAULTS.particles_per_instance)),
            instances=int(filt_raw.get("instances", _FILTER_DEFAULTS.instances)),
            ess_threshold=float(filt_raw.get("ess_threshold",
                                             _FILTER_DEFAULTS.ess_threshold)),
            rejuvenation_sweeps=int(filt_raw.get(
                "rejuvenation_sweeps", _FILTER_DEFAULTS.rejuvenation_sweeps)),
            first_period_sweeps=filt_raw.get("first_period_sweeps"),
            proposal_mix=float(filt_raw.get("proposal_mix",
                                            _FILTER_DEFAULTS.proposal_mix)),
            jitter_sd=float(filt_raw.get("jitter_sd", _FILTER_DEFAULTS.jitter_sd)),
            resampler=str(filt_raw.get("resampler", _FILTER_DEFAULTS.resampler)),
            seed=seed,
            prev_pool_size=int(filt_raw.get("prev_pool_size",
                                            _FILTER_DEFAULTS.prev_pool_size)),
        )
    except (ContractViolation, TypeError, ValueError) as exc:
        errors.append(f"filter block: {exc}")
    filter_block = {} if filt is None else {
        "particles_per_instance": filt.particles_per_instance,
        "instances": filt.instances,
        "ess_threshold": filt.ess_threshold,
        "rejuvenation_sweeps": filt.rejuvenation_sweeps,
        "first_period_sweeps": filt.first_period_sweeps,
        "proposal_mix": filt.proposal_mix,
        "jitter_sd": filt.jitter_sd,
        "resampler": filt.resampler,
        "prev_pool_size": filt.prev_pool_size,
    }

    # data block
    data = None
    data_block = None
    data_raw = raw.get("data")
    if data_raw is not None:
        try:
            cov_cols = tuple(int(c) for c in data_raw["covariate_columns"])
            resp_cols = tuple(int(c) for c in data_raw["response_columns"])
            data = DataLayout(
                path=_resolve(str(data_raw["path"])),
                delimiter=str(data_raw.get("delimiter", ",")),
                period_column=int(data_raw.get("period_column", 0)),
                covariate_columns=cov_cols,
                response_columns=resp_cols,
            )
            if model is not None:
                if len(cov_cols) != model.covariate_count:
                    errors.append(
                        f"data.covariate_columns has {len(cov_cols)} entries but "
                        f"model.covariate_count = {model.covariate_count}")
                if len(resp_cols) != model.outcome_count:
                    errors.append(
                        f"data.response_columns has {len(resp_cols)} entries but "
                        f"the model declares {model.outcome_count} outcomes")
            if not os.path.exists(data.path):
                errors.append(f"data file does not exist: {data.path}")
        except (KeyError, TypeError, ValueError) as exc:
            errors.append(f"data block: {exc}")
        data_block = dict(data_raw)

    priors_path = _resolve(raw.get("priors_path"))
    if priors_path is not None:
        if not os.path.exists(priors_path):
            errors.append(f"membership priors file does not exist: {priors_path}")
        elif model is not None:
            try:
                k_file = peek_priors_group_count(priors_path)
                if k_file != model.group_count:
                    errors.append(
                        f"group-count mismatch: priors file {priors_path} implies "
                        f"K = {k_file}, model block declares K = {model.group_count}")
            except (ConfigError, IntegrityError) as exc:
                errors.append(str(exc))

    report_raw = raw.get("report") or {}
    report = ReportConfig(
        credible_level=float(report_raw.get("credible_level", 0.9)),
        baseline_profile=report_raw.get("baseline_profile"),
    )
    if not 0.0 < report.credible_level < 1.0:
        errors.append(f"report.credible_level must lie in (0,1), "
                      f"got {report.credible_level}")
    report_block = {"credible_level": report.credible_level,
                    "baseline_profile": report.baseline_profile}

    if errors:
        raise ConfigError(errors)

    canonical = _canonical_config(model_block, prior_block, filter_block,
                                  data_block, raw.get("priors_path"),
                                  report_block, seed)
    cfg = RunConfig(model=model, prior_kind=prior_kind, prior_spec=prior_spec,
                    rw_init_sd=rw_init_sd, rw_walk_sd=rw_walk_sd, filter=filt,
                    data=data, priors_path=priors_path, report=report,
                    canonical=canonical)
    log.info("loaded config (fingerprint %s): %s", cfg.fingerprint()[:12],
             json.dumps(canonical, sort_keys=True))
    return cfg


def dump_run_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=True)


# --- datasets -----------------------------------------------------------


def load_dataset(layout: DataLayout, model: ModelSpec) -> list[tuple[int, list]]:
    """Respondents grouped by period, in ascending period order.

    Returns (period, respondents) pairs; row order within a period follows
    the file. Raises ConfigError naming the offending line on bad cells.
    """
    grouped: dict[int, list] = {}
    with open(layout.path, newline="") as fh:
        reader = csv.reader(fh, delimiter=layout.delimiter)
        for lineno, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                period = int(row[layout.period_column])
                x = [float(row[c]) for c in layout.covariate_columns]
                y = [int(row[c]) for c in layout.response_columns]
            except (IndexError, ValueError) as exc:
                raise ConfigError(
                    [f"{layout.path}:{lineno}: cannot parse row: {exc}"])
            r = Respondent(covariates=x, responses=y, period=period)
            try:
                r.validate(model)
            except ContractViolation as exc:
                raise ConfigError([f"{layout.path}:{lineno}: {exc}"])
            grouped.setdefault(period, []).append(r)
    return [(p, grouped[p]) for p in sorted(grouped)]


def save_dataset(path: str, batches, delimiter: str = ",") -> None:
    """Write batches in the standard layout: period, covariates, responses."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delimiter)
        for batch in batches:
            for r in batch.respondents:
                writer.writerow([r.period, *[repr(float(v)) for v in r.covariates],
                                 *[int(v) for v in r.responses]])


# --- membership prior files ----------------------------------------------


def peek_priors_group_count(path: str) -> int:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    try:
        first = raw["records"][0]
        return len(first["mean"]) + 1
    except (KeyError, IndexError, TypeError):
        raise ConfigError([f"membership priors file {path} has no usable records"])


def load_membership_priors(path: str) -> list[LogisticNormalPosterior]:
    """One logistic-normal posterior per data row.

    Records carry a mean vector and either an inline covariance or a
    reference to the file-level shared covariance.
    """
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "records" not in raw:
        raise ConfigError([f"{path}: expected a mapping with a 'records' list"])
    shared = raw.get("shared_cov")
    shared = None if shared is None else np.asarray(shared, dtype=float)
    priors = []
    for i, rec in enumerate(raw["records"]):
        try:
            mean = np.asarray(rec["mean"], dtype=float)
            cov = rec.get("cov")
            if cov is None:
                if shared is None:
                    raise KeyError("no 'cov' and no file-level 'shared_cov'")
                cov = shared
            priors.append(LogisticNormalPosterior(mean, np.asarray(cov, dtype=float)))
        except (KeyError, TypeError, ValueError, ContractViolation) as exc:
            raise ConfigError([f"{path}: record {i}: {exc}"])
    return priors


def save_membership_priors(path: str, priors, shared_cov=None) -> None:
    doc: dict = {"records": []}
    if shared_cov is not None:
        doc["shared_cov"] = np.asarray(shared_cov, dtype=float).tolist()
    for p in priors:
        rec = {"mean": p.eta_mean.tolist()}
        if shared_cov is None or not np.array_equal(p.eta_cov, shared_cov):
            rec["cov"] = p.eta_cov.tolist()
        doc["records"].append(rec)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def assemble_batches(layout: DataLayout, priors_path: str,
                     model: ModelSpec) -> list[PeriodBatch]:
    """Join a dataset with its aligned membership-prior file into batches."""
    grouped = load_dataset(layout, model)
    priors = load_membership_priors(priors_path)
    total = sum(len(rs) for _, rs in grouped)
    if len(priors) != total:
        raise ConfigError(
            [f"{priors_path} has {len(priors)} records but the dataset has "
             f"{total} rows; they must align one-to-one in file order"])
    batches = []
    offset = 0
    for period, respondents in grouped:
        n = len(respondents)
        batches.append(PeriodBatch(period=period, respondents=respondents,
                                   membership_priors=priors[offset:offset + n]))
        offset += n
    return batches


# --- topic hyperparameter files -------------------------------------------


def load_stm_hyper(path: str) -> StmHyper:
    """Topic hyperparameters: dense lambda/psi, row-sparse gamma triplets."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    try:
        k = int(raw["topics"])
        h = int(raw["vocab_size"])
        lam = np.asarray(raw["lambda"], dtype=float)
        psi = np.asarray(raw["psi"], dtype=float)
        gamma = np.zeros((k, h))
        for topic, word, prob in raw["gamma_triplets"]:
            gamma[int(topic), int(word)] = float(prob)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ConfigError([f"{path}: malformed topic hyperparameter file: {exc}"])
    try:
        return StmHyper(gamma=gamma, lam=lam, psi=psi)
    except ContractViolation as exc:
        raise ConfigError([f"{path}: {exc}"])


# --- profiles --------------------------------------------------------------


def load_profiles(path: str, model: ModelSpec,
                  stm: StmHyper | None = None) -> list[Profile]:
    """Profiles for prediction: covariates plus a membership prior.

    Each entry gives the prior directly (mean/cov) or as document counts and
    socio covariates, in which case the Laplace approximation is computed
    against ``stm`` (loaded from the file's ``stm_path`` when present).
    """
    from .membership import laplace_theta_posterior

    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict) or "profiles" not in raw:
        raise ConfigError([f"{path}: expected a mapping with a 'profiles' list"])
    if stm is None and raw.get("stm_path"):
        stm_path = raw["stm_path"]
        if not os.path.isabs(stm_path):
            stm_path = os.path.join(os.path.dirname(os.path.abspath(path)), stm_path)
        stm = load_stm_hyper(stm_path)
    profiles = []
    for i, entry in enumerate(raw["profiles"]):
        try:
            label = str(entry.get("label", f"profile-{i}"))
            covariates = np.asarray(entry["covariates"], dtype=float)
            if "membership_prior" in entry:
                mp = entry["membership_prior"]
                prior = LogisticNormalPosterior(
                    np.asarray(mp["mean"], dtype=float),
                    np.asarray(mp["cov"], dtype=float))
            elif "document" in entry:
                if stm is None:
                    raise KeyError("document-based profile needs 'stm_path'")
                doc_raw = entry["document"]
                counts = doc_raw.get("counts", {})
                doc = DocumentCounts(
                    indices=np.array([int(w) for w in counts], dtype=int),
                    counts=np.array([int(c) for c in counts.values()], dtype=int),
                    vocab_size=stm.vocab_size)
                prior = laplace_theta_posterior(
                    doc, np.asarray(doc_raw["socio"], dtype=float), stm)
            else:
                raise KeyError("needs 'membership_prior' or 'document'")
            if covariates.shape != (model.covariate_count,):
                raise ValueError(
                    f"covariate length {covariates.size} != {model.covariate_count}")
            if prior.group_count != model.group_count:
                raise ValueError(
                    f"membership prior implies K = {prior.group_count}, "
                    f"model has K = {model.group_count}")
            profiles.append(Profile(covariates=covariates,
                                    membership_prior=prior, label=label))
        except (KeyError, TypeError, ValueError, ContractViolation) as exc:
            raise ConfigError([f"{path}: profile {i}: {exc}"])
    return profiles


# --- snapshots --------------------------------------------------------------


def _pool_record(pool: ParticlePool) -> dict:
    j, k, q, p = pool.coefficients.shape
    return {
        "instance_id": pool.instance_id,
        "seed": pool.rng_seed,
        "j": j, "k": k, "q": q, "p": p,
        "n": int(pool.memberships.shape[1]),
        "coefficients": pool.coefficients.ravel().tolist(),
        "memberships": pool.memberships.ravel().tolist(),
        "log_weights": pool.log_weights.tolist(),
        "ess_trace": pool.ess_trace.tolist(),
    }


def _pool_from_record(rec: dict, period: int) -> ParticlePool:
    j, k, q, p, n = rec["j"], rec["k"], rec["q"], rec["p"], rec["n"]
    return ParticlePool(
        coefficients=np.array(rec["coefficients"], dtype=float).reshape(j, k, q, p),
        memberships=np.array(rec["memberships"], dtype=int).reshape(j, n),
        log_weights=np.array(rec["log_weights"], dtype=float),
        period=period,
        rng_seed=rec["seed"],
        instance_id=rec["instance_id"],
        ess_trace=np.array(rec["ess_trace"], dtype=float),
    )


def _checksum(payload: dict) -> str:
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(body.encode()).hexdigest()


def model_to_block(model: ModelSpec) -> dict:
    return {
        "covariate_count": model.covariate_count,
        "group_count": model.group_count,
        "outcomes": [{"name": o.name, "thresholds": list(o.thresholds)}
                     for o in model.outcomes],
    }


def model_from_block(block: dict) -> ModelSpec:
    outcomes = tuple(OutcomeSpec.from_thresholds(o["name"], o["thresholds"])
                     for o in block["outcomes"])
    return ModelSpec(outcomes=outcomes,
                     covariate_count=int(block["covariate_count"]),
                     group_count=int(block["group_count"]))


def save_snapshot(path: str, instance_pools, period: int,
                  config_fingerprint: str, model: ModelSpec) -> None:
    """Checksummed JSON snapshot of all instance pools at a period boundary.

    Floats serialize via repr and reload bit-exactly. The model block is
    embedded so prediction can run from a snapshot alone.
    """
    payload = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "period": int(period),
        "config_fingerprint": config_fingerprint,
        "model": model_to_block(model),
        "instances": [_pool_record(p) for p in instance_pools],
    }
    payload["checksum"] = _checksum({k: v for k, v in payload.items()
                                     if k != "checksum"})
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))


@dataclass
class Snapshot:
    period: int
    config_fingerprint: str
    model: ModelSpec
    instance_pools: list


def load_snapshot(path: str) -> Snapshot:
    """Load and verify a snapshot; truncation or tampering never loads partially."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IntegrityError(f"snapshot {path} is truncated or corrupt: {exc}")
    if payload.get("format") != SNAPSHOT_FORMAT:
        raise IntegrityError(f"{path} is not a {SNAPSHOT_FORMAT} file")
    if payload.get("version") != SNAPSHOT_VERSION:
        raise IntegrityError(
            f"snapshot version {payload.get('version')} incompatible with "
            f"supported version {SNAPSHOT_VERSION}")
    stored = payload.get("checksum")
    expected = _checksum({k: v for k, v in payload.items() if k != "checksum"})
    if stored != expected:
        raise IntegrityError(
            f"snapshot checksum mismatch: stored {stored}, computed {expected}")
    period = payload["period"]
    pools = [_pool_from_record(rec, period) for rec in payload["instances"]]
    return Snapshot(period=period,
                    config_fingerprint=payload["config_fingerprint"],
                    model=model_from_block(payload["model"]),
                    instance_pools=pools)


def save_pmf(path: str, pmf, model: ModelSpec) -> None:
    """Predictive pmf as CSV: one column per outcome, then the mass."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([o.name for o in model.outcomes] + ["mass"])
        for point, mass in zip(pmf.support, pmf.mass):
            writer.writerow([*point.tolist(), repr(float(mass))])


def load_pmf(path: str):
    from .predictive import PredictivePmf

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        support, mass = [], []
        for row in reader:
            if not row:
                continue
            support.append([int(v) for v in row[:-1]])
            mass.append(float(row[-1]))
    if not support:
        raise ConfigError([f"{path}: empty pmf file"])
    return PredictivePmf(np.array(support), np.array(mass), draws=0)


# --- reporting ---------------------------------------------------------------


def file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def emit_report(results_by_period, profiles, model: ModelSpec, cfg: RunConfig,
                out_dir: str, data_hash: str = "",
                predict_seed: int = 0, wall_clock: dict | None = None) -> dict:
    """Write risk/band and relative-risk CSVs plus the run manifest.

    ``results_by_period`` maps period -> merged ParticlePool. The manifest's
    ``identity`` hash depends only on the config fingerprint and data hash,
    so it changes iff configuration or data change.
    """
    from .predictive import credible_band, per_particle_risks, relative_risk

    os.makedirs(out_dir, exist_ok=True)
    level = cfg.report.credible_level
    baseline_label = cfg.report.baseline_profile
    rows = []
    risk_lookup = {}
    for period, pool in sorted(results_by_period.items()):
        for profile in profiles:
            for p_idx, outcome in enumerate(model.outcomes):
                for cut in range(1, outcome.categories):
                    rng = np.random.default_rng(np.random.SeedSequence(
                        [predict_seed, int(period), p_idx, cut,
                         _stable_hash(profile.label)]))
                    risks = per_particle_risks(profile, pool, model, rng,
                                               p_idx, cut)
                    mean_risk = float(np.average(
                        risks, weights=pool.normalized_weights()))
                    lo, hi = credible_band(risks, level)
                    rows.append([profile.label, outcome.name, cut, period,
                                 mean_risk, lo, hi])
                    risk_lookup[(profile.label, outcome.name, cut, period)] = mean_risk

    written = {}
    if profiles:
        risks_path = os.path.join(out_dir, "risks.csv")
        with open(risks_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["profile", "outcome", "cutpoint", "period",
                             "risk", "lower", "upper"])
            writer.writerows(rows)
        written["risks"] = risks_path
    if baseline_label is not None and profiles:
        rr_path = os.path.join(out_dir, "relative_risk.csv")
        with open(rr_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["profile", "baseline", "outcome", "cutpoint",
                             "period", "relative_risk"])
            for (label, outcome, cut, period), risk in risk_lookup.items():
                base = risk_lookup.get((baseline_label, outcome, cut, period))
                if base is None:
                    continue
                writer.writerow([label, baseline_label, outcome, cut, period,
                                 relative_risk(risk, base)])
        written["relative_risk"] = rr_path

    manifest = {
        "package": "probitmix",
        "version": __version__,
        "seed": cfg.filter.seed,
        "config_fingerprint": cfg.fingerprint(),
        "data_sha256": data_hash,
        "identity": hashlib.sha256(
            (cfg.fingerprint() + ":" + data_hash).encode()).hexdigest(),
        "periods": sorted(results_by_period),
        "wall_clock": wall_clock or {},
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    written["manifest"] = manifest_path
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return written


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")
