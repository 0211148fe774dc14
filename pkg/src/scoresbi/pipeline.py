"""End-to-end seeded experiment runs.

A run walks observed-data setup, localization, reference-table building,
training (plus the optional mean-shift fit), Langevin sampling, and metric
evaluation, persisting every stage's artifacts into a run directory before
the next stage starts.  Stage seeds derive from the master seed by stage
name, so editing one stage's settings never shifts another stage's random
stream, and rerunning an unchanged config reproduces every CSV byte for
byte.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from . import localize, metrics, models, sampler, tables, training, transforms
from .errors import ConfigError, StageFailure
from .seeds import derive_rng, derive_seed
from .training import DebiasConfig, TrainConfig

__all__ = [
    "ObservedConfig",
    "LocalizeConfig",
    "BoundaryConfig",
    "TableConfig",
    "SampleConfig",
    "ExperimentConfig",
    "RunResult",
    "config_to_json",
    "config_from_json",
    "save_config",
    "load_config",
    "save_matrix_csv",
    "load_matrix_csv",
    "run_pipeline",
    "run_stage",
]

VARIANTS = ("single_debiased", "n_model", "naive")
BOUNDARY_KINDS = (
    "none",
    "weight_function",
    "gaussian_smoothing",
    "parameter_transform",
)
STAGES = ("observed", "localize", "tables", "train", "sample", "evaluate")


# --- configuration ----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ObservedConfig:
    """Where the observed dataset comes from: simulated at a known truth
    (``theta_star``) or loaded from a CSV with one observation per row."""

    theta_star: tuple[float, ...] | None = None
    n_obs: int = 100
    path: str | None = None


@dataclasses.dataclass(frozen=True)
class LocalizeConfig:
    enabled: bool = True
    members: int = 10
    directions: int = 100
    iters: int = 300
    m_sim: int | None = None
    inflation: float = 1.0


@dataclasses.dataclass(frozen=True)
class BoundaryConfig:
    """Support-boundary handling: ``none``, ``weight_function`` (weighted
    training loss plus a data-dependent sampling box), ``gaussian_smoothing``
    (noised tables; at sampling time the observed data is re-noised
    ``n_noise`` times and the draws pooled), or ``parameter_transform``
    (training and sampling run in unconstrained coordinates through a
    standardized box bijection; needed when the theta law piles mass against
    a prior face).  ``sigma`` left unset defaults to 0.05 x the pooled
    observed standard deviation."""

    kind: str = "none"
    sigma: float | None = None
    n_noise: int = 3


@dataclasses.dataclass(frozen=True)
class TableConfig:
    n_single: int = 0
    n_repeated: int = 0
    obs_repeated: int = 0
    n_full: int = 0


@dataclasses.dataclass(frozen=True)
class SampleConfig:
    chains: int = 20
    stage_steps: int = 100
    final_steps: int = 500
    burn_fraction: float = 0.2
    thin: int = 1
    tau: float | None = None          # None -> 0.1 * min proposal var / n
    ladder: tuple[float, ...] = sampler.DEFAULT_LADDER
    clip_bound: float | None = None   # None -> norm cap from (n, d)


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    model_id: str = "gaussian_location"
    constants: dict = dataclasses.field(default_factory=dict)
    prior: tuple | None = None        # ((kind, p1, p2), ...) or None for default
    variant: str = "single_debiased"
    observed: ObservedConfig = ObservedConfig()
    localization: LocalizeConfig = LocalizeConfig()
    boundary: BoundaryConfig = BoundaryConfig()
    tables: TableConfig = TableConfig()
    training: TrainConfig = TrainConfig()
    debias: DebiasConfig = DebiasConfig()
    sampler: SampleConfig = SampleConfig()
    oracle_score: bool = False        # analytic score instead of training
    seed: int = 0
    out_dir: str = "run"
    stage_seeds: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown pipeline variant {self.variant!r}")
        if self.boundary.kind not in BOUNDARY_KINDS:
            raise ConfigError(f"unknown boundary treatment {self.boundary.kind!r}")
        if self.observed.path is None and self.observed.theta_star is None:
            raise ConfigError("observed data needs either theta_star or a path")
        if not self.oracle_score:
            t = self.tables
            if self.variant == "naive" and t.n_single < 4:
                raise ConfigError("naive variant needs a single-observation table")
            if self.variant == "n_model" and t.n_full < 4:
                raise ConfigError("n_model variant needs a full-data table")
            if self.variant == "single_debiased" and (
                t.n_single < 4 or t.n_repeated < 4 or t.obs_repeated < 2
            ):
                raise ConfigError(
                    "single_debiased variant needs single and repeated tables"
                )
        if self.boundary.sigma is not None and not (self.boundary.sigma > 0):
            raise ConfigError("smoothing noise scale must be positive")
        if self.boundary.kind == "gaussian_smoothing" and self.boundary.n_noise < 1:
            raise ConfigError("need at least one noise replicate")
        for key in self.stage_seeds:
            if key not in STAGES:
                raise ConfigError(f"unknown stage {key!r} in stage_seeds")

    def stage_seed(self, stage: str) -> int:
        if stage in self.stage_seeds:
            return int(self.stage_seeds[stage])
        return derive_seed(self.seed, f"stage-{stage}")


def config_to_json(config: ExperimentConfig) -> dict:
    """Plain-JSON form; ``config_from_json`` inverts it exactly."""
    out = dataclasses.asdict(config)
    out["observed"]["theta_star"] = (
        None
        if config.observed.theta_star is None
        else [float(v) for v in config.observed.theta_star]
    )
    if config.prior is not None:
        out["prior"] = [[m[0], float(m[1]), float(m[2])] for m in config.prior]
    for section in ("training", "debias"):
        out[section]["lambda_grid"] = [float(v) for v in out[section]["lambda_grid"]]
        out[section]["hidden"] = list(out[section]["hidden"])
    out["sampler"]["ladder"] = [float(v) for v in out["sampler"]["ladder"]]
    out["format"] = "scoresbi-config v1"
    return out


def config_from_json(obj: dict) -> ExperimentConfig:
    obj = dict(obj)
    obj.pop("format", None)
    observed = dict(obj["observed"])
    if observed.get("theta_star") is not None:
        observed["theta_star"] = tuple(float(v) for v in observed["theta_star"])
    prior = obj.get("prior")
    if prior is not None:
        prior = tuple((m[0], float(m[1]), float(m[2])) for m in prior)
    train_kw = dict(obj["training"])
    train_kw["hidden"] = tuple(train_kw["hidden"])
    train_kw["lambda_grid"] = tuple(train_kw["lambda_grid"])
    debias_kw = dict(obj["debias"])
    debias_kw["hidden"] = tuple(debias_kw["hidden"])
    debias_kw["lambda_grid"] = tuple(debias_kw["lambda_grid"])
    sample_kw = dict(obj["sampler"])
    sample_kw["ladder"] = tuple(sample_kw["ladder"])
    return ExperimentConfig(
        model_id=obj["model_id"],
        constants=dict(obj.get("constants", {})),
        prior=prior,
        variant=obj["variant"],
        observed=ObservedConfig(**observed),
        localization=LocalizeConfig(**obj["localization"]),
        boundary=BoundaryConfig(**obj["boundary"]),
        tables=TableConfig(**obj["tables"]),
        training=TrainConfig(**train_kw),
        debias=DebiasConfig(**debias_kw),
        sampler=SampleConfig(**sample_kw),
        oracle_score=bool(obj.get("oracle_score", False)),
        seed=int(obj["seed"]),
        out_dir=obj.get("out_dir", "run"),
        stage_seeds={k: int(v) for k, v in obj.get("stage_seeds", {}).items()},
    )


def save_config(config: ExperimentConfig, path) -> None:
    _write_json(path, config_to_json(config))


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_json(json.load(fh))


# --- small persistence helpers ---------------------------------------------


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1)
        fh.write("\n")


def save_matrix_csv(matrix: np.ndarray, path, prefix: str = "x") -> None:
    """Byte-stable CSV for a 2-D float array (shortest round-trip decimals)."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    header = ",".join(f"{prefix}_{j}" for j in range(matrix.shape[1]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in matrix:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return np.array(rows, dtype=np.float64).reshape(len(rows), len(header))


# --- support restriction for weight-function sampling ------------------------


class _RestrictedPrior:
    """The prior's density and gradient inside a narrowed support box.

    Used when sampling under the weight-function boundary treatment: the
    observed dataset bounds part of the parameter support (e.g. a service
    floor cannot exceed the smallest observed sojourn), and reflecting at
    the narrowed box keeps every emitted sample feasible.
    """

    def __init__(self, base, lo, hi):
        self.base = base
        self.lo = np.maximum(base.lo, np.asarray(lo, dtype=np.float64))
        self.hi = np.minimum(base.hi, np.asarray(hi, dtype=np.float64))
        if np.any(self.lo >= self.hi):
            raise ConfigError("restricted support box is empty")
        self.dim = base.dim

    def logpdf(self, theta):
        return self.base.logpdf(theta)

    def grad_logpdf(self, theta):
        return self.base.grad_logpdf(theta)

    def sample(self, size, rng):
        out = np.empty((size, self.dim))
        have = 0
        attempts = 0
        while have < size:
            draw = np.atleast_2d(self.base.sample(max(size - have, 64), rng))
            attempts += draw.shape[0]
            inside = np.all((draw > self.lo) & (draw < self.hi), axis=1)
            good = draw[inside][: size - have]
            out[have : have + good.shape[0]] = good
            have += good.shape[0]
            if attempts > 100 * size + 1000 and have < max(1, attempts // 100):
                raise ConfigError("restricted support box rejects > 99% of the prior")
        return out


# --- pipeline ----------------------------------------------------------------


@dataclasses.dataclass
class RunResult:
    out_dir: str
    manifest: dict
    samples: sampler.SampleResult
    report: metrics.MetricReport
    trained: object


class _Run:
    """Mutable state threaded through the pipeline stages."""

    def __init__(self, config: ExperimentConfig, out_dir: str, resume: bool = False):
        self.config = config
        self.out_dir = out_dir
        self.model = models.make_model(config.model_id, **config.constants)
        self.prior = (
            models.default_prior(self.model)
            if config.prior is None
            else models.Prior(list(config.prior))
        )
        self.manifest = {
            "format": "scoresbi-manifest v1",
            "variant": config.variant,
            "boundary": config.boundary.kind,
            "completed": [],
            "stages": {},
        }
        if resume and os.path.exists(os.path.join(out_dir, "manifest.json")):
            with open(os.path.join(out_dir, "manifest.json"), encoding="utf-8") as fh:
                self.manifest = json.load(fh)
        self.x_star = None
        self.proposal = None
        self.law = self.prior
        self.table_set = None
        self.score = None
        self.smooth_sigma = 0.0
        self.transform = None
        self.samples = None
        self.report = None

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def record(self, stage: str, seed: int | None, sim_rows: int, **extra) -> None:
        entry = {"sim_rows": int(sim_rows), **extra}
        if seed is not None:
            entry["seed"] = int(seed)
        self.manifest["stages"][stage] = entry
        if stage in self.manifest["completed"]:
            self.manifest["completed"].remove(stage)
        self.manifest["completed"].append(stage)
        self.manifest["sim_rows_total"] = int(
            sum(s["sim_rows"] for s in self.manifest["stages"].values())
        )
        _write_json(self.path("manifest.json"), self.manifest)


def _stage_observed(run: _Run) -> None:
    cfg = run.config
    seed = cfg.stage_seed("observed")
    if cfg.observed.path is not None:
        x_star = load_matrix_csv(cfg.observed.path)
        sim_rows = 0
    else:
        theta_star = np.asarray(cfg.observed.theta_star, dtype=np.float64)
        z = run.model.draw_latents(cfg.observed.n_obs, derive_rng(seed, "latents"))
        x_star = run.model.simulate(theta_star, z)
        sim_rows = cfg.observed.n_obs
    run.x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    if cfg.boundary.kind == "gaussian_smoothing":
        run.smooth_sigma = (
            float(cfg.boundary.sigma)
            if cfg.boundary.sigma is not None
            else 0.05 * float(np.std(run.x_star))
        )
    save_matrix_csv(run.x_star, run.path("observed.csv"))
    run.record("observed", seed, sim_rows, rows=int(run.x_star.shape[0]))


def _stage_localize(run: _Run) -> None:
    cfg = run.config
    if not cfg.localization.enabled:
        run.record("localize", None, 0, skipped=True)
        return
    seed = cfg.stage_seed("localize")
    smm_cfg = localize.SmmConfig(
        n_directions=cfg.localization.directions,
        iters=cfg.localization.iters,
        m_sim=cfg.localization.m_sim,
    )
    pool = localize.smm_pool(
        run.model, run.prior, run.x_star, cfg.localization.members, smm_cfg, seed
    )
    _write_json(run.path("pool.json"), pool.to_json())
    run.proposal = localize.build_proposal(pool, run.prior, cfg.localization.inflation)
    run.law = run.proposal
    _write_json(run.path("proposal.json"), run.proposal.to_json())
    sim_rows = sum(m.sim_rows for m in pool.members)
    run.record("localize", seed, sim_rows, members=len(pool.members))


def _stage_tables(run: _Run) -> None:
    cfg = run.config
    seed = cfg.stage_seed("tables")
    t = cfg.tables
    table_set = tables.build_reference_tables(
        run.model,
        run.law,
        n_single=t.n_single,
        n_repeated=t.n_repeated,
        obs_repeated=t.obs_repeated,
        n_full=t.n_full,
        obs_full=run.x_star.shape[0],
        seed=seed,
    )
    if cfg.boundary.kind == "gaussian_smoothing" and run.smooth_sigma > 0:
        table_set = tables.TableSet(
            single=tables.gaussian_smooth(
                table_set.single, run.smooth_sigma, derive_rng(seed, "smooth-single")
            ),
            repeated=tables.gaussian_smooth(
                table_set.repeated, run.smooth_sigma, derive_rng(seed, "smooth-repeated")
            ),
            full=tables.gaussian_smooth(
                table_set.full, run.smooth_sigma, derive_rng(seed, "smooth-full")
            ),
        )
    for name in ("single", "repeated", "full"):
        table = getattr(table_set, name)
        if table.rows:
            tables.save_table(table, run.path(f"table_{name}.bin"))
    run.table_set = table_set
    run.record(
        "tables",
        seed,
        table_set.sim_rows,
        rows_single=table_set.single.rows,
        rows_repeated=table_set.repeated.rows,
        rows_full=table_set.full.rows,
    )


def _box_transform(run: _Run) -> transforms.BoxTransform:
    """Standardized box bijection for the run's prior, centered on the
    localized proposal when one exists (prior-box midpoint otherwise)."""
    prior = run.prior
    if not (np.all(np.isfinite(prior.lo)) and np.all(np.isfinite(prior.hi))):
        raise ConfigError(
            "parameter_transform needs a prior with bounded support on "
            "every coordinate"
        )
    if run.proposal is not None:
        return transforms.BoxTransform.standardized(
            prior.lo, prior.hi, run.proposal.mean, run.proposal.var
        )
    mid = 0.5 * (prior.lo + prior.hi)
    quarter = 0.25 * (prior.hi - prior.lo)
    return transforms.BoxTransform.standardized(prior.lo, prior.hi, mid, quarter**2)


def _transformed_tables(table_set: tables.TableSet, tf) -> tables.TableSet:
    """The same tables with theta columns mapped to transformed coordinates."""

    def remap(table):
        if table.rows == 0:
            return table
        return dataclasses.replace(table, theta=tf.forward(table.theta))

    return tables.TableSet(
        single=remap(table_set.single),
        repeated=remap(table_set.repeated),
        full=remap(table_set.full),
    )


def _loss_form(config: ExperimentConfig) -> tuple[str, str | None]:
    """(loss form, table kind) implied by variant and boundary treatment."""
    weighted = config.boundary.kind == "weight_function"
    if config.variant == "naive":
        return ("weighted" if weighted else "naive"), "single"
    if config.variant == "n_model":
        return ("weighted" if weighted else "full_data"), "full"
    if weighted:
        raise ConfigError(
            "weight-function training for the debiased variant is not supported; "
            "use gaussian_smoothing or none"
        )
    return "regularized_single", "single"


def _stage_train(run: _Run) -> None:
    cfg = run.config
    if cfg.oracle_score:
        run.score = training.AnalyticScore(run.model)
        run.record("train", None, 0, oracle=True)
        return
    seed = cfg.stage_seed("train")
    form, kind = _loss_form(cfg)
    train_cfg = dataclasses.replace(
        cfg.training, loss=form, table_kind=kind, seed=seed
    )
    law, table_set = run.law, run.table_set
    if cfg.boundary.kind == "parameter_transform":
        run.transform = _box_transform(run)
        law = transforms.TransformedLaw(law, run.transform)
        table_set = _transformed_tables(table_set, run.transform)
    trained = training.train(run.model, law, table_set, train_cfg)
    if cfg.variant == "single_debiased":
        debias_cfg = dataclasses.replace(cfg.debias, seed=derive_seed(seed, "debias"))
        trained = training.train_debias(trained, table_set.repeated, debias_cfg)
    if run.transform is not None:
        trained.meta["transform"] = run.transform.to_json()
    training.save_trained(trained, run.path("score"))
    run.score = trained
    run.record(
        "train",
        seed,
        0,
        loss=form,
        debiased=bool(trained.debiased),
        val_loss=trained.meta.get("val_loss"),
    )


def _sampling_support(run: _Run):
    """Sampling-time support: narrowed by the observed data under the
    weight-function treatment, otherwise the prior itself."""
    if run.config.boundary.kind == "weight_function" and hasattr(
        run.model, "weight_intervals"
    ):
        lo, hi = run.model.weight_intervals(run.x_star)
        return _RestrictedPrior(run.prior, lo, hi)
    return run.prior


def _stage_sample(run: _Run) -> None:
    cfg = run.config
    seed = cfg.stage_seed("sample")
    s = cfg.sampler
    n_obs = run.x_star.shape[0]
    transform = None
    if cfg.boundary.kind == "parameter_transform":
        transform = run.transform if run.transform is not None else _box_transform(run)
    if s.tau is not None:
        tau = float(s.tau)
    elif transform is not None:
        # standardized transform puts the proposal near unit scale
        tau = sampler.default_tau(1.0, n_obs)
    elif run.proposal is not None:
        tau = sampler.default_tau(run.proposal.var, n_obs)
    else:
        tau = sampler.default_tau(1.0, n_obs)
    sam_cfg = sampler.SamplerConfig(
        chains=s.chains,
        stage_steps=s.stage_steps,
        final_steps=s.final_steps,
        burn_fraction=s.burn_fraction,
        thin=s.thin,
        tau=tau,
        ladder=s.ladder,
        clip_bound=s.clip_bound,
    )
    support = _sampling_support(run)
    if transform is not None:
        score = (
            transforms.TransformedScore(run.score, transform)
            if cfg.oracle_score
            else run.score
        )
        init = (
            transforms.TransformedLaw(run.proposal, transform)
            if run.proposal is not None
            else None
        )
        raw = sampler.run_sampler(
            score,
            run.x_star,
            transforms.TransformedLaw(run.prior, transform),
            sam_cfg,
            proposal=init,
            seed=seed,
        )
        result = sampler.SampleResult(
            samples=transform.inverse(raw.samples),
            chain=raw.chain,
            stage=raw.stage,
            diagnostics={**raw.diagnostics, "transformed": True},
        )
    elif cfg.boundary.kind == "gaussian_smoothing" and run.smooth_sigma > 0:
        pieces = []
        for k in range(cfg.boundary.n_noise):
            noise = derive_rng(seed, f"noise{k}").normal(
                scale=run.smooth_sigma, size=run.x_star.shape
            )
            pieces.append(
                sampler.run_sampler(
                    run.score,
                    run.x_star + noise,
                    support,
                    sam_cfg,
                    proposal=run.proposal,
                    seed=derive_seed(seed, f"run{k}"),
                )
            )
        result = sampler.SampleResult(
            samples=np.concatenate([p.samples for p in pieces]),
            chain=np.concatenate(
                [p.chain + k * s.chains for k, p in enumerate(pieces)]
            ),
            stage=np.concatenate([p.stage for p in pieces]),
            diagnostics={
                "noise_replicates": cfg.boundary.n_noise,
                "noise_sigma": run.smooth_sigma,
                "rows": int(sum(p.diagnostics["rows"] for p in pieces)),
                "failed_chains": int(
                    sum(p.diagnostics["failed_chains"] for p in pieces)
                ),
                "tau": tau,
            },
        )
    else:
        result = sampler.run_sampler(
            run.score, run.x_star, support, sam_cfg, proposal=run.proposal, seed=seed
        )
    sampler.save_samples_csv(result, run.path("samples.csv"))
    run.samples = result
    run.record(
        "sample",
        seed,
        0,
        rows=int(result.samples.shape[0]),
        failed_chains=int(result.diagnostics.get("failed_chains", 0)),
        tau=tau,
    )


def _stage_evaluate(run: _Run) -> None:
    cfg = run.config
    seed = cfg.stage_seed("evaluate")
    known = cfg.observed.theta_star is not None
    theta_ref = (
        np.asarray(cfg.observed.theta_star, dtype=np.float64)
        if known
        else run.samples.samples.mean(axis=0)
    )
    report = metrics.posterior_metrics(run.samples.samples, theta_ref)
    # the manifest's sample entry is the diagnostics source both when the
    # sampler just ran and when samples were reloaded from CSV
    sample_entry = dict(run.manifest["stages"].get("sample", {}))
    sample_entry.pop("seed", None)
    report.extras.update(
        {
            "theta_star_known": known,
            "theta_ref": [float(v) for v in theta_ref],
            "variant": cfg.variant,
            "boundary": cfg.boundary.kind,
            "n_obs": int(run.x_star.shape[0]),
            "sampler": sample_entry,
        }
    )
    report.save_json(run.path("metrics.json"))
    report.save_csv(run.path("metrics.csv"))
    run.report = report
    run.record("evaluate", seed, 0, rows=int(run.samples.samples.shape[0]))


_STAGE_FNS = {
    "observed": _stage_observed,
    "localize": _stage_localize,
    "tables": _stage_tables,
    "train": _stage_train,
    "sample": _stage_sample,
    "evaluate": _stage_evaluate,
}

_STAGE_NEEDS = {
    "observed": (),
    "localize": ("observed",),
    "tables": ("observed", "proposal"),
    "train": ("observed", "proposal", "tables"),
    "sample": ("observed", "proposal", "score"),
    "evaluate": ("observed", "samples"),
}


def _load_state(run: _Run, need: tuple[str, ...]) -> None:
    """Rehydrate earlier stages' artifacts from the run directory."""
    cfg = run.config
    if "observed" in need:
        path = run.path("observed.csv")
        if not os.path.exists(path):
            _stage_observed(run)   # cheap and fully determined by the config
        else:
            run.x_star = load_matrix_csv(path)
            if cfg.boundary.kind == "gaussian_smoothing":
                run.smooth_sigma = (
                    float(cfg.boundary.sigma)
                    if cfg.boundary.sigma is not None
                    else 0.05 * float(np.std(run.x_star))
                )
    if "proposal" in need and cfg.localization.enabled:
        path = run.path("proposal.json")
        if not os.path.exists(path):
            raise ConfigError("proposal.json missing; run the localize stage first")
        with open(path, encoding="utf-8") as fh:
            run.proposal = localize.Proposal.from_json(json.load(fh))
        run.law = run.proposal
    if "tables" in need and not cfg.oracle_score:
        parts = {}
        for name in ("single", "repeated", "full"):
            path = run.path(f"table_{name}.bin")
            parts[name] = (
                tables.load_table(path)
                if os.path.exists(path)
                else tables.build_table(run.model, run.law, 0, 1, 0)
            )
        if all(p.rows == 0 for p in parts.values()):
            raise ConfigError("no reference tables found; run the tables stage first")
        run.table_set = tables.TableSet(**parts)
    if "score" in need:
        if cfg.oracle_score:
            run.score = training.AnalyticScore(run.model)
        else:
            base = run.path("score")
            if not os.path.exists(base + ".json"):
                raise ConfigError("trained score missing; run the train stage first")
            run.score = training.load_trained(base)
    if "samples" in need:
        path = run.path("samples.csv")
        if not os.path.exists(path):
            raise ConfigError("samples.csv missing; run the sample stage first")
        run.samples = sampler.load_samples_csv(path)


def run_stage(
    config: ExperimentConfig,
    stage: str,
    *,
    out_dir: str | None = None,
    seed: int | None = None,
) -> _Run:
    """Run one stage against an existing run directory's artifacts."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if seed is not None:
        config = dataclasses.replace(config, seed=int(seed))
    target = out_dir if out_dir is not None else config.out_dir
    os.makedirs(target, exist_ok=True)
    run = _Run(config, target, resume=True)
    save_config(config, run.path("config.json"))
    try:
        _load_state(run, _STAGE_NEEDS[stage])
        _STAGE_FNS[stage](run)
    except StageFailure:
        raise
    except Exception as exc:
        raise StageFailure(stage, exc) from exc
    return run


def run_pipeline(
    config: ExperimentConfig, *, out_dir: str | None = None, seed: int | None = None
) -> RunResult:
    """Run every stage in order, persisting artifacts into the run directory.

    ``out_dir`` and ``seed`` override the config's values.  A stage failure
    raises ``StageFailure`` naming the stage; artifacts of completed stages
    stay on disk.
    """
    if seed is not None:
        config = dataclasses.replace(config, seed=int(seed))
    target = out_dir if out_dir is not None else config.out_dir
    os.makedirs(target, exist_ok=True)
    run = _Run(config, target)
    save_config(config, run.path("config.json"))
    for stage in STAGES:
        try:
            _STAGE_FNS[stage](run)
        except StageFailure:
            raise
        except Exception as exc:
            raise StageFailure(stage, exc) from exc
    return RunResult(
        out_dir=target,
        manifest=run.manifest,
        samples=run.samples,
        report=run.report,
        trained=run.score,
    )
