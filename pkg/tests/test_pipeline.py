"""End-to-end pipeline orchestration: stages, persistence, reproducibility."""

import dataclasses
import json
import os

import numpy as np
import pytest

from scoresbi import pipeline, tables, training
from scoresbi.errors import ConfigError, StageFailure

from helpers import tiny_experiment


def read(path):
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


# --- configuration ----------------------------------------------------------


def test_config_json_round_trip(tmp_path):
    cfg = tiny_experiment(
        prior=(("uniform", -3.0, 3.0),),
        boundary=pipeline.BoundaryConfig(kind="gaussian_smoothing", sigma=0.2),
        stage_seeds={"sample": 99},
        out_dir="some/dir",
    )
    path = tmp_path / "cfg.json"
    pipeline.save_config(cfg, path)
    again = pipeline.load_config(path)
    assert again == cfg
    # and a second serialize produces identical bytes
    path2 = tmp_path / "cfg2.json"
    pipeline.save_config(again, path2)
    assert read(path) == read(path2)


def test_config_validation():
    with pytest.raises(ConfigError):
        tiny_experiment(variant="bogus")
    with pytest.raises(ConfigError):
        tiny_experiment(boundary=pipeline.BoundaryConfig(kind="bogus"))
    with pytest.raises(ConfigError):
        tiny_experiment(observed=pipeline.ObservedConfig())
    with pytest.raises(ConfigError):
        tiny_experiment(tables=pipeline.TableConfig(n_single=0))
    with pytest.raises(ConfigError):
        tiny_experiment(variant="n_model", tables=pipeline.TableConfig(n_single=50))
    with pytest.raises(ConfigError):
        tiny_experiment(
            variant="single_debiased", tables=pipeline.TableConfig(n_single=50)
        )
    with pytest.raises(ConfigError):
        tiny_experiment(stage_seeds={"nonstage": 1})
    with pytest.raises(ConfigError):
        tiny_experiment(
            boundary=pipeline.BoundaryConfig(kind="gaussian_smoothing", sigma=-1.0)
        )


def test_stage_seed_derivation():
    cfg = tiny_experiment(stage_seeds={"sample": 123})
    assert cfg.stage_seed("sample") == 123
    assert cfg.stage_seed("tables") == tiny_experiment().stage_seed("tables")
    assert cfg.stage_seed("tables") != cfg.stage_seed("train")


# --- end-to-end runs --------------------------------------------------------


@pytest.fixture(scope="module")
def naive_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("naive"))
    cfg = tiny_experiment()
    return cfg, pipeline.run_pipeline(cfg, out_dir=out)


def test_run_artifacts_and_manifest(naive_run):
    cfg, res = naive_run
    for name in (
        "config.json",
        "observed.csv",
        "pool.json",
        "proposal.json",
        "table_single.bin",
        "score.json",
        "score.score.bin",
        "samples.csv",
        "metrics.json",
        "metrics.csv",
        "manifest.json",
    ):
        assert os.path.exists(os.path.join(res.out_dir, name)), name
    assert res.manifest["completed"] == list(pipeline.STAGES)
    stages = res.manifest["stages"]
    assert stages["tables"]["sim_rows"] == cfg.tables.n_single
    assert stages["localize"]["sim_rows"] > 0
    assert res.manifest["sim_rows_total"] == sum(
        s["sim_rows"] for s in stages.values()
    )
    kept = res.samples.samples.shape[0]
    assert kept == cfg.sampler.chains * 24  # 30 steps, 20% burn, thin 1
    with open(os.path.join(res.out_dir, "metrics.json"), encoding="utf-8") as fh:
        metrics_doc = json.load(fh)
    assert metrics_doc["extras"]["theta_star_known"] is True
    assert metrics_doc["extras"]["sampler"]["rows"] == kept


def test_rerun_is_byte_identical(naive_run, tmp_path):
    cfg, res = naive_run
    again = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    for name in ("samples.csv", "metrics.json", "observed.csv", "pool.json"):
        assert read(os.path.join(res.out_dir, name)) == read(
            os.path.join(str(tmp_path), name)
        ), name


def test_stagewise_matches_pipeline(naive_run, tmp_path):
    cfg, res = naive_run
    out = str(tmp_path)
    for stage in ("localize", "tables", "train", "sample", "evaluate"):
        pipeline.run_stage(cfg, stage, out_dir=out)
    assert read(os.path.join(out, "samples.csv")) == read(
        os.path.join(res.out_dir, "samples.csv")
    )
    assert read(os.path.join(out, "metrics.json")) == read(
        os.path.join(res.out_dir, "metrics.json")
    )
    with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
        assert json.load(fh)["completed"] == list(pipeline.STAGES)


def test_sampler_seed_leaves_tables_alone(naive_run, tmp_path):
    cfg, res = naive_run
    bumped = dataclasses.replace(cfg, stage_seeds={"sample": 12345})
    out = str(tmp_path)
    other = pipeline.run_pipeline(bumped, out_dir=out)
    same_tables = open(os.path.join(out, "table_single.bin"), "rb").read() == open(
        os.path.join(res.out_dir, "table_single.bin"), "rb"
    ).read()
    assert same_tables
    assert read(os.path.join(out, "samples.csv")) != read(
        os.path.join(res.out_dir, "samples.csv")
    )
    assert other.manifest["stages"]["sample"]["seed"] == 12345


def test_localization_disabled_skips_proposal(tmp_path):
    cfg = tiny_experiment(
        localization=pipeline.LocalizeConfig(enabled=False), seed=21
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    assert not os.path.exists(os.path.join(res.out_dir, "proposal.json"))
    assert not os.path.exists(os.path.join(res.out_dir, "pool.json"))
    assert res.manifest["stages"]["localize"] == {"sim_rows": 0, "skipped": True}
    # tables were drawn from the prior: theta spread is prior-wide
    table = tables.load_table(os.path.join(res.out_dir, "table_single.bin"))
    assert table.theta.std() > 1.0


def test_oracle_score_posterior(tmp_path):
    cfg = tiny_experiment(
        oracle_score=True,
        tables=pipeline.TableConfig(),
        observed=pipeline.ObservedConfig(theta_star=(0.5,), n_obs=25),
        sampler=pipeline.SampleConfig(
            chains=8, stage_steps=20, final_steps=200, ladder=(0.5, 1.0)
        ),
        seed=5,
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    assert not os.path.exists(os.path.join(res.out_dir, "score.json"))
    assert res.manifest["stages"]["train"] == {"sim_rows": 0, "oracle": True}
    x_star = pipeline.load_matrix_csv(os.path.join(res.out_dir, "observed.csv"))
    post_mean = float(x_star.mean())
    post_sd = 1.0 / np.sqrt(x_star.shape[0])
    draws = res.samples.samples[:, 0]
    assert abs(draws.mean() - post_mean) < 4 * post_sd
    assert res.report.coords[0]["covered"]


def test_single_debiased_variant(tmp_path):
    cfg = tiny_experiment(
        variant="single_debiased",
        tables=pipeline.TableConfig(n_single=300, n_repeated=30, obs_repeated=10),
        seed=9,
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    assert res.trained.debiased
    assert os.path.exists(os.path.join(res.out_dir, "score.mean.bin"))
    stages = res.manifest["stages"]
    assert stages["train"]["loss"] == "regularized_single"
    assert stages["tables"]["sim_rows"] == 300 + 30 * 10


def test_n_model_variant(tmp_path):
    cfg = tiny_experiment(
        variant="n_model", tables=pipeline.TableConfig(n_full=60), seed=13
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    stages = res.manifest["stages"]
    assert stages["train"]["loss"] == "full_data"
    assert stages["tables"]["sim_rows"] == 60 * cfg.observed.n_obs
    assert os.path.exists(os.path.join(res.out_dir, "table_full.bin"))


def test_weight_function_restricts_queue_samples(tmp_path):
    cfg = tiny_experiment(
        model_id="mg1_queue",
        constants={},
        boundary=pipeline.BoundaryConfig(kind="weight_function"),
        observed=pipeline.ObservedConfig(theta_star=(1.0, 5.0, 0.2), n_obs=30),
        training=training.TrainConfig(hidden=(8,), epochs_phase1=3, epochs_phase2=1),
        seed=3,
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    assert res.manifest["stages"]["train"]["loss"] == "weighted"
    x_star = pipeline.load_matrix_csv(os.path.join(res.out_dir, "observed.csv"))
    assert np.all(res.samples.samples[:, 0] <= float(x_star.min()))


def test_gaussian_smoothing_pools_noise_replicates(tmp_path):
    cfg = tiny_experiment(
        boundary=pipeline.BoundaryConfig(
            kind="gaussian_smoothing", sigma=0.3, n_noise=3
        ),
        seed=3,
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    per_run = cfg.sampler.chains * 24
    assert res.samples.samples.shape[0] == 3 * per_run
    assert set(res.samples.chain.tolist()) == set(range(3 * cfg.sampler.chains))
    assert res.samples.diagnostics["noise_sigma"] == 0.3


def test_parameter_transform_round_trip(tmp_path):
    cfg = tiny_experiment(
        variant="single_debiased",
        boundary=pipeline.BoundaryConfig(kind="parameter_transform"),
        tables=pipeline.TableConfig(n_single=300, n_repeated=30, obs_repeated=10),
        seed=17,
    )
    res = pipeline.run_pipeline(cfg, out_dir=str(tmp_path / "a"))
    assert res.manifest["boundary"] == "parameter_transform"
    assert "transform" in res.trained.meta
    assert res.samples.diagnostics["transformed"] is True
    assert res.samples.diagnostics["reflections"] == 0
    # emitted samples live in the original coordinates, inside the prior box
    draws = res.samples.samples
    assert np.all(draws > -5.0) and np.all(draws < 5.0)
    # tables on disk keep original coordinates (prior box scale, not unconstrained)
    table = tables.load_table(os.path.join(res.out_dir, "table_single.bin"))
    assert np.all(table.theta > -5.0) and np.all(table.theta < 5.0)
    again = pipeline.run_pipeline(cfg, out_dir=str(tmp_path / "b"))
    assert read(os.path.join(res.out_dir, "samples.csv")) == read(
        os.path.join(str(tmp_path / "b"), "samples.csv")
    )


def test_parameter_transform_oracle_matches_plain(tmp_path):
    shared = dict(
        oracle_score=True,
        tables=pipeline.TableConfig(),
        observed=pipeline.ObservedConfig(theta_star=(0.5,), n_obs=25),
        sampler=pipeline.SampleConfig(
            chains=8, stage_steps=20, final_steps=400, tau=2e-3, ladder=(0.5, 1.0)
        ),
        seed=5,
    )
    plain = pipeline.run_pipeline(
        tiny_experiment(**shared), out_dir=str(tmp_path / "plain")
    )
    trans = pipeline.run_pipeline(
        tiny_experiment(
            boundary=pipeline.BoundaryConfig(kind="parameter_transform"), **shared
        ),
        out_dir=str(tmp_path / "trans"),
    )
    x_star = pipeline.load_matrix_csv(os.path.join(plain.out_dir, "observed.csv"))
    post_mean = float(x_star.mean())
    post_sd = 1.0 / np.sqrt(x_star.shape[0])
    for res in (plain, trans):
        draws = res.samples.samples[:, 0]
        assert abs(draws.mean() - post_mean) < 4 * post_sd
        assert abs(draws.std() / post_sd - 1.0) < 0.5


def test_parameter_transform_needs_bounded_prior(tmp_path):
    cfg = tiny_experiment(
        prior=(("lognormal", 0.0, 1.0),),
        observed=pipeline.ObservedConfig(theta_star=(1.0,), n_obs=20),
        boundary=pipeline.BoundaryConfig(kind="parameter_transform"),
        localization=pipeline.LocalizeConfig(enabled=False),
    )
    with pytest.raises(StageFailure) as err:
        pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    assert err.value.stage == "train"


def test_stage_failure_names_stage_and_keeps_artifacts(tmp_path):
    cfg = tiny_experiment(
        training=training.TrainConfig(
            hidden=(8,), epochs_phase1=3, epochs_phase2=1, lr_start=1e240, lr_end=1e240
        ),
        seed=2,
    )
    with np.errstate(all="ignore"), pytest.raises(StageFailure) as err:
        pipeline.run_pipeline(cfg, out_dir=str(tmp_path))
    assert err.value.stage == "train"
    # everything up to the failed stage is still on disk
    assert os.path.exists(os.path.join(str(tmp_path), "table_single.bin"))
    with open(os.path.join(str(tmp_path), "manifest.json"), encoding="utf-8") as fh:
        assert json.load(fh)["completed"] == ["observed", "localize", "tables"]


def test_run_stage_requires_artifacts(tmp_path):
    cfg = tiny_experiment()
    with pytest.raises(StageFailure) as err:
        pipeline.run_stage(cfg, "train", out_dir=str(tmp_path))
    assert err.value.stage == "train"
    assert isinstance(err.value.cause, ConfigError)


def test_matrix_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mat = rng.standard_normal((7, 3))
    path = tmp_path / "m.csv"
    pipeline.save_matrix_csv(mat, path)
    assert np.array_equal(pipeline.load_matrix_csv(path), mat)
    assert read(path).splitlines()[0] == "x_0,x_1,x_2"
