"""Command-line interface: subcommands, exit codes, emitted files."""

import json
import os

import numpy as np
import pytest

from scoresbi import pipeline
from scoresbi.cli import main

from helpers import tiny_experiment


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """One CLI pipeline run shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = os.path.join(str(root), "exp.json")
    out_dir = os.path.join(str(root), "run")
    pipeline.save_config(tiny_experiment(), cfg_path)
    assert main(["pipeline", "--config", cfg_path, "--out", out_dir]) == 0
    return cfg_path, out_dir


def test_pipeline_command_outputs(cli_run, capsys):
    _, out_dir = cli_run
    for name in ("samples.csv", "metrics.json", "manifest.json"):
        assert os.path.exists(os.path.join(out_dir, name))


def test_stage_commands_reproduce_pipeline(cli_run, tmp_path):
    cfg_path, out_dir = cli_run
    staged = str(tmp_path)
    for command in ("localize", "tables", "train", "sample", "evaluate"):
        assert main([command, "--config", cfg_path, "--out", staged]) == 0
    with open(os.path.join(staged, "samples.csv")) as fh_a, open(
        os.path.join(out_dir, "samples.csv")
    ) as fh_b:
        assert fh_a.read() == fh_b.read()


def test_seed_override_changes_samples(cli_run, tmp_path):
    cfg_path, out_dir = cli_run
    other = str(tmp_path)
    assert main(["pipeline", "--config", cfg_path, "--out", other, "--seed", "99"]) == 0
    with open(os.path.join(other, "samples.csv")) as fh_a, open(
        os.path.join(out_dir, "samples.csv")
    ) as fh_b:
        assert fh_a.read() != fh_b.read()
    cfg_doc = json.load(open(os.path.join(other, "config.json")))
    assert cfg_doc["seed"] == 99


def test_plot_data_density(cli_run):
    _, out_dir = cli_run
    assert main(["plot-data", "--out", out_dir, "--kind", "density_1d"]) == 0
    path = os.path.join(out_dir, "plots", "density_theta_0.csv")
    grid = np.loadtxt(path, delimiter=",", skiprows=1)
    assert abs(np.trapezoid(grid[:, 1], grid[:, 0]) - 1.0) < 0.01


def test_plot_data_score_field_has_true_columns(cli_run):
    _, out_dir = cli_run
    assert main(["plot-data", "--out", out_dir, "--kind", "score_field"]) == 0
    with open(os.path.join(out_dir, "plots", "score_field.csv")) as fh:
        header = fh.readline().strip().split(",")
    assert header == ["theta_0", "est_0", "true_0"]


def test_plot_data_credible_band_needs_curve_model(cli_run, capsys):
    _, out_dir = cli_run
    assert main(["plot-data", "--out", out_dir, "--kind", "credible_band"]) == 1
    assert "curve" in capsys.readouterr().err


def test_credible_band_on_regression_run(tmp_path, capsys):
    cfg = tiny_experiment(
        model_id="bernstein_monotone",
        constants={"degree": 3},
        observed=pipeline.ObservedConfig(
            theta_star=(0.0, 0.4, 0.4, 0.4), n_obs=40
        ),
        oracle_score=True,
        tables=pipeline.TableConfig(),
        localization=pipeline.LocalizeConfig(members=3, iters=20, directions=10),
        seed=4,
    )
    cfg_path = str(tmp_path / "exp.json")
    out_dir = str(tmp_path / "run")
    pipeline.save_config(cfg, cfg_path)
    assert main(["pipeline", "--config", cfg_path, "--out", out_dir]) == 0
    assert main(["plot-data", "--out", out_dir, "--kind", "credible_band"]) == 0
    path = capsys.readouterr().out.strip().splitlines()[-1]
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (101, 4)
    assert rows[0, 0] == 0.0 and rows[-1, 0] == 1.0
    assert np.all(rows[:, 1] <= rows[:, 3])


def test_failure_exit_code_names_stage(tmp_path, capsys):
    cfg = tiny_experiment(
        observed=pipeline.ObservedConfig(path=str(tmp_path / "missing.csv"))
    )
    cfg_path = str(tmp_path / "exp.json")
    pipeline.save_config(cfg, cfg_path)
    rc = main(["pipeline", "--config", cfg_path, "--out", str(tmp_path / "run")])
    assert rc == 1
    assert "observed" in capsys.readouterr().err


def test_bad_config_path_fails_cleanly(tmp_path, capsys):
    rc = main(["pipeline", "--config", str(tmp_path / "nope.json")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error")
