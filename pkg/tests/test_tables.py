"""Reference tables: seeding, law statistics, smoothing, persistence."""

import numpy as np
import pytest

from scoresbi import localize, models, tables
from scoresbi.errors import ConfigError


def gauss_prior(dim=1):
    return models.Prior([("uniform", -5.0, 5.0)] * dim)


def test_empty_table_has_no_rows():
    model = models.GaussianLocation()
    t = tables.build_table(model, gauss_prior(), 0, 1, seed=0)
    assert t.rows == 0 and t.sim_rows == 0 and t.data.size == 0


def test_point_mass_proposal_gives_constant_theta():
    model = models.GaussianLocation()
    prop = localize.Proposal(
        mean=np.array([0.7]), var=np.array([0.0]), inflation=1.0,
        lo=np.array([-5.0]), hi=np.array([5.0]),
    )
    t = tables.build_table(model, prop, 50, 1, seed=1)
    assert np.all(t.theta == 0.7)


def test_theta_moments_match_law():
    model = models.GaussianLocation()
    prop = localize.Proposal(
        mean=np.array([1.0]), var=np.array([0.25]), inflation=1.0,
        lo=np.array([-5.0]), hi=np.array([5.0]),
    )
    t = tables.build_table(model, prop, 10_000, 1, seed=2)
    se_mean = 0.5 / 100.0
    assert abs(t.theta.mean() - 1.0) < 4 * se_mean
    var = t.theta.var(ddof=1)
    se_var = 0.25 * np.sqrt(2.0 / 9999.0)
    assert abs(var - 0.25) < 4 * se_var


def test_tables_are_seed_deterministic():
    model = models.GaussianLocation(dim=2)
    a = tables.build_table(model, gauss_prior(2), 40, 3, seed=7)
    b = tables.build_table(model, gauss_prior(2), 40, 3, seed=7)
    c = tables.build_table(model, gauss_prior(2), 40, 3, seed=8)
    assert np.array_equal(a.data, b.data) and np.array_equal(a.theta, b.theta)
    assert not np.array_equal(a.data, c.data)


def test_row_seeds_do_not_depend_on_table_size():
    model = models.GaussianLocation()
    small = tables.build_table(model, gauss_prior(), 10, 1, seed=3)
    big = tables.build_table(model, gauss_prior(), 30, 1, seed=3)
    assert np.array_equal(small.seeds, big.seeds[:10])


def test_build_reference_tables_shapes_and_validation():
    model = models.GaussianLocation()
    ts = tables.build_reference_tables(
        model, gauss_prior(), n_single=20, n_repeated=5, obs_repeated=4,
        n_full=3, obs_full=7, seed=11,
    )
    assert ts.single.data.shape == (20, 1, 1)
    assert ts.repeated.data.shape == (5, 4, 1)
    assert ts.full.data.shape == (3, 7, 1)
    assert ts.sim_rows == 20 + 20 + 21
    # the three tables use distinct seeds
    assert not np.array_equal(ts.single.seeds[:3], ts.repeated.seeds[:3])
    with pytest.raises(ConfigError):
        tables.build_reference_tables(model, gauss_prior(), n_repeated=5, obs_repeated=1)
    with pytest.raises(ConfigError):
        tables.build_reference_tables(model, gauss_prior(), n_full=5, obs_full=0)


def test_smooth_zero_sigma_is_identity():
    model = models.GaussianLocation()
    t = tables.build_table(model, gauss_prior(), 10, 1, seed=4)
    assert tables.gaussian_smooth(t, 0.0, np.random.default_rng(0)) is t
    with pytest.raises(ConfigError):
        tables.gaussian_smooth(t, -1.0, np.random.default_rng(0))


def test_smooth_adds_variance():
    model = models.GaussianLocation()
    prop = localize.Proposal(
        mean=np.array([0.0]), var=np.array([0.0]), inflation=1.0,
        lo=np.array([-5.0]), hi=np.array([5.0]),
    )
    t = tables.build_table(model, prop, 100_000, 1, seed=5)
    sm = tables.gaussian_smooth(t, 0.5, np.random.default_rng(6))
    assert np.array_equal(sm.theta, t.theta)
    v0 = t.data.var()
    v1 = sm.data.var()
    se = (v0 + 0.25) * np.sqrt(2.0 / t.rows)
    assert abs(v1 - (v0 + 0.25)) < 4 * se


def test_smoothed_queue_can_cross_service_floor():
    model = models.MG1Queue(horizon=5)
    prior = models.default_prior(model)
    t = tables.build_table(model, prior, 500, 5, seed=9)
    assert np.all(t.data.min(axis=(1, 2)) >= t.theta[:, 0] - 1e-12)
    sm = tables.gaussian_smooth(t, 0.5, np.random.default_rng(10))
    assert np.any(sm.data.min(axis=(1, 2)) < sm.theta[:, 0])


def test_csv_round_trip_is_exact():
    model = models.BernsteinMonotone(degree=2)
    t = tables.build_table(model, models.default_prior(model), 25, 3, seed=12)
    path = "/tmp/scoresbi_table_test.csv"
    tables.save_table_csv(t, path)
    back = tables.load_table_csv(path)
    assert np.array_equal(back.theta, t.theta)
    assert np.array_equal(back.data, t.data)
    assert np.array_equal(back.seeds, t.seeds)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    assert header[0] == "seed" and header[1] == "theta_0"
    assert f"x2_{model.data_dim - 1}" == header[-1]


def test_csv_bytes_stable_across_saves(tmp_path):
    model = models.GaussianLocation()
    t = tables.build_table(model, gauss_prior(), 30, 2, seed=13)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    tables.save_table_csv(t, p1)
    tables.save_table_csv(t, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_binary_round_trip(tmp_path):
    model = models.MG1Queue(horizon=4)
    t = tables.build_table(model, models.default_prior(model), 17, 4, seed=14)
    path = tmp_path / "t.bin"
    tables.save_table(t, path)
    back = tables.load_table(path)
    assert np.array_equal(back.theta, t.theta)
    assert np.array_equal(back.data, t.data)
    assert np.array_equal(back.seeds, t.seeds)
    path.write_bytes(b"junk\n")
    with pytest.raises(ConfigError):
        tables.load_table(path)


def test_table_rows_reproducible_from_stored_seed():
    model = models.GaussianLocation(dim=2)
    t = tables.build_table(model, gauss_prior(2), 8, 3, seed=15)
    i = 5
    z = model.draw_latents(3, np.random.default_rng(int(t.seeds[i])))
    again = model.simulate(t.theta[i], z)
    assert np.array_equal(again, t.data[i])
