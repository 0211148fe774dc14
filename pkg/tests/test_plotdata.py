"""Plot-data grids: kernel densities, credible bands, score fields."""

import numpy as np
import pytest

from scoresbi import plotdata
from scoresbi.errors import ConfigError
from scoresbi.models import make_model
from scoresbi.training import AnalyticScore


def test_density_integrates_to_one():
    rng = np.random.default_rng(0)
    samples = np.column_stack(
        [rng.standard_normal(4000), rng.uniform(2.0, 3.0, 4000)]
    )
    grids = plotdata.density_1d(samples)
    assert len(grids) == 2
    for grid in grids:
        assert grid.shape == (256, 2)
        integral = np.trapezoid(grid[:, 1], grid[:, 0])
        assert abs(integral - 1.0) < 0.01


def test_density_peak_location_and_degenerate_column():
    rng = np.random.default_rng(1)
    samples = rng.standard_normal((5000, 1)) * 0.5 + 2.0
    grid = plotdata.density_1d(samples)[0]
    peak = grid[np.argmax(grid[:, 1]), 0]
    assert abs(peak - 2.0) < 0.1

    flat = np.full((50, 1), 3.25)
    grid = plotdata.density_1d(flat)[0]
    assert np.all(np.isfinite(grid))
    assert abs(np.trapezoid(grid[:, 1], grid[:, 0]) - 1.0) < 0.01

    with pytest.raises(ConfigError):
        plotdata.density_1d(np.zeros((1, 1)))


def test_credible_band_quantiles():
    curves = np.arange(1.0, 101.0)[:, None] * np.ones((1, 4))
    band = plotdata.credible_band(curves, level=0.9)
    assert band.shape == (4, 3)
    lo, med, hi = band[0]
    assert lo == pytest.approx(np.quantile(curves[:, 0], 0.05))
    assert med == pytest.approx(np.quantile(curves[:, 0], 0.5))
    assert hi == pytest.approx(np.quantile(curves[:, 0], 0.95))
    assert np.all(band[:, 0] <= band[:, 1]) and np.all(band[:, 1] <= band[:, 2])
    with pytest.raises(ConfigError):
        plotdata.credible_band(curves, level=1.5)


def test_score_field_matches_analytic():
    model = make_model("gaussian_location", dim=1)
    rng = np.random.default_rng(2)
    x_star = model.simulate(np.array([0.3]), model.draw_latents(15, rng))
    samples = rng.normal(0.3, 0.2, size=(200, 1))
    field = plotdata.score_field(
        AnalyticScore(model), x_star, samples, points=9, model=model
    )
    assert field["theta"].shape == (9, 1)
    assert field["estimated"].shape == (9, 1)
    assert np.allclose(field["estimated"], field["true"])
    assert field["theta"][0, 0] == samples.min()
    assert field["theta"][-1, 0] == samples.max()


def test_score_field_pins_extra_coordinates():
    model = make_model("gaussian_location", dim=3)
    rng = np.random.default_rng(3)
    x_star = model.simulate(np.zeros(3), model.draw_latents(10, rng))
    samples = rng.standard_normal((100, 3))
    field = plotdata.score_field(
        AnalyticScore(model), x_star, samples, points=5, model=model
    )
    assert field["theta"].shape == (25, 3)
    assert np.allclose(field["theta"][:, 2], samples[:, 2].mean())
    assert np.unique(field["theta"][:, 0]).size == 5
