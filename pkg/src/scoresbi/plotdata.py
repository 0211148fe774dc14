"""Plot-ready CSV emission from completed run directories.

Nothing here renders; each helper turns run artifacts into small CSV grids
(kernel densities per coordinate, pointwise predictive bands on the fixed
regression grid, drift arrows on a parameter grid) that external tooling
can plot directly.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import metrics, models, pipeline, sampler, training
from .errors import ConfigError

__all__ = [
    "density_1d",
    "credible_band",
    "score_field",
    "emit_plot_data",
]

PLOT_KINDS = ("density_1d", "credible_band", "score_field")


def density_1d(samples: np.ndarray, points: int = 256) -> list[np.ndarray]:
    """Gaussian kernel density per coordinate on a uniform value grid.

    Returns one ``(points, 2)`` array of ``(value, density)`` rows per
    coordinate; the bandwidth is Silverman's rule and the grid spans the
    sample range padded by three bandwidths, so the trapezoid integral of
    each grid is 1 up to kernel tail mass.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    n = samples.shape[0]
    if n < 2:
        raise ConfigError("need at least two samples for a density estimate")
    out = []
    for j in range(samples.shape[1]):
        col = np.sort(samples[:, j])
        sd = float(col.std(ddof=1))
        iqr = float(np.quantile(col, 0.75) - np.quantile(col, 0.25))
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        if spread <= 0:
            spread = max(abs(col[0]), 1.0) * 1e-3
        h = 0.9 * spread * n ** (-0.2)
        grid = np.linspace(col[0] - 3 * h, col[-1] + 3 * h, points)
        z = (grid[:, None] - col[None, :]) / h
        dens = np.exp(-0.5 * z * z).sum(axis=1) / (n * h * np.sqrt(2 * np.pi))
        out.append(np.column_stack([grid, dens]))
    return out


def credible_band(curves: np.ndarray, level: float = 0.95) -> np.ndarray:
    """Pointwise (lo, median, hi) quantiles of curve draws per grid column."""
    curves = np.atleast_2d(np.asarray(curves, dtype=np.float64))
    if not (0 < level < 1):
        raise ConfigError("level must be in (0, 1)")
    alpha = 0.5 * (1.0 - level)
    qs = np.quantile(curves, [alpha, 0.5, 1.0 - alpha], axis=0)
    return qs.T                                            # (grid, 3)


def score_field(
    score, x_star: np.ndarray, samples: np.ndarray, points: int = 15, model=None
) -> dict:
    """Whole-dataset score arrows on a parameter grid.

    The grid covers the sample range of the first two coordinates (other
    coordinates pinned at the sample mean).  When ``model`` has an analytic
    score the true arrows come along for comparison.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    d = samples.shape[1]
    free = min(d, 2)
    lo = samples.min(axis=0)
    hi = samples.max(axis=0)
    axes = [np.linspace(lo[j], hi[j], points) for j in range(free)]
    if free == 1:
        grid = axes[0][:, None]
    else:
        a, b = np.meshgrid(axes[0], axes[1], indexing="ij")
        grid = np.column_stack([a.ravel(), b.ravel()])
    thetas = np.broadcast_to(samples.mean(axis=0), (grid.shape[0], d)).copy()
    thetas[:, :free] = grid
    est = score.total_score(thetas, x_star)
    out = {"theta": thetas, "estimated": est}
    if model is not None and model.has_analytic_score:
        true = np.empty_like(est)
        for i in range(thetas.shape[0]):
            true[i] = model.analytic_score(thetas[i], x_star).sum(axis=0)
        out["true"] = true
    return out


# --- run-directory emission --------------------------------------------------


def _write_rows(path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _load_run(run_dir: str):
    config_path = os.path.join(run_dir, "config.json")
    samples_path = os.path.join(run_dir, "samples.csv")
    if not os.path.exists(config_path) or not os.path.exists(samples_path):
        raise ConfigError(f"{run_dir} is not a completed run directory")
    config = pipeline.load_config(config_path)
    result = sampler.load_samples_csv(samples_path)
    model = models.make_model(config.model_id, **config.constants)
    return config, model, result


def _load_score(run_dir: str, config, model):
    if config.oracle_score:
        return training.AnalyticScore(model)
    base = os.path.join(run_dir, "score")
    if not os.path.exists(base + ".json"):
        raise ConfigError("run directory has no trained score artifacts")
    return training.load_trained(base)


def emit_plot_data(run_dir: str, kind: str) -> list[str]:
    """Write the requested plot CSVs under ``run_dir/plots``; returns paths."""
    if kind not in PLOT_KINDS:
        raise ConfigError(f"unknown plot kind {kind!r}")
    config, model, result = _load_run(run_dir)
    plot_dir = os.path.join(run_dir, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    written: list[str] = []

    if kind == "density_1d":
        for j, grid in enumerate(density_1d(result.samples)):
            path = os.path.join(plot_dir, f"density_theta_{j}.csv")
            _write_rows(path, [f"theta_{j}", "density"], grid)
            written.append(path)
        return written

    if kind == "credible_band":
        if not hasattr(model, "curve"):
            raise ConfigError(f"{model.model_id} has no regression curve to band")
        grid = metrics.prediction_grid()
        curves = model.curve(result.samples, grid)
        band = credible_band(curves)
        rows = np.column_stack([grid, band])
        path = os.path.join(plot_dir, "credible_band.csv")
        _write_rows(path, ["x", "lo", "median", "hi"], rows)
        return [path]

    x_star = pipeline.load_matrix_csv(os.path.join(run_dir, "observed.csv"))
    score = _load_score(run_dir, config, model)
    field = score_field(score, x_star, result.samples, model=model)
    d = field["theta"].shape[1]
    header = [f"theta_{j}" for j in range(d)]
    header += [f"est_{j}" for j in range(d)]
    cols = [field["theta"], field["estimated"]]
    if "true" in field:
        header += [f"true_{j}" for j in range(d)]
        cols.append(field["true"])
    path = os.path.join(plot_dir, "score_field.csv")
    _write_rows(path, header, np.column_stack(cols))
    return [path]
