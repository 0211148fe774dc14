"""Posterior-quality and score-quality metrics.

Covers per-coordinate bias/credible-interval reports, two-sample KS and W1
distances, Monte Carlo residuals of the score identities (mean zero and
curvature), the three-way score-loss report, and predictive-band summaries
for the monotone-regression benchmark.
"""

from __future__ import annotations

import dataclasses
import json

import numpy as np

from . import distances
from .errors import ConfigError, DimensionError

__all__ = [
    "MetricReport",
    "posterior_metrics",
    "ks_2sample",
    "distribution_distances",
    "fisher_residuals",
    "score_loss_triptych",
    "band_coverage",
    "grid_average_ks",
    "prediction_grid",
]


@dataclasses.dataclass
class MetricReport:
    """Per-coordinate posterior summaries plus free-form extras."""

    coords: list
    extras: dict = dataclasses.field(default_factory=dict)

    def to_json(self) -> dict:
        return {"coords": self.coords, "extras": self.extras}

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    def save_csv(self, path) -> None:
        cols = ["coord", "mean", "bias", "ci_lo", "ci_hi", "ci_width", "covered"]
        opt = [k for k in ("ks", "w1") if k in (self.coords[0] if self.coords else {})]
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(cols + opt) + "\n")
            for row in self.coords:
                fields = [str(row["coord"])]
                fields += [repr(float(row[k])) for k in cols[1:-1]]
                fields.append(str(int(row["covered"])))
                fields += [repr(float(row[k])) for k in opt]
                fh.write(",".join(fields) + "\n")


def posterior_metrics(
    samples, theta_star, level: float = 0.95, reference=None
) -> MetricReport:
    """Bias, credible interval, and coverage per coordinate.

    ``reference`` (another sample matrix) adds per-coordinate KS and W1
    distances to it.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.size == 0:
        raise ConfigError("empty sample matrix")
    theta_star = np.asarray(theta_star, dtype=np.float64).ravel()
    if theta_star.shape[0] != samples.shape[1]:
        raise DimensionError("theta_star does not match sample dimension")
    if not (0 < level < 1):
        raise ConfigError("level must be in (0, 1)")
    alpha = 0.5 * (1.0 - level)
    rows = []
    for j in range(samples.shape[1]):
        # sorting first makes every summary bitwise permutation-invariant
        col = np.sort(samples[:, j])
        q_lo, q_hi = np.quantile(col, [alpha, 1.0 - alpha])
        row = {
            "coord": j,
            "mean": float(col.mean()),
            "bias": float(abs(col.mean() - theta_star[j])),
            "ci_lo": float(q_lo),
            "ci_hi": float(q_hi),
            "ci_width": float(q_hi - q_lo),
            "covered": bool(q_lo <= theta_star[j] <= q_hi),
        }
        if reference is not None:
            ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
            ks, w1 = distribution_distances(col, ref[:, j])
            row["ks"] = ks
            row["w1"] = w1
        rows.append(row)
    return MetricReport(coords=rows, extras={"level": level, "rows": int(samples.shape[0])})


def ks_2sample(a, b) -> float:
    """sup |F_a - F_b| over the pooled sample points."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ConfigError("empty sample")
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def distribution_distances(a, b) -> tuple[float, float]:
    """(KS, W1) between two scalar samples."""
    return ks_2sample(a, b), distances.w1_1d(a, b)


def fisher_residuals(score, model, theta, m: int, seed: int = 0) -> dict:
    """Monte Carlo residuals of E[s] = 0 and E[s s^T + ds/dtheta] = 0.

    ``score`` needs ``single_scores_with_jac``; draws ``m`` fresh datasets of
    one observation at ``theta`` and reports residual norms with their Monte
    Carlo standard errors.
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    data = model.simulate(theta, model.draw_latents(m, rng))
    theta_rows = np.broadcast_to(theta, (m, theta.shape[0]))
    s, jac = score.single_scores_with_jac(theta_rows, data)
    terms = np.einsum("bi,bj->bij", s, s) + jac
    mean_vec = s.mean(axis=0)
    mean_se = float(np.sqrt(np.sum(s.var(axis=0, ddof=1)) / m))
    curv = terms.mean(axis=0)
    curv_se = float(np.sqrt(np.sum(terms.var(axis=0, ddof=1)) / m))
    return {
        "mean_norm": float(np.linalg.norm(mean_vec)),
        "mean_se": mean_se,
        "curvature_norm": float(np.linalg.norm(curv)),
        "curvature_se": curv_se,
        "draws": int(m),
    }


def score_loss_triptych(
    score, model, thetas_law, thetas_posterior, n_obs: int, seed: int = 0
) -> dict:
    """Squared score error in three regimes, against the analytic score.

    loss_1: single-observation error with theta from the sampling law.
    loss_n: whole-dataset error (per-observation scale) under the same law.
    loss_n_posterior: whole-dataset error with theta from the posterior.
    """
    if not model.has_analytic_score:
        raise ConfigError("triptych needs a model with an analytic score")
    rng = np.random.default_rng(seed)
    thetas_law = np.atleast_2d(np.asarray(thetas_law, dtype=np.float64))
    thetas_posterior = np.atleast_2d(np.asarray(thetas_posterior, dtype=np.float64))

    single = model.simulate(thetas_law, model.draw_latents(1, rng, batch=thetas_law.shape[0]))
    x_rows = single[:, 0, :]
    fitted = score.single_scores(thetas_law, x_rows)
    truth = model.analytic_score(thetas_law, x_rows)
    loss_1 = float(np.mean(np.sum((fitted - truth) ** 2, axis=1)))

    def full_loss(thetas):
        errs = np.empty(thetas.shape[0])
        for i, th in enumerate(thetas):
            data = model.simulate(th, model.draw_latents(n_obs, rng))
            est = score.total_score(th[None, :], data)[0]
            ref = model.analytic_score(th, data).sum(axis=0)
            errs[i] = np.sum((est - ref) ** 2) / n_obs
        return float(np.mean(errs))

    return {
        "loss_1": loss_1,
        "loss_n": full_loss(thetas_law),
        "loss_n_posterior": full_loss(thetas_posterior),
        "n_obs": int(n_obs),
    }


def prediction_grid(points: int = 101) -> np.ndarray:
    """The regression evaluation abscissas 0.00, 0.01, ..., 1.00."""
    return np.linspace(0.0, 1.0, points)


def band_coverage(curves, truth, level: float = 0.95) -> float:
    """Fraction of grid points whose pointwise credible band covers truth."""
    curves = np.atleast_2d(np.asarray(curves, dtype=np.float64))
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if curves.shape[1] != truth.shape[0]:
        raise DimensionError("curve grid does not match truth grid")
    alpha = 0.5 * (1.0 - level)
    lo = np.quantile(curves, alpha, axis=0)
    hi = np.quantile(curves, 1.0 - alpha, axis=0)
    return float(np.mean((lo <= truth) & (truth <= hi)))


def grid_average_ks(curves_a, curves_b) -> float:
    """Mean over grid points of the two-sample KS between curve values."""
    curves_a = np.atleast_2d(np.asarray(curves_a, dtype=np.float64))
    curves_b = np.atleast_2d(np.asarray(curves_b, dtype=np.float64))
    if curves_a.shape[1] != curves_b.shape[1]:
        raise DimensionError("curve grids differ")
    return float(
        np.mean(
            [ks_2sample(curves_a[:, g], curves_b[:, g]) for g in range(curves_a.shape[1])]
        )
    )
