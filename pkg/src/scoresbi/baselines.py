"""Rejection-ABC baseline with a sliced 1-Wasserstein acceptance distance.

Draws parameters from the prior or a localized proposal, simulates a dataset
per candidate, keeps the fraction with the smallest sliced distance to the
observed data, and attaches prior-over-proposal importance weights when the
candidates came from a proposal.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import distances
from .errors import ConfigError
from .seeds import derive_rng

__all__ = ["AbcResult", "abc_baseline"]


@dataclasses.dataclass
class AbcResult:
    theta: np.ndarray      # (kept, d)
    distance: np.ndarray   # (kept,)
    weight: np.ndarray     # (kept,) prior/proposal density ratios (1 from prior)

    @property
    def kept(self) -> int:
        return self.theta.shape[0]


def abc_baseline(
    model,
    law,
    prior,
    x_star,
    n_draws: int,
    keep: float,
    *,
    n_directions: int = 100,
    seed: int = 0,
    chunk: int = 1000,
) -> AbcResult:
    """Keep the ``keep`` fraction of ``n_draws`` candidates closest to
    ``x_star`` under the sliced distance; ties resolved by draw order."""
    if n_draws < 1:
        raise ConfigError("need at least one candidate draw")
    if not (0 < keep <= 1):
        raise ConfigError("keep fraction must lie in (0, 1]")
    x_star = np.asarray(x_star, dtype=np.float64)
    if x_star.ndim == 1:
        x_star = x_star[:, None]
    m_obs = x_star.shape[0]

    theta = np.asarray(
        law.sample(n_draws, derive_rng(seed, "theta")), dtype=np.float64
    ).reshape(n_draws, -1)
    dirs = distances.unit_directions(
        n_directions, x_star.shape[1], derive_rng(seed, "directions")
    )
    obs_proj = np.sort(x_star @ dirs.T, axis=0)            # (m_obs, K)

    latent_rng = derive_rng(seed, "latents")
    dist = np.empty(n_draws)
    for s in range(0, n_draws, chunk):
        e = min(s + chunk, n_draws)
        z = model.draw_latents(m_obs, latent_rng, batch=e - s)
        sim = model.simulate(theta[s:e], z)                # (B, m_obs, p)
        proj = np.sort(np.einsum("bnp,kp->bnk", sim, dirs), axis=1)
        dist[s:e] = np.mean(np.abs(proj - obs_proj[None]), axis=(1, 2))

    n_keep = math.ceil(keep * n_draws)
    order = np.argsort(dist, kind="stable")[:n_keep]
    kept_theta = theta[order]
    if law is prior:
        weight = np.ones(n_keep)
    else:
        weight = np.exp(prior.logpdf(kept_theta) - law.logpdf(kept_theta))
    return AbcResult(theta=kept_theta, distance=dist[order], weight=weight)
