"""Box-truncated multivariate normal sampling by coordinatewise Gibbs.

The univariate conditional draws use an inverse CDF evaluated entirely in
log-probability space, so intervals buried hundreds of standard deviations
into a tail still sample exactly instead of collapsing to an endpoint.
Used as the ground-truth posterior for the monotone-regression benchmark,
whose untruncated posterior is Gaussian.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from .errors import ConfigError, DomainError
from .seeds import derive_rng

__all__ = ["truncated_normal", "truncated_normal_reference"]


def truncated_normal(mu, sigma, lo, hi, u):
    """Inverse-CDF draws from N(mu, sigma^2) restricted to [lo, hi].

    ``u`` holds uniform(0,1) quantiles; all arguments broadcast.  Intervals
    sitting in the right tail are mirrored onto the left tail and the CDF
    mixture is formed in log space, so there is no catastrophic cancellation
    however deep the interval sits.
    """
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    a = (np.asarray(lo, dtype=np.float64) - mu) / sigma
    b = (np.asarray(hi, dtype=np.float64) - mu) / sigma
    a, b, u = np.broadcast_arrays(a, b, np.asarray(u, dtype=np.float64))
    if np.any(a > b):
        raise DomainError("empty truncation interval (lo > hi)")
    with np.errstate(invalid="ignore"):   # doubly infinite intervals: a+b is nan
        flip = (a + b) > 0
    a2 = np.where(flip, -b, a)
    b2 = np.where(flip, -a, b)
    u2 = np.where(flip, 1.0 - u, u)
    la = special.log_ndtr(a2)
    lb = special.log_ndtr(b2)
    # target CDF value (1 - u2) * Phi(a2) + u2 * Phi(b2), assembled in logs
    with np.errstate(divide="ignore"):
        logT = np.logaddexp(np.log1p(-u2) + la, np.log(u2) + lb)
    z = special.ndtri_exp(logT)
    z = np.clip(z, a2, b2)
    z = np.where(flip, -z, z)
    return mu + sigma * z


def truncated_normal_reference(
    mean, cov, lo, hi, n_draws: int, *, chains: int = 10, burn: int = 200, seed: int = 0
) -> np.ndarray:
    """Gibbs sample ``n_draws`` rows from N(mean, cov) restricted to a box.

    Runs ``chains`` parallel chains for ``burn`` warm-up sweeps plus however
    many kept sweeps cover ``n_draws``; output pools chains in index order
    and is deterministic given ``seed``.
    """
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    d = mean.shape[0]
    if cov.shape != (d, d):
        raise ConfigError("covariance shape must match the mean")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise DomainError("covariance must be symmetric")
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DomainError("covariance must be positive definite") from exc
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (d,)).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (d,)).copy()
    if np.any(lo > hi):
        raise DomainError("infeasible box (lo > hi)")
    if n_draws < 1 or chains < 1 or burn < 0:
        raise ConfigError("need n_draws >= 1, chains >= 1, burn >= 0")

    precision = np.linalg.inv(cov)
    cond_sd = 1.0 / np.sqrt(np.diag(precision))

    kept_per = math.ceil(n_draws / chains)
    sweeps = burn + kept_per
    quantiles = np.empty((chains, sweeps, d))
    for c in range(chains):
        quantiles[c] = derive_rng(seed, f"chain{c}").uniform(size=(sweeps, d))

    start = np.clip(mean, lo, hi)
    both = np.isfinite(lo) & np.isfinite(hi)
    outside = both & ((mean < lo) | (mean > hi))
    start[outside] = 0.5 * (lo[outside] + hi[outside])
    theta = np.tile(start, (chains, 1))

    kept = np.empty((kept_per, chains, d))
    for t in range(sweeps):
        for j in range(d):
            delta = theta - mean
            cross = delta @ precision[:, j] - delta[:, j] * precision[j, j]
            mj = mean[j] - cross / precision[j, j]
            theta[:, j] = truncated_normal(
                mj, cond_sd[j], lo[j], hi[j], quantiles[:, t, j]
            )
        if t >= burn:
            kept[t - burn] = theta
    pooled = kept.transpose(1, 0, 2).reshape(chains * kept_per, d)
    return pooled[:n_draws]
