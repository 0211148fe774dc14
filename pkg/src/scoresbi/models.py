"""Simulators with explicit latent reparametrization, plus priors.

Every model separates randomness from parameters: ``draw_latents`` produces
a latent block ``z`` whose law never depends on theta, and ``simulate`` is a
deterministic map ``(theta, z) -> data``.  Freezing ``z`` while moving theta
is what localization and seeded table generation rely on.

Latent layouts (one row per observation):

* ``gaussian_location`` — ``dim`` standard normals; ``x = theta + sigma * z``.
* ``beta_binomial`` — 100 uniforms; the observation is the count of
  ``u <= theta`` (a Binomial(100, theta) draw).  ``smoothed_simulate``
  replaces the indicator with a steep logistic for gradient-free localizers
  that still want a continuous objective.
* ``mg1_queue`` — ``2 * horizon`` uniforms: service quantiles then arrival
  quantiles.  Canonical parameters are ``(s_min, s_range, rate)``: service
  times are uniform on ``[s_min, s_min + s_range]``, inter-arrivals are
  exponential with the given rate, and the observation row holds the first
  ``horizon`` inter-departure times of a single-server queue.
* ``bernstein_monotone`` — a uniform abscissa and a standard normal; the
  observation is ``(x, y)`` with ``y = coeffs . basis(x) + sigma * eps`` and
  a cumulative Bernstein basis, so coefficients 1..M nonnegative make the
  regression curve nondecreasing.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import DimensionError, DomainError

__all__ = [
    "Marginal",
    "Prior",
    "GaussianLocation",
    "BetaBinomial",
    "MG1Queue",
    "BernsteinMonotone",
    "bernstein_basis",
    "make_model",
    "MODEL_IDS",
]


# --- priors -----------------------------------------------------------------


@dataclass(frozen=True)
class Marginal:
    """One independent prior coordinate: uniform(lo, hi), beta(a, b) on
    (0, 1), or lognormal(mu, sigma) on (0, inf)."""

    kind: str
    p1: float
    p2: float

    def __post_init__(self):
        if self.kind not in ("uniform", "beta", "lognormal"):
            raise DomainError(f"unknown marginal kind {self.kind!r}")
        if self.kind == "uniform" and not self.p2 > self.p1:
            raise DomainError("uniform marginal needs hi > lo")
        if self.kind == "beta" and (self.p1 <= 0 or self.p2 <= 0):
            raise DomainError("beta marginal needs positive shapes")
        if self.kind == "lognormal" and self.p2 <= 0:
            raise DomainError("lognormal marginal needs positive sigma")

    def support(self) -> tuple[float, float]:
        if self.kind == "uniform":
            return (self.p1, self.p2)
        if self.kind == "beta":
            return (0.0, 1.0)
        return (0.0, np.inf)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.p1, self.p2, size)
        if self.kind == "beta":
            return rng.beta(self.p1, self.p2, size)
        return rng.lognormal(self.p1, self.p2, size)

    def logpdf(self, t: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        lo, hi = self.support()
        inside = (t > lo) & (t < hi)
        out = np.full(t.shape, -np.inf)
        if self.kind == "uniform":
            out[inside] = -np.log(self.p2 - self.p1)
        elif self.kind == "beta":
            from scipy.special import betaln

            ti = t[inside]
            out[inside] = (
                (self.p1 - 1.0) * np.log(ti)
                + (self.p2 - 1.0) * np.log1p(-ti)
                - betaln(self.p1, self.p2)
            )
        else:
            ti = t[inside]
            lt = np.log(ti)
            out[inside] = (
                -lt
                - np.log(self.p2)
                - 0.5 * np.log(2.0 * np.pi)
                - 0.5 * ((lt - self.p1) / self.p2) ** 2
            )
        return out

    def grad_logpdf(self, t: np.ndarray) -> np.ndarray:
        """d log density / d t, defined on the open support."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "uniform":
            return np.zeros_like(t)
        if self.kind == "beta":
            return (self.p1 - 1.0) / t - (self.p2 - 1.0) / (1.0 - t)
        return -1.0 / t - (np.log(t) - self.p1) / (self.p2**2 * t)


class Prior:
    """Independent product of per-coordinate marginals."""

    def __init__(self, marginals):
        self.marginals = tuple(
            m if isinstance(m, Marginal) else Marginal(*m) for m in marginals
        )
        if not self.marginals:
            raise DimensionError("prior needs at least one coordinate")
        self.dim = len(self.marginals)
        lo, hi = zip(*(m.support() for m in self.marginals))
        self.lo = np.array(lo)
        self.hi = np.array(hi)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return np.column_stack([m.sample(size, rng) for m in self.marginals])

    def logpdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        self._check_dim(theta)
        return sum(m.logpdf(theta[:, j]) for j, m in enumerate(self.marginals))

    def grad_logpdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        self._check_dim(theta)
        return np.column_stack(
            [m.grad_logpdf(theta[:, j]) for j, m in enumerate(self.marginals)]
        )

    def contains(self, theta: np.ndarray, margin: float = 0.0) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        self._check_dim(theta)
        return np.all(
            (theta > self.lo + margin) & (theta < self.hi - margin), axis=1
        )

    def to_json(self):
        return [[m.kind, m.p1, m.p2] for m in self.marginals]

    def _check_dim(self, theta):
        if theta.shape[1] != self.dim:
            raise DimensionError(
                f"theta has {theta.shape[1]} coordinates, prior has {self.dim}"
            )


# --- shape plumbing ---------------------------------------------------------


def _norm_theta(theta, dim):
    theta = np.asarray(theta, dtype=np.float64)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    if theta.shape[1] != dim:
        raise DimensionError(f"theta needs {dim} coordinates, got {theta.shape[1]}")
    return theta, single


def _norm_latents(z, latent_dim):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 2
    if single:
        z = z[None, :, :]
    if z.ndim != 3 or z.shape[2] != latent_dim:
        raise DimensionError(f"latents need shape (..., n, {latent_dim})")
    return z, single


class _ModelBase:
    smooth = False
    has_analytic_score = False

    def draw_latents(self, n: int, rng: np.random.Generator, batch: int | None = None):
        """Latent block (n, latent_dim), or (batch, n, latent_dim)."""
        shape = (n, self.latent_dim) if batch is None else (batch, n, self.latent_dim)
        return self._raw_latents(shape, rng)

    def simulate(self, theta, z):
        """Deterministic map; accepts a single row or batched inputs."""
        theta, single_t = _norm_theta(theta, self.theta_dim)
        z, single_z = _norm_latents(z, self.latent_dim)
        if theta.shape[0] != z.shape[0]:
            if theta.shape[0] == 1:
                theta = np.broadcast_to(theta, (z.shape[0], theta.shape[1]))
            elif z.shape[0] == 1:
                z = np.broadcast_to(z, (theta.shape[0],) + z.shape[1:])
            else:
                raise DimensionError("theta and latent batch sizes differ")
        data = self._simulate(theta, z)
        return data[0] if (single_t and single_z) else data

    def analytic_score(self, theta, x, want_jac=False):
        raise DomainError(f"{self.model_id} has no analytic per-observation score")

    def constants(self) -> dict:
        return {}


# --- concrete models --------------------------------------------------------


class GaussianLocation(_ModelBase):
    """x = theta + sigma * z with standard normal z; conjugate and tractable."""

    model_id = "gaussian_location"
    smooth = True
    has_analytic_score = True

    def __init__(self, dim: int = 1, sigma: float = 1.0):
        if sigma <= 0:
            raise DomainError("sigma must be positive")
        self.theta_dim = int(dim)
        self.data_dim = int(dim)
        self.latent_dim = int(dim)
        self.sigma = float(sigma)

    def _raw_latents(self, shape, rng):
        return rng.standard_normal(shape)

    def _simulate(self, theta, z):
        return theta[:, None, :] + self.sigma * z

    def simulate_jac(self, theta, z):
        theta, _ = _norm_theta(theta, self.theta_dim)
        z, _ = _norm_latents(z, self.latent_dim)
        data = self._simulate(theta, z)[0]
        n = z.shape[1]
        jac = np.broadcast_to(np.eye(self.data_dim), (n, self.data_dim, self.theta_dim))
        return data, jac

    def analytic_score(self, theta, x, want_jac=False):
        theta, _ = _norm_theta(theta, self.theta_dim)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        score = (x - theta) / self.sigma**2
        if not want_jac:
            return score
        jac = np.broadcast_to(
            -np.eye(self.theta_dim) / self.sigma**2,
            (x.shape[0], self.theta_dim, self.theta_dim),
        )
        return score, jac

    def constants(self):
        return {"dim": self.theta_dim, "sigma": self.sigma}


class BetaBinomial(_ModelBase):
    """Counts of 100 latent uniforms below theta: Binomial(100, theta)."""

    model_id = "beta_binomial"
    smooth = False
    has_analytic_score = True
    TRIALS = 100

    def __init__(self):
        self.theta_dim = 1
        self.data_dim = 1
        self.latent_dim = self.TRIALS

    def _raw_latents(self, shape, rng):
        return rng.uniform(0.0, 1.0, shape)

    def _simulate(self, theta, z):
        if np.any((theta <= 0.0) | (theta >= 1.0)):
            raise DomainError("beta_binomial needs theta in (0, 1)")
        counts = np.sum(z <= theta[:, None, :], axis=2, dtype=np.float64)
        return counts[:, :, None]

    def smoothed_simulate(self, theta, z, sharpness: float = 500.0):
        """Continuous relaxation: logistic(sharpness * (theta - u)) summed."""
        theta, single_t = _norm_theta(theta, 1)
        z, single_z = _norm_latents(z, self.latent_dim)
        t = sharpness * (theta[:, None, :] - z)
        counts = np.sum(1.0 / (1.0 + np.exp(-t)), axis=2)[:, :, None]
        return counts[0] if (single_t and single_z) else counts

    def analytic_score(self, theta, x, want_jac=False):
        theta, _ = _norm_theta(theta, 1)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        t = theta[:, 0:1]
        score = x / t - (self.TRIALS - x) / (1.0 - t)
        if not want_jac:
            return score
        jac = (-x / t**2 - (self.TRIALS - x) / (1.0 - t) ** 2)[:, :, None]
        return score, jac

    def constants(self):
        return {"trials": self.TRIALS}


class MG1Queue(_ModelBase):
    """Inter-departure times of a single-server queue.

    Canonical theta is ``(s_min, s_range, rate)``: service times uniform on
    ``[s_min, s_min + s_range]``, inter-arrival times exponential with the
    given rate.  Each observation row is one independent short run of the
    queue (``horizon`` departures).  Every inter-departure time is at least
    ``s_min``, which makes the first coordinate partially identified by the
    sample minimum — the boundary the weight function tracks.
    """

    model_id = "mg1_queue"
    smooth = False
    has_analytic_score = False

    def __init__(self, horizon: int = 5):
        self.horizon = int(horizon)
        self.theta_dim = 3
        self.data_dim = self.horizon
        self.latent_dim = 2 * self.horizon

    def _raw_latents(self, shape, rng):
        return rng.uniform(0.0, 1.0, shape)

    def _simulate(self, theta, z):
        if np.any(theta[:, 2] <= 0.0):
            raise DomainError("mg1_queue needs a positive arrival rate")
        if np.any(theta[:, :2] < 0.0):
            raise DomainError("mg1_queue needs nonnegative service parameters")
        K = self.horizon
        s_min = theta[:, 0][:, None, None]
        s_range = theta[:, 1][:, None, None]
        rate = theta[:, 2][:, None, None]
        service = s_min + s_range * z[:, :, :K]
        arrival = np.cumsum(-np.log1p(-z[:, :, K:]) / rate, axis=2)
        out = np.empty_like(service)
        depart_prev = np.zeros(service.shape[:2])
        for k in range(K):
            out[:, :, k] = service[:, :, k] + np.maximum(
                0.0, arrival[:, :, k] - depart_prev
            )
            depart_prev = depart_prev + out[:, :, k]
        return out

    def observation_floor(self, data) -> float:
        """Smallest entry of a dataset; an upper bound for ``s_min``."""
        return float(np.min(data))

    def weight_intervals(self, data) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate posterior-support intervals given one dataset."""
        lo = np.zeros(3)
        hi = np.array([min(10.0, self.observation_floor(data)), 10.0, 0.5])
        return lo, hi

    def boundary_weight(self, theta, data):
        """Distance-to-interval-boundary weights and their theta-derivatives.

        Each coordinate's weight is the distance from ``theta_j`` to the
        nearer end of its support interval, scaled by the half-width so the
        weights peak at 1.  The derivative uses the subgradient
        ``sign(midpoint - theta_j)`` at the central kink.
        """
        theta, single = _norm_theta(theta, 3)
        lo, hi = self.weight_intervals(data)
        half = (hi - lo) / 2.0
        mid = (hi + lo) / 2.0
        g = (half - np.abs(theta - mid)) / half
        dg = np.sign(mid - theta) / half
        if single:
            return g[0], dg[0]
        return g, dg

    def constants(self):
        return {"horizon": self.horizon}


def bernstein_basis(x, degree: int) -> np.ndarray:
    """Cumulative Bernstein polynomials: column k is the upper tail
    ``sum_{j >= k} C(degree, j) x^j (1-x)^(degree-j)`` for k = 0..degree.

    Column 0 is identically 1; nonnegative combinations of columns 1..degree
    added to an intercept give nondecreasing functions on [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any((x < 0.0) | (x > 1.0)):
        raise DomainError("bernstein basis needs x in [0, 1]")
    terms = np.stack(
        [comb(degree, j) * x**j * (1.0 - x) ** (degree - j) for j in range(degree + 1)],
        axis=-1,
    )
    rev_cum = np.cumsum(terms[..., ::-1], axis=-1)[..., ::-1]
    rev_cum[..., 0] = 1.0
    return rev_cum


class BernsteinMonotone(_ModelBase):
    """Monotone regression pairs (x, y) under a cumulative Bernstein curve."""

    model_id = "bernstein_monotone"
    smooth = True
    has_analytic_score = True

    def __init__(self, degree: int = 4, noise_sd: float = 0.1):
        if noise_sd <= 0:
            raise DomainError("noise_sd must be positive")
        self.degree = int(degree)
        self.noise_sd = float(noise_sd)
        self.theta_dim = self.degree + 1
        self.data_dim = 2
        self.latent_dim = 2

    def _raw_latents(self, shape, rng):
        z = np.empty(shape)
        z[..., 0] = rng.uniform(0.0, 1.0, shape[:-1])
        z[..., 1] = rng.standard_normal(shape[:-1])
        return z

    def _simulate(self, theta, z):
        x = z[:, :, 0]
        basis = bernstein_basis(x, self.degree)          # (B, n, M+1)
        y = np.einsum("bnk,bk->bn", basis, theta) + self.noise_sd * z[:, :, 1]
        return np.stack([x, y], axis=-1)

    def simulate_jac(self, theta, z):
        theta, _ = _norm_theta(theta, self.theta_dim)
        z, _ = _norm_latents(z, self.latent_dim)
        data = self._simulate(theta, z)[0]
        n = z.shape[1]
        jac = np.zeros((n, 2, self.theta_dim))
        jac[:, 1, :] = bernstein_basis(z[0, :, 0], self.degree)
        return data, jac

    def analytic_score(self, theta, x, want_jac=False):
        theta, _ = _norm_theta(theta, self.theta_dim)
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != 2:
            raise DimensionError("observations are (x, y) pairs")
        basis = bernstein_basis(x[:, 0], self.degree)    # (n, M+1)
        if theta.shape[0] == 1:
            resid = x[:, 1] - basis @ theta[0]
        elif theta.shape[0] == x.shape[0]:
            resid = x[:, 1] - np.einsum("nk,nk->n", basis, theta)
        else:
            raise DimensionError("theta must be one row or one row per observation")
        score = resid[:, None] * basis / self.noise_sd**2
        if not want_jac:
            return score
        jac = -basis[:, :, None] * basis[:, None, :] / self.noise_sd**2
        return score, jac

    def curve(self, theta, grid) -> np.ndarray:
        """Regression curve(s) at the given abscissas; samples go in rows."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        basis = bernstein_basis(np.asarray(grid, dtype=np.float64), self.degree)
        out = theta @ basis.T
        return out[0] if out.shape[0] == 1 else out

    def exact_posterior_moments(self, data):
        """Untruncated conjugate posterior (mean, cov) under a flat prior."""
        data = np.atleast_2d(np.asarray(data, dtype=np.float64))
        design = bernstein_basis(data[:, 0], self.degree)
        gram = design.T @ design
        mean = np.linalg.solve(gram, design.T @ data[:, 1])
        cov = self.noise_sd**2 * np.linalg.inv(gram)
        return mean, cov

    def constants(self):
        return {"degree": self.degree, "noise_sd": self.noise_sd}


MODEL_IDS = {
    "gaussian_location": GaussianLocation,
    "beta_binomial": BetaBinomial,
    "mg1_queue": MG1Queue,
    "bernstein_monotone": BernsteinMonotone,
}


def make_model(model_id: str, **constants):
    """Instantiate a registered model from its id and constants."""
    try:
        cls = MODEL_IDS[model_id]
    except KeyError:
        raise DomainError(f"unknown model id {model_id!r}") from None
    return cls(**constants)


def default_prior(model) -> Prior:
    """The prior each model is normally paired with."""
    if model.model_id == "gaussian_location":
        return Prior([("uniform", -5.0, 5.0)] * model.theta_dim)
    if model.model_id == "beta_binomial":
        return Prior([("beta", 5.0, 5.0)])
    if model.model_id == "mg1_queue":
        return Prior(
            [("uniform", 0.0, 10.0), ("uniform", 0.0, 10.0), ("uniform", 0.0, 0.5)]
        )
    if model.model_id == "bernstein_monotone":
        return Prior(
            [("uniform", -5.0, 5.0)] + [("uniform", 0.0, 1.0)] * model.degree
        )
    raise DomainError(f"no default prior for {model.model_id!r}")
