"""Unconstrained reparametrization of box-bounded parameters.

The integration-by-parts training objectives require the theta-sampling law's
density to vanish toward the edge of its support.  A localized proposal
truncated at the prior box violates that whenever its mass hugs a face, and
the fitted score can then exploit the dropped boundary term.  Mapping each
coordinate through a scaled log-ratio bijection onto the whole real line
restores the requirement: the pushforward density decays exponentially in the
new coordinate, so training and Langevin sampling both run unconstrained, and
samples map back into the box at the end.

The bijection is standardized per coordinate (an affine shift and scale in
the log-ratio domain) so that a law concentrated anywhere in the box — even
against a face — turns into roughly unit-scale coordinates.  That keeps the
network inputs well-scaled and lets an isotropic Langevin step mix every
coordinate at once.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DimensionError

__all__ = ["BoxTransform", "TransformedLaw", "TransformedScore"]

#: fractional distance from a face below which forward() clamps its input
_EDGE = 1e-12
#: fractional distance from a face enforced on inverse() outputs
_INSIDE = 1e-15


def _sigmoid(t: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


class BoxTransform:
    """Coordinatewise bijection between a bounded box and all of R^d.

    With ``u = (theta - lo) / (hi - lo)``, the unconstrained coordinate is
    ``eta = (log(u / (1 - u)) - center) / scale``, so ``center`` and
    ``scale`` let the transform place a chosen region of the box near the
    origin at unit width.
    """

    def __init__(self, lo, hi, center=None, scale=None):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise DimensionError("lo and hi must be matching vectors")
        if not (np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi))):
            raise ConfigError("box transform needs finite bounds on every coordinate")
        if np.any(self.hi <= self.lo):
            raise ConfigError("box transform needs hi > lo on every coordinate")
        self.width = self.hi - self.lo
        self.dim = self.lo.size
        self.center = (
            np.zeros(self.dim)
            if center is None
            else np.broadcast_to(np.asarray(center, dtype=np.float64), (self.dim,)).copy()
        )
        self.scale = (
            np.ones(self.dim)
            if scale is None
            else np.broadcast_to(np.asarray(scale, dtype=np.float64), (self.dim,)).copy()
        )
        if not np.all(np.isfinite(self.center)):
            raise ConfigError("transform center must be finite")
        if not (np.all(np.isfinite(self.scale)) and np.all(self.scale > 0)):
            raise ConfigError("transform scale must be finite and positive")

    @staticmethod
    def standardized(lo, hi, mean, var) -> "BoxTransform":
        """Transform whose output is roughly centered and unit-scale for a
        law with the given per-coordinate mean and variance.

        The center is the log-ratio image of the mean (pulled strictly
        inside the box); the scale is the first-order image of the standard
        deviation, clipped away from degenerate values.
        """
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        width = hi - lo
        mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), lo.shape)
        var = np.broadcast_to(np.asarray(var, dtype=np.float64), lo.shape)
        u = np.clip((mean - lo) / width, 1e-6, 1.0 - 1e-6)
        center = np.log(u) - np.log1p(-u)
        scale = np.sqrt(np.maximum(var, 0.0)) / (width * u * (1.0 - u))
        scale = np.clip(scale, 1e-3, 1e3)
        return BoxTransform(lo, hi, center=center, scale=scale)

    # --- the map and its derivatives ---------------------------------------

    def _check(self, arr) -> np.ndarray:
        arr = np.asarray(arr, dtype=np.float64)
        if arr.shape[-1] != self.dim:
            raise DimensionError(
                f"last axis has {arr.shape[-1]} coordinates, transform has {self.dim}"
            )
        return arr

    def forward(self, theta: np.ndarray) -> np.ndarray:
        """Map box points to unconstrained coordinates (shape preserved)."""
        theta = self._check(theta)
        u = np.clip((theta - self.lo) / self.width, _EDGE, 1.0 - _EDGE)
        return (np.log(u) - np.log1p(-u) - self.center) / self.scale

    def inverse(self, eta: np.ndarray) -> np.ndarray:
        """Map unconstrained coordinates back strictly inside the box."""
        eta = self._check(eta)
        u = _sigmoid(self.scale * eta + self.center)
        u = np.clip(u, _INSIDE, 1.0 - _INSIDE)
        return self.lo + self.width * u

    def dtheta_deta(self, eta: np.ndarray) -> np.ndarray:
        """Per-coordinate derivative of inverse(); always positive."""
        eta = self._check(eta)
        s = _sigmoid(self.scale * eta + self.center)
        return self.width * self.scale * s * (1.0 - s)

    def dlog_jac(self, eta: np.ndarray) -> np.ndarray:
        """Per-coordinate derivative of log dtheta_deta with respect to eta."""
        eta = self._check(eta)
        s = _sigmoid(self.scale * eta + self.center)
        return self.scale * (1.0 - 2.0 * s)

    def log_jac(self, eta: np.ndarray) -> np.ndarray:
        """Row sums of log dtheta_deta (log-density correction term)."""
        return np.sum(np.log(self.dtheta_deta(eta)), axis=-1)

    # --- persistence --------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
            "center": [float(v) for v in self.center],
            "scale": [float(v) for v in self.scale],
        }

    @staticmethod
    def from_json(obj: dict) -> "BoxTransform":
        return BoxTransform(
            np.array(obj["lo"]),
            np.array(obj["hi"]),
            center=np.array(obj["center"]),
            scale=np.array(obj["scale"]),
        )


class TransformedLaw:
    """A theta law seen through a box transform.

    Exposes the pushforward's log-density gradient in the unconstrained
    coordinates, which is what the implicit training objective and the
    sampler's reference-measure term both consume.  The support is the whole
    real line on every coordinate, so no batch row is ever boundary-excluded
    and the sampler's reflection step never fires.
    """

    def __init__(self, law, transform: BoxTransform):
        if getattr(law, "dim", transform.dim) != transform.dim:
            raise DimensionError("law and transform dimensions differ")
        self.law = law
        self.transform = transform
        self.dim = transform.dim
        self.lo = np.full(self.dim, -np.inf)
        self.hi = np.full(self.dim, np.inf)

    def grad_logpdf(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=np.float64))
        tf = self.transform
        theta = tf.inverse(eta)
        return self.law.grad_logpdf(theta) * tf.dtheta_deta(eta) + tf.dlog_jac(eta)

    def logpdf(self, eta: np.ndarray) -> np.ndarray:
        eta = np.atleast_2d(np.asarray(eta, dtype=np.float64))
        tf = self.transform
        return self.law.logpdf(tf.inverse(eta)) + tf.log_jac(eta)

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return self.transform.forward(np.atleast_2d(self.law.sample(size, rng)))


class TransformedScore:
    """A box-coordinate score object evaluated in transformed coordinates.

    Wraps anything with ``total_score``/``single_scores`` defined on box
    coordinates (for example an analytic score) so a transformed-coordinate
    sampler can drive it: likelihood gradients pick up the chain-rule factor
    dtheta/deta, while the Jacobian term of the reparametrized posterior is
    carried by the reference law, not by this wrapper.
    """

    def __init__(self, base, transform: BoxTransform):
        self.base = base
        self.transform = transform
        self.debiased = getattr(base, "debiased", False)
        self.meta = dict(getattr(base, "meta", {}))
        self.meta["transform"] = transform.to_json()

    def total_score(self, etas: np.ndarray, data: np.ndarray) -> np.ndarray:
        etas = np.atleast_2d(np.asarray(etas, dtype=np.float64))
        theta = self.transform.inverse(etas)
        return self.base.total_score(theta, data) * self.transform.dtheta_deta(etas)

    def single_scores(self, eta_rows: np.ndarray, x_rows: np.ndarray) -> np.ndarray:
        eta_rows = np.atleast_2d(np.asarray(eta_rows, dtype=np.float64))
        theta = self.transform.inverse(eta_rows)
        return self.base.single_scores(theta, x_rows) * self.transform.dtheta_deta(eta_rows)
