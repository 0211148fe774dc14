"""Score-matching training objectives and their exact weight gradients.

All objectives avoid the unknown true score through integration by parts:
the per-row integrand is

    0.5 ||S||^2  +  S . grad_log_density(theta)  +  sum_j dS_j/dtheta_j

where ``S`` is the network score summed over the row's observations, and
``grad_log_density`` differentiates the law that generated the row's theta
(the prior, or a localized proposal).  Minimizing the batch mean matches the
network to the true per-observation score up to an additive constant, as
long as that law vanishes toward its support boundary.

Registered forms:

* ``naive`` — the bare integrand above (adds no penalty).
* ``weighted`` — multiplies each coordinate by a weight that vanishes on
  the support boundary, trading the vanishing-density requirement for extra
  ``S_j * dweight_j`` terms.  With unit weights it reproduces ``naive``
  bit for bit.
* ``full_data`` — rows carry whole datasets; the integrand is divided by
  the dataset size and a curvature penalty on the same rows is added.
* ``regularized_single`` — single-observation rows plus a curvature penalty
  estimated on separate repeated-observation rows.
* ``mean_regression`` — fits a theta-only network to precomputed score
  averages, with a penalty coupling the fitted mean to its own Jacobian
  (the mean-zero / curvature identity for the bias field).

The curvature penalty is the squared Frobenius norm of the within-row mean
of ``score score^T + d score/d theta``, which vanishes in expectation at the
true score (information-matrix identity).

Gradients flow exactly through every divergence and Jacobian term via the
network engine's reverse-over-tangent pass.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import nets
from .errors import DimensionError, NumericalError

__all__ = [
    "ScoreBatch",
    "MeanRegBatch",
    "make_score_batch",
    "naive_loss",
    "weighted_loss",
    "full_data_loss",
    "regularized_single_loss",
    "mean_regression_loss",
    "curvature_matrices",
    "LOSS_FORMS",
    "loss_and_grad",
]

#: rows whose theta sits this close to a bounded prior face are dropped
BOUNDARY_MARGIN = 1e-9


@dataclass
class ScoreBatch:
    """Rows for the implicit objectives.

    ``data`` has one dataset per row, shape (B, n_obs, data_dim); single-
    observation tables use ``n_obs = 1``.  ``theta_grad`` is the gradient of
    the log density that generated ``theta``.  ``weight``/``weight_grad``
    hold per-coordinate boundary weights and their theta-derivatives for the
    weighted form.
    """

    theta: np.ndarray
    data: np.ndarray
    theta_grad: np.ndarray
    weight: np.ndarray | None = None
    weight_grad: np.ndarray | None = None

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 2:
            self.data = self.data[:, None, :]
        self.theta_grad = np.atleast_2d(np.asarray(self.theta_grad, dtype=np.float64))
        if self.data.shape[0] != self.theta.shape[0]:
            raise DimensionError("theta and data row counts differ")
        if self.theta_grad.shape != self.theta.shape:
            raise DimensionError("theta_grad must match theta's shape")
        if not np.all(np.isfinite(self.theta_grad)):
            raise NumericalError(
                "non-finite log-density gradient; was theta drawn outside "
                "the open support?"
            )

    @property
    def size(self) -> int:
        return self.theta.shape[0]


@dataclass
class MeanRegBatch:
    """Rows for the mean-regression objective: theta and its score average."""

    theta: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.theta = np.atleast_2d(np.asarray(self.theta, dtype=np.float64))
        self.target = np.atleast_2d(np.asarray(self.target, dtype=np.float64))
        if self.target.shape != self.theta.shape:
            raise DimensionError("target must match theta's shape")

    @property
    def size(self) -> int:
        return self.theta.shape[0]


def make_score_batch(theta, data, law, model=None, weighted=False) -> ScoreBatch:
    """Assemble a ScoreBatch from table rows and the theta-sampling law.

    Rows within ``BOUNDARY_MARGIN`` of a bounded face of the law's support
    are excluded (the implicit objective is ill-defined there) with a
    warning.  With ``weighted`` the model's ``boundary_weight`` supplies
    per-row weights from each row's own dataset.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, None, :]
    lo, hi = law.lo, law.hi
    near_lo = np.isfinite(lo) & (theta <= lo + BOUNDARY_MARGIN)
    near_hi = np.isfinite(hi) & (theta >= hi - BOUNDARY_MARGIN)
    keep = ~np.any(near_lo | near_hi, axis=1)
    if not np.all(keep):
        warnings.warn(
            f"excluded {int(np.sum(~keep))} rows with theta on the support "
            "boundary",
            stacklevel=2,
        )
        theta, data = theta[keep], data[keep]
    batch = ScoreBatch(theta=theta, data=data, theta_grad=law.grad_logpdf(theta))
    if weighted:
        if model is None or not hasattr(model, "boundary_weight"):
            raise DimensionError("weighted batches need a model with boundary_weight")
        g = np.empty_like(batch.theta)
        dg = np.empty_like(batch.theta)
        for i in range(batch.size):
            g[i], dg[i] = model.boundary_weight(batch.theta[i], batch.data[i])
        batch.weight, batch.weight_grad = g, dg
    return batch


# --- shared evaluation machinery -------------------------------------------


def _flatten_rows(spec: nets.NetSpec, theta: np.ndarray, data: np.ndarray):
    B, n, p = data.shape
    if p != spec.data_dim:
        raise DimensionError(f"data dim {p} does not match spec.data_dim")
    theta_rep = np.repeat(theta, n, axis=0)
    x = data.reshape(B * n, p) if p else None
    return theta_rep, x


def _eval_rows(spec, w, theta, data, want_jac=True):
    """Evaluate the net on every observation of every row.

    Returns the cache plus views shaped (B, n, d) and (B, n, d, d).
    """
    B, n, _ = data.shape
    theta_rep, x = _flatten_rows(spec, theta, data)
    cache = nets.eval_batch(spec, w, theta_rep, x, want_jac=want_jac)
    d = spec.out_dim
    s = cache.outputs.reshape(B, n, d)
    jac = cache.jac.reshape(B, n, d, d) if want_jac else None
    return cache, s, jac


def _implicit_terms(s, jac, theta_grad, weight, weight_grad):
    """Per-row integrand and cotangents for the (weighted) implicit loss.

    Returns ``(per_row, S_bar, D_bar)`` where ``S_bar``/``D_bar`` are the
    derivatives of the summed integrand with respect to the row's summed
    score and summed divergence diagonal (before the 1/B batch mean).
    """
    S = s.sum(axis=1)                                     # (B, d)
    diag = np.diagonal(jac, axis1=2, axis2=3)             # (B, n, d)
    D = diag.sum(axis=1)                                  # (B, d)
    if weight is None:
        quad = 0.5 * np.sum(S * S, axis=1)
        cross = np.sum(S * theta_grad, axis=1)
        div = np.sum(D, axis=1)
        S_bar = S + theta_grad
        D_bar = np.ones_like(D)
    else:
        Sg = S * weight
        quad = 0.5 * np.sum(S * Sg, axis=1)
        cross = np.sum(Sg * theta_grad, axis=1)
        div = np.sum(D * weight + S * weight_grad, axis=1)
        S_bar = Sg + weight * theta_grad + weight_grad
        D_bar = weight.copy()
    return quad + cross + div, S_bar, D_bar


def curvature_matrices(s, jac) -> np.ndarray:
    """Within-row means of ``s s^T + jac``, shape (B, d, d)."""
    n = s.shape[1]
    outer = np.einsum("bni,bnj->bij", s, s)
    return (outer + jac.sum(axis=1)) / n


def _check_finite(loss, name):
    if not np.isfinite(loss):
        raise NumericalError(f"{name} evaluated to a non-finite value")


# --- loss forms -------------------------------------------------------------


def weighted_loss(spec, w, batch: ScoreBatch, want_grad=True, **_):
    """Boundary-weighted implicit loss; unit weights reduce to ``naive``."""
    if batch.weight is None:
        weight = np.ones_like(batch.theta)
        weight_grad = np.zeros_like(batch.theta)
    else:
        weight, weight_grad = batch.weight, batch.weight_grad
    cache, s, jac = _eval_rows(spec, w, batch.theta, batch.data)
    per_row, S_bar, D_bar = _implicit_terms(s, jac, batch.theta_grad, weight, weight_grad)
    loss = float(np.mean(per_row))
    _check_finite(loss, "weighted implicit loss")
    if not want_grad:
        return loss, None
    B, n, d = s.shape
    s_bar = np.broadcast_to(S_bar[:, None, :] / B, (B, n, d)).reshape(B * n, d)
    j_bar = np.zeros((B, n, d, d))
    idx = np.arange(d)
    j_bar[:, :, idx, idx] = D_bar[:, None, :] / B
    grad = nets.backprop(spec, w, cache, s_bar, j_bar.reshape(B * n, d, d))
    return loss, grad


def naive_loss(spec, w, batch: ScoreBatch, want_grad=True, **_):
    """Plain implicit loss (no boundary weights, no penalty)."""
    stripped = ScoreBatch(
        theta=batch.theta, data=batch.data, theta_grad=batch.theta_grad
    )
    return weighted_loss(spec, w, stripped, want_grad=want_grad)


def full_data_loss(spec, w, batch: ScoreBatch, lam=0.0, want_grad=True, **_):
    """Whole-dataset rows: implicit loss / n plus a curvature penalty.

    With ``lam = 0`` and one observation per row this is exactly ``naive``.
    """
    cache, s, jac = _eval_rows(spec, w, batch.theta, batch.data)
    B, n, d = s.shape
    per_row, S_bar, D_bar = _implicit_terms(
        s, jac, batch.theta_grad, None, None
    )
    loss = float(np.mean(per_row)) / n
    C = None
    if lam:
        C = curvature_matrices(s, jac)
        loss = loss + lam * float(np.mean(np.sum(C * C, axis=(1, 2))))
    _check_finite(loss, "full-data loss")
    if not want_grad:
        return loss, None
    s_bar = np.broadcast_to(S_bar[:, None, :] / (B * n), (B, n, d)).copy()
    j_bar = np.zeros((B, n, d, d))
    idx = np.arange(d)
    j_bar[:, :, idx, idx] = D_bar[:, None, :] / (B * n)
    if lam:
        C_bar = (2.0 * lam / B) * C                        # (B, d, d)
        s_bar += np.einsum("bij,bnj->bni", C_bar + np.swapaxes(C_bar, 1, 2), s) / n
        j_bar += C_bar[:, None, :, :] / n
    grad = nets.backprop(
        spec, w, cache, s_bar.reshape(B * n, d), j_bar.reshape(B * n, d, d)
    )
    return loss, grad


def regularized_single_loss(
    spec, w, batch: ScoreBatch, reg_batch: ScoreBatch = None, lam=0.0,
    want_grad=True, **_,
):
    """Single-observation implicit loss plus a repeated-observation
    curvature penalty estimated on separate rows."""
    loss, grad = weighted_loss(spec, w, batch, want_grad=want_grad)
    if reg_batch is None or not lam:
        return loss, grad
    cache, s, jac = _eval_rows(spec, w, reg_batch.theta, reg_batch.data)
    L, m, d = s.shape
    C = curvature_matrices(s, jac)
    loss = loss + lam * float(np.mean(np.sum(C * C, axis=(1, 2))))
    _check_finite(loss, "curvature penalty")
    if not want_grad:
        return loss, None
    C_bar = (2.0 * lam / L) * C
    s_bar = np.einsum("bij,bnj->bni", C_bar + np.swapaxes(C_bar, 1, 2), s) / m
    j_bar = np.broadcast_to(C_bar[:, None, :, :] / m, (L, m, d, d))
    grad = grad + nets.backprop(
        spec, w, cache, s_bar.reshape(L * m, d), j_bar.reshape(L * m, d, d)
    )
    return loss, grad


def mean_regression_loss(spec, w, batch: MeanRegBatch, lam=0.0, want_grad=True, **_):
    """Fit a theta-only network to score averages.

    Squared error to the target plus, when ``lam`` is set, the penalty
    ``|| h h^T - dh/dtheta - target h^T - h target^T ||_F^2`` which is the
    curvature identity restricted to the bias field.
    """
    if spec.data_dim != 0:
        raise DimensionError("mean-regression networks take theta only")
    cache = nets.eval_batch(spec, w, batch.theta, None, want_jac=True)
    h = cache.outputs                                      # (L, d)
    resid = h - batch.target
    loss = float(np.mean(np.sum(resid * resid, axis=1)))
    L, d = h.shape
    h_bar = 2.0 * resid / L
    j_bar = None
    if lam:
        M = (
            np.einsum("bi,bj->bij", h, h)
            - cache.jac
            - np.einsum("bi,bj->bij", batch.target, h)
            - np.einsum("bi,bj->bij", h, batch.target)
        )
        loss = loss + lam * float(np.mean(np.sum(M * M, axis=(1, 2))))
        M_bar = (2.0 * lam / L) * M
        sym = M_bar + np.swapaxes(M_bar, 1, 2)
        h_bar = h_bar + np.einsum("bij,bj->bi", sym, h - batch.target)
        j_bar = -M_bar
    _check_finite(loss, "mean-regression loss")
    if not want_grad:
        return loss, None
    grad = nets.backprop(spec, w, cache, h_bar, j_bar)
    return loss, grad


LOSS_FORMS = {
    "naive": naive_loss,
    "weighted": weighted_loss,
    "full_data": full_data_loss,
    "regularized_single": regularized_single_loss,
    "mean_regression": mean_regression_loss,
}


def loss_and_grad(spec, w, batch, form: str, **params):
    """Dispatch to a registered loss form by name."""
    try:
        fn = LOSS_FORMS[form]
    except KeyError:
        raise DimensionError(f"unknown loss form {form!r}") from None
    return fn(spec, w, batch, **params)
