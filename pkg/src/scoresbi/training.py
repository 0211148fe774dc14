"""Score-network training.

Two-phase procedure on a 50/50 train/validation split: phase one minimizes
the unpenalized implicit objective, phase two continues from those weights
once per penalty-strength candidate, and the candidate with the smallest
unpenalized validation loss wins.  A second, optional step regresses the
per-parameter score average onto a theta-only network and subtracts it,
removing the conditional bias of the fitted score.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os

import numpy as np

from . import losses, nets, optim
from .errors import ConfigError, NumericalError, TrainingFailure
from .seeds import derive_rng

__all__ = [
    "TrainConfig",
    "DebiasConfig",
    "TrainedScore",
    "AnalyticScore",
    "train",
    "train_debias",
    "save_trained",
    "load_trained",
]


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    loss: str = "naive"
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    epochs_phase1: int = 30
    epochs_phase2: int = 15
    batch_rows: int = 256
    reg_rows: int = 8
    lambda_grid: tuple[float, ...] = (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0)
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    lr_pieces: int = 5
    table_kind: str | None = None
    val_chunk: int = 16384
    seed: int = 0


@dataclasses.dataclass(frozen=True)
class DebiasConfig:
    hidden: tuple[int, ...] = (32,)
    activation: str = "tanh"
    epochs_phase1: int = 300
    epochs_phase2: int = 100
    batch_rows: int = 32
    lambda_grid: tuple[float, ...] = (0.0, 1e-8, 1e-6, 1e-4, 1e-2, 1.0)
    lr_start: float = 1e-2
    lr_end: float = 1e-4
    lr_pieces: int = 5
    seed: int = 0


@dataclasses.dataclass
class TrainedScore:
    """A fitted per-observation score network plus optional mean-shift net.

    The effective single-observation score is ``s(theta, x) - h(theta)`` when
    debiased; the whole-dataset score adds over observations, so the shift
    enters as ``n * h(theta)``.
    """

    spec: nets.NetSpec
    weights: np.ndarray
    mean_spec: nets.NetSpec | None = None
    mean_weights: np.ndarray | None = None
    debiased: bool = False
    meta: dict = dataclasses.field(default_factory=dict)

    def mean_shift(self, theta: np.ndarray) -> np.ndarray:
        """h(theta) rows; zeros when no mean network is attached."""
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if not self.debiased or self.mean_weights is None:
            return np.zeros((theta.shape[0], self.spec.theta_dim))
        return nets.forward(self.mean_spec, self.mean_weights, theta, None)

    def single_scores(self, theta_rows: np.ndarray, x_rows: np.ndarray) -> np.ndarray:
        """Per-(theta, observation) score for matched rows."""
        s = nets.forward(self.spec, self.weights, theta_rows, x_rows)
        return s - self.mean_shift(theta_rows)

    def single_scores_with_jac(self, theta_rows, x_rows):
        """Scores plus their theta-Jacobians, debias shift included."""
        cache = nets.eval_batch(self.spec, self.weights, theta_rows, x_rows, want_jac=True)
        s, jac = cache.outputs, cache.jac
        if self.debiased and self.mean_weights is not None:
            mcache = nets.eval_batch(
                self.mean_spec, self.mean_weights, np.atleast_2d(theta_rows), None,
                want_jac=True,
            )
            s = s - mcache.outputs
            jac = jac - mcache.jac
        return s, jac

    def total_score(self, thetas: np.ndarray, data: np.ndarray) -> np.ndarray:
        """Whole-dataset score for each chain position.

        ``thetas`` is (chains, d); ``data`` is the observed (n, p) dataset
        shared by all chains.
        """
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        C, n = thetas.shape[0], data.shape[0]
        theta_rep = np.repeat(thetas, n, axis=0)
        x_rep = np.tile(data, (C, 1))
        s = nets.forward(self.spec, self.weights, theta_rep, x_rep)
        total = s.reshape(C, n, -1).sum(axis=1)
        return total - n * self.mean_shift(thetas)


class AnalyticScore:
    """Drop-in replacement for TrainedScore backed by a tractable model."""

    def __init__(self, model):
        if not model.has_analytic_score:
            raise ConfigError(f"{model.model_id} has no analytic score")
        self.model = model
        self.debiased = False
        self.meta = {"loss": "analytic"}

    def single_scores(self, theta_rows, x_rows):
        theta_rows = np.atleast_2d(np.asarray(theta_rows, dtype=np.float64))
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        return self.model.analytic_score(theta_rows, x_rows)

    def single_scores_with_jac(self, theta_rows, x_rows):
        theta_rows = np.atleast_2d(np.asarray(theta_rows, dtype=np.float64))
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        return self.model.analytic_score(theta_rows, x_rows, want_jac=True)

    def total_score(self, thetas, data):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 1:
            data = data[:, None]
        out = np.empty((thetas.shape[0], self.model.theta_dim))
        for i in range(thetas.shape[0]):
            out[i] = self.model.analytic_score(thetas[i], data).sum(axis=0)
        return out


# --- internals --------------------------------------------------------------


def _slice_batch(batch: losses.ScoreBatch, idx) -> losses.ScoreBatch:
    out = losses.ScoreBatch(
        theta=batch.theta[idx],
        data=batch.data[idx],
        theta_grad=batch.theta_grad[idx],
    )
    if batch.weight is not None:
        out.weight = batch.weight[idx]
        out.weight_grad = batch.weight_grad[idx]
    return out


def _chunked_value(spec, w, batch, form, params, chunk_obs):
    """Loss value over a large batch, averaged exactly, bounded memory."""
    rows = batch.size
    n_obs = batch.data.shape[1]
    step = max(1, chunk_obs // max(n_obs, 1))
    total, count = 0.0, 0
    for s in range(0, rows, step):
        piece = _slice_batch(batch, slice(s, min(s + step, rows)))
        v, _ = losses.loss_and_grad(spec, w, piece, form, want_grad=False, **params)
        total += v * piece.size
        count += piece.size
    return total / count


def _run_phase(spec, w, batch, form, params, epochs, cfg, rng, reg_batch=None):
    rows = batch.size
    steps_per = max(1, math.ceil(rows / cfg.batch_rows))
    schedule = optim.log_decay_schedule(
        epochs * steps_per, cfg.lr_start, cfg.lr_end, cfg.lr_pieces
    )
    state = optim.adam_init(w.size, schedule)
    w = w.copy()
    for _ in range(epochs):
        order = rng.permutation(rows)
        for k in range(steps_per):
            idx = order[k * cfg.batch_rows : (k + 1) * cfg.batch_rows]
            if idx.size == 0:
                continue
            kwargs = dict(params)
            if reg_batch is not None:
                ridx = rng.integers(0, reg_batch.size, size=min(cfg.reg_rows, reg_batch.size))
                kwargs["reg_batch"] = _slice_batch(reg_batch, ridx)
            _, grad = losses.loss_and_grad(spec, w, _slice_batch(batch, idx), form, **kwargs)
            state, w = optim.adam_step(state, w, grad)
    return w


_DEFAULT_TABLE = {
    "naive": "single",
    "weighted": "single",
    "regularized_single": "single",
    "full_data": "full",
}


def train(model, law, table_set, config: TrainConfig) -> TrainedScore:
    """Fit the score network on reference tables drawn from ``law``."""
    form = config.loss
    if form not in _DEFAULT_TABLE:
        raise ConfigError(f"unsupported training loss {form!r}")
    kind = config.table_kind or _DEFAULT_TABLE[form]
    table = getattr(table_set, kind)
    if table.rows < 4:
        raise ConfigError(f"{kind} table too small to split ({table.rows} rows)")
    batch_all = losses.make_score_batch(
        table.theta, table.data, law, model=model, weighted=(form == "weighted")
    )
    perm = derive_rng(config.seed, "split").permutation(batch_all.size)
    n_train = batch_all.size // 2
    batch_train = _slice_batch(batch_all, perm[:n_train])
    batch_val = _slice_batch(batch_all, perm[n_train:])

    reg_batch = None
    if form == "regularized_single":
        rep = table_set.repeated
        if rep.rows == 0:
            raise ConfigError("regularized_single needs a repeated-observation table")
        reg_batch = losses.make_score_batch(rep.theta, rep.data, law)

    spec = nets.NetSpec(
        theta_dim=model.theta_dim,
        data_dim=model.data_dim,
        hidden=tuple(config.hidden),
        activation=config.activation,
    )
    w0 = nets.init_weights(spec, derive_rng(config.seed, "init"))

    if form == "full_data":
        val_form, val_params = "full_data", {"lam": 0.0}
    elif form == "regularized_single":
        val_form, val_params = "naive", {}
    else:
        val_form, val_params = form, {}

    penalized = form in ("full_data", "regularized_single")
    history: dict[str, float | None] = {}
    if penalized:
        phase1_form = "naive" if form == "regularized_single" else form
        try:
            w1 = _run_phase(
                spec, w0, batch_train, phase1_form,
                {"lam": 0.0} if phase1_form == "full_data" else {},
                config.epochs_phase1, config, derive_rng(config.seed, "phase1"),
            )
        except NumericalError as exc:
            raise TrainingFailure(f"first training phase diverged: {exc}") from exc
        candidates = []
        for i, lam in enumerate(config.lambda_grid):
            try:
                w2 = _run_phase(
                    spec, w1, batch_train, form, {"lam": float(lam)},
                    config.epochs_phase2, config, derive_rng(config.seed, f"phase2-{i}"),
                    reg_batch=reg_batch,
                )
                val = _chunked_value(spec, w2, batch_val, val_form, val_params, config.val_chunk)
            except NumericalError:
                val = float("nan")
            history[repr(float(lam))] = val if np.isfinite(val) else None
            if np.isfinite(val):
                candidates.append((val, i, lam, w2))
        if not candidates:
            raise TrainingFailure(
                f"every penalty candidate diverged; validation losses: {history}"
            )
        val, _, lam, w = min(candidates, key=lambda c: (c[0], c[1]))
    else:
        epochs = config.epochs_phase1 + config.epochs_phase2
        try:
            w = _run_phase(
                spec, w0, batch_train, form, {}, epochs, config,
                derive_rng(config.seed, "phase1"),
            )
            val = _chunked_value(spec, w, batch_val, val_form, val_params, config.val_chunk)
        except NumericalError as exc:
            raise TrainingFailure(f"training diverged: {exc}") from exc
        if not np.isfinite(val):
            raise TrainingFailure("non-finite validation loss after training")
        lam = 0.0
        history[repr(0.0)] = val
    meta = {
        "loss": form,
        "table": kind,
        "lambda1": float(lam),
        "val_loss": float(val),
        "val_losses": history,
        "rows_train": int(batch_train.size),
        "rows_val": int(batch_val.size),
        "seed": int(config.seed),
    }
    return TrainedScore(spec=spec, weights=w, meta=meta)


def _regression_targets(trained: TrainedScore, table, chunk=16384):
    """Per-row average of the fitted score over that row's observations."""
    L, m, p = table.data.shape
    d = trained.spec.theta_dim
    out = np.empty((L, d))
    rows_per = max(1, chunk // m)
    for s in range(0, L, rows_per):
        e = min(s + rows_per, L)
        theta_rep = np.repeat(table.theta[s:e], m, axis=0)
        x_rep = table.data[s:e].reshape((e - s) * m, p)
        sc = nets.forward(trained.spec, trained.weights, theta_rep, x_rep)
        out[s:e] = sc.reshape(e - s, m, d).mean(axis=1)
    return out


def train_debias(trained: TrainedScore, table, config: DebiasConfig) -> TrainedScore:
    """Fit the mean-shift network and attach it to a copy of ``trained``.

    Falls back to a zero shift (never worse than the plain score) when
    regression diverges or cannot beat the zero predictor on validation rows.
    """
    if table.rows < 4:
        raise ConfigError(f"repeated table too small to split ({table.rows} rows)")
    if table.obs_per_row < 2:
        raise ConfigError("repeated table needs at least 2 observations per row")
    targets = _regression_targets(trained, table)
    batch_all = losses.MeanRegBatch(theta=table.theta, target=targets)
    perm = derive_rng(config.seed, "split").permutation(batch_all.size)
    n_train = batch_all.size // 2
    tr = losses.MeanRegBatch(batch_all.theta[perm[:n_train]], batch_all.target[perm[:n_train]])
    va = losses.MeanRegBatch(batch_all.theta[perm[n_train:]], batch_all.target[perm[n_train:]])

    spec = nets.NetSpec(
        theta_dim=trained.spec.theta_dim,
        data_dim=0,
        hidden=tuple(config.hidden),
        activation=config.activation,
        out_dim=trained.spec.theta_dim,
    )
    w0 = nets.init_weights(spec, derive_rng(config.seed, "init"))
    zero_val = float(np.mean(np.sum(va.target**2, axis=1)))

    def reg_phase(w_in, lam, epochs, rng):
        rows = tr.size
        steps_per = max(1, math.ceil(rows / config.batch_rows))
        schedule = optim.log_decay_schedule(
            epochs * steps_per, config.lr_start, config.lr_end, config.lr_pieces
        )
        state = optim.adam_init(w_in.size, schedule)
        w_cur = w_in.copy()
        for _ in range(epochs):
            order = rng.permutation(rows)
            for k in range(steps_per):
                idx = order[k * config.batch_rows : (k + 1) * config.batch_rows]
                if idx.size == 0:
                    continue
                piece = losses.MeanRegBatch(tr.theta[idx], tr.target[idx])
                _, grad = losses.mean_regression_loss(spec, w_cur, piece, lam=lam)
                state, w_cur = optim.adam_step(state, w_cur, grad)
        return w_cur

    history: dict[str, float | None] = {}
    candidates = []
    fell_back = False
    try:
        w1 = reg_phase(w0, 0.0, config.epochs_phase1, derive_rng(config.seed, "phase1"))
        for i, lam in enumerate(config.lambda_grid):
            try:
                w2 = reg_phase(
                    w1, float(lam), config.epochs_phase2,
                    derive_rng(config.seed, f"phase2-{i}"),
                )
                val, _ = losses.mean_regression_loss(spec, w2, va, lam=0.0, want_grad=False)
            except NumericalError:
                val = float("nan")
            history[repr(float(lam))] = val if np.isfinite(val) else None
            if np.isfinite(val):
                candidates.append((val, i, lam, w2))
    except NumericalError:
        candidates = []

    if candidates:
        val, _, lam, w = min(candidates, key=lambda c: (c[0], c[1]))
        if val > zero_val:
            fell_back = True
    else:
        fell_back = True
    if fell_back:
        lam, w, val = 0.0, np.zeros(nets.n_params(spec)), zero_val
    meta = dict(trained.meta)
    meta.update(
        {
            "lambda2": float(lam),
            "debias_val_loss": float(val),
            "debias_val_losses": history,
            "debias_zero_val_loss": zero_val,
            "debias_fell_back": fell_back,
            "debias_seed": int(config.seed),
        }
    )
    return TrainedScore(
        spec=trained.spec,
        weights=trained.weights.copy(),
        mean_spec=spec,
        mean_weights=w,
        debiased=True,
        meta=meta,
    )


# --- persistence ------------------------------------------------------------


def save_trained(trained: TrainedScore, basepath: str) -> None:
    """Weight blobs plus a JSON sidecar under ``basepath`` + suffixes."""
    nets.save_weights(basepath + ".score.bin", trained.spec, trained.weights)
    doc = {
        "debiased": trained.debiased,
        "meta": trained.meta,
        "score_file": os.path.basename(basepath) + ".score.bin",
    }
    if trained.mean_weights is not None:
        nets.save_weights(basepath + ".mean.bin", trained.mean_spec, trained.mean_weights)
        doc["mean_file"] = os.path.basename(basepath) + ".mean.bin"
    with open(basepath + ".json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_trained(basepath: str) -> TrainedScore:
    with open(basepath + ".json", "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    spec, w = nets.load_weights(basepath + ".score.bin")
    mean_spec = mean_w = None
    if "mean_file" in doc:
        mean_spec, mean_w = nets.load_weights(basepath + ".mean.bin")
    return TrainedScore(
        spec=spec,
        weights=w,
        mean_spec=mean_spec,
        mean_weights=mean_w,
        debiased=bool(doc["debiased"]),
        meta=doc.get("meta", {}),
    )
