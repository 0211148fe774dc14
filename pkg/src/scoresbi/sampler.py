"""Annealed Langevin Monte Carlo over the posterior.

Each step moves every chain by ``tau * (beta * clipped_score + prior_grad)``
plus ``sqrt(2 tau)`` Gaussian noise, where ``beta`` climbs an annealing
ladder that ends at 1.  Out-of-support proposals reflect across the violated
face, chains whose drift turns non-finite are dropped, and only the final
(unit-temperature) stage emits samples after burn-in and thinning.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigError, SamplerFailure
from .seeds import derive_rng

__all__ = [
    "SamplerConfig",
    "SampleResult",
    "clip_score",
    "default_clip_bound",
    "default_tau",
    "lmc_step",
    "reflect_box",
    "run_sampler",
    "save_samples_csv",
    "load_samples_csv",
]

DEFAULT_LADDER = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    chains: int = 20
    stage_steps: int = 100
    final_steps: int = 500
    burn_fraction: float = 0.2
    thin: int = 1
    tau: float = 1e-3
    ladder: tuple[float, ...] = DEFAULT_LADDER
    clip_bound: float | None = None

    def __post_init__(self):
        if self.chains < 1 or self.stage_steps < 0 or self.final_steps < 1:
            raise ConfigError("need chains >= 1, stage_steps >= 0, final_steps >= 1")
        if not (self.tau > 0):
            raise ConfigError("step size tau must be positive")
        if not (0 <= self.burn_fraction < 1):
            raise ConfigError("burn_fraction must lie in [0, 1)")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        lad = tuple(float(b) for b in self.ladder)
        if not lad or lad[-1] != 1.0 or any(b2 < b1 for b1, b2 in zip(lad, lad[1:])):
            raise ConfigError("ladder must be nondecreasing and end at 1.0")
        if any(b <= 0 for b in lad):
            raise ConfigError("ladder entries must be positive")
        object.__setattr__(self, "ladder", lad)

    @property
    def kept_per_chain(self) -> int:
        burn = int(math.floor(self.burn_fraction * self.final_steps))
        return len(range(burn, self.final_steps, self.thin))


@dataclasses.dataclass
class SampleResult:
    samples: np.ndarray      # (rows, theta_dim), ordered by chain then time
    chain: np.ndarray        # (rows,) chain index of each draw
    stage: np.ndarray        # (rows,) annealing stage index of each draw
    diagnostics: dict


def default_tau(proposal_var, n_obs: int) -> float:
    """Step size 0.1 * (smallest proposal variance) / n."""
    return 0.1 * float(np.min(proposal_var)) / max(int(n_obs), 1)


def default_clip_bound(n_obs: int, theta_dim: int) -> float:
    """Score-norm cap 10 * sqrt(n log n) * sqrt(d)."""
    n = max(int(n_obs), 2)
    return 10.0 * math.sqrt(n * math.log(n)) * math.sqrt(theta_dim)


def clip_score(s: np.ndarray, bound: float) -> np.ndarray:
    """Rescale rows of ``s`` whose norm exceeds ``bound``; direction kept."""
    if not (bound > 0):
        raise ConfigError("clip bound must be positive")
    s = np.atleast_2d(np.asarray(s, dtype=np.float64))
    norms = np.linalg.norm(s, axis=1, keepdims=True)
    scale = np.ones_like(norms)
    over = norms > bound
    scale[over] = bound / norms[over]
    return s * scale


def lmc_step(theta, tau, score, prior_grad, noise, beta=1.0):
    """One unadjusted Langevin move; ``noise`` is injectable for tests."""
    theta = np.asarray(theta, dtype=np.float64)
    return (
        theta
        + tau * (beta * np.asarray(score) + np.asarray(prior_grad))
        + math.sqrt(2.0 * tau) * np.asarray(noise)
    )


def reflect_box(theta, lo, hi):
    """Fold points into [lo, hi] by reflecting across violated faces.

    Handles arbitrary overshoot via the triangular fold with period
    2 * (hi - lo); infinite bounds pass through untouched.
    """
    theta = np.array(theta, dtype=np.float64, copy=True)
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    bounded = np.isfinite(lo) & np.isfinite(hi)
    if np.any(bounded):
        width = hi[bounded] - lo[bounded]
        y = np.mod(theta[..., bounded] - lo[bounded], 2.0 * width)
        theta[..., bounded] = lo[bounded] + np.minimum(y, 2.0 * width - y)
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    if np.any(only_lo):
        theta[..., only_lo] = lo[only_lo] + np.abs(theta[..., only_lo] - lo[only_lo])
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    if np.any(only_hi):
        theta[..., only_hi] = hi[only_hi] - np.abs(hi[only_hi] - theta[..., only_hi])
    return theta


def run_sampler(
    score,
    data,
    prior,
    config: SamplerConfig,
    *,
    proposal=None,
    seed: int = 0,
) -> SampleResult:
    """Run all chains through the ladder; emit the final stage thinned.

    ``score`` needs ``total_score(thetas, data) -> (chains, d)``; chains
    start from the localized proposal when given, else from the prior.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    n_obs = data.shape[0]
    d = prior.dim
    C = config.chains
    bound = config.clip_bound
    if bound is None:
        bound = default_clip_bound(n_obs, d)

    init_law = proposal if proposal is not None else prior
    thetas = np.atleast_2d(init_law.sample(C, derive_rng(seed, "init")))
    thetas = reflect_box(thetas, prior.lo, prior.hi)

    stages = len(config.ladder)
    total_steps = config.stage_steps * (stages - 1) + config.final_steps
    noise = np.empty((C, total_steps, d))
    for c in range(C):
        noise[c] = derive_rng(seed, f"chain{c}").standard_normal((total_steps, d))

    alive = np.ones(C, dtype=bool)
    burn = int(math.floor(config.burn_fraction * config.final_steps))
    keep_idx = set(range(burn, config.final_steps, config.thin))
    snapshots = []
    reflections = 0
    clip_events = 0
    drift_norms = []

    step_counter = 0
    for stage_i, beta in enumerate(config.ladder):
        is_final = stage_i == stages - 1
        n_steps = config.final_steps if is_final else config.stage_steps
        for t in range(n_steps):
            raw = score.total_score(thetas, data)
            prior_grad = prior.grad_logpdf(thetas)
            finite = np.all(np.isfinite(raw), axis=1) & np.all(
                np.isfinite(prior_grad), axis=1
            )
            newly_dead = alive & ~finite
            if np.any(newly_dead):
                alive &= finite
                if not np.any(alive):
                    raise SamplerFailure("all chains failed (non-finite drift)")
            clipped = np.where(
                np.isfinite(raw), raw, 0.0
            )  # dead chains stay frozen; keep arithmetic clean
            norms = np.linalg.norm(clipped, axis=1)
            clip_events += int(np.sum((norms > bound) & alive))
            clipped = clip_score(clipped, bound)
            drift = config.tau * (
                beta * clipped + np.where(np.isfinite(prior_grad), prior_grad, 0.0)
            )
            drift_norms.append(np.linalg.norm(drift[alive], axis=1))
            prop = thetas + drift + math.sqrt(2.0 * config.tau) * noise[:, step_counter, :]
            folded = reflect_box(prop, prior.lo, prior.hi)
            reflections += int(np.sum(np.any(folded != prop, axis=1) & alive))
            thetas = np.where(alive[:, None], folded, thetas)
            if is_final and t in keep_idx:
                snapshots.append(thetas.copy())
            step_counter += 1

    n_failed = int(np.sum(~alive))
    if n_failed * 2 > C:
        raise SamplerFailure(
            f"{n_failed} of {C} chains failed (non-finite drift)"
        )

    snap = np.stack(snapshots)                             # (kept, C, d)
    live = np.flatnonzero(alive)
    samples = np.concatenate([snap[:, c, :] for c in live])
    chain_arr = np.repeat(live, snap.shape[0])
    stage_arr = np.full(samples.shape[0], stages - 1, dtype=np.int64)

    pooled = np.concatenate(drift_norms) if drift_norms else np.zeros(1)
    diagnostics = {
        "chains": C,
        "failed_chains": n_failed,
        "kept_per_chain": config.kept_per_chain,
        "rows": int(samples.shape[0]),
        "reflections": reflections,
        "clip_events": clip_events,
        "clip_bound": float(bound),
        "tau": float(config.tau),
        "stages": stages,
        "drift_norm_quantiles": {
            "q10": float(np.quantile(pooled, 0.10)),
            "q50": float(np.quantile(pooled, 0.50)),
            "q90": float(np.quantile(pooled, 0.90)),
        },
    }
    return SampleResult(samples, chain_arr, stage_arr, diagnostics)


def save_samples_csv(result: SampleResult, path) -> None:
    d = result.samples.shape[1]
    header = [f"theta_{j}" for j in range(d)] + ["chain", "stage"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row, c, s in zip(result.samples, result.chain, result.stage):
            fields = [repr(float(v)) for v in row] + [str(int(c)), str(int(s))]
            fh.write(",".join(fields) + "\n")


def load_samples_csv(path) -> SampleResult:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        d = sum(1 for c in header if c.startswith("theta_"))
        samples, chain, stage = [], [], []
        for line in fh:
            fields = line.strip().split(",")
            samples.append([float(v) for v in fields[:d]])
            chain.append(int(fields[d]))
            stage.append(int(fields[d + 1]))
    return SampleResult(
        np.array(samples, dtype=np.float64).reshape(len(samples), d),
        np.array(chain, dtype=np.int64),
        np.array(stage, dtype=np.int64),
        {},
    )
