"""Localization: match simulated data to the observed data in sliced
Wasserstein distance over a pool of frozen latent draws.

Each pool member freezes one latent block and minimizes
``theta -> sliced_w(simulate(theta, z), x_star)`` over the prior support
with adaptive-moment descent.  Smooth simulators supply pathwise
subgradients through the sorted coupling; the rest fall back to central
finite differences of the objective (discrete simulators substitute their
smoothed variant so the objective is continuous).  The surviving estimates
define a diagonal normal proposal with inflated pool variance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import distances, optim
from .errors import ConfigError, DimensionError, LocalizationFailure
from .seeds import derive_rng, derive_seed

__all__ = [
    "SmmConfig",
    "PoolMember",
    "EstimatePool",
    "Proposal",
    "smm_estimate",
    "smm_pool",
    "build_proposal",
]


@dataclass(frozen=True)
class SmmConfig:
    n_directions: int = 100
    iters: int = 300
    lr_start: float = 0.1
    lr_end: float = 1e-3
    lr_pieces: int = 3
    fd_step: float = 1e-4
    m_sim: int | None = None  # simulated sample size; defaults to len(x_star)


@dataclass
class PoolMember:
    theta: np.ndarray
    distance: float
    ok: bool
    iters: int
    seed: int
    sim_rows: int = 0  # simulated observations spent on this member

    def to_json(self):
        return {
            "theta": [float(v) for v in np.atleast_1d(self.theta)],
            "distance": float(self.distance),
            "ok": bool(self.ok),
            "iters": int(self.iters),
            "seed": int(self.seed),
            "sim_rows": int(self.sim_rows),
        }


@dataclass
class EstimatePool:
    members: list[PoolMember] = field(default_factory=list)

    @property
    def successes(self):
        return [m for m in self.members if m.ok]

    def thetas(self) -> np.ndarray:
        return np.array([m.theta for m in self.successes])

    def to_json(self):
        return {"members": [m.to_json() for m in self.members]}

    @staticmethod
    def from_json(obj) -> "EstimatePool":
        return EstimatePool(
            members=[
                PoolMember(
                    theta=np.array(m["theta"]),
                    distance=m["distance"],
                    ok=m["ok"],
                    iters=m["iters"],
                    seed=m["seed"],
                )
                for m in obj["members"]
            ]
        )


def _support_clip(prior, theta):
    lo = np.where(np.isfinite(prior.lo), prior.lo + 1e-9 * (1.0 + np.abs(prior.lo)), -np.inf)
    hi = np.where(np.isfinite(prior.hi), prior.hi - 1e-9 * (1.0 + np.abs(prior.hi)), np.inf)
    return np.clip(theta, lo, hi)


def _local_simulate(model, theta, z):
    if not model.smooth and hasattr(model, "smoothed_simulate"):
        return model.smoothed_simulate(theta, z)
    return model.simulate(theta, z)


class _Objective:
    """Sliced distance to x_star with frozen latents; counts simulator use."""

    def __init__(self, model, x_star, z, directions):
        self.model = model
        self.z = z
        self.dirs = directions
        x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
        self.n_obs = x_star.shape[0]
        self.obs_sorted = np.sort(x_star @ directions.T, axis=0)
        self.m_sim = z.shape[0]
        self.equal = self.m_sim == self.n_obs
        self.calls = 0

    def value(self, theta) -> float:
        self.calls += self.m_sim
        sim = _local_simulate(self.model, theta, self.z)
        proj = sim @ self.dirs.T
        if self.equal:
            return float(np.mean(np.abs(np.sort(proj, axis=0) - self.obs_sorted)))
        vals = [
            distances.w1_1d(proj[:, k], self.obs_sorted[:, k])
            for k in range(self.dirs.shape[0])
        ]
        return float(np.mean(vals))

    def value_and_grad(self, theta):
        """Pathwise subgradient; needs a smooth simulator and equal sizes."""
        self.calls += self.m_sim
        sim, jac = self.model.simulate_jac(theta, self.z)   # (m,p), (m,p,d)
        proj = sim @ self.dirs.T                             # (m, K)
        order = np.argsort(proj, axis=0, kind="stable")
        diffs = np.take_along_axis(proj, order, axis=0) - self.obs_sorted
        dist = float(np.mean(np.abs(diffs)))
        signs = np.empty_like(proj)
        np.put_along_axis(signs, order, np.sign(diffs) / self.m_sim, axis=0)
        grad = np.einsum("mk,mpd,pk->d", signs, jac, self.dirs.T)
        return dist, grad / self.dirs.shape[0]


def smm_estimate(model, prior, x_star, z, config: SmmConfig, rng) -> PoolMember:
    """Minimize the frozen-latent sliced distance from one prior start."""
    directions = distances.unit_directions(
        config.n_directions, model.data_dim, rng
    )
    objective = _Objective(model, x_star, z, directions)
    pathwise = model.smooth and objective.equal and hasattr(model, "simulate_jac")

    theta = _support_clip(prior, prior.sample(1, rng)[0])
    best_theta, best_dist = theta.copy(), objective.value(theta)
    state = optim.adam_init(
        prior.dim,
        optim.log_decay_schedule(
            config.iters, config.lr_start, config.lr_end, config.lr_pieces
        ),
    )
    it = 0
    for it in range(1, config.iters + 1):
        if pathwise:
            dist, grad = objective.value_and_grad(theta)
        else:
            grad = np.zeros(prior.dim)
            for j in range(prior.dim):
                h = config.fd_step * (1.0 + abs(theta[j]))
                tp, tm = theta.copy(), theta.copy()
                tp[j] = theta[j] + h
                tm[j] = theta[j] - h
                tp = _support_clip(prior, tp)
                tm = _support_clip(prior, tm)
                denom = tp[j] - tm[j]
                grad[j] = (objective.value(tp) - objective.value(tm)) / denom
            dist = objective.value(theta)
        if not np.isfinite(dist) or not np.all(np.isfinite(grad)):
            return PoolMember(theta=best_theta, distance=float("nan"), ok=False,
                              iters=it, seed=-1, sim_rows=objective.calls)
        if dist < best_dist:
            best_dist, best_theta = dist, theta.copy()
        state, theta = optim.adam_step(state, theta, grad)
        theta = _support_clip(prior, theta)
    final = objective.value(theta)
    if np.isfinite(final) and final < best_dist:
        best_dist, best_theta = final, theta.copy()
    return PoolMember(theta=best_theta, distance=best_dist, ok=True, iters=it,
                      seed=-1, sim_rows=objective.calls)


def smm_pool(model, prior, x_star, n_members: int, config: SmmConfig,
             seed: int) -> EstimatePool:
    """Independent pool members with seeds derived from one pool seed."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    m_sim = config.m_sim or x_star.shape[0]
    pool = EstimatePool()
    for b in range(n_members):
        member_seed = derive_seed(seed, f"member{b}")
        rng = np.random.default_rng(member_seed)
        z = model.draw_latents(m_sim, rng)
        member = smm_estimate(model, prior, x_star, z, config, rng)
        member.seed = member_seed
        pool.members.append(member)
    return pool


@dataclass
class Proposal:
    """Diagonal normal over theta, restricted to the prior support box."""

    mean: np.ndarray
    var: np.ndarray
    inflation: float
    lo: np.ndarray
    hi: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.size

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((size, self.dim))
        have = 0
        attempts = 0
        sd = np.sqrt(self.var)
        while have < size:
            want = size - have
            draw = self.mean + sd * rng.standard_normal((max(want * 2, 64), self.dim))
            attempts += draw.shape[0]
            inside = np.all((draw > self.lo) & (draw < self.hi), axis=1)
            good = draw[inside][:want]
            out[have : have + good.shape[0]] = good
            have += good.shape[0]
            if attempts > 100 * size + 1000 and have < max(1, attempts // 100):
                raise ConfigError(
                    "proposal rejection rate above 99%; localization landed "
                    "outside the prior support"
                )
        return out

    def logpdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        z2 = (theta - self.mean) ** 2 / self.var
        return -0.5 * np.sum(z2 + np.log(2.0 * np.pi * self.var), axis=1)

    def grad_logpdf(self, theta: np.ndarray) -> np.ndarray:
        theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
        if theta.shape[1] != self.dim:
            raise DimensionError("theta dimension does not match proposal")
        return -(theta - self.mean) / self.var

    def to_json(self):
        return {
            "mean": [float(v) for v in self.mean],
            "var": [float(v) for v in self.var],
            "inflation": float(self.inflation),
            "lo": [float(v) for v in self.lo],
            "hi": [float(v) for v in self.hi],
        }

    @staticmethod
    def from_json(obj) -> "Proposal":
        return Proposal(
            mean=np.array(obj["mean"]),
            var=np.array(obj["var"]),
            inflation=float(obj["inflation"]),
            lo=np.array(obj["lo"]),
            hi=np.array(obj["hi"]),
        )


def build_proposal(pool: EstimatePool, prior, inflation: float = 1.0) -> Proposal:
    """Pool mean and inflated pool variance as a diagonal normal proposal."""
    thetas = pool.thetas()
    if thetas.shape[0] < 2:
        raise LocalizationFailure(
            f"only {thetas.shape[0]} pool members converged; need at least 2"
        )
    mean = np.mean(thetas, axis=0)
    var = inflation * np.var(thetas, axis=0, ddof=1)
    floor = (1e-5 * (1.0 + np.abs(mean))) ** 2
    var = np.where(var < 1e-10, floor, var)
    return Proposal(
        mean=mean, var=var, inflation=float(inflation),
        lo=prior.lo.copy(), hi=prior.hi.copy(),
    )
