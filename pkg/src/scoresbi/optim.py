"""Adaptive-moment gradient descent with a piecewise-constant step size."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = ["Schedule", "log_decay_schedule", "AdamState", "adam_init", "adam_step"]


@dataclass(frozen=True)
class Schedule:
    """Step sizes as a right-open step function of the iteration counter.

    ``values[k]`` applies while ``t < boundaries[k]``; the last value applies
    forever.  A bare float is promoted to a constant schedule.
    """

    values: tuple[float, ...]
    boundaries: tuple[int, ...] = ()

    def __post_init__(self):
        if len(self.boundaries) != len(self.values) - 1:
            raise ValueError("need len(boundaries) == len(values) - 1")
        if list(self.boundaries) != sorted(self.boundaries):
            raise ValueError("boundaries must be nondecreasing")

    def at(self, t: int) -> float:
        idx = int(np.searchsorted(np.asarray(self.boundaries), t, side="right"))
        return self.values[idx]


def log_decay_schedule(
    total_steps: int, start: float = 1e-3, end: float = 1e-5, pieces: int = 5
) -> Schedule:
    """Geometrically spaced plateaus from ``start`` down to ``end``."""
    pieces = max(1, int(pieces))
    values = tuple(np.geomspace(start, end, pieces).tolist())
    cuts = tuple(
        int(round(total_steps * k / pieces)) for k in range(1, pieces)
    )
    return Schedule(values=values, boundaries=cuts)


@dataclass
class AdamState:
    schedule: Schedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))


def adam_init(n: int, schedule: Schedule | float) -> AdamState:
    if not isinstance(schedule, Schedule):
        schedule = Schedule(values=(float(schedule),))
    return AdamState(schedule=schedule, m=np.zeros(n), v=np.zeros(n))


def adam_step(state: AdamState, w: np.ndarray, grad: np.ndarray) -> tuple[AdamState, np.ndarray]:
    """One update; returns the advanced state and the new weight vector."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.m.shape:
        raise ValueError("gradient size does not match optimizer state")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    lr = state.schedule.at(state.t)
    w_new = w - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, t=t, m=m, v=v), w_new
