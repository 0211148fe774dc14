"""Shared test utilities: finite differences and small network factories."""

from __future__ import annotations

import numpy as np

from scoresbi import nets


def fd_grad(f, w, eps=1e-6, idx=None):
    """Central finite-difference gradient of scalar f at w (selected coords)."""
    w = np.asarray(w, dtype=np.float64)
    if idx is None:
        idx = np.arange(w.size)
    out = np.zeros(len(idx))
    for k, i in enumerate(idx):
        h = eps * (1.0 + abs(w[i]))
        wp = w.copy()
        wp[i] += h
        wm = w.copy()
        wm[i] -= h
        out[k] = (f(wp) - f(wm)) / (2.0 * h)
    return out


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.abs(a - b) / (np.maximum(np.abs(a), np.abs(b)) + floor)


def random_spec(rng, *, max_hidden=2, max_width=8, max_theta=4, max_data=3,
                activations=("tanh", "elu")):
    """A random small architecture within the property-test size envelope."""
    theta_dim = int(rng.integers(1, max_theta + 1))
    data_dim = int(rng.integers(0, max_data + 1))
    depth = int(rng.integers(0, max_hidden + 1))
    hidden = tuple(int(rng.integers(2, max_width + 1)) for _ in range(depth))
    act = activations[int(rng.integers(0, len(activations)))]
    return nets.NetSpec(theta_dim=theta_dim, data_dim=data_dim, hidden=hidden,
                        activation=act)


def random_net(rng, **kwargs):
    spec = random_spec(rng, **kwargs)
    w = nets.init_weights(spec, rng)
    # shift weights off the init manifold so biases are active too
    w = w + 0.3 * rng.standard_normal(w.size)
    return spec, w


def random_batch(rng, spec, size):
    theta = rng.standard_normal((size, spec.theta_dim))
    x = rng.standard_normal((size, spec.data_dim)) if spec.data_dim else None
    return theta, x


def tiny_experiment(**overrides):
    """A seconds-scale gaussian_location experiment config for pipeline tests."""
    from scoresbi import pipeline, training

    base = dict(
        model_id="gaussian_location",
        constants={"dim": 1},
        variant="naive",
        observed=pipeline.ObservedConfig(theta_star=(0.5,), n_obs=20),
        localization=pipeline.LocalizeConfig(members=3, iters=30, directions=20),
        tables=pipeline.TableConfig(n_single=200),
        training=training.TrainConfig(
            hidden=(8,), epochs_phase1=3, epochs_phase2=1, lambda_grid=(0.0, 1e-4)
        ),
        debias=training.DebiasConfig(
            epochs_phase1=40, epochs_phase2=10, lambda_grid=(0.0, 1e-4)
        ),
        sampler=pipeline.SampleConfig(
            chains=4, stage_steps=5, final_steps=30, ladder=(0.5, 1.0)
        ),
        seed=11,
    )
    base.update(overrides)
    return pipeline.ExperimentConfig(**base)
