"""Small dense networks with exact hand-written derivatives.

The networks here map an input ``(theta, x)`` to a vector field over theta
(score models) or ``theta`` alone to a vector (mean models, ``data_dim = 0``).
Everything a caller needs is exposed as pure functions of a flat float64
weight vector:

* ``forward`` — batched evaluation,
* ``theta_derivatives`` — the exact Jacobian with respect to the theta block
  of the input, plus its trace (divergence), via one forward-tangent pass per
  theta coordinate,
* ``eval_batch`` / ``backprop`` — an evaluation cache and its reverse pass.
  The reverse pass accepts cotangents for both outputs *and* Jacobians, so
  losses that involve divergence or Jacobian terms differentiate exactly
  (reverse mode composed over the forward-tangent pass).

Weights pack into one flat vector, layer by layer, each layer's matrix in
row-major order followed by its bias.  That order is part of the on-disk
format (see ``save_weights``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DimensionError, NumericalError

__all__ = [
    "NetSpec",
    "n_params",
    "init_weights",
    "pack",
    "unpack",
    "forward",
    "theta_derivatives",
    "eval_batch",
    "backprop",
    "EvalCache",
    "save_weights",
    "load_weights",
    "weights_to_csv",
]


# --- activations ------------------------------------------------------------
# Each entry: value, first and second derivative, all elementwise.  The elu
# branches use ``a >= 0`` so the value at exactly 0 is the right-hand limit
# for every derivative order (elu''(0) = 0).

def _tanh(a):
    return np.tanh(a)


def _tanh_d1(a):
    t = np.tanh(a)
    return 1.0 - t * t


def _tanh_d2(a):
    t = np.tanh(a)
    return -2.0 * t * (1.0 - t * t)


def _elu(a):
    return np.where(a >= 0.0, a, np.expm1(np.minimum(a, 0.0)))


def _elu_d1(a):
    return np.where(a >= 0.0, 1.0, np.exp(np.minimum(a, 0.0)))


def _elu_d2(a):
    return np.where(a >= 0.0, 0.0, np.exp(np.minimum(a, 0.0)))


ACTIVATIONS: dict[str, tuple[Callable, Callable, Callable]] = {
    "tanh": (_tanh, _tanh_d1, _tanh_d2),
    "elu": (_elu, _elu_d1, _elu_d2),
}


@dataclass(frozen=True)
class NetSpec:
    """Architecture descriptor: dims, hidden widths and activation name."""

    theta_dim: int
    data_dim: int
    hidden: tuple[int, ...]
    activation: str = "tanh"
    out_dim: int | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.theta_dim < 1 or self.data_dim < 0:
            raise DimensionError("theta_dim must be >= 1 and data_dim >= 0")
        if self.out_dim is None:
            object.__setattr__(self, "out_dim", self.theta_dim)
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @property
    def in_dim(self) -> int:
        return self.theta_dim + self.data_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(fan_out, fan_in)`` per layer, input to output."""
        dims = [self.in_dim, *self.hidden, self.out_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


def n_params(spec: NetSpec) -> int:
    return sum(o * i + o for o, i in spec.layer_shapes())


def init_weights(spec: NetSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform(+/- sqrt(6 / (fan_in + fan_out))) per layer, bias zero."""
    parts = []
    for fan_out, fan_in in spec.layer_shapes():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        parts.append(rng.uniform(-bound, bound, size=fan_out * fan_in))
        parts.append(np.zeros(fan_out))
    return np.concatenate(parts)


def unpack(spec: NetSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Flat vector -> list of (matrix, bias) views (no copies)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size != n_params(spec):
        raise DimensionError(
            f"weight vector has size {w.size}, spec needs {n_params(spec)}"
        )
    layers = []
    pos = 0
    for fan_out, fan_in in spec.layer_shapes():
        mat = w[pos : pos + fan_out * fan_in].reshape(fan_out, fan_in)
        pos += fan_out * fan_in
        bias = w[pos : pos + fan_out]
        pos += fan_out
        layers.append((mat, bias))
    return layers


def pack(spec: NetSpec, layers: list[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Inverse of ``unpack``."""
    parts = []
    for (mat, bias), (fan_out, fan_in) in zip(layers, spec.layer_shapes()):
        mat = np.asarray(mat, dtype=np.float64)
        bias = np.asarray(bias, dtype=np.float64)
        if mat.shape != (fan_out, fan_in) or bias.shape != (fan_out,):
            raise DimensionError("layer shapes do not match spec")
        parts.append(mat.ravel())
        parts.append(bias)
    return np.concatenate(parts)


def _join_inputs(spec: NetSpec, theta: np.ndarray, x: np.ndarray | None) -> np.ndarray:
    theta = np.atleast_2d(np.asarray(theta, dtype=np.float64))
    if theta.shape[1] != spec.theta_dim:
        raise DimensionError(
            f"theta has {theta.shape[1]} columns, spec.theta_dim = {spec.theta_dim}"
        )
    if spec.data_dim == 0:
        if x is not None and np.size(x) != 0:
            raise DimensionError("spec has data_dim = 0 but x was given")
        return theta
    if x is None:
        raise DimensionError("spec has data_dim > 0 but x is missing")
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape != (theta.shape[0], spec.data_dim):
        raise DimensionError(
            f"x has shape {x.shape}, expected ({theta.shape[0]}, {spec.data_dim})"
        )
    return np.concatenate([theta, x], axis=1)


@dataclass
class EvalCache:
    """Forward (and optional tangent) intermediates for one batch."""

    spec: NetSpec
    inputs: np.ndarray                     # (B, in_dim)
    pre: list[np.ndarray]                  # hidden pre-activations a_l, (B, m_l)
    act: list[np.ndarray]                  # hidden activations z_l, (B, m_l)
    outputs: np.ndarray                    # (B, out_dim)
    tan_pre: list[np.ndarray] = field(default_factory=list)   # u_l, (B, T, m_l)
    tan_act: list[np.ndarray] = field(default_factory=list)   # t_l, (B, T, m_l)
    jac: np.ndarray | None = None          # (B, out_dim, theta_dim)


def eval_batch(
    spec: NetSpec,
    w: np.ndarray,
    theta: np.ndarray,
    x: np.ndarray | None = None,
    *,
    want_jac: bool = False,
) -> EvalCache:
    """Run the network on a batch; optionally carry theta-tangents.

    With ``want_jac`` the cache holds ``jac[b, i, j] = d out_i / d theta_j``,
    computed exactly by propagating one tangent per theta coordinate.
    """
    layers = unpack(spec, w)
    f, f1, _ = ACTIVATIONS[spec.activation]
    z = _join_inputs(spec, theta, x)
    cache = EvalCache(spec=spec, inputs=z, pre=[], act=[], outputs=None)

    T = spec.theta_dim
    if want_jac:
        # tangent seed: identity on the theta block, zero on the data block
        t = np.zeros((z.shape[0], T, spec.in_dim))
        t[:, np.arange(T), np.arange(T)] = 1.0

    for mat, bias in layers[:-1]:
        a = z @ mat.T + bias
        cache.pre.append(a)
        if want_jac:
            u = t @ mat.T
            cache.tan_pre.append(u)
            t = f1(a)[:, None, :] * u
            cache.tan_act.append(t)
        z = f(a)
        cache.act.append(z)

    mat, bias = layers[-1]
    cache.outputs = z @ mat.T + bias
    if want_jac:
        # (B, T, out) -> (B, out, T)
        cache.jac = np.swapaxes(t @ mat.T, 1, 2)
    return cache


def forward(
    spec: NetSpec, w: np.ndarray, theta: np.ndarray, x: np.ndarray | None = None
) -> np.ndarray:
    """Batched network values, shape (B, out_dim)."""
    return eval_batch(spec, w, theta, x).outputs


def theta_derivatives(
    spec: NetSpec, w: np.ndarray, theta: np.ndarray, x: np.ndarray | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Exact theta-Jacobian (B, out, theta_dim) and divergence (B,).

    The divergence is the trace of the Jacobian, defined for
    ``out_dim == theta_dim``.
    """
    cache = eval_batch(spec, w, theta, x, want_jac=True)
    if spec.out_dim != spec.theta_dim:
        raise DimensionError("divergence needs out_dim == theta_dim")
    div = np.trace(cache.jac, axis1=1, axis2=2)
    return cache.jac, div


def backprop(
    spec: NetSpec,
    w: np.ndarray,
    cache: EvalCache,
    out_bar: np.ndarray,
    jac_bar: np.ndarray | None = None,
) -> np.ndarray:
    """Exact gradient of ``sum(out_bar * out) + sum(jac_bar * jac)`` in w.

    ``out_bar`` has shape (B, out_dim); ``jac_bar`` (B, out_dim, theta_dim)
    or None.  The Jacobian cotangent path runs reverse mode over the stored
    tangent pass, which is where second derivatives of the activation enter.
    """
    layers = unpack(spec, w)
    _, f1, f2 = ACTIVATIONS[spec.activation]
    out_bar = np.asarray(out_bar, dtype=np.float64)
    if out_bar.shape != cache.outputs.shape:
        raise DimensionError("out_bar shape mismatch")
    with_jac = jac_bar is not None
    if with_jac and not cache.tan_act and spec.hidden:
        raise DimensionError("cache was built without want_jac")

    grads_mat = [None] * len(layers)
    grads_bias = [None] * len(layers)

    z_prev = cache.act[-1] if spec.hidden else cache.inputs
    mat, _ = layers[-1]
    grads_mat[-1] = out_bar.T @ z_prev
    grads_bias[-1] = out_bar.sum(axis=0)
    z_bar = out_bar @ mat
    if with_jac:
        t_bar = np.swapaxes(jac_bar, 1, 2)          # (B, T, out)
        t_prev = cache.tan_act[-1] if spec.hidden else None
        if spec.hidden:
            grads_mat[-1] += np.einsum("bto,bth->oh", t_bar, t_prev)
        else:
            # affine net: jacobian = theta block of the matrix itself
            grads_mat[-1][:, : spec.theta_dim] += t_bar.sum(axis=0).T
        t_bar = t_bar @ mat                          # (B, T, m_H)

    for l in range(len(spec.hidden) - 1, -1, -1):
        a = cache.pre[l]
        d1 = f1(a)
        a_bar = d1 * z_bar
        if with_jac:
            u = cache.tan_pre[l]
            u_bar = d1[:, None, :] * t_bar
            a_bar = a_bar + f2(a) * np.einsum("btm,btm->bm", u, t_bar)
        z_prev = cache.act[l - 1] if l > 0 else cache.inputs
        mat, _ = layers[l]
        g = a_bar.T @ z_prev
        if with_jac:
            if l > 0:
                g += np.einsum("btm,btk->mk", u_bar, cache.tan_act[l - 1])
            else:
                # tangent input is the constant theta-block selector
                g[:, : spec.theta_dim] += u_bar.sum(axis=0).swapaxes(0, 1)
        grads_mat[l] = g
        grads_bias[l] = a_bar.sum(axis=0)
        z_bar = a_bar @ mat
        if with_jac:
            t_bar = u_bar @ mat

    grad = pack(spec, list(zip(grads_mat, grads_bias)))
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite value in weight gradient")
    return grad


# --- serialization ----------------------------------------------------------

_MAGIC = "scoresbi-net v1"


def save_weights(path, spec: NetSpec, w: np.ndarray) -> None:
    """Text header naming the architecture, then little-endian float64."""
    w = np.asarray(w, dtype=np.float64)
    if w.size != n_params(spec):
        raise DimensionError("weight size does not match spec")
    header = (
        f"{_MAGIC} theta_dim={spec.theta_dim} data_dim={spec.data_dim} "
        f"hidden={','.join(map(str, spec.hidden)) or '-'} "
        f"activation={spec.activation} out_dim={spec.out_dim} count={w.size}\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(w.astype("<f8").tobytes())


def load_weights(path) -> tuple[NetSpec, np.ndarray]:
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            c = fh.read(1)
            if not c or c == b"\n":
                break
            header.extend(c)
        text = header.decode("ascii")
        if not text.startswith(_MAGIC):
            raise ValueError(f"{path}: not a weight file")
        fields = dict(item.split("=", 1) for item in text[len(_MAGIC) :].split())
        hidden = fields["hidden"]
        spec = NetSpec(
            theta_dim=int(fields["theta_dim"]),
            data_dim=int(fields["data_dim"]),
            hidden=() if hidden == "-" else tuple(int(h) for h in hidden.split(",")),
            activation=fields["activation"],
            out_dim=int(fields["out_dim"]),
        )
        w = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if w.size != int(fields["count"]) or w.size != n_params(spec):
        raise ValueError(f"{path}: truncated weight payload")
    return spec, w


def weights_to_csv(path, spec: NetSpec, w: np.ndarray) -> None:
    """Human-readable dump: one weight per line with its layer position."""
    rows = ["layer,kind,row,col,value"]
    for l, (mat, bias) in enumerate(unpack(spec, w)):
        for i in range(mat.shape[0]):
            for j in range(mat.shape[1]):
                rows.append(f"{l},W,{i},{j},{float(mat[i, j])!r}")
        for i in range(bias.shape[0]):
            rows.append(f"{l},b,{i},0,{float(bias[i])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
