"""Multilayer perceptrons over flat parameter vectors."""

from dataclasses import dataclass

import numpy as np

from cnodes.diffcore import ops
from cnodes.diffcore.tape import Var, value_of
from cnodes.errors import DimensionError

ACTIVATIONS = ("tanh", "relu", "identity")
OUTPUT_ACTIVATIONS = ("identity", "softmax")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths plus activations.

    ``activation`` is either one name applied to every hidden layer or one
    name per hidden layer.  Weights are stored per layer as an (out, in)
    row-major block followed by the bias.
    """

    layer_widths: tuple
    activation: object = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ValueError(f"layer_widths needs >= 2 positive entries, got {widths}")
        object.__setattr__(self, "layer_widths", widths)
        n_hidden = len(widths) - 2
        act = self.activation
        acts = (act,) * n_hidden if isinstance(act, str) else tuple(act)
        if len(acts) != n_hidden:
            raise ValueError(f"expected {n_hidden} hidden activations, got {len(acts)}")
        for a in acts:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {self.output_activation!r}")
        object.__setattr__(self, "activation", acts)

    @property
    def n_in(self):
        return self.layer_widths[0]

    @property
    def n_out(self):
        return self.layer_widths[-1]

    @property
    def n_params(self):
        w = self.layer_widths
        return sum(w[i] * w[i + 1] + w[i + 1] for i in range(len(w) - 1))

    def layer_slices(self):
        """(weight slice, bias slice, fan_in, fan_out) per layer."""
        out, offset = [], 0
        w = self.layer_widths
        for i in range(len(w) - 1):
            n_w = w[i] * w[i + 1]
            out.append((slice(offset, offset + n_w), slice(offset + n_w, offset + n_w + w[i + 1]), w[i], w[i + 1]))
            offset += n_w + w[i + 1]
        return out

    def describe(self):
        acts = ",".join(self.activation) or "-"
        return f"mlp({'x'.join(map(str, self.layer_widths))};{acts};{self.output_activation})"


def _check(spec, params, x):
    n_p = value_of(params).shape
    if n_p != (spec.n_params,):
        raise DimensionError("mlp parameter segment length", (spec.n_params,), n_p)
    n_x = value_of(x).shape
    if not n_x or n_x[-1] != spec.n_in:
        raise DimensionError("mlp input width", spec.n_in, n_x[-1] if n_x else n_x)


def _layers(spec, params):
    for ws, bs, fan_in, fan_out in spec.layer_slices():
        yield ops.reshape(ops.getitem(params, ws), (fan_out, fan_in)), ops.getitem(params, bs)


def mlp_forward(spec, params, x):
    """Evaluate the network on ``x`` of shape (..., n_in).

    Works on plain arrays or on tape-recorded Vars; the result is recorded on
    the tape when either ``params`` or ``x`` is a Var.
    """
    _check(spec, params, x)
    h = x
    layers = list(_layers(spec, params))
    for i, (w, b) in enumerate(layers):
        h = ops.linear(h, w, b)
        if i < len(layers) - 1:
            h = _activate(spec.activation[i], h)
    if spec.output_activation == "softmax":
        h = ops.softmax(h)
    return h


def _activate(name, h):
    if name == "tanh":
        return ops.tanh(h)
    if name == "relu":
        return ops.relu(h)
    return h


def mlp_jvp(spec, params, x, tangents):
    """Forward-mode derivative of the network along several input directions.

    ``tangents`` has shape (..., m, n_in); returns ``(y, dy)`` with ``dy`` of
    shape (..., m, n_out), where ``dy[..., j, :]`` is the directional
    derivative along ``tangents[..., j, :]``.  Built from taped primitives, so
    the directional derivatives can themselves be differentiated once.
    """
    _check(spec, params, x)
    t_shape = value_of(tangents).shape
    if t_shape[-1] != spec.n_in:
        raise DimensionError("tangent width", spec.n_in, t_shape[-1])
    h, dh = x, tangents
    layers = list(_layers(spec, params))
    for i, (w, b) in enumerate(layers):
        h = ops.linear(h, w, b)
        dh = ops.matmul(dh, ops.swapaxes(w, 0, 1))
        if i < len(layers) - 1:
            act = spec.activation[i]
            if act == "tanh":
                h = ops.tanh(h)
                slope = 1.0 - h * h
            elif act == "relu":
                slope = (value_of(h) > 0).astype(np.float64)
                h = ops.relu(h)
            else:
                continue
            dh = dh * _expand_m(slope)
    if spec.output_activation == "softmax":
        p = ops.softmax(h)
        pe = _expand_m(p)
        dh = pe * (dh - ops.sum(dh * pe, axis=-1, keepdims=True))
        h = p
    return h, dh


def _expand_m(v):
    shape = value_of(v).shape
    return ops.reshape(v, shape[:-1] + (1, shape[-1]))


def jacobian(spec, params, x):
    """Jacobian d(output)/d(input) at a single input, shape (n_out, n_in)."""
    x = np.asarray(value_of(x), dtype=np.float64)
    params = np.asarray(value_of(params), dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("jacobian input rank", 1, x.ndim)
    _, dy = mlp_jvp(spec, params, x, np.eye(spec.n_in))
    return np.ascontiguousarray(dy.T)


def init_params(spec, seed):
    """Glorot-uniform weights and zero biases, reproducible from ``seed``."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(spec.n_params)
    for ws, _, fan_in, fan_out in spec.layer_slices():
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        theta[ws] = rng.uniform(-limit, limit, size=ws.stop - ws.start)
    return theta


def is_var(x):
    return isinstance(x, Var)
