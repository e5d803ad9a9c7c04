"""Dense float64 MLPs with hand-written backprop and Adam.

Weights are stored (out, in) so a layer computes ``x @ W.T + b`` on a
row-major batch. Only the shapes needed by the critics/actors are supported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RELU = "relu"
SIN = "sin"
COS = "cos"
IDENTITY = "identity"
ACTIVATIONS = (RELU, SIN, COS, IDENTITY)


def _activate(z, activation):
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == SIN:
        return np.sin(z)
    if activation == COS:
        return np.cos(z)
    return z


def _activation_grad(z, activation):
    if activation == RELU:
        # subgradient at exactly 0 is taken as 0
        return z > 0.0
    if activation == SIN:
        return np.cos(z)
    if activation == COS:
        return -np.sin(z)
    return np.ones_like(z)


@dataclass
class LinearLayer:
    weights: np.ndarray
    biases: np.ndarray | None
    activation: str = RELU

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError("weights must be a 2-D (out, in) matrix")
        if self.biases is not None:
            self.biases = np.asarray(self.biases, dtype=np.float64)
            if self.biases.shape != (self.weights.shape[0],):
                raise ValueError(
                    f"bias length {self.biases.shape} does not match "
                    f"{self.weights.shape[0]} output rows"
                )

    @property
    def use_bias(self) -> bool:
        return self.biases is not None

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def params(self) -> list[np.ndarray]:
        if self.biases is None:
            return [self.weights]
        return [self.weights, self.biases]

    def preactivation(self, x):
        z = x @ self.weights.T
        if self.biases is not None:
            z = z + self.biases
        return z

    def __call__(self, x):
        return _activate(self.preactivation(x), self.activation)


def dense_layer(rng, n_in, n_out, activation=RELU, use_bias=True):
    """Fan-in uniform init, U(-1/sqrt(n_in), 1/sqrt(n_in)) for W and b."""
    bound = 1.0 / np.sqrt(n_in)
    w = rng.uniform(-bound, bound, size=(n_out, n_in))
    b = rng.uniform(-bound, bound, size=n_out) if use_bias else None
    return LinearLayer(w, b, activation)


@dataclass
class ForwardCache:
    """Everything backward() needs, plus the per-layer activations.

    ``pre[i]`` is layer i's pre-activation and ``post[i]`` its output
    (for a concat-input first layer, ``post[0]`` is sin || cos || x).
    """

    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def output(self):
        return self.post[-1]


@dataclass
class Mlp:
    layers: list[LinearLayer]
    concat_input: bool = False

    def __post_init__(self):
        if not self.layers:
            raise ValueError("an Mlp needs at least one layer")
        if self.concat_input and self.layers[0].activation != SIN:
            raise ValueError("concat-input first layer must use the sin projection")
        width = self.layers[0].out_dim
        if self.concat_input:
            width = 2 * width + self.layers[0].in_dim
        for i, layer in enumerate(self.layers[1:], start=1):
            if layer.in_dim != width:
                raise ValueError(
                    f"layer {i} expects {layer.in_dim} inputs, previous layer emits {width}"
                )
            width = layer.out_dim

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def param_names(self) -> list[str]:
        names = []
        for i, layer in enumerate(self.layers):
            names.append(f"{i}.weight")
            if layer.use_bias:
                names.append(f"{i}.bias")
        return names

    def copy(self) -> "Mlp":
        layers = [
            LinearLayer(
                l.weights.copy(),
                None if l.biases is None else l.biases.copy(),
                l.activation,
            )
            for l in self.layers
        ]
        return Mlp(layers, self.concat_input)

    def forward(self, batch) -> ForwardCache:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"batch of shape {x.shape} does not fit input dim {self.in_dim}")
        pre, post = [], []
        h = x
        for i, layer in enumerate(self.layers):
            z = layer.preactivation(h)
            if i == 0 and self.concat_input:
                h = np.concatenate([np.sin(z), np.cos(z), x], axis=1)
            else:
                h = _activate(z, layer.activation)
            pre.append(z)
            post.append(h)
        return ForwardCache(x, pre, post)

    def __call__(self, batch):
        return self.forward(batch).output

    def backward(self, cache: ForwardCache, output_grad, param_grads=True):
        """Return (parameter grads aligned with params(), grad wrt the input batch).

        With ``param_grads=False`` only the input gradient is computed and the
        first element is an empty list.
        """
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != cache.output.shape:
            raise ValueError(f"output grad {g.shape} does not match output {cache.output.shape}")
        grads: list[np.ndarray] = []
        input_grad = None
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            z = cache.pre[i]
            h_in = cache.inputs if i == 0 else cache.post[i - 1]
            if i == 0 and self.concat_input:
                k = layer.out_dim
                dz = g[:, :k] * np.cos(z) - g[:, k : 2 * k] * np.sin(z)
                passthrough = g[:, 2 * k :]
            else:
                dz = g * _activation_grad(z, layer.activation)
                passthrough = None
            if param_grads:
                layer_grads = [dz.T @ h_in]
                if layer.use_bias:
                    layer_grads.append(dz.sum(axis=0))
                grads[:0] = layer_grads
            g = dz @ layer.weights
            if passthrough is not None:
                g = g + passthrough
            if i == 0:
                input_grad = g
        return grads, input_grad


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params, lr=1e-4, **kw) -> "AdamState":
        return cls(
            [np.zeros_like(p) for p in params],
            [np.zeros_like(p) for p in params],
            lr=lr,
            **kw,
        )


def adam_step(params, grads, state: AdamState, weight_decay=0.0):
    """One Adam update, applied in place to ``params``.

    ``weight_decay`` adds ``weight_decay * W`` to the gradient of every 2-D
    parameter (weight matrices) before the moment updates; biases are left
    alone. Returns ``params``.
    """
    if weight_decay < 0:
        raise ValueError("weight_decay must be >= 0")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state must align")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} != param shape {p.shape}")
        if weight_decay and p.ndim == 2:
            g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: int
    worst_index: tuple = field(default_factory=tuple)


def grad_check(net: Mlp, batch, loss, h=1e-5, max_entries=None, rng=None) -> GradCheckReport:
    """Compare backward() against central finite differences.

    ``loss(output) -> (scalar, d scalar / d output)``. ``max_entries`` caps
    the number of checked entries per parameter (sampled with ``rng``).
    """
    cache = net.forward(batch)
    _, dout = loss(cache.output)
    analytic, _ = net.backward(cache, dout)
    worst, worst_p, worst_idx = 0.0, -1, ()
    for pi, (p, ga) in enumerate(zip(net.params(), analytic)):
        indices = list(np.ndindex(p.shape))
        if max_entries is not None and len(indices) > max_entries:
            rng = rng if rng is not None else np.random.default_rng(0)
            pick = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[j] for j in pick]
        for idx in indices:
            orig = p[idx]
            p[idx] = orig + h
            lp, _ = loss(net(batch))
            p[idx] = orig - h
            lm, _ = loss(net(batch))
            p[idx] = orig
            numeric = (lp - lm) / (2 * h)
            a = ga[idx]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst, worst_p, worst_idx = rel, pi, idx
    return GradCheckReport(float(worst), worst_p, worst_idx)


def mse_loss(target):
    """Loss closure for grad_check / supervised fits: mean squared error."""
    target = np.asarray(target, dtype=np.float64)

    def loss(out):
        diff = out - target
        return float(np.mean(diff * diff)), 2.0 * diff / diff.size

    return loss
