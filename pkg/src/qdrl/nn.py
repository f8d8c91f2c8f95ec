"""Small feed-forward networks with hand-written backpropagation and Adam.

Parameters live in a single flat float64 vector. The canonical layout is
layer-major; within a layer the weight matrix (fan_in x fan_out) comes first
in row-major order, followed by the bias vector::

    [W0[0,0], W0[0,1], ..., W0[in-1,out-1], b0[0], ..., b0[out-1], W1..., b1...]

Every routine also accepts a *stack* of flat vectors with shape ``(P, n)``;
inputs then carry the same leading axis, ``(P, N, fan_in)``. This is how a
whole population of policies is rolled out or mutated in one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "identity")


class DimensionError(ValueError):
    """Raised when an array does not have the size the network expects."""

    def __init__(self, what: str, expected, actual):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.what = what
        self.expected = expected
        self.actual = actual


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, index: int, value: float):
        super().__init__(f"non-finite gradient {value!r} at flat index {index}")
        self.index = index
        self.value = value


@dataclass(frozen=True)
class Architecture:
    """Layer sizes ``(input, hidden..., output)`` plus the output activation.

    Hidden layers always use tanh.
    """

    layer_sizes: tuple[int, ...]
    output_activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes!r}")
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.output_activation!r}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_offsets(self) -> list[tuple[int, int, int, int]]:
        """``(fan_in, fan_out, weight_offset, bias_offset)`` for every layer."""
        out = []
        off = 0
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            out.append((i, o, off, off + i * o))
            off += i * o + o
        return out

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "output_activation": self.output_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(tuple(d["layer_sizes"]), d["output_activation"])


@dataclass
class LayerParams:
    weights: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise DimensionError("weights ndim", 2, self.weights.ndim)
        if self.biases.shape != (self.weights.shape[1],):
            raise DimensionError("bias length", self.weights.shape[1], self.biases.shape)
        if not (np.isfinite(self.weights).all() and np.isfinite(self.biases).all()):
            raise ValueError("layer parameters must be finite")


@dataclass
class MlpParams:
    layers: list[LayerParams]
    output_activation: str = "tanh"
    hidden_activation: str = field(default="tanh", init=False)

    def __post_init__(self):
        for k in range(1, len(self.layers)):
            fan_out = self.layers[k - 1].weights.shape[1]
            fan_in = self.layers[k].weights.shape[0]
            if fan_out != fan_in:
                raise DimensionError(f"layer {k} fan_in", fan_out, fan_in)

    @property
    def architecture(self) -> Architecture:
        sizes = [self.layers[0].weights.shape[0]] + [lp.weights.shape[1] for lp in self.layers]
        return Architecture(tuple(sizes), self.output_activation)

    def __eq__(self, other):
        if not isinstance(other, MlpParams) or len(self.layers) != len(other.layers):
            return NotImplemented
        return self.output_activation == other.output_activation and all(
            np.array_equal(a.weights, b.weights) and np.array_equal(a.biases, b.biases)
            for a, b in zip(self.layers, other.layers)
        )


def flatten(params: MlpParams) -> np.ndarray:
    parts = []
    for lp in params.layers:
        parts.append(np.asarray(lp.weights, dtype=np.float64).ravel())
        parts.append(np.asarray(lp.biases, dtype=np.float64).ravel())
    return np.concatenate(parts)


def unflatten(flat: np.ndarray, arch: Architecture) -> MlpParams:
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (arch.n_params,):
        raise DimensionError("flat parameter vector", (arch.n_params,), flat.shape)
    layers = [
        LayerParams(flat[w:b].reshape(i, o).copy(), flat[b:b + o].copy())
        for i, o, w, b in arch.layer_offsets()
    ]
    return MlpParams(layers, arch.output_activation)


def init_params(arch: Architecture, rng: np.random.Generator, count: int | None = None) -> np.ndarray:
    """Fan-in scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)), weights and biases alike."""
    lead = () if count is None else (count,)
    parts = []
    for i, o, _, _ in arch.layer_offsets():
        bound = 1.0 / np.sqrt(i)
        parts.append(rng.uniform(-bound, bound, size=lead + (i * o,)))
        parts.append(rng.uniform(-bound, bound, size=lead + (o,)))
    return np.concatenate(parts, axis=-1)


def _views(flat: np.ndarray, arch: Architecture):
    lead = flat.shape[:-1]
    return [
        (flat[..., w:b].reshape(lead + (i, o)), flat[..., b:b + o])
        for i, o, w, b in arch.layer_offsets()
    ]


def _check_flat(flat: np.ndarray, arch: Architecture):
    if flat.shape[-1] != arch.n_params:
        raise DimensionError("flat parameter vector", arch.n_params, flat.shape[-1])


def forward_flat(flat: np.ndarray, arch: Architecture, x: np.ndarray, cache: bool = False):
    """Batched forward pass.

    ``flat`` has shape ``lead + (n_params,)`` and ``x`` has shape
    ``lead + (N, input_dim)``. With ``cache=True`` the list of layer inputs is
    returned as well, for use by :func:`backward_flat`.
    """
    _check_flat(flat, arch)
    if x.shape[-1] != arch.input_dim:
        raise DimensionError("input", arch.input_dim, x.shape[-1])
    acts = [x]
    h = x
    views = _views(flat, arch)
    last = len(views) - 1
    for k, (w, b) in enumerate(views):
        h = h @ w + b[..., None, :]
        if k < last or arch.output_activation == "tanh":
            h = np.tanh(h)
        acts.append(h)
    if cache:
        return h, acts
    return h


def backward_flat(flat: np.ndarray, arch: Architecture, acts: list, upstream: np.ndarray):
    """Reverse-mode pass given the cache from :func:`forward_flat`.

    Returns ``(param_grads, input_grads)``; parameter gradients are summed over
    the sample axis, so pass an upstream gradient that already carries any
    1/N averaging.
    """
    if upstream.shape != acts[-1].shape:
        raise DimensionError("upstream gradient", acts[-1].shape, upstream.shape)
    views = _views(flat, arch)
    lead = flat.shape[:-1]
    grads = [None] * (2 * len(views))
    g = upstream
    for k in range(len(views) - 1, -1, -1):
        w, _ = views[k]
        out = acts[k + 1]
        if k < len(views) - 1 or arch.output_activation == "tanh":
            g = g * (1.0 - out * out)
        grads[2 * k] = (np.swapaxes(acts[k], -1, -2) @ g).reshape(lead + (-1,))
        grads[2 * k + 1] = g.sum(axis=-2)
        g = g @ np.swapaxes(w, -1, -2)
    return np.concatenate(grads, axis=-1), g


def input_grad_flat(flat: np.ndarray, arch: Architecture, acts: list, upstream: np.ndarray) -> np.ndarray:
    """Gradient with respect to the network input only (no parameter gradients)."""
    if upstream.shape != acts[-1].shape:
        raise DimensionError("upstream gradient", acts[-1].shape, upstream.shape)
    views = _views(flat, arch)
    g = upstream
    for k in range(len(views) - 1, -1, -1):
        out = acts[k + 1]
        if k < len(views) - 1 or arch.output_activation == "tanh":
            g = g * (1.0 - out * out)
        g = g @ np.swapaxes(views[k][0], -1, -2)
    return g


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on one input vector or on a ``(N, in)`` batch."""
    arch = params.architecture
    xb, single = _as_batch(x)
    out = forward_flat(flatten(params), arch, xb)
    return out[0] if single else out


def backward(params: MlpParams, x: np.ndarray, upstream_grad: np.ndarray):
    """Gradients of ``upstream_grad . forward(params, x)``.

    Returns ``(flat param grads, input grad)``.
    """
    arch = params.architecture
    xb, single = _as_batch(x)
    ub, _ = _as_batch(upstream_grad)
    if ub.shape[-1] != arch.output_dim:
        raise DimensionError("upstream gradient", arch.output_dim, ub.shape[-1])
    flat = flatten(params)
    _, acts = forward_flat(flat, arch, xb, cache=True)
    pgrad, xgrad = backward_flat(flat, arch, acts, ub)
    return pgrad, (xgrad[0] if single else xgrad)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, lr: float) -> "AdamState":
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        return cls(np.zeros(shape), np.zeros(shape), 0, float(lr))

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.step, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step. Inputs are left untouched."""
    if not (params.shape == grads.shape == state.m.shape):
        raise DimensionError("adam operands", params.shape, (grads.shape, state.m.shape))
    finite = np.isfinite(grads)
    if not finite.all():
        idx = int(np.flatnonzero(~finite.ravel())[0])
        raise NonFiniteGradientError(idx, float(grads.ravel()[idx]))
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new, AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


def soft_update(target: np.ndarray, main: np.ndarray, tau: float) -> np.ndarray:
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    if target.shape != main.shape:
        raise DimensionError("soft update operands", target.shape, main.shape)
    return (1.0 - tau) * target + tau * main
