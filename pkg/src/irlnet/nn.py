"""Small fully connected networks with hand-written backprop and Adam.

Float64 throughout. Inputs are batches ``(N, input_dim)``; a single vector is
promoted to a batch of one.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
HIDDEN_ACTIVATIONS = ("tanh", "relu")
OUTPUT_ACTIVATIONS = ("identity", "sigmoid", "softmax")


class ShapeError(ValueError):
    pass


class StaleCacheError(RuntimeError):
    """Raised when backward() gets a cache from before the last parameter update."""


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    hidden_activation: str = "tanh"
    output_activation: str = "identity"
    # scales the last layer's init range; 1.0 is plain Glorot-uniform
    output_gain: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if min(self.input_dim, self.output_dim, *self.hidden_dims) < 1:
            raise ShapeError("layer widths must be positive")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ValueError(f"hidden_activation must be one of {HIDDEN_ACTIVATIONS}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {OUTPUT_ACTIVATIONS}")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.output_dim]
        return list(zip(dims[:-1], dims[1:]))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


@dataclass
class Cache:
    inputs: list  # activations entering each layer
    pre: list  # pre-activations of each layer
    output: np.ndarray
    version: int

    @property
    def logits(self) -> np.ndarray:
        return self.pre[-1]


@dataclass
class MLP:
    spec: NetSpec
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    seed: int | None = None
    version: int = 0

    @classmethod
    def init(cls, spec: NetSpec, seed: int) -> "MLP":
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        dims = spec.layer_dims
        for i, (fan_in, fan_out) in enumerate(dims):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            if i == len(dims) - 1:
                limit *= spec.output_gain
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases, seed)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def param_names(self) -> list[str]:
        out = []
        for i in range(len(self.weights)):
            out += [f"layer{i}.weight", f"layer{i}.bias"]
        return out

    def copy(self) -> "MLP":
        return MLP(self.spec, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.seed, self.version)

    def _hidden(self, z):
        return np.tanh(z) if self.spec.hidden_activation == "tanh" else np.maximum(z, 0.0)

    def forward(self, x) -> tuple[np.ndarray, Cache]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.spec.input_dim:
            raise ShapeError(f"expected input (N, {self.spec.input_dim}), got {x.shape}")
        inputs, pre = [], []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            pre.append(z)
            h = self._hidden(z) if i < last else z
        act = self.spec.output_activation
        if act == "softmax":
            out = softmax(h)
        elif act == "sigmoid":
            out = sigmoid(h)
        else:
            out = h
        return out, Cache(inputs, pre, out, self.version)

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: Cache, loss_grad, wrt_logits: bool = False) -> list[np.ndarray]:
        """Parameter gradients in ``params()`` order.

        ``loss_grad`` is dL/d(output), or dL/d(logits) when ``wrt_logits``.
        """
        if cache.version != self.version:
            raise StaleCacheError("cache was produced before the last parameter update")
        g = np.asarray(loss_grad, dtype=np.float64).reshape(cache.output.shape)
        if not wrt_logits:
            act = self.spec.output_activation
            y = cache.output
            if act == "softmax":
                g = y * (g - (g * y).sum(axis=1, keepdims=True))
            elif act == "sigmoid":
                g = g * y * (1.0 - y)
        grads = [None] * (2 * len(self.weights))
        for i in range(len(self.weights) - 1, -1, -1):
            grads[2 * i] = cache.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = g @ self.weights[i].T
                if self.spec.hidden_activation == "tanh":
                    g = g * (1.0 - cache.inputs[i] ** 2)
                else:
                    g = g * (cache.pre[i - 1] > 0)
        return grads

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "spec": {**asdict(self.spec), "hidden_dims": list(self.spec.hidden_dims)},
            "seed": self.seed,
            "layers": [{"shape": list(w.shape), "weight": w.ravel().tolist(),
                        "bias": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MLP":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format {doc.get('format_version')!r}")
        spec = NetSpec(**doc["spec"])
        weights, biases = [], []
        for (fan_in, fan_out), layer in zip(spec.layer_dims, doc["layers"]):
            if tuple(layer["shape"]) != (fan_in, fan_out):
                raise ShapeError(f"layer shape {layer['shape']} does not match spec")
            weights.append(np.asarray(layer["weight"], dtype=np.float64).reshape(fan_in, fan_out))
            biases.append(np.asarray(layer["bias"], dtype=np.float64))
        if len(weights) != len(spec.layer_dims):
            raise ShapeError("layer count does not match spec")
        return cls(spec, weights, biases, doc.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "MLP":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class Adam:
    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def step(self, net: MLP, grads: list[np.ndarray]) -> None:
        """Apply one in-place update to ``net`` and bump its version."""
        params = net.params()
        if len(grads) != len(params):
            raise ShapeError(f"expected {len(params)} gradient tensors, got {len(grads)}")
        for name, p, g in zip(net.param_names(), params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient in {name}")
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.eps)
        net.version += 1


def adam_step(net: MLP, grads: list[np.ndarray], opt: Adam) -> tuple[MLP, Adam]:
    opt.step(net, grads)
    return net, opt
