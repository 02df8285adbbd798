from dataclasses import dataclass, field

import numpy as np

from .._env import DEFAULT_DTYPE


@dataclass
class LayerParams:
    """Weights, biases, their gradients and Adam moments for one layer.

    Conv weights are stored (kh, kw, c_in, c_out); fully connected weights
    are stored (out, in) so that ``y = W @ x + b``.
    """

    kind: str  # "conv" or "fc"
    weights: np.ndarray
    biases: np.ndarray
    grad_weights: np.ndarray = field(default=None, repr=False)
    grad_biases: np.ndarray = field(default=None, repr=False)
    m_weights: np.ndarray = field(default=None, repr=False)
    m_biases: np.ndarray = field(default=None, repr=False)
    v_weights: np.ndarray = field(default=None, repr=False)
    v_biases: np.ndarray = field(default=None, repr=False)
    step_count: int = 0
    grads_fresh: bool = False

    def __post_init__(self):
        if self.kind not in ("conv", "fc"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for name, like in (("grad_weights", self.weights), ("grad_biases", self.biases),
                           ("m_weights", self.weights), ("m_biases", self.biases),
                           ("v_weights", self.weights), ("v_biases", self.biases)):
            cur = getattr(self, name)
            if cur is None:
                setattr(self, name, np.zeros_like(like))
            elif cur.shape != like.shape:
                raise ValueError(f"{name} shape {cur.shape} != {like.shape}")

    @property
    def fan_in(self) -> int:
        if self.kind == "fc":
            return self.weights.shape[1]
        kh, kw, cin, _ = self.weights.shape
        return kh * kw * cin

    @property
    def size(self) -> int:
        return self.weights.size + self.biases.size

    def zero_grad(self):
        self.grad_weights.fill(0)
        self.grad_biases.fill(0)
        self.grads_fresh = False

    def astype(self, dtype) -> "LayerParams":
        return LayerParams(
            self.kind,
            self.weights.astype(dtype), self.biases.astype(dtype),
            self.grad_weights.astype(dtype), self.grad_biases.astype(dtype),
            self.m_weights.astype(dtype), self.m_biases.astype(dtype),
            self.v_weights.astype(dtype), self.v_biases.astype(dtype),
            self.step_count, self.grads_fresh,
        )


def xavier_init(shape, fan_in, fan_out, rng, dtype=DEFAULT_DTYPE):
    """Glorot-uniform samples in [-a, a] with a = sqrt(6 / (fan_in + fan_out))."""
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fan_in and fan_out must be positive")
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(dtype)


def conv_params(c_in, c_out, rng, k=3, dtype=DEFAULT_DTYPE):
    w = xavier_init((k, k, c_in, c_out), k * k * c_in, k * k * c_out, rng, dtype)
    return LayerParams("conv", w, np.zeros(c_out, dtype=dtype))


def fc_params(n_in, n_out, rng, dtype=DEFAULT_DTYPE):
    w = xavier_init((n_out, n_in), n_in, n_out, rng, dtype)
    return LayerParams("fc", w, np.zeros(n_out, dtype=dtype))
