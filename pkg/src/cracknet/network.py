"""The fixed crack-detection CNN and its training loop.

Layer plan: conv16, conv16, pool, conv32, conv32, pool, FC64, FC64, FC(s*s).
Convolutions are 3x3, stride 1, zero padding 1; pooling is 2x2 stride 2
with floor semantics, so a 27x27 patch flattens to 6*6*32 = 1152 units.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from ._env import DEFAULT_DTYPE
from .core import layers as L
from .core.loss import EPS, LossReport, l2_penalty, sigmoid_cross_entropy_grad, squared_weight_sum
from .core.optim import adam_step
from .core.params import conv_params, fc_params
from .dataset import epoch_permutation

log = logging.getLogger(__name__)

CONV_WIDTHS = (16, 16, 32, 32)
FC_WIDTHS = (64, 64)


class NumericAbort(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class NetworkConfig:
    input_channels: int = 3
    h: int = 13
    s: int = 5
    dropout_p: float = 0.5
    beta: float = 0.0005

    def __post_init__(self):
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")
        if self.h < 2 or self.s < 1 or self.s % 2 == 0:
            raise ValueError(f"invalid geometry h={self.h}, s={self.s} (need h >= 2 and odd s)")
        if self.s > 2 * self.h + 1:
            raise ValueError(f"output structure s={self.s} larger than the patch side {2 * self.h + 1}")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def patch_side(self) -> int:
        return 2 * self.h + 1

    @property
    def n_outputs(self) -> int:
        return self.s * self.s


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 256
    iterations: int = 30000
    beta: float = 0.0005
    dropout_p: float = 0.5
    seed: int = 0
    checkpoint_every: int = 1000

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.iterations < 0:
            raise ValueError("learning_rate and batch_size must be positive, iterations non-negative")
        if self.beta < 0 or not 0 <= self.dropout_p < 1:
            raise ValueError("beta must be >= 0 and dropout_p in [0, 1)")


@dataclass
class Model:
    config: NetworkConfig
    layers: list  # LayerParams: conv1..conv4, fc1..fc3
    iterations_done: int = 0
    seed: int = 0
    ratio: float = float("nan")

    @property
    def dtype(self):
        return self.layers[0].weights.dtype

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.layers)

    def astype(self, dtype) -> "Model":
        return Model(self.config, [p.astype(dtype) for p in self.layers],
                     self.iterations_done, self.seed, self.ratio)


def flatten_size(config: NetworkConfig) -> int:
    side = config.patch_side
    for _ in range(2):
        if side < 2:
            raise ValueError(f"patch side {config.patch_side} too small for two 2x2 poolings")
        side = (side - 2) // 2 + 1
    return side * side * CONV_WIDTHS[-1]


def build_network(config: NetworkConfig, seed=0, dtype=DEFAULT_DTYPE) -> Model:
    rng = np.random.default_rng(seed)
    c = config.input_channels
    convs = []
    for width in CONV_WIDTHS:
        convs.append(conv_params(c, width, rng, dtype=dtype))
        c = width
    n_in = flatten_size(config)
    fcs = []
    for width in FC_WIDTHS + (config.n_outputs,):
        fcs.append(fc_params(n_in, width, rng, dtype=dtype))
        n_in = width
    return Model(config, convs + fcs, seed=seed)


def forward(model: Model, x, training=False, rng=None, keep_cache=False, shapes=None):
    """Run a batch (N, P, P, C) or a single patch (P, P, C) through the network.

    Returns sigmoid outputs of length s*s per sample. With ``keep_cache`` the
    second return value holds everything :func:`backward` needs. A list
    passed as ``shapes`` receives the per-sample shape after every stage.
    """
    x = np.asarray(x, dtype=model.dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    cfg = model.config
    expected = (cfg.patch_side, cfg.patch_side, cfg.input_channels)
    if x.shape[1:] != expected:
        raise ValueError(f"patch shape {x.shape[1:]} does not match network input {expected}")
    if training and cfg.dropout_p > 0 and rng is None:
        raise ValueError("training mode with dropout needs an rng")

    record = shapes.append if shapes is not None else (lambda shape: None)
    c1, c2, c3, c4, f1, f2, f3 = model.layers
    caches = []
    a = x
    for conv in (c1, c2):
        z, cc = L.conv2d_forward(a, conv, 1, 1)
        a = L.relu(z)
        caches.append((cc, z))
        record(a.shape[1:])
    a, pc1 = L.maxpool_forward(a, 2, 2)
    record(a.shape[1:])
    for conv in (c3, c4):
        z, cc = L.conv2d_forward(a, conv, 1, 1)
        a = L.relu(z)
        caches.append((cc, z))
        record(a.shape[1:])
    a, pc2 = L.maxpool_forward(a, 2, 2)
    record(a.shape[1:])
    pooled_shape = a.shape
    a = a.reshape(a.shape[0], -1)
    record(a.shape[1:])
    fc_caches = []
    for fc in (f1, f2):
        z, fcc = L.fc_forward(a, fc)
        a = L.relu(z)
        a, mask = L.dropout(a, cfg.dropout_p, rng, training=training)
        fc_caches.append((fcc, z, mask))
        record(a.shape[1:])
    logits, fcc3 = L.fc_forward(a, f3)
    out = L.sigmoid(logits)
    record(out.shape[1:])
    cache = None
    if keep_cache:
        cache = dict(convs=caches, pools=(pc1, pc2), pooled_shape=pooled_shape, fcs=fc_caches, fc3=fcc3)
    if single:
        out = out[0]
    return (out, cache) if keep_cache else out


def backward(model: Model, grad_logits, cache):
    """Backpropagate d(loss)/d(logits) through the cached forward pass."""
    c1, c2, c3, c4, f1, f2, f3 = model.layers
    g = L.fc_backward(grad_logits, cache["fc3"], f3)
    for fc, (fcc, z, mask) in zip((f2, f1), reversed(cache["fcs"])):
        g = L.dropout_backward(g, mask)
        g = L.relu_backward(g, z)
        g = L.fc_backward(g, fcc, fc)
    g = g.reshape(cache["pooled_shape"])
    pc1, pc2 = cache["pools"]
    convs = cache["convs"]
    g = L.maxpool_backward(g, pc2)
    for conv, (cc, z) in zip((c4, c3), (convs[3], convs[2])):
        g = L.relu_backward(g, z)
        g = L.conv2d_backward(g, cc, conv)
    g = L.maxpool_backward(g, pc1)
    g = L.relu_backward(g, convs[1][1])
    g = L.conv2d_backward(g, convs[1][0], c2)
    g = L.relu_backward(g, convs[0][1])
    L.conv2d_backward(g, convs[0][0], c1, need_input_grad=False)


def batch_loss(model: Model, x, y, training=False, rng=None, beta=None):
    """Forward + backward on one batch; gradients are left in the layers.

    The loss is the batch mean of the per-sample s*s-unit cross entropy;
    the weight-decay term is added once per batch.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.ndim == 3:
        x, y = x[None], y[None]
    if len(x) == 0:
        raise ValueError("empty batch")
    beta = model.config.beta if beta is None else beta
    for p in model.layers:
        p.zero_grad()
    pred, cache = forward(model, x, training=training, rng=rng, keep_cache=True)
    yd = y.reshape(pred.shape).astype(pred.dtype)
    pc = np.clip(pred.astype(np.float64), EPS, 1 - EPS)
    ce = float(-(yd * np.log(pc) + (1 - yd) * np.log1p(-pc)).sum()) / len(x)
    backward(model, sigmoid_cross_entropy_grad(pred, yd), cache)
    penalty = 0.5 * squared_weight_sum(model.layers)
    l2_penalty(model.layers, beta)
    return LossReport(ce, penalty, ce + beta * penalty, beta), pred


@dataclass
class TrainingTrace:
    rows: list = field(default_factory=list)  # (iteration, L, penalty, L')
    checkpoint_times: list = field(default_factory=list)  # (iteration, seconds since start)

    def __len__(self):
        return len(self.rows)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("iteration,L,penalty,L_total\n")
            for it, ce, pen, tot in self.rows:
                fh.write(f"{it},{ce!r},{pen!r},{tot!r}\n")


class ArraySamples:
    """In-memory labelled patches; the minimal sample source ``train`` accepts."""

    def __init__(self, x, y):
        self.x = np.asarray(x)
        self.y = np.asarray(y)
        if len(self.x) != len(self.y):
            raise ValueError("x and y lengths differ")

    def __len__(self):
        return len(self.x)

    def batch(self, idx):
        return self.x[idx], self.y[idx]


def train(model: Model, samples, cfg: TrainConfig, on_checkpoint=None, progress_every=0):
    """Run ``cfg.iterations`` Adam steps on batches drawn from ``samples``.

    ``samples`` needs ``len()`` and ``batch(indices) -> (x, y)``. Batches and
    dropout masks depend only on (seed, global iteration), so resuming a
    model that has ``iterations_done > 0`` continues the same sequence.
    """
    n = len(samples)
    if n == 0:
        raise ValueError("no training samples")
    if cfg.beta != model.config.beta or cfg.dropout_p != model.config.dropout_p:
        model.config = NetworkConfig(model.config.input_channels, model.config.h, model.config.s,
                                     cfg.dropout_p, cfg.beta)
    per_epoch = -(-n // cfg.batch_size)
    trace = TrainingTrace()
    t0 = time.perf_counter()
    perm, perm_epoch = None, -1
    start = model.iterations_done
    for it in range(start, start + cfg.iterations):
        epoch, pos = divmod(it, per_epoch)
        if epoch != perm_epoch:
            perm, perm_epoch = epoch_permutation(n, cfg.seed, epoch), epoch
        idx = np.sort(perm[pos * cfg.batch_size:(pos + 1) * cfg.batch_size])
        x, y = samples.batch(idx)
        rng = np.random.default_rng([cfg.seed, it, 0xD20])
        report, _ = batch_loss(model, x, y, training=True, rng=rng, beta=cfg.beta)
        if not np.isfinite(report.total):
            raise NumericAbort(
                f"non-finite loss at iteration {it}: L={report.cross_entropy} penalty={report.penalty} "
                f"batch={len(x)} x[min,max]=[{np.min(x):.3g},{np.max(x):.3g}] positives={int(np.sum(y))}")
        for p in model.layers:
            adam_step(p, cfg.learning_rate)
        model.iterations_done = it + 1
        trace.rows.append((it, report.cross_entropy, report.penalty, report.total))
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iter %d  L=%.4f  L'=%.4f  (%.1fs)", it + 1, report.cross_entropy, report.total,
                     time.perf_counter() - t0)
        last = it == start + cfg.iterations - 1
        if on_checkpoint is not None and cfg.checkpoint_every and ((it + 1) % cfg.checkpoint_every == 0 or last):
            on_checkpoint(model, it + 1)
            trace.checkpoint_times.append((it + 1, time.perf_counter() - t0))
    return model, trace


def predict(model: Model, x, batch_size=1024):
    """Inference-mode outputs for many patches, evaluated in mini-batches."""
    x = np.asarray(x)
    out = np.empty((len(x), model.config.n_outputs), dtype=model.dtype)
    for i in range(0, len(x), batch_size):
        out[i:i + batch_size] = forward(model, x[i:i + batch_size])
    return out
