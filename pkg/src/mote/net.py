"""Feed-forward binary classifier trained from scratch with numpy.

Parameters are stored as float32; every forward/backward pass and optimizer
update is computed in float64 and rounded back on assignment.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatch, EmptyClass, StaleCache, StepOutOfRange, TrainingDiverged
from .store import LAYER_DIMS, param_count


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 128
    lr_max: float = 1e-2
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    early_stop_patience: int = 10
    early_stop_min_delta: float = 1e-4
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    seed: int = 0
    validation_fraction: float = 0.2

    def validate(self) -> None:
        positive = [self.max_epochs, self.batch_size, self.lr_max, self.beta1, self.beta2,
                    self.epsilon, self.early_stop_patience, self.pct_start, self.div_factor,
                    self.final_div_factor]
        if any(not v > 0 for v in positive) or self.weight_decay < 0 or self.early_stop_min_delta < 0:
            raise ValueError("training hyperparameters must be positive")
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError("batch_size must be an even number >= 2")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    epochs_run: int
    best_val_loss: float
    final_train_loss: float
    wall_time_seconds: float
    train_accuracy: float = float("nan")
    train_loss_history: list = field(default_factory=list)
    val_loss_history: list = field(default_factory=list)


class Mlp:
    """ReLU network ``layer_dims[0] -> ... -> 1`` with inverted dropout on hidden layers.

    Weight matrices have shape ``(fan_out, fan_in)``.
    """

    def __init__(self, weights, biases, dropout_rate: float = 0.5):
        self.weights = [np.ascontiguousarray(w, dtype=np.float32) for w in weights]
        self.biases = [np.ascontiguousarray(b, dtype=np.float32) for b in biases]
        self.dropout_rate = float(dropout_rate)
        self.version = 0
        if self.weights[-1].shape[0] != 1:
            raise ValueError("output layer must have width 1")
        for w, b in zip(self.weights, self.biases):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape does not match weight shape")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @classmethod
    def init(cls, layer_dims=LAYER_DIMS, rng=None, dropout_rate: float = 0.5) -> "Mlp":
        rng = np.random.default_rng(rng)
        ws, bs = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            ws.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs, dropout_rate)

    @classmethod
    def zeros(cls, layer_dims=LAYER_DIMS, dropout_rate: float = 0.5) -> "Mlp":
        ws = [np.zeros((o, i)) for i, o in zip(layer_dims[:-1], layer_dims[1:])]
        bs = [np.zeros(o) for o in layer_dims[1:]]
        return cls(ws, bs, dropout_rate)

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def to_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()]).astype(np.float32)

    @classmethod
    def from_flat(cls, flat, layer_dims=LAYER_DIMS, dropout_rate: float = 0.5) -> "Mlp":
        flat = np.asarray(flat, dtype=np.float32).ravel()
        if flat.size != param_count(layer_dims):
            raise ValueError(f"expected {param_count(layer_dims)} values, got {flat.size}")
        ws, bs, pos = [], [], 0
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            ws.append(flat[pos : pos + fan_in * fan_out].reshape(fan_out, fan_in))
            pos += fan_in * fan_out
            bs.append(flat[pos : pos + fan_out])
            pos += fan_out
        return cls(ws, bs, dropout_rate)

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.dropout_rate)

    def load_params(self, params) -> None:
        for dst, src in zip(self.params(), params):
            dst[...] = src
        self.version += 1

    def predict_proba(self, x) -> np.ndarray:
        logits, _ = forward(self, x)
        return expit(logits)


@dataclass
class ForwardCache:
    x: np.ndarray
    activations: list
    masks: list
    version: int
    mlp_id: int


def forward(mlp: Mlp, x, train_mode: bool = False, rng=None):
    """Return ``(logits, cache)``; a 1-d input yields a scalar logit."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != mlp.layer_dims[0]:
        raise DimensionMismatch(f"input dim {x.shape[1]} != {mlp.layer_dims[0]}")
    drop = train_mode and mlp.dropout_rate > 0
    if drop and rng is None:
        raise ValueError("train_mode with dropout requires an rng")
    keep = 1.0 - mlp.dropout_rate
    a, acts, masks = x, [], []
    n_layers = len(mlp.weights)
    for li, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = a @ w.T.astype(np.float64) + b
        if li == n_layers - 1:
            a = z
            break
        a = np.maximum(z, 0.0)
        mask = None
        if drop:
            mask = (rng.random(a.shape) < keep) / keep
            a = a * mask
        acts.append(a)
        masks.append(mask)
    logits = a[:, 0]
    cache = ForwardCache(x, acts, masks, mlp.version, id(mlp))
    return (float(logits[0]) if single else logits), cache


def backward(mlp: Mlp, cache: ForwardCache, dloss_dlogit) -> list[np.ndarray]:
    """Gradients of the batch-mean loss, ordered like :meth:`Mlp.params`."""
    if cache.mlp_id != id(mlp) or cache.version != mlp.version:
        raise StaleCache("cache does not belong to the current network parameters")
    g = np.atleast_1d(np.asarray(dloss_dlogit, dtype=np.float64))
    n = cache.x.shape[0]
    if g.shape != (n,):
        raise DimensionMismatch(f"expected {n} logit gradients, got shape {g.shape}")
    dz = g[:, None] / n
    grads = []
    inputs = [cache.x] + cache.activations
    for li in range(len(mlp.weights) - 1, -1, -1):
        a_prev = inputs[li]
        grads.append(dz.sum(axis=0))
        grads.append(dz.T @ a_prev)
        if li == 0:
            break
        da = dz @ mlp.weights[li].astype(np.float64)
        mask = cache.masks[li - 1]
        if mask is not None:
            da = da * mask
        dz = da * (cache.activations[li - 1] > 0)
    grads.reverse()  # -> W1, b1, W2, b2, ...
    return grads


def bce_with_logits(logit, label):
    """Numerically stable binary cross-entropy on logits.

    Returns ``(loss, dloss_dlogit)``, elementwise for array input.
    """
    z = np.asarray(logit, dtype=np.float64)
    y = np.asarray(label, dtype=np.float64)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0 or 1")
    loss = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    grad = expit(z) - y
    if loss.ndim == 0:
        return float(loss), float(grad)
    return loss, grad


@dataclass
class AdamState:
    t: int
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls(0, [np.zeros(p.shape) for p in params], [np.zeros(p.shape) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, cfg: TrainConfig) -> AdamState:
    """In-place Adam update with decoupled weight decay; returns ``state``."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=np.float64)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p64 = np.asarray(p, dtype=np.float64)
        p64 = p64 - lr * cfg.weight_decay * p64
        p64 = p64 - lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
        p[...] = p64
    return state


def onecycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine warm-up to ``lr_max`` then cosine annealing to ``lr_max / final_div_factor``."""
    if not 0 <= step < total_steps:
        raise StepOutOfRange(f"step {step} outside [0, {total_steps})")
    lr0 = cfg.lr_max / cfg.div_factor
    lr_end = cfg.lr_max / cfg.final_div_factor
    peak = int(round(cfg.pct_start * total_steps))
    last = total_steps - 1
    peak = min(peak, last)

    def cos_anneal(start, end, frac):
        return end + (start - end) / 2.0 * (1.0 + math.cos(math.pi * frac))

    if step <= peak:
        return cos_anneal(lr0, cfg.lr_max, step / peak) if peak > 0 else cfg.lr_max
    return cos_anneal(cfg.lr_max, lr_end, (step - peak) / (last - peak))


def _split(x: np.ndarray, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(len(x))
    n_val = int(frac * len(x))
    return x[perm[n_val:]], x[perm[:n_val]]


def _epoch_indices(n: int, need: int, rng) -> np.ndarray:
    """A shuffled pass over ``n`` rows, topped up with replacement to ``need``."""
    idx = rng.permutation(n)
    if n >= need:
        return idx[:need]
    extra = rng.integers(0, n, size=need - n)
    return rng.permutation(np.concatenate([idx, extra]))


def _mean_loss(mlp: Mlp, x: np.ndarray, y: np.ndarray) -> float:
    logits, _ = forward(mlp, x)
    loss, _ = bce_with_logits(logits, y)
    return float(loss.mean())


def train(mlp: Mlp, genuine, imposter, cfg: TrainConfig, anchors=None) -> tuple[Mlp, TrainReport]:
    """Train ``mlp`` in place on balanced batches and return the best-validation weights.

    ``anchors`` are genuine samples that always stay in the training split.
    """
    cfg.validate()
    t0 = time.perf_counter()
    genuine = np.asarray(genuine, dtype=np.float64).reshape(-1, mlp.layer_dims[0])
    imposter = np.asarray(imposter, dtype=np.float64).reshape(-1, mlp.layer_dims[0])
    n_anchor = 0 if anchors is None else len(np.atleast_2d(anchors))
    if len(genuine) + n_anchor == 0 or len(imposter) == 0:
        raise EmptyClass("both genuine and imposter sets must be nonempty")
    rng = np.random.default_rng(cfg.seed)

    g_train, g_val = _split(genuine, cfg.validation_fraction, rng)
    i_train, i_val = _split(imposter, cfg.validation_fraction, rng)
    if n_anchor:
        g_train = np.concatenate([np.atleast_2d(np.asarray(anchors, dtype=np.float64)), g_train])
    x_val = np.concatenate([g_val, i_val])
    y_val = np.concatenate([np.ones(len(g_val)), np.zeros(len(i_val))])
    x_tr = np.concatenate([g_train, i_train])
    y_tr = np.concatenate([np.ones(len(g_train)), np.zeros(len(i_train))])

    half = cfg.batch_size // 2
    steps_per_epoch = max(1, math.ceil(max(len(g_train), len(i_train)) / half))
    total_steps = cfg.max_epochs * steps_per_epoch
    y_batch = np.concatenate([np.ones(half), np.zeros(half)])

    params = mlp.params()
    state = AdamState.zeros_like(params)
    best_loss, best_params, stale = math.inf, [p.copy() for p in params], 0
    train_hist, val_hist = [], []
    step = 0
    for epoch in range(cfg.max_epochs):
        gi = _epoch_indices(len(g_train), steps_per_epoch * half, rng)
        ii = _epoch_indices(len(i_train), steps_per_epoch * half, rng)
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            sl = slice(s * half, (s + 1) * half)
            xb = np.concatenate([g_train[gi[sl]], i_train[ii[sl]]])
            logits, cache = forward(mlp, xb, train_mode=True, rng=rng)
            loss, dlogit = bce_with_logits(logits, y_batch)
            grads = backward(mlp, cache, dlogit)
            adam_step(params, grads, state, onecycle_lr(step, total_steps, cfg), cfg)
            mlp.version += 1
            epoch_loss += float(loss.mean())
            step += 1
        epoch_loss /= steps_per_epoch
        monitor = _mean_loss(mlp, x_val, y_val) if len(x_val) else epoch_loss
        if not (math.isfinite(epoch_loss) and math.isfinite(monitor)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
        train_hist.append(epoch_loss)
        val_hist.append(monitor)
        if monitor < best_loss:
            improved = monitor < best_loss - cfg.early_stop_min_delta
            best_loss = monitor
            best_params = [p.copy() for p in params]
            stale = 0 if improved else stale + 1
        else:
            stale += 1
        if stale >= cfg.early_stop_patience:
            break

    mlp.load_params(best_params)
    logits, _ = forward(mlp, x_tr)
    acc = float(np.mean((logits >= 0) == (y_tr == 1)))
    report = TrainReport(
        epochs_run=len(train_hist),
        best_val_loss=float(best_loss),
        final_train_loss=float(train_hist[-1]),
        wall_time_seconds=time.perf_counter() - t0,
        train_accuracy=acc,
        train_loss_history=train_hist,
        val_loss_history=val_hist,
    )
    return mlp, report
