import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mote.errors import DimensionMismatch, EmptyClass, StaleCache, StepOutOfRange
from mote.metrics import ScoreSet, auc_rank
from mote.net import (
    AdamState, Mlp, TrainConfig, adam_step, backward, bce_with_logits, forward, onecycle_lr, train,
)

SMALL = (8, 4, 2, 1)


def oracle_loss(params, x, y):
    """Independent float64 forward + mean BCE for a ReLU MLP (no dropout)."""
    a = x
    n_layers = len(params) // 2
    for k in range(n_layers):
        z = a @ params[2 * k].T + params[2 * k + 1]
        a = z if k == n_layers - 1 else np.maximum(z, 0)
    z = a[:, 0]
    return np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0) - z * y)


def fd_gradients(mlp, x, y, eps=1e-3):
    params = [p.astype(np.float64) for p in mlp.params()]
    out = []
    for p in params:
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            keep = p[idx]
            p[idx] = keep + eps
            up = oracle_loss(params, x, y)
            p[idx] = keep - eps
            down = oracle_loss(params, x, y)
            p[idx] = keep
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)


# ---- forward


def test_zero_network():
    mlp = Mlp.zeros()
    z, _ = forward(mlp, np.ones(512))
    assert z == 0.0
    assert mlp.predict_proba(np.ones((3, 512))).tolist() == [0.5] * 3


def test_eval_mode_is_deterministic():
    mlp = Mlp.init(rng=0)
    x = np.random.default_rng(1).normal(size=(4, 512))
    a, _ = forward(mlp, x)
    b, _ = forward(mlp, x)
    assert np.array_equal(a, b)


def test_single_linear_layer():
    mlp = Mlp([np.array([[2.0]])], [np.array([1.0])])
    z, _ = forward(mlp, np.array([3.0]))
    assert z == 7.0


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        forward(Mlp.zeros(), np.ones(10))


def test_dropout_is_unbiased():
    mlp = Mlp.init(SMALL, rng=0)
    x = np.random.default_rng(1).normal(size=(1, 8))
    mlp.weights[0][:] = np.abs(mlp.weights[0])  # keep the first layer active
    h_eval = np.maximum(x @ mlp.weights[0].T.astype(float) + mlp.biases[0], 0)
    rng = np.random.default_rng(2)
    acc = np.zeros_like(h_eval)
    n = 20_000
    for _ in range(n):
        _, cache = forward(mlp, x, train_mode=True, rng=rng)
        acc += cache.activations[0]
    assert np.allclose(acc / n, h_eval, rtol=0.03)


# ---- loss


def test_bce_examples():
    loss, grad = bce_with_logits(0.0, 1)
    assert loss == pytest.approx(math.log(2)) and grad == pytest.approx(-0.5)
    loss, _ = bce_with_logits(100.0, 1)
    assert 0 <= loss < 1e-40
    loss, _ = bce_with_logits(-100.0, 1)
    assert loss == pytest.approx(100.0)
    loss, grad = bce_with_logits(1.0, 0)
    assert loss == pytest.approx(math.log1p(math.e)) and loss == pytest.approx(1.3133, abs=1e-4)
    assert grad == pytest.approx(1 / (1 + math.exp(-1))) and grad == pytest.approx(0.7311, abs=1e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(-700, 700), st.sampled_from([0, 1]))
def test_bce_finite_and_matches_naive(z, y):
    loss, grad = bce_with_logits(z, y)
    assert math.isfinite(loss) and loss >= 0 and -1 <= grad <= 1
    if abs(z) < 30:
        naive = math.log1p(math.exp(z)) - y * z
        assert loss == pytest.approx(naive, rel=1e-9, abs=1e-12)


# ---- backward


def min_preactivation(mlp, x):
    a, out = x, np.inf
    for w, b in zip(mlp.weights[:-1], mlp.biases[:-1]):
        z = a @ w.T.astype(float) + b
        out = min(out, float(np.abs(z).min()))
        a = np.maximum(z, 0)
    return out


def test_gradients_match_finite_differences():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, probes = 0.0, 0
    while probes < 100:
        mlp = Mlp.init(SMALL, rng=rng, dropout_rate=0.0)
        for b in mlp.biases:
            b[:] = rng.normal(scale=0.5, size=b.shape)
        x = rng.normal(size=(5, 8))
        y = rng.integers(0, 2, size=5).astype(float)
        # central differences are meaningless across a ReLU kink
        if min_preactivation(mlp, x) < 10 * 1e-3:
            continue
        probes += 1
        logits, cache = forward(mlp, x)
        _, dl = bce_with_logits(logits, y)
        for g, f in zip(backward(mlp, cache, dl), fd_gradients(mlp, x, y)):
            worst = max(worst, float(rel_err(g, f).max()))
    assert worst <= 1e-3
    assert time.perf_counter() - t0 < 10


def test_zero_upstream_gradient():
    mlp = Mlp.init(SMALL, rng=0)
    _, cache = forward(mlp, np.ones((3, 8)))
    assert all(np.all(g == 0) for g in backward(mlp, cache, np.zeros(3)))


def test_batch_gradient_is_mean_of_singles():
    mlp = Mlp.init(SMALL, rng=3, dropout_rate=0.0)
    x = np.random.default_rng(4).normal(size=(2, 8))
    d = np.array([0.3, -0.7])
    _, c = forward(mlp, x)
    batch = backward(mlp, c, d)
    singles = []
    for i in range(2):
        _, ci = forward(mlp, x[i:i + 1])
        singles.append(backward(mlp, ci, d[i:i + 1]))
    for k, g in enumerate(batch):
        assert np.allclose(g, (singles[0][k] + singles[1][k]) / 2, atol=1e-6)


def test_stale_cache():
    mlp = Mlp.init(SMALL, rng=0)
    _, cache = forward(mlp, np.ones((2, 8)))
    mlp.load_params(mlp.params())
    with pytest.raises(StaleCache):
        backward(mlp, cache, np.ones(2))
    with pytest.raises(StaleCache):
        backward(mlp.copy(), cache, np.ones(2))


# ---- optimizer and schedule


def adam_cfg(**kw):
    return TrainConfig(**{"weight_decay": 0.0, **kw})


def test_adam_first_step():
    p = [np.array([0.0])]
    st_ = AdamState.zeros_like(p)
    adam_step(p, [np.array([1.0])], st_, 0.1, adam_cfg())
    assert p[0][0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_zero_gradient():
    p = [np.array([0.5, -2.0])]
    st_ = AdamState.zeros_like(p)
    for _ in range(5):
        adam_step(p, [np.zeros(2)], st_, 0.1, adam_cfg())
    assert p[0].tolist() == [0.5, -2.0]


def test_adam_decay_only():
    p = [np.array([1.0])]
    adam_step(p, [np.zeros(1)], AdamState.zeros_like(p), 0.1, adam_cfg(weight_decay=1e-3))
    assert p[0][0] == pytest.approx(0.9999, abs=1e-12)


def test_onecycle_values():
    cfg = TrainConfig()
    total = 1000
    assert onecycle_lr(0, total, cfg) == pytest.approx(4e-4)
    assert onecycle_lr(round(0.3 * total), total, cfg) == pytest.approx(1e-2)
    assert onecycle_lr(total - 1, total, cfg) == pytest.approx(1e-6)
    lrs = np.array([onecycle_lr(s, total, cfg) for s in range(total)])
    assert lrs.max() == pytest.approx(1e-2) and np.all(lrs > 0)
    peak = round(0.3 * total)
    assert np.all(np.diff(lrs[: peak + 1]) >= 0) and np.all(np.diff(lrs[peak:]) <= 0)
    with pytest.raises(StepOutOfRange):
        onecycle_lr(total, total, cfg)


@settings(max_examples=50, deadline=None)
@given(st.integers(20, 5000))
def test_onecycle_continuity(total):
    cfg = TrainConfig()
    lrs = np.array([onecycle_lr(s, total, cfg) for s in range(total)])
    # a cosine over k steps moves at most pi/2 * span / k per step
    peak = round(0.3 * total)
    bound = math.pi / 2 * cfg.lr_max * max(1 / peak, 1 / (total - 1 - peak))
    assert np.abs(np.diff(lrs)).max() <= bound * (1 + 1e-9)


# ---- training


def toy_clusters(n, margin, noise, seed):
    rng = np.random.default_rng(seed)
    d = rng.normal(size=512)
    d /= np.linalg.norm(d)
    g = margin * d + noise * rng.normal(size=(n, 512))
    i = -margin * d + noise * rng.normal(size=(n, 512))
    return g, i


def test_separable_toy():
    g, i = toy_clusters(200, 1.0, 0.02, 0)
    mlp, rep = train(Mlp.init(rng=0), g, i, TrainConfig(max_epochs=30))
    assert rep.train_accuracy == 1.0
    assert rep.best_val_loss < 0.05
    assert rep.epochs_run <= 30


def test_no_signal_toy():
    rng = np.random.default_rng(1)
    g, i = rng.normal(size=(300, 512)), rng.normal(size=(300, 512))
    mlp, rep = train(Mlp.init(rng=0), g, i, TrainConfig(max_epochs=30))
    assert rep.best_val_loss >= 0.6
    g2, i2 = rng.normal(size=(500, 512)), rng.normal(size=(500, 512))
    auc = auc_rank(ScoreSet(mlp.predict_proba(g2), mlp.predict_proba(i2)))
    assert abs(auc - 0.5) <= 0.1


def test_training_is_deterministic():
    g, i = toy_clusters(100, 0.5, 0.2, 3)
    cfg = TrainConfig(max_epochs=5, seed=11)
    a, _ = train(Mlp.init(rng=0), g, i, cfg)
    b, _ = train(Mlp.init(rng=0), g, i, cfg)
    assert a.to_flat().tobytes() == b.to_flat().tobytes()


def test_empty_class():
    with pytest.raises(EmptyClass):
        train(Mlp.init(rng=0), np.ones((4, 512)), np.empty((0, 512)), TrainConfig())


def test_flat_round_trip():
    mlp = Mlp.init(rng=5)
    back = Mlp.from_flat(mlp.to_flat())
    assert all(np.array_equal(a, b) for a, b in zip(mlp.params(), back.params()))


def test_loss_decreases_on_separable_toy():
    g, i = toy_clusters(200, 1.0, 0.02, 4)
    _, rep = train(Mlp.init(rng=1), g, i, TrainConfig(max_epochs=12, early_stop_patience=50))
    assert rep.train_loss_history[9] < rep.train_loss_history[0]


def test_onecycle_lr_bound():
    cfg = TrainConfig()
    for total in (10, 97, 1000, 4000):
        lrs = np.array([onecycle_lr(s, total, cfg) for s in range(total)])
        assert np.abs(np.diff(lrs)).max() <= 2 * cfg.lr_max / total * math.pi


def test_dropout_expectation_on_linear_probe():
    # positive weights and inputs keep every ReLU in its linear regime
    rng = np.random.default_rng(0)
    ws = [rng.uniform(0.1, 1, size=(o, i)) for i, o in zip(SMALL[:-1], SMALL[1:])]
    mlp = Mlp(ws, [np.zeros(o) for o in SMALL[1:]])
    x = rng.uniform(0.1, 1, size=(1, 8))
    z_eval, _ = forward(mlp, x)
    n = 10_000
    zs = np.array([forward(mlp, x, train_mode=True, rng=rng)[0][0] for _ in range(n)])
    assert abs(zs.mean() - z_eval[0]) <= 3 * zs.std() / math.sqrt(n)
