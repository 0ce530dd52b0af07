import math

import numpy as np
import pytest

import dygssm.trainer as trainer_mod
from dygssm.config import RunConfig
from dygssm.errors import ConfigError, NumericError
from dygssm.graph import graph_from_edge_lists, training_negatives
from dygssm.model import ModelParams
from dygssm.ssm import AdamState, SsmState, apply_ssm_update
from dygssm.trainer import (EarlyStopping, Scorer, TrainedModel, TrainState, history_csv, inner_gradient,
                            model_config, plan_windows, predict_next, prepare_data, random_windows,
                            run_window, split_index, train)
from dygssm.walk import WalkConfig, build_cache

from toy import toy_data


def small_cfg(**kw):
    base = dict(feature_dim=8, hidden_dim=8, walks_per_node=10, delta_t=2, epochs=2, patience=5,
                val_k_neg=3, lr=1e-2)
    base.update(kw)
    return RunConfig(**base)


def ring_graph(T=8, n=12):
    rng = np.random.default_rng(0)
    lists = []
    for t in range(T):
        edges = [(i, (i + 1) % n) for i in range(n)]
        edges += [tuple(x) for x in rng.integers(0, n, size=(3, 2)).tolist() if x[0] != x[1]]
        lists.append(edges)
    g = graph_from_edge_lists(lists, n, 8)
    return g, build_cache(g, WalkConfig(walks_per_node=10), 0)


def test_windows_shift_by_one():
    assert plan_windows(10, 8).windows == (range(0, 8), range(1, 9), range(2, 10))
    w = plan_windows(12, 4).windows
    assert all(len(set(a) & set(b)) == 3 for a, b in zip(w, w[1:]))
    assert set().union(*map(set, w)) == set(range(12))
    with pytest.raises(ConfigError):
        plan_windows(3, 4)


def test_random_windows_stay_in_range():
    plan = random_windows(10, 4, np.random.default_rng(0))
    assert len(plan.windows) == 7
    for w in plan.windows:
        assert 1 <= len(w) <= 4 and w.start >= 0 and w.stop <= 10


def test_early_stopping_arithmetic():
    stop = EarlyStopping(10)
    epochs = 0
    for epoch in range(1, 101):
        epochs = epoch
        stop.update(0.3)
        if stop.should_stop:
            break
    assert epochs == 11
    stop = EarlyStopping(10)
    for epoch in range(1, 101):
        stop.update(epoch / 100)
        assert not stop.should_stop


def test_split_index():
    assert split_index(20) == 14
    assert split_index(28) == 19


def test_history_csv_format():
    rows = [{"epoch": 1, "window": 0, "snapshot": 2, "loss_fused": 0.5, "loss_global": math.nan, "val_mrr": 0.1}]
    assert history_csv(rows).splitlines() == ["epoch,window,snapshot,loss_fused,loss_global,val_mrr",
                                              "1,0,2,0.5,nan,0.1"]


def test_run_window_single_snapshot_updates_every_group():
    g, cache, data = toy_data()
    cfg = small_cfg(delta_t=1)
    mcfg = model_config(cfg, g.node_count)
    params = ModelParams.init(mcfg, np.random.default_rng(0))
    before = {k: t.data.copy() for k, t in params.tensors().items()}
    state = TrainState(params, AdamState(cfg.lr))
    run_window(range(0, 1), state, data, cfg, np.random.default_rng(0))
    assert state.adam.step == 1
    assert len(state.history) == 1 and state.history[0]["snapshot"] == 1
    for k, t in params.tensors().items():
        assert not np.array_equal(t.data, before[k]), k


def test_no_ssm_inner_update_is_plain_gradient_step(monkeypatch):
    g, cache, data = toy_data()
    cfg = small_cfg(delta_t=1, no_ssm=True, eta=0.05)
    seen = []

    def probe(params, grads, state, eta, mode):
        seen.append((dict(params), grads, state, eta, mode))
        return apply_ssm_update(params, grads, state, eta, mode)

    monkeypatch.setattr(trainer_mod, "apply_ssm_update", probe)
    mcfg = model_config(cfg, g.node_count)
    state = TrainState(ModelParams.init(mcfg, np.random.default_rng(0)), AdamState(cfg.lr))
    run_window(range(0, 1), state, data, cfg, np.random.default_rng(0))
    assert len(seen) == 1
    params, grads, ssm, eta, mode = seen[0]
    assert mode == "descent" and eta == 0.05
    assert all(np.all(s == 0) for s in ssm.states.values())
    out = apply_ssm_update(params, grads, ssm, eta, mode)
    for k in params:
        assert np.allclose(out[k].data, params[k].data - eta * grads[k])


def test_repeated_inner_steps_decrease_loss_on_fixed_graph():
    g, cache, data = toy_data()
    cfg = small_cfg()
    mcfg = model_config(cfg, g.node_count)
    params = ModelParams.init(mcfg, np.random.default_rng(0))
    d, nxt = data[1], data[1]  # same graph as input and labels at every step
    neg = training_negatives(nxt.snapshot, nxt.pos, np.random.default_rng(0))
    fast = params.gcn.tensors()
    losses = []
    for _ in range(6):
        grads, loss = inner_gradient(mcfg, params, fast, d, nxt.pos, neg)
        losses.append(loss)
        fast = apply_ssm_update(fast, grads, SsmState.zeros_like(fast, 4), 0.01)
    assert all(b <= a for a, b in zip(losses, losses[1:]))


def test_numeric_failure_leaves_parameters(monkeypatch):
    g, cache, data = toy_data()
    cfg = small_cfg(delta_t=1)
    mcfg = model_config(cfg, g.node_count)
    params = ModelParams.init(mcfg, np.random.default_rng(0))
    before = {k: t.data.copy() for k, t in params.tensors().items()}

    def boom(*a, **k):
        raise NumericError("injected")

    monkeypatch.setattr(trainer_mod, "apply_ssm_update", boom)
    state = TrainState(params, AdamState(cfg.lr))
    with pytest.raises(NumericError):
        run_window(range(0, 1), state, data, cfg, np.random.default_rng(0))
    for k, t in params.tensors().items():
        assert np.array_equal(t.data, before[k])
    assert state.adam.step == 0


def test_train_rejects_oversized_window():
    g, cache = ring_graph(T=8)
    with pytest.raises(ConfigError):
        train(g, cache, small_cfg(delta_t=4))


def test_train_is_deterministic():
    g, cache = ring_graph()
    cfg = small_cfg(epochs=2)
    m1, h1 = train(g, cache, cfg)
    m2, h2 = train(g, cache, cfg)
    assert history_csv(h1) == history_csv(h2)
    for k, t in m1.params.tensors().items():
        assert np.array_equal(t.data, m2.params.tensors()[k].data)


def test_train_history_and_epoch_cap():
    g, cache = ring_graph()
    cfg = small_cfg(epochs=3, patience=10)
    _, hist = train(g, cache, cfg)
    assert {r["epoch"] for r in hist} == {1, 2, 3}
    # 8 snapshots -> 5 training, 3 sources, delta_t 2 -> 2 windows of 2 look-aheads
    assert len(hist) == 3 * 2 * 2
    assert all(np.isfinite(r["val_mrr"]) for r in hist)


def test_early_stop_in_train(monkeypatch):
    import dygssm.evaluation as ev
    g, cache = ring_graph()
    monkeypatch.setattr(ev, "validation_mrr", lambda *a, **k: 0.5)
    _, hist = train(g, cache, small_cfg(epochs=50, patience=3))
    assert max(r["epoch"] for r in hist) == 4


def test_zero_embeddings_score_half():
    scorer = Scorer(np.zeros((4, 3)))
    assert scorer(0, 1) == 0.5
    assert np.all(scorer.logits([[0, 1], [2, 3]]) == 0)


def test_predict_next_uses_snapshot_embeddings():
    g, cache, data = toy_data()
    mcfg = model_config(small_cfg(), g.node_count)
    model = TrainedModel(ModelParams.init(mcfg, np.random.default_rng(0)), mcfg)
    s = predict_next(model, data[1])
    assert s.fused.shape == (12, 8)
    assert 0 < s(0, 11) < 1
