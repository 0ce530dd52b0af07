"""Acceptance criteria, one printed pass/fail line each.

Criteria 6 and 7 train real models and take several minutes on one CPU.
Criterion 10 runs only when DYGSSM_UCI points at a local UCI edge list.
"""

import os
import time
import warnings
from fractions import Fraction

import numpy as np
import pytest

from dygssm.cli import main
from dygssm.config import RunConfig
from dygssm.evaluation import evaluate
from dygssm.graph import load_dataset
from dygssm.metrics import (auc, average_precision, mrr, rank_positive, recall_at_k,
                            uniform_rank_mrr_mc)
from dygssm.model import gru_param_count
from dygssm.ssm import SsmState, hippo_matrix, ssm_step
from dygssm.synthetic import SyntheticSpec, generate_synthetic
from dygssm.trainer import prepare_data, split_index, train
from dygssm.walk import WalkConfig, build_cache, walk_summary

from test_metrics import auc_oracle, random_cases, rank_oracle
from test_ssm import hippo_oracle
from test_walk import EDGES, max_z_score
from toy import loss_fns, toy_data, toy_params

# settings for the synthetic experiment; the optimizer values are overrides, see the README
SYNTH = dict(delta_t=4, epochs=50, patience=50, lr=3e-3, eta=0.01)
K_NEG = 50


def report(capsys, n, name, ok, detail):
    with capsys.disabled():
        print(f"\n[{ok}] criterion {n} {name}: {detail}")


def verdict(ok):
    return "PASS" if ok else "FAIL"


def test_1_hippo_exactness(capsys):
    t0 = time.perf_counter()
    exact = all(hippo_matrix(n).tolist() == hippo_oracle(n) for n in range(1, 9))
    n3 = hippo_matrix(3).tolist() == [[2, 0, 0], [-3, 2, 0], [5, -5, 2]]
    dt = time.perf_counter() - t0
    ok = exact and n3 and dt < 1.0
    report(capsys, 1, "HiPPO exactness", verdict(ok), f"n=1..8 exact={exact}, n=3 case={n3}, {dt:.3f}s (< 1s)")
    assert ok


def test_2_gradient_fidelity(capsys):
    from dygssm.autodiff import grad_check
    t0 = time.perf_counter()
    _, _, data = toy_data()
    errors = {}
    for variant in ("full", "light"):
        cfg, params = toy_params(variant)
        fused, global_ = loss_fns(cfg, params, data)
        fused_params = list(params.group("gcn").values()) + list(params.group("attn").values())
        errors[f"{variant} fused"] = grad_check(fused, fused_params, h=1e-5)
        errors[f"{variant} global"] = grad_check(global_, params.group("gru").values(), h=1e-5)
    dt = time.perf_counter() - t0
    worst = max(errors.values())
    ok = worst < 1e-4 and dt < 30
    report(capsys, 2, "gradient fidelity", verdict(ok),
           f"max relative error {worst:.2e} (< 1e-4), {dt:.1f}s (< 30s)")
    assert ok


def _exact_ap(scores, labels):
    n_pos = sum(labels)
    out, prev = Fraction(0), Fraction(0)
    for thr in sorted(set(scores), reverse=True):
        picked = [y for s, y in zip(scores, labels) if s >= thr]
        recall = Fraction(sum(picked), n_pos)
        out += (recall - prev) * Fraction(sum(picked), len(picked))
        prev = recall
    return out


def test_3_metric_oracles(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = {False: 0.0, True: 0.0}
    exact_distinct = True
    for ties in (False, True):
        cases = random_cases(rng, 100, ties)
        ranks = [rank_oracle(c.positive, list(c.negatives)) for c in cases]
        ok_ranks = [rank_positive(c) for c in cases] == ranks
        ref_mrr = sum(Fraction(1, r) for r in ranks) / len(ranks)
        ref_recall = Fraction(sum(r <= 10 for r in ranks), len(ranks))
        worst[ties] = max(worst[ties], abs(mrr(cases) - float(ref_mrr)),
                          abs(recall_at_k(cases, 10) - float(ref_recall)))
        exact_distinct &= ok_ranks
        for _ in range(100):
            n = int(rng.integers(2, 40))
            y = rng.integers(0, 2, size=n)
            y[0], y[1] = 0, 1
            s = rng.integers(0, 6, size=n).astype(float) if ties else rng.random(n)
            a, a_ref = auc(s, y), auc_oracle(s.tolist(), y.tolist())
            ap_ref = float(_exact_ap(s.tolist(), y.tolist()))
            if not ties:
                exact_distinct &= a == a_ref
            worst[ties] = max(worst[ties], abs(a - a_ref), abs(average_precision(s, y) - ap_ref))
    dt = time.perf_counter() - t0
    # float AP sums in a different order than the rational oracle: allow rounding only
    ok = exact_distinct and worst[False] <= 1e-15 and worst[True] <= 1e-12 and dt < 5
    report(capsys, 3, "metric oracles", verdict(ok),
           f"ranks and AUC exact={exact_distinct}, max deviation distinct {worst[False]:.1e} "
           f"ties {worst[True]:.1e} (<= 1e-12), {dt:.2f}s (< 5s)")
    assert ok


def test_4_walk_correctness(capsys):
    t0 = time.perf_counter()
    z = max_z_score(EDGES)
    import scipy.sparse as sp
    chain = sp.csr_matrix(np.eye(6, k=1))
    forced = walk_summary(chain, 0, WalkConfig(), np.random.default_rng(0)) == [1, 2, 3, 4, 5]
    dt = time.perf_counter() - t0
    ok = z < 3 and forced and dt < 10
    report(capsys, 4, "walk correctness", verdict(ok),
           f"max z-score {z:.2f} over 100,000 steps (< 3), forced chain={forced}, {dt:.1f}s (< 10s)")
    assert ok


def test_5_ssm_block_equivalence(capsys):
    rng = np.random.default_rng(5)
    worst = 0.0
    for shape in [(1, 1), (2, 3), (4, 4), (5, 7), (8, 8), (1, 64)]:
        size = int(np.prod(shape))
        s0, g = rng.normal(size=shape), rng.normal(size=shape)
        out = ssm_step(SsmState(size, {"w": s0}), {"w": g}, 0.7).states["w"]
        dense = np.array(hippo_oracle(size), dtype=np.float64) @ s0.ravel() + 0.7 * g.ravel()
        worst = max(worst, float(np.max(np.abs(out.ravel() - dense))))
    g = rng.normal(size=(3, 5))
    first = np.array_equal(ssm_step(SsmState.zeros_like({"w": g}, 4), {"w": g}, 1.3).states["w"], 1.3 * g)
    ok = worst <= 1e-12 and first
    report(capsys, 5, "SSM block equivalence", verdict(ok),
           f"max |blockwise - dense| {worst:.1e} (<= 1e-12), s_1 = weight*G exact={first}")
    assert ok


_runs: dict = {}


def synthetic_run(seed, **kw):
    key = (seed, tuple(sorted(kw.items())))
    if key not in _runs:
        syn = generate_synthetic(SyntheticSpec(nodes=60, snapshots=20, planted=40, noise=0.002), seed)
        cache = build_cache(syn.graph, WalkConfig(), seed)
        data = prepare_data(syn.graph, cache)
        model, _ = train(syn.graph, cache, RunConfig(seed=seed, **{**SYNTH, **kw}), data)
        n_train = split_index(len(syn.graph))
        _runs[key] = evaluate(model, data, range(n_train, len(syn.graph)), k_neg=K_NEG, seed=seed)
    return _runs[key]


def test_6_synthetic_learning(capsys):
    t0 = time.perf_counter()
    reports = [synthetic_run(seed) for seed in range(3)]
    dt = time.perf_counter() - t0
    mean_auc = float(np.mean([r.auc for r in reports]))
    mean_mrr = float(np.mean([r.mrr for r in reports]))
    baseline = uniform_rank_mrr_mc(K_NEG, 200_000, np.random.default_rng(0))
    ok_auc, ok_mrr = mean_auc >= 0.85, mean_mrr >= 3 * baseline
    ok = ok_auc and ok_mrr and dt < 300
    report(capsys, 6, "synthetic learning", verdict(ok),
           f"AUC {mean_auc:.3f} (>= 0.85: {verdict(ok_auc)}), MRR {mean_mrr:.3f} "
           f"(>= 3 x {baseline:.4f} = {3 * baseline:.3f}: {verdict(ok_mrr)}), {dt:.0f}s (< 300s)")
    assert ok


def test_7_ablation_direction(capsys):
    full = float(np.mean([synthetic_run(seed).mrr for seed in range(5)]))
    plain = float(np.mean([synthetic_run(seed, no_ssm=True).mrr for seed in range(5)]))
    ok = full >= plain
    # advisory: seed variance makes this a reported direction, not a hard failure
    report(capsys, 7, "ablation direction (advisory)", verdict(ok),
           f"mean MRR full {full:.3f} vs no_ssm {plain:.3f} over 5 seeds")
    if not ok:
        warnings.warn(f"full model MRR {full:.3f} below no_ssm {plain:.3f}")


def test_8_light_gru_economy(capsys):
    dims = [(d_in, d_h) for d_in in (1, 8, 64) for d_h in (1, 8, 64)]
    ok = all(gru_param_count(a, b, "light") < gru_param_count(a, b, "full") for a, b in dims)
    report(capsys, 8, "light GRU economy", verdict(ok),
           f"light < full at 9 dimension pairs, d=64: {gru_param_count(64, 64, 'light')} "
           f"vs {gru_param_count(64, 64, 'full')}")
    assert ok


def test_9_determinism(tmp_path, capsys):
    run = tmp_path / "run"
    small = ["--syn-nodes", "30", "--syn-snapshots", "10", "--syn-planted", "15",
             "--feature-dim", "16", "--hidden-dim", "16", "--walks-per-node", "10"]
    assert main(["synth", "--out-dir", str(run), "--seed", "0"] + small) == 0
    assert main(["train", "--out-dir", str(run), "--seed", "0", "--delta-t", "3", "--epochs", "3"]) == 0
    seed0 = run / "seed_0"
    first = [(seed0 / f).read_bytes() for f in ("history.csv", "checkpoint.zip")]
    resolved = tmp_path / "resolved.txt"
    resolved.write_bytes((seed0 / "config.txt").read_bytes())
    assert main(["train", "--config", str(resolved), "--seed", "0"]) == 0
    second = [(seed0 / f).read_bytes() for f in ("history.csv", "checkpoint.zip")]
    ok = first == second
    report(capsys, 9, "determinism", verdict(ok), "history.csv and checkpoint.zip bit-identical on rerun")
    assert ok


def test_10_uci_stretch(capsys):
    path = os.environ.get("DYGSSM_UCI")
    if not path:
        report(capsys, 10, "UCI stretch (non-binding)", "SKIP", "set DYGSSM_UCI to a local UCI edge list")
        pytest.skip("UCI data not available")
    cfg = RunConfig(dataset=path)
    graph = load_dataset(path, feature_dim=cfg.feature_dim)
    cache = build_cache(graph, WalkConfig(), 0)
    data = prepare_data(graph, cache)
    model, _ = train(graph, cache, cfg, data)
    n_train = split_index(len(graph))
    rep = evaluate(model, data, range(n_train, len(graph)), k_neg=cfg.k_neg, seed=0)
    report(capsys, 10, "UCI stretch (non-binding)", "PASS" if rep.auc >= 0.90 else "BELOW TARGET",
           f"AUC {rep.auc:.4f} MRR {rep.mrr:.4f}; reference 0.9695 AUC, 0.2428 MRR; target AUC >= 0.90")
