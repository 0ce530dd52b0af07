"""Sliding-window training with state-space inner updates.

A training example at time ``t`` pairs the graph of snapshot ``t`` with the
edges of snapshot ``t + 1``.  Inside a window each example takes one inner
step on the GCN parameters (gradient of its fused loss, gated by the SSM
state), and the adapted parameters are scored on the following example.
Those look-ahead losses are averaged and a single Adam step is applied to
the parameters the window started from.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor, add, backward, no_grad, scale
from .config import RunConfig
from .errors import ConfigError, NumericError
from .graph import DynamicGraph, Snapshot, normalize_adjacency, training_negatives
from .model import Embeddings, ModelConfig, ModelParams, bce_loss, embed, encode_global, node_features
from .ssm import AdamState, SsmState, adam_step, apply_ssm_update, dynamic_weight, ssm_step
from .walk import WalkCache

log = logging.getLogger(__name__)


@dataclass
class SnapshotData:
    snapshot: Snapshot
    adj: object  # normalized adjacency (sparse)
    seq: np.ndarray
    mask: np.ndarray
    pos: np.ndarray


def prepare_data(graph: DynamicGraph, cache: WalkCache) -> list[SnapshotData]:
    out = []
    for s in graph.snapshots:
        seq, mask = cache.sequences(s)
        out.append(SnapshotData(s, normalize_adjacency(s).matrix, seq, mask, s.positive_edges()))
    return out


def model_config(cfg: RunConfig, num_nodes: int) -> ModelConfig:
    return ModelConfig(num_nodes, cfg.feature_dim, cfg.hidden_dim, cfg.activation, cfg.features,
                       cfg.light_gru, cfg.no_global, cfg.no_cross_attention)


# --------------------------------------------------------------------- windows


@dataclass(frozen=True)
class WindowPlan:
    delta_t: int
    windows: tuple[range, ...]


def plan_windows(n: int, delta_t: int) -> WindowPlan:
    """Windows ``[w, w + delta_t)`` over ``n`` snapshots, shifted by one."""
    if delta_t < 1:
        raise ConfigError(f"window size must be >= 1, got {delta_t}")
    if delta_t > n:
        raise ConfigError(f"window size {delta_t} exceeds the {n} available snapshots")
    return WindowPlan(delta_t, tuple(range(w, w + delta_t) for w in range(n - delta_t + 1)))


def random_windows(n: int, delta_t: int, rng: np.random.Generator) -> WindowPlan:
    """Same number of windows as :func:`plan_windows`, random sizes and starts."""
    count = len(plan_windows(n, delta_t).windows)
    out = []
    for _ in range(count):
        size = int(rng.integers(1, delta_t + 1))
        start = int(rng.integers(0, n - size + 1))
        out.append(range(start, start + size))
    return WindowPlan(delta_t, tuple(out))


class EarlyStopping:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.bad_epochs = 0

    def update(self, value: float) -> bool:
        """Record an epoch's score; True when it is a new best."""
        if value > self.best:
            self.best = value
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# ------------------------------------------------------------------------ state


@dataclass
class TrainState:
    params: ModelParams
    adam: AdamState
    ssm: SsmState | None = None
    epoch: int = 0
    best_mrr: float = -math.inf
    patience_counter: int = 0
    history: list[dict] = field(default_factory=list)


HISTORY_COLUMNS = ("epoch", "window", "snapshot", "loss_fused", "loss_global", "val_mrr")


def history_csv(rows: list[dict]) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


def _global_constant(mcfg: ModelConfig, params: ModelParams, d: SnapshotData) -> Tensor | None:
    if mcfg.no_global:
        return None
    with no_grad():
        x = node_features(mcfg, params.gcn, d.adj)
        return encode_global(d.seq, d.mask, x, params.gru)


def inner_gradient(mcfg: ModelConfig, params: ModelParams, fast: dict[str, Tensor], d: SnapshotData,
                   pos: np.ndarray, neg: np.ndarray,
                   global_: Tensor | None = None) -> tuple[dict[str, np.ndarray], float]:
    """Fused-loss gradient w.r.t. the current GCN weights for one example.

    Runs on a private tape with detached copies, so nothing leaks into an
    enclosing tape.
    """
    if global_ is None:
        global_ = _global_constant(mcfg, params, d)
    with Tape() as tape:
        leaves = {k: Tensor(v.data, requires_grad=True) for k, v in fast.items()}
        emb = embed(mcfg, params, d.adj, d.seq, d.mask, gcn=params.gcn.replace(leaves),
                    global_=global_)
        loss = bce_loss(pos, neg, emb, "fused")
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"non-finite fused loss on snapshot {d.snapshot.index}")
        backward(loss, tape)
    grads = {k: (v.grad if v.grad is not None else np.zeros(v.shape)) for k, v in leaves.items()}
    return grads, value


def _mean(losses: list[Tensor]) -> Tensor:
    total = losses[0]
    for x in losses[1:]:
        total = add(total, x)
    return scale(total, 1.0 / len(losses))


def run_window(window: range, state: TrainState, data: list[SnapshotData], cfg: RunConfig,
               rng: np.random.Generator, epoch: int = 0, window_index: int = 0) -> TrainState:
    """One window of inner SSM steps followed by one outer Adam step.

    On a non-finite value the window is abandoned and the parameters are
    left exactly as they were.
    """
    mcfg = model_config(cfg, data[0].snapshot.num_nodes)
    params = state.params
    gcn0 = params.gcn.tensors()
    if state.ssm is not None and cfg.ssm_state_persist:
        ssm = state.ssm.copy()
    else:
        ssm = SsmState.zeros_like(gcn0, cfg.ssm_block)
    mode = "descent" if cfg.no_ssm else cfg.ssm_mode
    rows = []
    t = None
    try:
        with Tape() as tape:
            fast = dict(gcn0)
            fused_losses, global_losses = [], []
            pending_global = None  # (snapshot, constant global embedding) from the last look-ahead
            for t in window:
                d, nxt, after = data[t], data[t + 1], data[t + 2]
                if len(nxt.pos):
                    g_const = pending_global[1] if pending_global and pending_global[0] == t else None
                    neg = training_negatives(nxt.snapshot, nxt.pos, rng)
                    grads, loss_t = inner_gradient(mcfg, params, fast, d, nxt.pos, neg, g_const)
                    if cfg.no_ssm:
                        step_state = SsmState.zeros_like(fast, cfg.ssm_block)
                    else:
                        ssm = ssm_step(ssm, grads, dynamic_weight(loss_t, cfg.dyn_eps))
                        step_state = ssm
                    fast = apply_ssm_update(fast, grads, step_state, cfg.eta, mode)
                if not len(after.pos):
                    continue
                emb: Embeddings = embed(mcfg, params, nxt.adj, nxt.seq, nxt.mask,
                                        gcn=params.gcn.replace(fast))
                neg = training_negatives(after.snapshot, after.pos, rng)
                lf = bce_loss(after.pos, neg, emb, "fused")
                fused_losses.append(lf)
                lg_value = math.nan
                if emb.global_ is not None:
                    lg = bce_loss(after.pos, neg, emb, "global")
                    global_losses.append(lg)
                    lg_value = lg.item()
                    pending_global = (t + 1, Tensor(emb.global_.data))
                rows.append({"epoch": epoch, "window": window_index, "snapshot": t + 1,
                             "loss_fused": lf.item(), "loss_global": lg_value, "val_mrr": math.nan})
            if not fused_losses:
                return state
            total = _mean(fused_losses)
            if global_losses:
                total = add(total, _mean(global_losses))
            if not math.isfinite(total.item()):
                raise NumericError("non-finite aggregated window loss")
            params.zero_grad()
            backward(total, tape)
        grads = {k: p.grad for k, p in params.tensors().items()}
        for k, g in grads.items():
            if g is not None and not np.isfinite(g).all():
                raise NumericError(f"non-finite outer gradient for {k}")
    except NumericError as exc:
        log.error("window %d aborted at snapshot %s: %s", window_index, t, exc)
        params.zero_grad()
        state.history.extend({**r, "loss_fused": math.nan, "loss_global": math.nan} for r in rows)
        raise
    adam_step(state.adam, params.tensors(), grads)
    params.zero_grad()
    if cfg.ssm_state_persist and not cfg.no_ssm:
        state.ssm = ssm
    state.history.extend(rows)
    return state


# ------------------------------------------------------------------- inference


class Scorer:
    """Link scores for snapshot t+1 from fused embeddings of snapshot t."""

    def __init__(self, fused: np.ndarray):
        self.fused = fused

    def logits(self, pairs) -> np.ndarray:
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        return np.einsum("ij,ij->i", self.fused[pairs[:, 0]], self.fused[pairs[:, 1]])

    def __call__(self, u: int, v: int) -> float:
        z = float(self.fused[u] @ self.fused[v])
        return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


@dataclass
class TrainedModel:
    params: ModelParams
    config: ModelConfig


def predict_next(model: TrainedModel, d: SnapshotData) -> Scorer:
    with no_grad():
        emb = embed(model.config, model.params, d.adj, d.seq, d.mask)
    return Scorer(emb.fused.data.copy())


# ------------------------------------------------------------------------ train


def split_index(num_snapshots: int, train_fraction: float = 0.7) -> int:
    """Number of leading snapshots used for training."""
    return max(1, min(num_snapshots - 1, int(num_snapshots * train_fraction)))


def train(graph: DynamicGraph, cache: WalkCache, cfg: RunConfig, data: list[SnapshotData] | None = None,
          on_epoch=None) -> tuple[TrainedModel, list[dict]]:
    """Train with early stopping on validation MRR; returns the best checkpoint."""
    from .evaluation import validation_mrr

    data = data or prepare_data(graph, cache)
    n_train = split_index(len(graph), cfg.train_fraction)
    # example t reads snapshots t and t+1; a window's look-ahead needs one more
    sources = n_train - 2
    if cfg.delta_t > sources:
        raise ConfigError(f"delta_t={cfg.delta_t} needs at least {cfg.delta_t + 2} training "
                          f"snapshots, have {n_train}")
    mcfg = model_config(cfg, graph.node_count)
    rng = np.random.default_rng(cfg.seed)
    params = ModelParams.init(mcfg, rng)
    state = TrainState(params, AdamState(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps))
    plan = plan_windows(sources, cfg.delta_t)
    stopper = EarlyStopping(cfg.patience)
    best = params.copy()
    for epoch in range(1, cfg.epochs + 1):
        state.epoch = epoch
        windows = random_windows(sources, cfg.delta_t, rng).windows if cfg.random_window else plan.windows
        start = len(state.history)
        failures = 0
        for wi, w in enumerate(windows):
            try:
                run_window(w, state, data, cfg, rng, epoch, wi)
            except NumericError:
                failures += 1
        if failures == len(windows):
            raise NumericError(f"every window failed in epoch {epoch}")
        val = validation_mrr(TrainedModel(params, mcfg), data, n_train, cfg.val_k_neg, cfg.seed + epoch)
        for row in state.history[start:]:
            row["val_mrr"] = val
        if stopper.update(val):
            best = params.copy()
        state.best_mrr = stopper.best
        state.patience_counter = stopper.bad_epochs
        if on_epoch:
            on_epoch(epoch, val)
        if stopper.should_stop:
            log.info("early stop after epoch %d (best val MRR %.4f)", epoch, stopper.best)
            break
    return TrainedModel(best, mcfg), state.history
