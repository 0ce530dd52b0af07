"""Encoders, fusion and losses for snapshot link prediction.

Row-vector convention throughout: node embeddings are rows, so a layer is
``H @ W`` rather than ``W @ h``.
"""

from __future__ import annotations

import io
import math
import zipfile
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .autodiff import (Tensor, add, clamp, concat_cols, detach, log, matmul, mean_scalar,
                       mul_elem, relu, scale, sigmoid, softmax_rows, spmm, sub, sum_rows,
                       take_rows, tanh, transpose)
from .errors import ConfigError, ContractError, InputError, ShapeError

GROUPS = ("gcn", "gru", "attn")


# ------------------------------------------------------------------ parameters


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, name: str) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True, name=name)


def _zeros(cols: int, name: str) -> Tensor:
    return Tensor(np.zeros((1, cols)), requires_grad=True, name=name)


class _Flat:
    """Flattening of nested dataclass parameters into ``{name: Tensor}``."""

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, Tensor):
                out[f.name] = v
            elif isinstance(v, list):
                for i, layer in enumerate(v):
                    for k, t in layer.tensors().items():
                        out[f"layer{i}.{k}"] = t
        return out


@dataclass
class GcnLayer(_Flat):
    W: Tensor
    O: Tensor
    b_O: Tensor
    J: Tensor
    b_J: Tensor


@dataclass
class GcnParams(_Flat):
    layers: list[GcnLayer]
    embedding: Tensor | None = None

    def replace(self, new: dict[str, Tensor]) -> "GcnParams":
        """Copy with some tensors swapped, keyed as in :meth:`tensors`."""
        layers = []
        for i, layer in enumerate(self.layers):
            kw = {f.name: new.get(f"layer{i}.{f.name}", getattr(layer, f.name))
                  for f in fields(layer)}
            layers.append(GcnLayer(**kw))
        return GcnParams(layers, new.get("embedding", self.embedding))

    @classmethod
    def init(cls, rng, dims: list[int], num_nodes: int = 0, embed_dim: int = 0) -> "GcnParams":
        layers = []
        for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
            layers.append(GcnLayer(_glorot(rng, a, b, f"W{i}"), _glorot(rng, b, b, f"O{i}"),
                                   _zeros(b, f"b_O{i}"), _glorot(rng, a, b, f"J{i}"),
                                   _zeros(b, f"b_J{i}")))
        emb = None
        if num_nodes:
            emb = Tensor(rng.normal(0.0, 1.0, size=(num_nodes, embed_dim)),
                         requires_grad=True, name="embedding")
        return cls(layers, emb)


@dataclass
class GruLayer(_Flat):
    W_z: Tensor
    b_z: Tensor
    W_h: Tensor
    b_h: Tensor
    W_r: Tensor | None = None
    b_r: Tensor | None = None


@dataclass
class GruParams(_Flat):
    layers: list[GruLayer]
    variant: str = "full"

    @classmethod
    def init(cls, rng, d_in: int, d_h: int, variant: str = "full", num_layers: int = 2):
        if variant not in ("full", "light"):
            raise ConfigError(f"unknown GRU variant {variant!r}")
        layers = []
        for i in range(num_layers):
            a = d_in if i == 0 else d_h
            if variant == "full":
                layers.append(GruLayer(_glorot(rng, d_h + a, d_h, "W_z"), _zeros(d_h, "b_z"),
                                       _glorot(rng, d_h + a, d_h, "W_h"), _zeros(d_h, "b_h"),
                                       _glorot(rng, d_h + a, d_h, "W_r"), _zeros(d_h, "b_r")))
            else:
                layers.append(GruLayer(_glorot(rng, a, d_h, "W_z"), _zeros(d_h, "b_z"),
                                       _glorot(rng, a, d_h, "W_h"), _zeros(d_h, "b_h")))
        return cls(layers, variant)


def gru_param_count(d_in: int, d_h: int, variant: str, num_layers: int = 2) -> int:
    """Closed-form parameter count of a stacked GRU."""
    total = 0
    for i in range(num_layers):
        a = d_in if i == 0 else d_h
        if variant == "full":
            total += 3 * ((d_h + a) * d_h + d_h)
        else:
            total += 2 * (a * d_h + d_h)
    return total


@dataclass
class AttnParams(_Flat):
    W_q: Tensor
    W_k: Tensor
    W_v: Tensor
    d_k: int = 0

    def __post_init__(self):
        if not self.d_k:
            self.d_k = self.W_k.shape[1]

    @classmethod
    def init(cls, rng, d: int) -> "AttnParams":
        return cls(_glorot(rng, d, d, "W_q"), _glorot(rng, d, d, "W_k"), _glorot(rng, d, d, "W_v"), d)


@dataclass
class ModelConfig:
    num_nodes: int
    feature_dim: int = 64
    hidden_dim: int = 64
    activation: str = "relu"
    features: str = "embedding"  # embedding | onehot | degree
    light_gru: bool = False
    no_global: bool = False
    no_cross_attention: bool = False

    def __post_init__(self):
        if self.activation not in ("relu", "tanh"):
            raise ConfigError(f"activation must be relu or tanh, got {self.activation!r}")
        if self.features not in ("embedding", "onehot", "degree"):
            raise ConfigError(f"unknown feature mode {self.features!r}")
        if self.features == "onehot":
            self.feature_dim = self.num_nodes
        elif self.features == "degree":
            self.feature_dim = 1
        if self.no_global:
            self.no_cross_attention = True


@dataclass
class ModelParams:
    gcn: GcnParams
    gru: GruParams
    attn: AttnParams

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        d, m = cfg.hidden_dim, cfg.feature_dim
        n_emb = cfg.num_nodes if cfg.features == "embedding" else 0
        gcn = GcnParams.init(rng, [m, d, d], n_emb, m)
        gru = GruParams.init(rng, m, d, "light" if cfg.light_gru else "full")
        attn = AttnParams.init(rng, d)
        return cls(gcn, gru, attn)

    def tensors(self) -> dict[str, Tensor]:
        out = {}
        for g in GROUPS:
            for k, t in getattr(self, g).tensors().items():
                out[f"{g}.{k}"] = t
        return out

    def group(self, name: str) -> dict[str, Tensor]:
        """Tensors of one group keyed by their group-local names."""
        return getattr(self, name).tensors()

    def zero_grad(self) -> None:
        for t in self.tensors().values():
            t.grad = None

    def copy(self) -> "ModelParams":
        new = load_bytes(save_bytes(self))
        return new

    def num_parameters(self, group: str | None = None) -> int:
        ts = self.tensors() if group is None else self.group(group)
        return sum(t.size for t in ts.values())


# ------------------------------------------------------------------ checkpoint


def save_bytes(params: ModelParams) -> bytes:
    """Deterministic archive of named float64 arrays plus structure metadata."""
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_STORED) as zf:
        meta = f"variant={params.gru.variant}\nd_k={params.attn.d_k}\n"
        zf.writestr(zipfile.ZipInfo("meta.txt", (1980, 1, 1, 0, 0, 0)), meta)
        for name, t in params.tensors().items():
            arr = io.BytesIO()
            np.save(arr, t.data, allow_pickle=False)
            zf.writestr(zipfile.ZipInfo(f"{name}.npy", (1980, 1, 1, 0, 0, 0)), arr.getvalue())
    return buf.getvalue()


def load_bytes(blob: bytes) -> ModelParams:
    arrays = {}
    with zipfile.ZipFile(io.BytesIO(blob)) as zf:
        meta = dict(line.split("=", 1) for line in zf.read("meta.txt").decode().split())
        for info in zf.infolist():
            if info.filename.endswith(".npy"):
                arrays[info.filename[:-4]] = np.load(io.BytesIO(zf.read(info)), allow_pickle=False)
    return _assemble(arrays, meta["variant"], int(meta["d_k"]))


def _assemble(arrays: dict[str, np.ndarray], variant: str, d_k: int) -> ModelParams:
    def t(name):
        return Tensor(arrays[name], requires_grad=True, name=name.rsplit(".", 1)[-1])

    def layer_ids(prefix):
        ids = {int(k[len(prefix):].split(".")[0][5:]) for k in arrays if k.startswith(prefix + "layer")}
        return sorted(ids)

    gcn_layers = [GcnLayer(*(t(f"gcn.layer{i}.{f}") for f in ("W", "O", "b_O", "J", "b_J")))
                  for i in layer_ids("gcn.")]
    emb = t("gcn.embedding") if "gcn.embedding" in arrays else None
    gru_layers = []
    for i in layer_ids("gru."):
        p = f"gru.layer{i}."
        extra = (t(p + "W_r"), t(p + "b_r")) if p + "W_r" in arrays else ()
        gru_layers.append(GruLayer(t(p + "W_z"), t(p + "b_z"), t(p + "W_h"), t(p + "b_h"), *extra))
    attn = AttnParams(t("attn.W_q"), t("attn.W_k"), t("attn.W_v"), d_k)
    return ModelParams(GcnParams(gcn_layers, emb), GruParams(gru_layers, variant), attn)


def save_checkpoint(params: ModelParams, path) -> None:
    Path(path).write_bytes(save_bytes(params))


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise InputError(f"checkpoint not found: {path}")
    try:
        return load_bytes(path.read_bytes())
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise InputError(f"{path}: unreadable checkpoint ({exc})") from exc


# --------------------------------------------------------------------- forward


def gcn_forward(adj, x: Tensor, params: GcnParams, activation: str = "relu") -> Tensor:
    """Message passing with per-layer output transform and skip path.

    Per layer: ``H = act(A_hat @ H_prev @ W)``, then
    ``H @ O + b_O + H_prev @ J + b_J`` feeds the next layer.
    """
    act = relu if activation == "relu" else tanh
    if adj.shape[0] != adj.shape[1] or adj.shape[1] != x.shape[0]:
        raise ShapeError(f"gcn_forward: adjacency {adj.shape} vs features {x.shape}")
    h = x
    for layer in params.layers:
        msg = act(spmm(adj, matmul(h, layer.W)))
        h = add(add(matmul(msg, layer.O), layer.b_O), add(matmul(h, layer.J), layer.b_J))
    return h


def _gru_cell(h: Tensor, x: Tensor, layer: GruLayer, variant: str) -> Tensor:
    if variant == "light":
        z = sigmoid(add(matmul(x, layer.W_z), layer.b_z))
        cand = add(matmul(x, layer.W_h), layer.b_h)
    else:
        hx = concat_cols(h, x)
        z = sigmoid(add(matmul(hx, layer.W_z), layer.b_z))
        r = sigmoid(add(matmul(hx, layer.W_r), layer.b_r))
        cand = tanh(add(matmul(concat_cols(mul_elem(r, h), x), layer.W_h), layer.b_h))
    # (1 - z) * h + z * cand
    return add(h, mul_elem(z, sub(cand, h)))


def gru_forward(sequence, params: GruParams, variant: str | None = None) -> Tensor:
    """Final top-layer hidden state of a stacked GRU started from zeros.

    ``sequence`` is either a list of ``(batch, d_in)`` step tensors or a
    single ``(steps, d_in)`` tensor treated as one sequence.
    """
    variant = variant or params.variant
    if isinstance(sequence, Tensor):
        sequence = [take_rows(sequence, [i]) for i in range(sequence.shape[0])]
    if not sequence:
        raise ContractError("gru_forward needs a non-empty sequence")
    steps = list(sequence)
    for layer in params.layers:
        d_h = layer.W_z.shape[1]
        h = Tensor(np.zeros((steps[0].shape[0], d_h)))
        outs = []
        for x in steps:
            h = _gru_cell(h, x, layer, variant)
            outs.append(h)
        steps = outs
    return steps[-1]


def encode_global(seq: np.ndarray, mask: np.ndarray, x: Tensor, params: GruParams) -> Tensor:
    """GRU over each node's walk-summary feature rows; masked rows are zero."""
    steps = [take_rows(x, seq[:, j]) for j in range(seq.shape[1])]
    return mul_elem(gru_forward(steps, params), mask)


def cross_attention(local: Tensor, global_: Tensor, params: AttnParams) -> Tensor:
    """Single-head attention with local embeddings as queries."""
    if local.shape != global_.shape:
        raise ShapeError(f"cross_attention: local {local.shape} vs global {global_.shape}")
    q = matmul(local, params.W_q)
    k = matmul(global_, params.W_k)
    v = matmul(global_, params.W_v)
    attn = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(params.d_k)))
    return matmul(attn, v)


@dataclass
class Embeddings:
    local: Tensor
    global_: Tensor | None
    fused: Tensor


def node_features(cfg: ModelConfig, gcn: GcnParams, adj=None) -> Tensor:
    if cfg.features == "embedding":
        return gcn.embedding
    if cfg.features == "onehot":
        return Tensor(np.eye(cfg.num_nodes))
    deg = np.asarray(adj.sum(axis=1)).reshape(-1, 1)
    return Tensor(deg / max(deg.max(), 1.0))


def embed(cfg: ModelConfig, params: ModelParams, adj, seq: np.ndarray, mask: np.ndarray,
          gcn: GcnParams | None = None, global_: Tensor | None = None) -> Embeddings:
    """Local, global and fused embeddings of one snapshot.

    The GRU reads detached features and the fused path reads a detached
    global embedding, so the fused loss reaches only GCN and attention
    parameters and the global loss reaches only GRU parameters.
    """
    gcn = gcn or params.gcn
    x = node_features(cfg, gcn, adj)
    local = gcn_forward(adj, x, gcn, cfg.activation)
    if cfg.no_global:
        return Embeddings(local, None, local)
    if global_ is None:
        # the GRU reads the un-adapted features
        base_x = x if gcn is params.gcn else node_features(cfg, params.gcn, adj)
        global_ = encode_global(seq, mask, detach(base_x), params.gru)
    g = detach(global_)
    if cfg.no_cross_attention:
        fused = add(local, g)
    else:
        fused = cross_attention(local, g, params.attn)
    return Embeddings(local, global_, fused)


# ---------------------------------------------------------------------- scoring


def score_edge(h_u, h_v) -> float:
    """Sigmoid of the dot product of two embedding rows."""
    h_u = np.asarray(h_u, dtype=np.float64).ravel()
    h_v = np.asarray(h_v, dtype=np.float64).ravel()
    if h_u.shape != h_v.shape:
        raise ShapeError(f"score_edge: {h_u.shape} vs {h_v.shape}")
    z = float(h_u @ h_v)
    return 1.0 / (1.0 + math.exp(-z)) if z >= 0 else math.exp(z) / (1.0 + math.exp(z))


def edge_logits(h: Tensor, pairs: np.ndarray) -> Tensor:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return sum_rows(mul_elem(take_rows(h, pairs[:, 0]), take_rows(h, pairs[:, 1])))


def binary_cross_entropy(probs: Tensor, labels, eps: float = 1e-12) -> Tensor:
    """Mean BCE with probabilities clamped into [eps, 1 - eps]."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    if y.shape[0] == 0:
        raise ContractError("BCE over an empty edge set")
    if probs.shape != y.shape:
        raise ShapeError(f"BCE: probabilities {probs.shape} vs labels {y.shape}")
    p = clamp(probs, eps, 1.0 - eps)
    terms = add(mul_elem(log(p), y), mul_elem(log(sub(1.0, p)), 1.0 - y))
    return scale(mean_scalar(terms), -1.0)


def bce_loss(pos_edges, neg_edges, embeddings, kind: str = "fused") -> Tensor:
    """BCE over positive and negative pairs scored from one embedding matrix."""
    if isinstance(embeddings, Embeddings):
        if kind not in ("fused", "global"):
            raise ConfigError(f"loss kind must be fused or global, got {kind!r}")
        h = embeddings.fused if kind == "fused" else embeddings.global_
    else:
        h = embeddings
    pos = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
    neg = np.asarray(neg_edges, dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([pos, neg])
    if len(pairs) == 0:
        raise ContractError("bce_loss needs at least one edge")
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    return binary_cross_entropy(sigmoid(edge_logits(h, pairs)), labels)
