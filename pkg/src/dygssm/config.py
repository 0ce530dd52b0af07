"""Run configuration: one flat ``key = value`` text file, every default explicit."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    # data
    dataset: str = "synthetic"  # path to an edge list, or "synthetic"
    snapshots: int = 0  # 0: use the known count for the dataset name
    cumulative: bool = False
    out_dir: str = "run"
    # synthetic generator
    syn_nodes: int = 60
    syn_snapshots: int = 20
    syn_planted: int = 40
    syn_period: int = 4
    syn_persistence: int = 3
    syn_noise: float = 0.002
    syn_dropout: float = 0.0
    # random walks
    walk_p: float = 1.0
    walk_q: float = 2.0
    walks_per_node: int = 50
    walk_length: int = 5
    top_k: int = 5
    # model
    feature_dim: int = 64
    hidden_dim: int = 64
    activation: str = "relu"
    features: str = "embedding"
    light_gru: bool = False
    # training
    delta_t: int = 8
    epochs: int = 100
    patience: int = 10
    train_fraction: float = 0.7
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    eta: float = 0.1
    ssm_block: int = 4
    ssm_mode: str = "descent"
    ssm_state_persist: bool = False
    dyn_eps: float = 1e-8
    # ablations
    no_ssm: bool = False
    no_global: bool = False
    no_cross_attention: bool = False
    random_window: bool = False
    # evaluation
    k_neg: int = 1000
    val_k_neg: int = 50
    seed: int = 0

    def validate(self) -> "RunConfig":
        """Collect every problem and raise them together."""
        problems = []
        positive = ("syn_nodes", "syn_snapshots", "syn_period", "syn_persistence", "walks_per_node",
                    "walk_length", "top_k", "feature_dim", "hidden_dim", "delta_t", "epochs",
                    "patience", "ssm_block", "k_neg", "val_k_neg")
        for name in positive:
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        for name in ("walk_p", "walk_q", "lr", "dyn_eps", "adam_eps"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0")
        if self.eta < 0:
            problems.append("eta must be >= 0")
        if not 0 < self.train_fraction < 1:
            problems.append("train_fraction must be in (0, 1)")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            problems.append("beta1 and beta2 must be in [0, 1)")
        if not 0 <= self.syn_noise <= 1 or not 0 <= self.syn_dropout <= 1:
            problems.append("syn_noise and syn_dropout must be in [0, 1]")
        if self.snapshots < 0 or self.snapshots == 1:
            problems.append("snapshots must be 0 (auto) or >= 2")
        if self.ssm_mode not in ("descent", "verbatim"):
            problems.append("ssm_mode must be descent or verbatim")
        if self.activation not in ("relu", "tanh"):
            problems.append("activation must be relu or tanh")
        if self.features not in ("embedding", "onehot", "degree"):
            problems.append("features must be embedding, onehot or degree")
        if self.dataset != "synthetic" and not Path(self.dataset).exists():
            problems.append(f"dataset file not found: {self.dataset}")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        if self.no_global:
            self.no_cross_attention = True
        return self

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def dumps(self) -> str:
        lines = [f"{f.name} = {_format(getattr(self, f.name))}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def loads(cls, text: str, **overrides) -> "RunConfig":
        values = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, val = (x.strip() for x in line.split("=", 1))
            values[key] = val
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(values)

    @classmethod
    def load(cls, path, **overrides) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.loads(text, **overrides)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(values) - set(kinds))
        problems = [f"unknown key {k!r}" for k in unknown]
        parsed = {}
        for key, raw in values.items():
            if key not in kinds:
                continue
            try:
                parsed[key] = _parse(kinds[key], raw)
            except ValueError:
                problems.append(f"{key}: cannot parse {raw!r} as {kinds[key]}")
        if problems:
            raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
        return cls(**parsed)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(kind: str, raw):
    if not isinstance(raw, str):
        return raw
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(raw)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw
