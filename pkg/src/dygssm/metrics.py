"""Ranking and threshold metrics for link prediction."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RankingCase:
    positive: float
    negatives: tuple[float, ...]

    def __post_init__(self):
        if len(self.negatives) < 1:
            raise ContractError("a ranking case needs at least one negative")


def rank_positive(case: RankingCase) -> float:
    """1-based rank of the positive; ties count half (mid-rank)."""
    neg = np.asarray(case.negatives, dtype=np.float64)
    greater = int((neg > case.positive).sum())
    ties = int((neg == case.positive).sum())
    return 1 + greater + ties // 2


def _ranks(cases) -> np.ndarray:
    cases = list(cases)
    if not cases:
        raise ContractError("no ranking cases")
    return np.array([rank_positive(c) for c in cases], dtype=np.float64)


def mrr(cases) -> float:
    return float(np.mean(1.0 / _ranks(cases)))


def recall_at_k(cases, k: int = 10) -> float:
    return float(np.mean(_ranks(cases) <= k))


def uniform_rank_mrr(k: int) -> float:
    """Expected reciprocal rank when the positive is uniform among k+1 slots."""
    return sum(1.0 / r for r in range(1, k + 2)) / (k + 1)


def uniform_rank_mrr_mc(k: int, draws: int, rng: np.random.Generator) -> float:
    """Monte-Carlo version of :func:`uniform_rank_mrr` using random scores."""
    pos = rng.random(draws)
    neg = rng.random((draws, k))
    ranks = 1 + (neg > pos[:, None]).sum(axis=1)
    return float(np.mean(1.0 / ranks))


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(bool)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores vs {y.size} labels")
    return s, y


def auc(scores, labels) -> float:
    """ROC AUC from the rank-sum statistic with mid-ranks for ties."""
    s, y = _check_binary(scores, labels)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError("AUC is undefined with a single class")
    r = rankdata(s)
    return float((r[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def average_precision(scores, labels) -> float:
    """Sum over distinct thresholds of precision times recall increment."""
    s, y = _check_binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise ContractError("average precision is undefined with a single class")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]  # end of each tie block
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    s, y = _check_binary(scores, labels)
    if s.size == 0:
        raise ContractError("accuracy of an empty set")
    return float(np.mean((s >= threshold) == y))


@dataclass
class MetricsReport:
    accuracy: float
    auc: float
    average_precision: float
    mrr: float
    recall_at_10: float
    seed: int
    k_neg: int
    per_snapshot: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "auc": self.auc,
            "average_precision": self.average_precision,
            "mrr": self.mrr,
            "recall_at_10": self.recall_at_10,
            "seed": self.seed,
            "k_neg": self.k_neg,
            "per_snapshot": self.per_snapshot,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_csv(self) -> str:
        cols = ["snapshot", "num_positive", "accuracy", "auc", "average_precision", "mrr", "recall_at_10",
                "skipped_sources"]
        lines = [",".join(cols)]
        for row in self.per_snapshot:
            lines.append(",".join(repr(row.get(c)) if isinstance(row.get(c), float) else str(row.get(c, ""))
                               for c in cols))
        return "\n".join(lines) + "\n"


def safe_metric(fn, *args) -> float:
    try:
        return fn(*args)
    except ContractError:
        return math.nan
