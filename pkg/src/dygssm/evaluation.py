"""Future-link evaluation: time-t embeddings score the edges of t+1."""

from __future__ import annotations

import logging
import math

import numpy as np
from scipy.special import expit

from .errors import ContractError, InputError
from .graph import negative_sample, training_negatives
from .metrics import (MetricsReport, RankingCase, accuracy, auc, average_precision, mrr,
                      recall_at_k, safe_metric)
from .trainer import SnapshotData, TrainedModel, predict_next

log = logging.getLogger(__name__)


def ranking_cases(scorer, target: SnapshotData, k: int, seed: int) -> tuple[list[RankingCase], int]:
    """One case per positive edge; negatives drawn once per source node.

    Sources without ``k`` eligible negatives are skipped (with a warning),
    never served a shorter list.  Returns the cases and the skip count.
    """
    cases = []
    skipped = 0
    pos = target.pos
    for u in np.unique(pos[:, 0]).tolist():
        rng = np.random.default_rng([seed, target.snapshot.index, u])
        try:
            negs = negative_sample(target.snapshot, u, k, rng)
        except InputError as exc:
            log.warning("skipping source: %s", exc)
            skipped += 1
            continue
        neg_scores = scorer.logits(np.column_stack([np.full(k, u), negs]))
        mine = pos[pos[:, 0] == u]
        for s in scorer.logits(mine).tolist():
            cases.append(RankingCase(s, tuple(neg_scores.tolist())))
    return cases, skipped


def validation_mrr(model: TrainedModel, data: list[SnapshotData], target: int, k: int, seed: int) -> float:
    """MRR on snapshot ``target`` from embeddings of ``target - 1``."""
    if not len(data[target].pos):
        return 0.0
    cases, _ = ranking_cases(predict_next(model, data[target - 1]), data[target], k, seed)
    return mrr(cases) if cases else 0.0


def evaluate(model: TrainedModel, data: list[SnapshotData], test_indices, k_neg: int = 1000,
             seed: int = 0) -> MetricsReport:
    """Ranking metrics over k_neg negatives, threshold metrics over a 1:1 sample."""
    test_indices = list(test_indices)
    if not test_indices:
        raise ContractError("evaluation needs at least one test snapshot")
    all_cases: list[RankingCase] = []
    all_scores, all_labels = [], []
    rows = []
    for j in test_indices:
        if j < 1:
            raise ContractError("test snapshot 0 has no preceding snapshot")
        target = data[j]
        if not len(target.pos):
            log.warning("snapshot %d has no positive edges; skipped", j)
            continue
        scorer = predict_next(model, data[j - 1])
        cases, skipped = ranking_cases(scorer, target, k_neg, seed)
        rng = np.random.default_rng([seed, j])
        neg = training_negatives(target.snapshot, target.pos, rng)
        logits = np.concatenate([scorer.logits(target.pos), scorer.logits(neg)])
        labels = np.concatenate([np.ones(len(target.pos)), np.zeros(len(neg))])
        probs = expit(logits)
        all_cases += cases
        all_scores.append(logits)
        all_labels.append(labels)
        rows.append({
            "snapshot": j,
            "num_positive": int(len(target.pos)),
            "accuracy": accuracy(probs, labels),
            "auc": safe_metric(auc, logits, labels),
            "average_precision": safe_metric(average_precision, logits, labels),
            "mrr": mrr(cases) if cases else math.nan,
            "recall_at_10": recall_at_k(cases, 10) if cases else math.nan,
            "skipped_sources": skipped,
        })
    if not rows:
        raise ContractError("no test snapshot had positive edges")
    scores = np.concatenate(all_scores)
    labels = np.concatenate(all_labels)
    probs = expit(scores)
    return MetricsReport(
        accuracy=accuracy(probs, labels),
        auc=auc(scores, labels),
        average_precision=average_precision(scores, labels),
        mrr=mrr(all_cases) if all_cases else math.nan,
        recall_at_10=recall_at_k(all_cases, 10) if all_cases else math.nan,
        seed=seed,
        k_neg=k_neg,
        per_snapshot=rows,
    )
