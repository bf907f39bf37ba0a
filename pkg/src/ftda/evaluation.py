"""Approximation-quality measurement against the gold standard."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .goldstd import GoldRunRecord, GoldScores, adjust_mean_subtract

log = logging.getLogger(__name__)

COSINE = "cosine"
SPEARMAN = "spearman"


class MetricError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError("length mismatch")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise MetricError("cosine similarity undefined for a zero vector")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def spearman(a, b) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise MetricError("need two equal-length vectors of size >= 2")
    ra, rb = rankdata(a), rankdata(b)
    if np.all(ra == ra[0]) or np.all(rb == rb[0]):
        raise MetricError("rank correlation undefined for a constant vector")
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = np.linalg.norm(ra) * np.linalg.norm(rb)
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


METRICS = {COSINE: cosine_sim, SPEARMAN: spearman}


def auc_score(scores, labels) -> float:
    """Area under the ROC curve with ties counted one half.

    Computed from average ranks (equivalent to the pairwise count)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


@dataclass(frozen=True)
class SimilarityCurve:
    """Per-checkpoint mean similarity over test instances with standard
    error (sample std over sqrt of count); undefined per-instance values
    are dropped and counted."""

    method: str
    metric: str
    steps: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    dropped: np.ndarray  # undefined similarities per checkpoint


def _mean_se(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return np.nan, np.nan
    if arr.size == 1:
        return float(arr[0]), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / np.sqrt(arr.size))


def _check_alignment(gold: GoldScores, approx_by_test: dict) -> None:
    for test_id, vec in approx_by_test.items():
        if test_id not in set(int(t) for t in gold.test_ids):
            raise AlignmentError(f"test id {test_id} absent from gold scores")
        if not np.array_equal(np.asarray(vec.loo_ids), gold.loo_ids):
            raise AlignmentError(f"subset ids differ for test id {test_id}")


def similarity_curves(gold: GoldScores, approx_vectors, metric: str = COSINE,
                      method: str | None = None) -> SimilarityCurve:
    """Similarity of one method's attribution vectors to the gold scores.

    ``approx_vectors`` is one AttributionVector per evaluated test
    instance (a single method)."""
    fn = METRICS[metric]
    approx_by_test = {int(v.test_id): v for v in approx_vectors}
    _check_alignment(gold, approx_by_test)
    method = method or next(iter(approx_by_test.values())).method
    T = len(gold.steps)
    means, ses, dropped = np.empty(T), np.empty(T), np.zeros(T, dtype=np.int64)
    for t in range(T):
        vals = []
        for j, tid in enumerate(gold.test_ids):
            if int(tid) not in approx_by_test:
                continue
            try:
                vals.append(fn(gold.scores[t, j],
                               approx_by_test[int(tid)].scores))
            except MetricError:
                dropped[t] += 1
        if dropped[t]:
            log.info("%s/%s: dropped %d undefined similarities at step %d",
                     method, metric, dropped[t], gold.steps[t])
        means[t], ses[t] = _mean_se(vals)
    return SimilarityCurve(method=method, metric=metric, steps=gold.steps,
                           mean=means, se=ses, dropped=dropped)


@dataclass(frozen=True)
class SeedGroupCurve:
    """Max-over-checkpoints mean similarity per seed-group size.

    For group size r', the seeds are partitioned into consecutive groups
    of r' (remainder dropped); gold scores are recomputed per group and the
    similarity pooled over groups x test instances, then the maximum over
    checkpoints is taken. The standard error reported is the one at the
    maximizing checkpoint.
    """

    method: str
    metric: str
    group_sizes: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    argmax_step: np.ndarray


def seed_group_curves(rec: GoldRunRecord, approx_vectors, metric: str = COSINE,
                      group_sizes=(1,), adjust=adjust_mean_subtract,
                      method: str | None = None) -> SeedGroupCurve:
    fn = METRICS[metric]
    approx_by_test = {int(v.test_id): v for v in approx_vectors}
    method = method or next(iter(approx_by_test.values())).method
    sizes = sorted(int(g) for g in group_sizes)
    if sizes and sizes[-1] > rec.r:
        raise MetricError(f"group size {sizes[-1]} exceeds seed count {rec.r}")
    means, ses, arg_steps = [], [], []
    for size in sizes:
        n_groups = rec.r // size
        per_step = [[] for _ in range(len(rec.steps))]
        for g in range(n_groups):
            gold = adjust(rec.seed_slice(range(g * size, (g + 1) * size)))
            _check_alignment(gold, approx_by_test)
            for t in range(len(rec.steps)):
                for j, tid in enumerate(gold.test_ids):
                    if int(tid) not in approx_by_test:
                        continue
                    try:
                        per_step[t].append(
                            fn(gold.scores[t, j],
                               approx_by_test[int(tid)].scores))
                    except MetricError:
                        pass
        stats = [_mean_se(vals) for vals in per_step]
        curve = np.asarray([s[0] for s in stats])
        best = int(np.nanargmax(curve))
        means.append(stats[best][0])
        ses.append(stats[best][1])
        arg_steps.append(int(rec.steps[best]))
    return SeedGroupCurve(method=method, metric=metric,
                          group_sizes=np.asarray(sizes, dtype=np.int64),
                          mean=np.asarray(means), se=np.asarray(ses),
                          argmax_step=np.asarray(arg_steps, dtype=np.int64))


def mislabel_auc(scores, flipped_mask) -> float:
    """AUC of a per-instance statistic for ranking flipped instances."""
    return auc_score(scores, flipped_mask)


def mislabel_auc_from_gold(gold: GoldScores, flipped_mask,
                           step: int | None = None) -> float:
    """Detect flipped training labels from gold sensitivity scores.

    Leaving out a mislabelled instance tends to lower test losses, so the
    detection statistic is the negated score averaged over test instances.
    ``flipped_mask`` aligns with the evaluated subset order.
    """
    mask = np.asarray(flipped_mask, dtype=bool)
    if mask.shape != gold.loo_ids.shape:
        raise AlignmentError("mask must align with the evaluated subset")
    table = gold.at_step(step) if step is not None else gold.scores[-1]
    statistic = -table.mean(axis=0)
    return auc_score(statistic, mask)
