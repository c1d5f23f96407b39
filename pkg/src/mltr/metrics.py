"""NDCG evaluation and paired significance testing.

DCG@k = sum_{i<=k} (2^rel_i - 1) / log2(i + 1). Queries whose ideal DCG is
zero, or whose evaluation set is empty, are excluded from averages and
counted in ``skipped``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betainc

from . import kernels
from .ranker import ParameterVector, score_batch

DEFAULT_KS = (1, 5, 10)


def dcg_at_k(labels_in_ranked_order, k: int) -> float:
    labels = np.ascontiguousarray(labels_in_ranked_order, dtype=np.float64)
    return float(kernels.dcg_at_k(labels, int(k)))


def ndcg_at_k(labels_in_ranked_order, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    labels = np.ascontiguousarray(labels_in_ranked_order, dtype=np.float64)
    if labels.size == 0:
        raise ValueError("empty ranking")
    ideal = np.sort(labels)[::-1].copy()
    idcg = kernels.dcg_at_k(ideal, int(k))
    if idcg == 0.0:
        return 0.0
    return float(kernels.dcg_at_k(labels, int(k)) / idcg)


def rank_by_scores(scores) -> np.ndarray:
    """Descending scores; ties keep original order."""
    s = np.asarray(scores, dtype=np.float64)
    return np.argsort(-s, kind="stable")


@dataclass
class RankingMetrics:
    ks: tuple
    per_query: dict = field(default_factory=dict)
    aggregate: dict = field(default_factory=dict)
    skipped: int = 0
    skipped_ids: list = field(default_factory=list)

    def values(self, k):
        """Per-query NDCG@k in evaluation order."""
        return [m[k] for m in self.per_query.values()]


def evaluate_model(params, dataset, eval_sets=None, ks=DEFAULT_KS) -> RankingMetrics:
    """Rank each query's evaluation items by model score and average NDCG@k.

    ``params`` is one ParameterVector or a mapping query id -> vector (for
    per-query fine-tuned models). ``eval_sets`` maps query id (or position)
    to document indices; None evaluates every document.
    """
    ks = tuple(int(k) for k in ks)
    if not ks:
        raise ValueError("ks must be non-empty")
    out = RankingMetrics(ks)
    for qi, q in enumerate(dataset.queries):
        idx = _eval_indices(eval_sets, qi, q)
        if idx is None or len(idx) == 0:
            out.skipped += 1
            out.skipped_ids.append(q.query_id)
            continue
        labels = q.labels[idx]
        if not np.any(labels > 0):
            out.skipped += 1
            out.skipped_ids.append(q.query_id)
            continue
        theta = params if isinstance(params, ParameterVector) else params[q.query_id]
        s = score_batch(theta, q.features[idx])
        ranked = labels[rank_by_scores(s)]
        out.per_query[q.query_id] = {k: ndcg_at_k(ranked, k) for k in ks}
    for k in ks:
        vals = out.values(k)
        out.aggregate[k] = float(np.mean(vals)) if vals else float("nan")
    return out


def _eval_indices(eval_sets, qi, q):
    if eval_sets is None:
        return np.arange(q.n_docs)
    if isinstance(eval_sets, dict):
        return eval_sets.get(q.query_id)
    return eval_sets[qi]


@dataclass(frozen=True)
class TTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float
    significant_at_0_01: bool
    mean_difference: float = 0.0
    zero_variance: bool = False


def t_sf_two_sided(t: float, dof: int) -> float:
    """P(|T| >= |t|) for Student's t via the regularized incomplete beta."""
    x = dof / (dof + t * t)
    return float(betainc(dof / 2.0, 0.5, x))


def paired_t_test(sample_a, sample_b) -> TTestResult:
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("paired samples must be equal-length 1-d sequences of length >= 2")
    d = a - b
    n = d.size
    mean = float(np.mean(d))
    sd = float(np.std(d, ddof=1))
    dof = n - 1
    if sd == 0.0:
        # constant differences: t undefined
        if mean == 0.0:
            return TTestResult(math.nan, dof, 1.0, False, mean, True)
        return TTestResult(math.copysign(math.inf, mean), dof, 0.0, False, mean, True)
    t = mean / (sd / math.sqrt(n))
    p = t_sf_two_sided(t, dof)
    return TTestResult(t, dof, p, p < 0.01, mean)
