"""Ranking metrics (Recall@M, truncated NDCG@M) and cross-split aggregation."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np


def recall_at_m(ranking, holdout, M: int) -> float:
    """Hits in the top ``M`` divided by ``min(M, |holdout|)``."""
    holdout = set(int(j) for j in holdout)
    if not holdout:
        raise ValueError("empty holdout; exclude the user upstream")
    hits = sum(1 for j in list(ranking)[:M] if int(j) in holdout)
    return hits / min(M, len(holdout))


def dcg_at_m(ranking, holdout, M: int, log=math.log) -> float:
    holdout = set(int(j) for j in holdout)
    return sum(1.0 / log(r + 2) for r, j in enumerate(list(ranking)[:M]) if int(j) in holdout)


def ndcg_at_m(ranking, holdout, M: int, log=math.log) -> float:
    """DCG@M over the ideal DCG@M; binary gains, so ``2^hit - 1`` is 0 or 1."""
    n_rel = len(set(int(j) for j in holdout))
    if n_rel == 0:
        raise ValueError("empty holdout; exclude the user upstream")
    ideal = sum(1.0 / log(r + 2) for r in range(min(M, n_rel)))
    return dcg_at_m(ranking, holdout, M, log) / ideal


METRICS = {"recall": recall_at_m, "ndcg": ndcg_at_m}


@dataclass
class MetricReport:
    metric: str
    M: int
    values: list = field(default_factory=list)
    group: str = "all"

    @property
    def count(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")


def evaluate_rankings(rankings, holdouts, M_list, group: str = "all") -> dict:
    """Reports keyed by ``(metric, M)``; users with empty holdouts are skipped."""
    reports = {(m, M): MetricReport(m, M, group=group) for m in METRICS for M in M_list}
    for ranking, holdout in zip(rankings, holdouts):
        if len(holdout) == 0:
            continue
        for (m, M), rep in reports.items():
            rep.values.append(METRICS[m](ranking, holdout, M))
    return reports


def aggregate(split_reports: list) -> list:
    """Per-split means plus the cross-split mean and (population) std.

    ``split_reports`` is a list (one entry per split) of dicts as returned
    by :func:`evaluate_rankings`. Returns one summary row per (metric, M, group).
    """
    rows = []
    keys = []
    for reps in split_reports:
        for key, rep in reps.items():
            k = (rep.metric, rep.M, rep.group)
            if k not in keys:
                keys.append(k)
    for metric, M, group in keys:
        means, counts = [], []
        for reps in split_reports:
            for rep in reps.values():
                if (rep.metric, rep.M, rep.group) == (metric, M, group) and rep.count:
                    means.append(rep.mean)
                    counts.append(rep.count)
        rows.append({"metric": metric, "M": M, "group": group, "split_means": means,
                     "mean": float(np.mean(means)) if means else float("nan"),
                     "std": float(np.std(means)) if means else float("nan"),
                     "n_users": int(sum(counts))})
    return rows


def metric_lines(reports: dict, split: int = 0) -> list:
    """JSONL records for one split: ``{"split","metric","M","group","mean","std","n_users"}``."""
    out = []
    for (metric, M), rep in sorted(reports.items(), key=lambda kv: (kv[1].group, kv[0])):
        vals = np.asarray(rep.values)
        out.append(json.dumps({"split": split, "metric": metric, "M": M, "group": rep.group,
                               "mean": float(vals.mean()) if len(vals) else None,
                               "std": float(vals.std()) if len(vals) else None,
                               "n_users": int(len(vals))}, sort_keys=False))
    return out


def random_recall_expectation(pool_sizes, holdout_sizes, M: int) -> float:
    """Mean Recall@M of a uniformly random ranking over each user's pool.

    A random top-M of a pool of size P contains ``min(M, P) * h / P`` of the
    ``h`` relevant items in expectation.
    """
    vals = [min(M, P) * h / P / min(M, h) for P, h in zip(pool_sizes, holdout_sizes) if h > 0 and P > 0]
    return float(np.mean(vals)) if vals else float("nan")
