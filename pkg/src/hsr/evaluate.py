"""Measurement surfaces: CTR metrics, top-K ranking, group analyses.

Rank-based AUC (Mann-Whitney with half-credit ties) and thresholded
accuracy cover the CTR protocol.  Top-K metrics follow the sampled-
candidate protocol: per user, up to `n_neg` unrated items are drawn and
ranked together with the user's held-out positives; Precision@K and
Recall@K are macro-averaged over users with at least one test positive.
Scores are ranked descending with ties broken by ascending item id.

Group analyses: sparsity bins pack users (sorted by training-interaction
count) into bins of roughly equal interaction mass; hierarchy groups bin
users by their distance to the origin and report average social degree.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ball
from .data import TEST, TRAIN, InteractionData
from .model import ModelConfig, SocialGraph

log = logging.getLogger("hsr")

DEFAULT_KS = (5, 10, 15, 20)


@dataclass
class MetricReport:
    auc: float | None = None
    accuracy: float | None = None
    precision_at: dict[int, float] = field(default_factory=dict)
    recall_at: dict[int, float] = field(default_factory=dict)
    users_evaluated: int = 0


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(scores, labels) -> float:
    """Rank-based AUC; ties contribute 1/2.  Needs both classes present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc undefined: both classes must be present")
    ranks = _average_ranks(scores)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of records where (score >= threshold) matches the label."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if len(scores) == 0:
        raise ValueError("accuracy undefined on empty input")
    return float(np.mean((scores >= threshold) == (labels == 1)))


def rank_candidates(item_ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    """Candidate ids sorted by descending score, ties by ascending id."""
    order = np.lexsort((item_ids, -scores))
    return item_ids[order]


def topk_eval(
    score_fn,
    data: InteractionData,
    ks=DEFAULT_KS,
    n_neg: int = 500,
    rng: np.random.Generator | None = None,
) -> MetricReport:
    """Sampled-candidate top-K evaluation, macro-averaged.

    score_fn(users, items) -> scores for parallel id arrays.  Candidates
    per user are `n_neg` sampled unrated items (all of them, with a
    warning, when fewer exist) plus the user's test positives.
    """
    rng = rng or np.random.default_rng(0)
    ks = sorted(ks)
    test_pos = data.test_positive_sets()
    rated = data.positive_sets_all()
    all_items = np.arange(data.num_items)
    precision_sum = {k: 0.0 for k in ks}
    recall_sum = {k: 0.0 for k in ks}
    users_evaluated = 0
    short_pools = 0
    for u in range(data.num_users):
        positives = test_pos[u]
        if not positives:
            continue
        pool = np.setdiff1d(all_items, np.fromiter(rated[u], dtype=np.intp, count=len(rated[u])))
        if len(pool) < n_neg:
            short_pools += 1
            sampled = pool
        else:
            sampled = rng.choice(pool, size=n_neg, replace=False)
        candidates = np.concatenate([sampled, np.fromiter(positives, dtype=np.intp,
                                                          count=len(positives))])
        scores = np.asarray(score_fn(np.full(len(candidates), u, dtype=np.intp), candidates))
        ranked = rank_candidates(candidates, scores)
        users_evaluated += 1
        for k in ks:
            hits = len(positives.intersection(ranked[:k].tolist()))
            precision_sum[k] += hits / k
            recall_sum[k] += hits / len(positives)
    if short_pools:
        log.warning("topk_eval: %d users had fewer than %d unrated items; used all",
                    short_pools, n_neg)
    if users_evaluated == 0:
        raise ValueError("topk_eval: no user has test positives")
    return MetricReport(
        precision_at={k: precision_sum[k] / users_evaluated for k in ks},
        recall_at={k: recall_sum[k] / users_evaluated for k in ks},
        users_evaluated=users_evaluated,
    )


@dataclass
class SparsityBin:
    index: int
    users: np.ndarray
    min_interactions: int
    max_interactions: int
    interaction_mass: int
    auc: float | None = None
    accuracy: float | None = None


def sparsity_bins(data: InteractionData, num_bins: int = 4) -> list[SparsityBin]:
    """Pack users (sorted by training-interaction count, ties by id) into
    bins of roughly equal total interaction mass."""
    counts = np.zeros(data.num_users, dtype=np.intp)
    mask = (data.records[:, 2] == 1) & (data.records[:, 3] == TRAIN)
    np.add.at(counts, data.records[mask, 0], 1)
    order = np.lexsort((np.arange(data.num_users), counts))
    total = counts.sum()
    target = total / num_bins
    bins: list[SparsityBin] = []
    current: list[int] = []
    mass = 0

    def close():
        nonlocal current, mass
        users = np.asarray(current, dtype=np.intp)
        bins.append(SparsityBin(len(bins), users,
                                int(counts[users].min()), int(counts[users].max()),
                                int(counts[users].sum())))
        current = []
        mass = 0

    for u in order:
        c = int(counts[u])
        # close early when adding this user overshoots the per-bin target
        # by more than stopping short would undershoot it
        if (current and len(bins) < num_bins - 1 and mass + c > target
                and (mass + c - target) > (target - mass)):
            close()
        current.append(int(u))
        mass += c
        if mass >= target - 1e-9 and len(bins) < num_bins - 1:
            close()
    if current:
        close()
    return bins


def score_bins(bins: list[SparsityBin], data: InteractionData, score_fn) -> None:
    """Fill per-bin CTR metrics over each bin's test records, in place."""
    test_records = data.records_for(TEST)
    for b in bins:
        members = set(b.users.tolist())
        rows = test_records[[int(u) in members for u in test_records[:, 0]]]
        if len(rows) == 0:
            continue
        scores = score_fn(rows[:, 0], rows[:, 1])
        labels = rows[:, 2]
        b.accuracy = accuracy(scores, labels)
        if len(np.unique(labels)) == 2:
            b.auc = auc(scores, labels)


@dataclass
class HierarchyGroup:
    index: int
    users: np.ndarray
    avg_social_degree: float
    avg_origin_distance: float


def hierarchy_analysis(
    user_emb: np.ndarray,
    graph: SocialGraph,
    cfg: ModelConfig,
    num_groups: int = 4,
) -> list[HierarchyGroup]:
    """Bin users by distance to the origin (ascending, ties by id) into
    near-equal-count groups; report average social out-degree per group."""
    if cfg.geometry == "hyperbolic":
        dist0 = ball.dist0(user_emb, cfg.c)
    else:
        dist0 = np.linalg.norm(user_emb, axis=-1)
    order = np.lexsort((np.arange(len(dist0)), dist0))
    degrees = graph.out_degrees()
    groups = []
    for idx, chunk in enumerate(np.array_split(order, num_groups)):
        groups.append(HierarchyGroup(
            idx, chunk.astype(np.intp),
            float(degrees[chunk].mean()) if chunk.size else float("nan"),
            float(dist0[chunk].mean()) if chunk.size else float("nan"),
        ))
    return groups


# ---------------------------------------------------------------------------
# CSV writers
# ---------------------------------------------------------------------------

def write_metrics_csv(path, report: MetricReport) -> None:
    with open(path, "w") as fh:
        fh.write("metric,value\n")
        if report.auc is not None:
            fh.write(f"auc,{report.auc:.10f}\n")
        if report.accuracy is not None:
            fh.write(f"accuracy,{report.accuracy:.10f}\n")
        for k in sorted(report.precision_at):
            fh.write(f"precision_at_{k},{report.precision_at[k]:.10f}\n")
        for k in sorted(report.recall_at):
            fh.write(f"recall_at_{k},{report.recall_at[k]:.10f}\n")


def write_bins_csv(path, bins: list[SparsityBin]) -> None:
    with open(path, "w") as fh:
        fh.write("bin,users,min_interactions,max_interactions,interaction_mass,auc,accuracy\n")
        for b in bins:
            auc_s = f"{b.auc:.10f}" if b.auc is not None else ""
            acc_s = f"{b.accuracy:.10f}" if b.accuracy is not None else ""
            fh.write(f"{b.index},{len(b.users)},{b.min_interactions},"
                     f"{b.max_interactions},{b.interaction_mass},{auc_s},{acc_s}\n")


def write_hierarchy_csv(path, groups: list[HierarchyGroup]) -> None:
    with open(path, "w") as fh:
        fh.write("group,users,avg_social_degree,avg_origin_distance\n")
        for g in groups:
            fh.write(f"{g.index},{len(g.users)},{g.avg_social_degree:.10f},"
                     f"{g.avg_origin_distance:.10f}\n")


def write_attention_csv(path, neighbor_ids: np.ndarray, items, weights: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("item," + ",".join(f"nb_{int(b)}" for b in neighbor_ids) + "\n")
        for item, row in zip(items, weights):
            fh.write(f"{int(item)}," + ",".join(f"{w:.10f}" for w in row) + "\n")
