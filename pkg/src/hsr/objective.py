"""Training triples and the joint loss.

Recommendation triples (u, i, j) pair a user's observed item i with a
sampled unobserved item j; social triples (u, p, q) pair a trusted
neighbor p with a sampled non-neighbor q.  Both samplers resample each
call (fresh negatives per epoch) from caller-owned rng streams.

Losses are recorded on the autodiff tape: the recommendation loss is the
pointwise cross-entropy with the implicit labels substituted,
-sum(log y_ui + log(1 - y_uj)); the social loss is BPR on negated
distance scores; the joint objective adds lambda times the social term.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from . import ball
from .autodiff import Var
from .diffgeom import make_geometry
from .errors import NumericError
from .model import ModelConfig, SocialGraph

PROB_FLOOR = 1e-12  # predictions are clamped to [PROB_FLOOR, 1 - PROB_FLOOR]


class RecBatch(NamedTuple):
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray


class SocialBatch(NamedTuple):
    users: np.ndarray
    neighbors: np.ndarray
    strangers: np.ndarray


def sample_rec_batch(
    train_pairs: np.ndarray,
    train_positive_sets: list[set[int]],
    num_items: int,
    batch: int,
    rng: np.random.Generator,
) -> RecBatch:
    """Draw `batch` (u, i, j) triples.

    (u, i) is uniform over the training positive pairs; j is uniform over
    items outside the user's training positives (resampled on collision).
    Users whose positives cover every item are skipped with a warning-level
    degenerate guard (they cannot yield a negative).
    """
    if batch == 0 or len(train_pairs) == 0:
        empty = np.empty(0, dtype=np.intp)
        return RecBatch(empty, empty.copy(), empty.copy())
    users = np.empty(batch, dtype=np.intp)
    pos = np.empty(batch, dtype=np.intp)
    neg = np.empty(batch, dtype=np.intp)
    filled = 0
    while filled < batch:
        want = batch - filled
        picks = rng.integers(0, len(train_pairs), size=want)
        candidates = rng.integers(0, num_items, size=want)
        for k in range(want):
            u, i = train_pairs[picks[k]]
            positives = train_positive_sets[u]
            if len(positives) >= num_items:
                continue  # degenerate user: every item is positive
            j = int(candidates[k])
            while j in positives:
                j = int(rng.integers(0, num_items))
            users[filled] = u
            pos[filled] = i
            neg[filled] = j
            filled += 1
    return RecBatch(users, pos, neg)


def sample_social_batch(
    graph: SocialGraph,
    batch: int,
    rng: np.random.Generator,
    edges: np.ndarray | None = None,
    neighbor_sets: list[set[int]] | None = None,
) -> SocialBatch:
    """Draw `batch` (u, p, q) triples: (u, p) uniform over trust edges,
    q uniform over users outside N(u) and != u (resampled on collision).

    `edges` ((num_edges, 2) array) and `neighbor_sets` may be precomputed
    once per graph by steady callers; they are derived here otherwise.
    """
    if edges is None:
        edges = social_edge_array(graph)
    if batch == 0 or len(edges) == 0:
        empty = np.empty(0, dtype=np.intp)
        return SocialBatch(empty, empty.copy(), empty.copy())
    if neighbor_sets is None:
        neighbor_sets = [set(nb.tolist()) for nb in graph.neighbors]
    num_users = graph.num_users
    users = np.empty(batch, dtype=np.intp)
    nbrs = np.empty(batch, dtype=np.intp)
    strangers = np.empty(batch, dtype=np.intp)
    filled = 0
    while filled < batch:
        want = batch - filled
        picks = rng.integers(0, len(edges), size=want)
        candidates = rng.integers(0, num_users, size=want)
        for k in range(want):
            u, p = int(edges[picks[k], 0]), int(edges[picks[k], 1])
            blocked = neighbor_sets[u]
            if len(blocked) + 1 >= num_users:
                continue  # trusts everyone else: no valid stranger
            q = int(candidates[k])
            while q == u or q in blocked:
                q = int(rng.integers(0, num_users))
            users[filled] = u
            nbrs[filled] = p
            strangers[filled] = q
            filled += 1
    return SocialBatch(users, nbrs, strangers)


def social_edge_array(graph: SocialGraph) -> np.ndarray:
    """All (src, dst) trust edges as an (num_edges, 2) array."""
    if graph.num_edges == 0:
        return np.empty((0, 2), dtype=np.intp)
    src = np.concatenate([np.full(nb.size, a, dtype=np.intp)
                          for a, nb in enumerate(graph.neighbors) if nb.size])
    dst = np.concatenate([nb for nb in graph.neighbors if nb.size])
    return np.column_stack([src, dst])


def rec_loss(y_pos: Var, y_neg: Var) -> Var:
    """-sum(log y_pos + log(1 - y_neg)) with probabilities clamped to the
    [PROB_FLOOR, 1 - PROB_FLOOR] window (gradient passes only inside it)."""
    values = np.concatenate([y_pos.value.ravel(), y_neg.value.ravel()])
    if not np.isfinite(values).all() or np.any(values < 0.0) or np.any(values > 1.0):
        raise NumericError("rec_loss: probability outside [0, 1]")
    yp = ad.clip(y_pos, PROB_FLOOR, 1.0 - PROB_FLOOR)
    yn = ad.clip(y_neg, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -(ad.total_sum(ad.log(yp)) + ad.total_sum(ad.log(1.0 - yn)))


def social_score(ua, ub, cfg: ModelConfig) -> float:
    """Similarity of two users: the negated distance between raw embeddings."""
    if cfg.geometry == "hyperbolic":
        return float(-ball.dist(ua, ub, cfg.c))
    return float(-np.linalg.norm(np.asarray(ua, dtype=np.float64) - ub))


def social_loss(user_emb: Var, triples: SocialBatch, cfg: ModelConfig) -> Var:
    """BPR over social triples: -sum log sigmoid(score(u,p) - score(u,q)).

    Scores are negated distances of raw embeddings, so the per-triple term
    is softplus(d(u,p) - d(u,q)).
    """
    geo = make_geometry(cfg.geometry, cfg.c)
    e_u = ad.gather_rows(user_emb, triples.users)
    e_p = ad.gather_rows(user_emb, triples.neighbors)
    e_q = ad.gather_rows(user_emb, triples.strangers)
    gap = geo.pair_dist(e_u, e_p) - geo.pair_dist(e_u, e_q)  # = score(u,q)-score(u,p) negated
    return ad.total_sum(ad.softplus(gap))


def total_loss(loss_rec: Var, loss_social: Var, lam: float) -> Var:
    """Joint objective L_rec + lambda * L_social."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if lam == 0.0:
        return loss_rec
    return loss_rec + lam * loss_social
