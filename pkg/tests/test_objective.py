"""Triple samplers and the joint loss."""

import itertools

import numpy as np
import pytest

from hsr import autodiff as ad
from hsr.autodiff import Tape
from hsr.errors import NumericError
from hsr.model import ModelConfig, SocialGraph
from hsr.objective import (
    rec_loss,
    sample_rec_batch,
    sample_social_batch,
    social_edge_array,
    social_loss,
    social_score,
    total_loss,
    SocialBatch,
)


def pairs_and_sets(positives_per_user):
    pairs = np.array(
        [(u, i) for u, items in enumerate(positives_per_user) for i in items],
        dtype=np.intp,
    ).reshape(-1, 2)
    sets = [set(items) for items in positives_per_user]
    return pairs, sets


class TestRecSampler:
    def test_empty_batch(self, rng):
        pairs, sets = pairs_and_sets([[0], [1]])
        batch = sample_rec_batch(pairs, sets, 3, 0, rng)
        assert len(batch.users) == 0

    def test_forced_negative(self, rng):
        # one user, one positive, two items: j must be the other item
        pairs, sets = pairs_and_sets([[0]])
        for _ in range(20):
            batch = sample_rec_batch(pairs, sets, 2, 5, rng)
            np.testing.assert_array_equal(batch.pos_items, 0)
            np.testing.assert_array_equal(batch.neg_items, 1)

    def test_triples_respect_training_labels(self, rng):
        positives = [[0, 1], [2], [0, 3, 4]]
        pairs, sets = pairs_and_sets(positives)
        batch = sample_rec_batch(pairs, sets, 6, 500, rng)
        for u, i, j in zip(batch.users, batch.pos_items, batch.neg_items):
            assert i in sets[u]
            assert j not in sets[u]

    def test_negative_frequencies_near_uniform(self, rng):
        # single user with one positive among 11 items: negatives should be
        # uniform over the 10 non-positive items
        pairs, sets = pairs_and_sets([[0]])
        batch = sample_rec_batch(pairs, sets, 11, 100_000, rng)
        counts = np.bincount(batch.neg_items, minlength=11)[1:]
        expected = 100_000 / 10
        assert np.all(np.abs(counts - expected) / expected < 0.05)

    def test_degenerate_user_skipped(self, rng):
        # user 0 has every item positive and can never yield a triple;
        # user 1 still can
        pairs, sets = pairs_and_sets([[0, 1], [0]])
        batch = sample_rec_batch(pairs, sets, 2, 64, rng)
        assert np.all(batch.users == 1)


class TestSocialSampler:
    def test_excludes_neighbors_and_self_exhaustively(self, rng):
        graph = SocialGraph([[1, 2], [0], [3], [2], []])
        valid = {
            (u, p, q)
            for u in range(5)
            for p in graph.neighbors[u]
            for q in range(5)
            if q != u and q not in set(graph.neighbors[u].tolist())
        }
        batch = sample_social_batch(graph, 2000, rng)
        seen = set(zip(batch.users.tolist(), batch.neighbors.tolist(), batch.strangers.tolist()))
        assert seen <= valid
        # with 2000 draws over <= 20 valid triples we should see them all
        assert seen == valid

    def test_empty_graph_gives_empty_batch(self, rng):
        graph = SocialGraph([[], []])
        batch = sample_social_batch(graph, 8, rng)
        assert len(batch.users) == 0

    def test_edge_array_matches_graph(self):
        graph = SocialGraph([[1, 2], [], [0]])
        edges = social_edge_array(graph)
        assert sorted(map(tuple, edges.tolist())) == [(0, 1), (0, 2), (2, 0)]


class TestRecLoss:
    def loss_value(self, y_pos, y_neg):
        tape = Tape()
        p = tape.leaf(np.asarray(y_pos, dtype=np.float64).reshape(-1, 1))
        n = tape.leaf(np.asarray(y_neg, dtype=np.float64).reshape(-1, 1))
        return float(rec_loss(p, n).value)

    def test_perfect_predictions_vanish(self):
        assert self.loss_value([1.0 - 1e-13], [1e-13]) < 1e-10

    def test_uninformative_half(self):
        np.testing.assert_allclose(self.loss_value([0.5], [0.5]), 2 * np.log(2), atol=1e-12)

    def test_nonnegative(self, rng):
        for _ in range(50):
            yp = rng.uniform(1e-6, 1 - 1e-6, 5)
            yn = rng.uniform(1e-6, 1 - 1e-6, 5)
            assert self.loss_value(yp, yn) >= 0.0

    def test_permutation_invariant(self, rng):
        yp = rng.uniform(0.1, 0.9, 16)
        yn = rng.uniform(0.1, 0.9, 16)
        perm = rng.permutation(16)
        np.testing.assert_allclose(
            self.loss_value(yp, yn), self.loss_value(yp[perm], yn[perm]), atol=1e-12
        )

    def test_clamp_blocks_gradient_at_saturation(self):
        tape = Tape()
        p = tape.leaf(np.array([[0.5], [1.0]]))  # exactly 1.0 is clamped
        n = tape.leaf(np.array([[0.5], [0.0]]))  # exactly 0.0 is clamped
        loss = rec_loss(p, n)
        assert np.isfinite(loss.value)
        gp, gn = tape.grad(loss, [p, n])
        assert gp[1, 0] == 0.0 and gn[1, 0] == 0.0
        assert gp[0, 0] != 0.0 and gn[0, 0] != 0.0

    def test_non_finite_rejected(self):
        tape = Tape()
        p = tape.leaf(np.array([[np.nan]]))
        n = tape.leaf(np.array([[0.5]]))
        with pytest.raises(NumericError):
            rec_loss(p, n)


class TestSocialScore:
    def test_self_score_is_zero_and_maximal(self, rng):
        cfg = ModelConfig(dim=3)
        u = np.array([0.2, 0.1, -0.3])
        assert social_score(u, u, cfg) == 0.0
        other = np.array([0.1, 0.0, 0.2])
        assert social_score(u, other, cfg) < 0.0

    def test_symmetry(self, rng):
        cfg = ModelConfig(dim=4)
        for _ in range(20):
            a = 0.4 * rng.uniform(-1, 1, 4)
            b = 0.4 * rng.uniform(-1, 1, 4)
            assert abs(social_score(a, b, cfg) - social_score(b, a, cfg)) < 1e-12

    def test_scalar_value(self):
        cfg = ModelConfig(dim=1)
        got = social_score(np.array([0.0]), np.array([0.5]), cfg)
        np.testing.assert_allclose(got, -1.0986122886681098, atol=1e-10)


class TestSocialLoss:
    def make_loss(self, emb, triples, cfg=None):
        cfg = cfg or ModelConfig(dim=emb.shape[1])
        tape = Tape()
        user_emb = tape.leaf(emb)
        batch = SocialBatch(*[np.asarray(t, dtype=np.intp) for t in triples])
        return float(social_loss(user_emb, batch, cfg).value)

    def test_equal_scores_give_log2(self):
        # p and q equidistant from u: per-triple term is ln 2
        emb = np.array([[0.0, 0.0], [0.3, 0.0], [0.0, 0.3]])
        got = self.make_loss(emb, ([0], [1], [2]))
        np.testing.assert_allclose(got, np.log(2.0), atol=1e-12)

    def test_wide_gap_vanishes(self):
        emb = np.array([[0.0, 0.0], [0.001, 0.0], [0.9999, 0.0]])
        assert self.make_loss(emb, ([0], [1], [2])) < 1e-4

    def test_inverted_gap_blows_up_monotonically(self):
        losses = []
        for far in (0.3, 0.6, 0.9):
            emb = np.array([[0.0, 0.0], [far, 0.0], [0.01, 0.0]])
            losses.append(self.make_loss(emb, ([0], [1], [2])))
        assert losses[0] < losses[1] < losses[2]
        assert losses[2] > 2.0

    def test_permutation_invariant(self, rng):
        emb = 0.4 * rng.uniform(-1, 1, (6, 3))
        u = rng.integers(0, 6, 10)
        p = rng.integers(0, 6, 10)
        q = rng.integers(0, 6, 10)
        perm = rng.permutation(10)
        a = self.make_loss(emb, (u, p, q))
        b = self.make_loss(emb, (u[perm], p[perm], q[perm]))
        np.testing.assert_allclose(a, b, atol=1e-12)


class TestTotalLoss:
    def make(self, lr_val, ls_val):
        tape = Tape()
        lr = ad.total_sum(tape.leaf(np.array(lr_val)))
        ls = ad.total_sum(tape.leaf(np.array(ls_val)))
        return lr, ls

    def test_lambda_zero_is_rec_only(self):
        lr, ls = self.make(1.7, 99.0)
        out = total_loss(lr, ls, 0.0)
        assert out is lr

    def test_equal_terms_double(self):
        lr, ls = self.make(1.3, 1.3)
        np.testing.assert_allclose(total_loss(lr, ls, 1.0).value, 2.6, atol=1e-15)

    def test_small_lambda_arithmetic(self):
        lr, ls = self.make(1.0, 2.0)
        np.testing.assert_allclose(total_loss(lr, ls, 1e-2).value, 1.02, atol=1e-15)

    def test_negative_lambda_rejected(self):
        lr, ls = self.make(1.0, 2.0)
        with pytest.raises(ValueError):
            total_loss(lr, ls, -0.1)
