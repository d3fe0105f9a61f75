"""Gyrovector-space identities and frozen scalar cases for the ball module."""

import numpy as np
import pytest

from hsr import ball
from hsr.errors import NumericError

from conftest import random_ball_points


class TestMobiusAdd:
    def test_left_identity(self, rng):
        x = random_ball_points(rng, 50, 4, 1.0)
        np.testing.assert_allclose(ball.mobius_add(np.zeros_like(x), x, 1.0), x, atol=1e-12)

    def test_left_inverse(self, rng):
        x = random_ball_points(rng, 50, 4, 1.0)
        np.testing.assert_allclose(ball.mobius_add(-x, x, 1.0), 0.0, atol=1e-12)

    def test_collinear_1d_value(self):
        # (x + y) / (1 + c x y) for 1-D inputs
        out = ball.mobius_add([0.3], [0.4], 1.0)
        np.testing.assert_allclose(out, [0.625], atol=1e-12)

    def test_identities_across_dims(self, rng):
        for d in (2, 8, 64):
            x = random_ball_points(rng, 1000, d, 1.0, max_radius=0.95)
            y = random_ball_points(rng, 1000, d, 1.0, max_radius=0.95)
            zero = np.zeros_like(x)
            np.testing.assert_allclose(ball.mobius_add(zero, y, 1.0), y, atol=1e-9)
            np.testing.assert_allclose(ball.mobius_add(-x, x, 1.0), 0.0, atol=1e-9)

    def test_not_commutative_witness(self):
        x = np.array([0.5, 0.1])
        y = np.array([-0.2, 0.6])
        xy = ball.mobius_add(x, y, 1.0)
        yx = ball.mobius_add(y, x, 1.0)
        assert np.linalg.norm(xy - yx) > 1e-3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ball.mobius_add(np.zeros(3), np.zeros(4), 1.0)


class TestMobiusScalar:
    def test_one_is_identity(self, rng):
        x = random_ball_points(rng, 20, 5, 1.0)
        np.testing.assert_allclose(ball.mobius_scalar(1.0, x, 1.0), x, atol=1e-12)

    def test_zero_point(self):
        np.testing.assert_array_equal(ball.mobius_scalar(5.0, np.zeros(3), 1.0), np.zeros(3))

    def test_doubling_1d(self):
        # tanh(2 atanh(0.5)) = 2*0.5 / (1 + 0.25)
        np.testing.assert_allclose(ball.mobius_scalar(2.0, [0.5], 1.0), [0.8], atol=1e-12)

    def test_scalar_distributivity(self, rng):
        x = random_ball_points(rng, 200, 6, 1.0, max_radius=0.7)
        r1, r2 = 0.7, -0.4
        lhs = ball.mobius_scalar(r1 + r2, x, 1.0)
        rhs = ball.mobius_add(ball.mobius_scalar(r1, x, 1.0), ball.mobius_scalar(r2, x, 1.0), 1.0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)

    def test_scalar_associativity(self, rng):
        x = random_ball_points(rng, 200, 6, 1.0, max_radius=0.7)
        r1, r2 = 1.3, 0.6
        lhs = ball.mobius_scalar(r1 * r2, x, 1.0)
        rhs = ball.mobius_scalar(r1, ball.mobius_scalar(r2, x, 1.0), 1.0)
        np.testing.assert_allclose(lhs, rhs, atol=1e-8)


class TestMobiusMatvec:
    def test_identity_matrix(self, rng):
        x = random_ball_points(rng, 30, 4, 1.0)
        np.testing.assert_allclose(ball.mobius_matvec(np.eye(4), x, 1.0), x, atol=1e-12)

    def test_matches_scalar_mul(self):
        x = np.array([0.5])
        out = ball.mobius_matvec(2.0 * np.eye(1), x, 1.0)
        np.testing.assert_allclose(out, ball.mobius_scalar(2.0, x, 1.0), atol=1e-12)
        np.testing.assert_allclose(out, [0.8], atol=1e-12)

    def test_zero_matrix_gives_origin(self, rng):
        x = random_ball_points(rng, 5, 4, 1.0)
        out = ball.mobius_matvec(np.zeros((3, 4)), x, 1.0)
        assert out.shape == (5, 3)
        np.testing.assert_array_equal(out, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            ball.mobius_matvec(np.eye(3), np.zeros(4), 1.0)


class TestExpLog:
    def test_roundtrip_from_tangent(self, rng):
        v = rng.normal(size=(500, 8))
        v *= rng.uniform(0, 3.0, size=(500, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
        np.testing.assert_allclose(ball.log0(ball.exp0(v, 1.0), 1.0), v, atol=1e-8)

    def test_roundtrip_from_ball(self, rng):
        x = random_ball_points(rng, 500, 8, 1.0, max_radius=0.999)
        np.testing.assert_allclose(ball.exp0(ball.log0(x, 1.0), 1.0), x, atol=1e-8)

    def test_exp0_scalar_value(self):
        # tanh(atanh(0.5)) = 0.5
        np.testing.assert_allclose(ball.exp0([0.54931], 1.0), [0.5], atol=1e-5)

    def test_exp0_zero(self):
        np.testing.assert_array_equal(ball.exp0(np.zeros(4), 1.0), np.zeros(4))

    def test_log0_origin(self):
        np.testing.assert_array_equal(ball.log0(np.zeros(4), 1.0), np.zeros(4))

    def test_general_base_roundtrip(self, rng):
        # exp/log at an arbitrary base point invert each other
        for c in (0.5, 1.0, 2.0):
            x = random_ball_points(rng, 100, 6, c, max_radius=0.8)
            y = random_ball_points(rng, 100, 6, c, max_radius=0.8)
            v = ball.log_at(x, y, c)
            np.testing.assert_allclose(ball.exp_at(x, v, c), y, atol=1e-8)


class TestDist:
    def test_self_distance_zero(self, rng):
        x = random_ball_points(rng, 50, 4, 1.0)
        np.testing.assert_allclose(ball.dist(x, x, 1.0), 0.0, atol=1e-9)

    def test_symmetry(self, rng):
        x = random_ball_points(rng, 200, 4, 1.0)
        y = random_ball_points(rng, 200, 4, 1.0)
        np.testing.assert_allclose(ball.dist(x, y, 1.0), ball.dist(y, x, 1.0), atol=1e-9)

    def test_positivity(self, rng):
        x = random_ball_points(rng, 200, 4, 1.0)
        y = random_ball_points(rng, 200, 4, 1.0)
        assert np.all(ball.dist(x, y, 1.0) > 0)

    def test_origin_scalar_value(self):
        # 2 * atanh(0.5)
        assert abs(ball.dist([0.0], [0.5], 1.0) - 1.0986122886681098) < 1e-4

    def test_dist0_closed_form(self, rng):
        for c in (0.5, 1.0, 2.0):
            x = random_ball_points(rng, 300, 5, c, max_radius=0.95)
            direct = 2.0 / np.sqrt(c) * np.arctanh(np.sqrt(c) * np.linalg.norm(x, axis=1))
            np.testing.assert_allclose(ball.dist0(x, c), direct, atol=1e-10)
            np.testing.assert_allclose(ball.dist(np.zeros_like(x), x, c), direct, atol=1e-10)


class TestCurvatureLimit:
    """As c -> 0 every operation degenerates to its flat counterpart."""

    C = 1e-6

    def test_add_matches_euclidean(self, rng):
        x = random_ball_points(rng, 500, 8, 1.0)
        y = random_ball_points(rng, 500, 8, 1.0)
        out = ball.mobius_add(x, y, self.C)
        rel = np.linalg.norm(out - (x + y), axis=1) / np.linalg.norm(x + y, axis=1)
        assert rel.max() < 1e-4

    def test_matvec_matches_matmul(self, rng):
        x = random_ball_points(rng, 500, 8, 1.0)
        m = rng.normal(size=(8, 8))
        out = ball.mobius_matvec(m, x, self.C)
        ref = x @ m.T
        rel = np.linalg.norm(out - ref, axis=1) / np.linalg.norm(ref, axis=1)
        assert rel.max() < 1e-4

    def test_nearest_neighbor_ranking_matches(self, rng):
        pool = random_ball_points(rng, 200, 8, 1.0)
        queries = random_ball_points(rng, 100, 8, 1.0)
        for q in queries:
            hyp = np.array([ball.dist(q, p, self.C) for p in pool])
            euc = np.linalg.norm(pool - q, axis=1)
            assert hyp.argmin() == euc.argmin()


class TestProject:
    def test_interior_unchanged(self, rng):
        x = random_ball_points(rng, 20, 4, 1.0, max_radius=0.8)
        np.testing.assert_array_equal(ball.project(x, 1.0), x)

    def test_exterior_forced_to_shell(self):
        x = np.array([2.0, 0.0])
        out = ball.project(x, 1.0)
        np.testing.assert_allclose(np.linalg.norm(out), 1.0 - 1e-5, atol=1e-12)

    def test_zero_vector(self):
        np.testing.assert_array_equal(ball.project(np.zeros(3), 1.0), np.zeros(3))

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            ball.project(np.array([np.nan, 0.0]), 1.0)

    def test_every_constructor_stays_in_shell(self, rng):
        bound = (1.0 - ball.BALL_EPS) ** 2
        x = random_ball_points(rng, 200, 4, 1.0, max_radius=0.99999)
        y = random_ball_points(rng, 200, 4, 1.0, max_radius=0.99999)
        for out in (
            ball.mobius_add(x, y, 1.0),
            ball.mobius_scalar(8.0, x, 1.0),
            ball.mobius_matvec(5.0 * np.eye(4), x, 1.0),
            ball.exp0(50.0 * x, 1.0),
        ):
            assert np.all(np.sum(out * out, axis=1) <= bound + 1e-15)


class TestAcrossCurvatures:
    def test_identities_hold_for_c_grid(self, rng):
        for c in (0.5, 1.0, 2.0):
            for d in (2, 8, 64):
                x = random_ball_points(rng, 100, d, c, max_radius=0.95)
                y = random_ball_points(rng, 100, d, c, max_radius=0.95)
                np.testing.assert_allclose(ball.mobius_add(np.zeros_like(x), y, c), y, atol=1e-9)
                np.testing.assert_allclose(ball.mobius_add(-x, x, c), 0.0, atol=1e-9)
                np.testing.assert_allclose(ball.dist(x, y, c), ball.dist(y, x, c), atol=1e-9)
                v = ball.log0(x, c)
                np.testing.assert_allclose(ball.exp0(v, c), x, atol=1e-8)
