"""Parameter store and Riemannian SGD updates."""

import numpy as np
import pytest

from hsr import ball
from hsr.errors import NumericError
from hsr.optim import EUCLIDEAN, MANIFOLD, OptState, ParamStore, riemannian_rescale, rsgd_step


def tiny_store(rng=None, num_users=3, num_items=4, dim=2, layers=1):
    rng = rng or np.random.default_rng(7)
    return ParamStore.init(num_users, num_items, dim, layers, 1.0, rng)


class TestRescale:
    def test_origin_quarters_gradient(self):
        g = np.array([[2.0, -4.0]])
        np.testing.assert_allclose(
            riemannian_rescale(g, np.zeros((1, 2)), 1.0), g / 4.0, atol=1e-15
        )

    def test_half_radius_factor(self):
        # (1 - 0.25)^2 / 4 = 0.140625
        theta = np.array([[0.5, 0.0]])
        g = np.array([[1.0, 1.0]])
        np.testing.assert_allclose(
            riemannian_rescale(g, theta, 1.0), 0.140625 * g, atol=1e-15
        )

    def test_zero_gradient_stays_zero(self):
        np.testing.assert_array_equal(
            riemannian_rescale(np.zeros((2, 3)), np.full((2, 3), 0.3), 1.0), 0.0
        )

    def test_general_curvature_reduces_to_unit_form(self):
        theta = np.array([[0.25, 0.25]])
        g = np.ones((1, 2))
        sq = np.sum(theta**2)
        for c in (0.5, 1.0, 2.0):
            expect = (1.0 - c * sq) ** 2 / 4.0
            np.testing.assert_allclose(riemannian_rescale(g, theta, c), expect * g)


class TestRsgdStep:
    def test_zero_gradients_leave_parameters_unchanged(self):
        params = tiny_store()
        before = params.copy()
        grads = {name: np.zeros_like(v) for name, v, _ in params.named()}
        rsgd_step(params, grads, OptState(lr=0.5))
        for (_, a, _), (_, b, _) in zip(before.named(), params.named()):
            np.testing.assert_array_equal(a, b)

    def test_origin_step_matches_exp_map_oracle(self):
        params = ParamStore(np.zeros((1, 2)), np.zeros((0, 2)), [], [], 1.0)
        grads = {"user_emb": np.array([[1.0, 0.0]])}
        rsgd_step(params, grads, OptState(lr=0.1))
        # rescale at origin is 1/4, so the retraction argument is -0.025 e_x
        expect = ball.exp0(np.array([[-0.025, 0.0]]), 1.0)
        np.testing.assert_allclose(params.user_emb, expect, atol=1e-15)
        assert params.user_emb[0, 0] < 0

    def test_euclidean_parameters_take_plain_sgd(self):
        params = tiny_store()
        m0 = params.layer_mats[0].copy()
        g = np.ones_like(m0)
        grads = {"layer_mat_0": g}
        rsgd_step(params, grads, OptState(lr=0.01))
        np.testing.assert_allclose(params.layer_mats[0], m0 - 0.01 * g, atol=1e-15)

    def test_nan_gradient_names_parameter(self):
        params = tiny_store()
        grads = {"item_emb": np.full_like(params.item_emb, np.nan)}
        with pytest.raises(NumericError, match="item_emb"):
            rsgd_step(params, grads, OptState(lr=0.1))

    def test_manifold_parameters_stay_in_ball_under_random_steps(self, rng):
        params = ParamStore.init(4, 4, 3, 0, 1.0, rng)
        opt = OptState(lr=0.05)
        bound = (1.0 - ball.BALL_EPS) ** 2 + 1e-12
        for _ in range(2000):
            grads = {
                "user_emb": rng.normal(scale=5.0, size=params.user_emb.shape),
                "item_emb": rng.normal(scale=5.0, size=params.item_emb.shape),
            }
            rsgd_step(params, grads, opt)
            assert np.all(np.sum(params.user_emb**2, axis=1) <= bound)
            assert np.all(np.sum(params.item_emb**2, axis=1) <= bound)
        assert opt.step == 2000

    def test_step_counter_and_lr_validation(self):
        with pytest.raises(ValueError):
            OptState(lr=0.0)


class TestParamStore:
    def test_init_shapes_tags_and_ball_invariant(self):
        params = ParamStore.init(5, 6, 4, 2, 1.0, np.random.default_rng(0))
        kinds = dict((name, kind) for name, _, kind in params.named())
        assert kinds["user_emb"] == MANIFOLD and kinds["item_emb"] == MANIFOLD
        assert kinds["layer_mat_0"] == EUCLIDEAN and kinds["attn_mat_1"] == EUCLIDEAN
        assert params.user_emb.shape == (5, 4)
        assert params.attn_mats[0].shape == (8, 4)
        assert ball.in_ball(params.user_emb, 1.0)
        assert ball.in_ball(params.item_emb, 1.0)

    def test_init_deterministic_under_seed(self):
        a = ParamStore.init(5, 6, 4, 1, 1.0, np.random.default_rng(3))
        b = ParamStore.init(5, 6, 4, 1, 1.0, np.random.default_rng(3))
        for (_, x, _), (_, y, _) in zip(a.named(), b.named()):
            np.testing.assert_array_equal(x, y)

    def test_set_unknown_name_rejected(self):
        params = tiny_store()
        with pytest.raises(KeyError):
            params.set("nonsense", np.zeros(1))
