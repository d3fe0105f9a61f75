"""Trainable parameters and Riemannian SGD.

Parameters are tagged `manifold` (rows are ball points: user and item
embeddings) or `euclidean` (layer matrices, attention matrices).  Manifold
parameters are updated by rescaling the Euclidean gradient with the inverse
metric, retracting along the exponential map at the point, and projecting
back into the stability shell; Euclidean parameters take plain SGD steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ball
from .errors import NumericError

MANIFOLD = "manifold"
EUCLIDEAN = "euclidean"


@dataclass
class OptState:
    """Optimizer state: learning rate and step counter."""

    lr: float
    step: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")


@dataclass
class ParamStore:
    """All trainable arrays plus the curvature they live under.

    user_emb, item_emb: (num_users, d), (num_items, d) ball points.
    layer_mats: L matrices of shape (d, d).
    attn_mats: L matrices of shape (2d, d).
    """

    user_emb: np.ndarray
    item_emb: np.ndarray
    layer_mats: list[np.ndarray] = field(default_factory=list)
    attn_mats: list[np.ndarray] = field(default_factory=list)
    c: float = 1.0

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def num_layers(self) -> int:
        return len(self.layer_mats)

    @property
    def num_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def num_items(self) -> int:
        return self.item_emb.shape[0]

    def named(self):
        """Yield (name, array, kind) for every trainable parameter."""
        yield "user_emb", self.user_emb, MANIFOLD
        yield "item_emb", self.item_emb, MANIFOLD
        for i, m in enumerate(self.layer_mats):
            yield f"layer_mat_{i}", m, EUCLIDEAN
        for i, w in enumerate(self.attn_mats):
            yield f"attn_mat_{i}", w, EUCLIDEAN

    def set(self, name: str, value: np.ndarray) -> None:
        if name == "user_emb":
            self.user_emb = value
        elif name == "item_emb":
            self.item_emb = value
        elif name.startswith("layer_mat_"):
            self.layer_mats[int(name.rsplit("_", 1)[1])] = value
        elif name.startswith("attn_mat_"):
            self.attn_mats[int(name.rsplit("_", 1)[1])] = value
        else:
            raise KeyError(name)

    def copy(self) -> "ParamStore":
        return ParamStore(
            self.user_emb.copy(),
            self.item_emb.copy(),
            [m.copy() for m in self.layer_mats],
            [w.copy() for w in self.attn_mats],
            self.c,
        )

    @classmethod
    def init(
        cls,
        num_users: int,
        num_items: int,
        dim: int,
        num_layers: int,
        c: float,
        rng: np.random.Generator,
        init_scale: float = 1e-3,
    ) -> "ParamStore":
        """Near-origin uniform embeddings; fan-scaled uniform weight matrices."""
        user = ball.project(rng.uniform(-init_scale, init_scale, (num_users, dim)), c)
        item = ball.project(rng.uniform(-init_scale, init_scale, (num_items, dim)), c)
        bound_m = 1.0 / np.sqrt(dim)
        bound_w = 1.0 / np.sqrt(2 * dim)
        mats = [rng.uniform(-bound_m, bound_m, (dim, dim)) for _ in range(num_layers)]
        attn = [rng.uniform(-bound_w, bound_w, (2 * dim, dim)) for _ in range(num_layers)]
        return cls(user, item, mats, attn, c)


def riemannian_rescale(grad_e: np.ndarray, theta: np.ndarray, c: float) -> np.ndarray:
    """Convert a Euclidean gradient to the Riemannian one on the ball:

        grad_R = ((1 - c ||theta||^2)^2 / 4) * grad_E

    applied per row (the inverse of the squared conformal factor).
    """
    theta = np.asarray(theta, dtype=np.float64)
    sq = np.sum(theta * theta, axis=-1, keepdims=True)
    return ((1.0 - c * sq) ** 2 / 4.0) * np.asarray(grad_e, dtype=np.float64)


def rsgd_step(
    params: ParamStore,
    grads: dict[str, np.ndarray],
    opt: OptState,
    ball_eps: float = ball.BALL_EPS,
) -> ParamStore:
    """One optimizer step, in place.

    Manifold parameters: theta <- project(exp_theta(-lr * grad_R)).
    Euclidean parameters: theta <- theta - lr * grad_E.
    All gradients are validated before anything is touched, so a
    NumericError (naming the offending parameter) leaves the store intact.
    """
    for name, _, _ in params.named():
        g = grads.get(name)
        if g is not None and not np.isfinite(g).all():
            raise NumericError(f"rsgd_step: non-finite gradient for {name!r}")
    for name, value, kind in params.named():
        g = grads.get(name)
        if g is None:
            continue
        if kind == MANIFOLD:
            # rows with zero gradient are fixed points of the retraction,
            # so only touched rows need the update
            touched = np.flatnonzero(np.any(g != 0.0, axis=-1))
            if touched.size == 0:
                continue
            sub = value[touched]
            rg = riemannian_rescale(g[touched], sub, params.c)
            moved = ball.project(ball.exp_at(sub, -opt.lr * rg, params.c),
                                 params.c, eps=ball_eps)
            new = value.copy()
            new[touched] = moved
        else:
            new = value - opt.lr * g
        params.set(name, new)
    opt.step += 1
    return params
