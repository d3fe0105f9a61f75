"""Built-in verification suites.

Four suites cover the numerical core: gyrovector identities on the ball,
the flat-space limit at vanishing curvature, autodiff gradients of the
full training loss against central finite differences on micro-models,
and the agreement of tangent-space aggregation with the sequential
Mobius reference near the origin (plus the order-sensitivity witness).
Each check returns a record rather than asserting, so the CLI and the
test suite share one implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ball
from .autodiff import Tape
from .model import (
    ModelConfig,
    SocialGraph,
    aggregate_exact,
    bind_params,
    forward_pairs,
)
from .objective import RecBatch, SocialBatch, rec_loss, social_loss, total_loss
from .optim import ParamStore


@dataclass
class CheckResult:
    suite: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.suite}/{self.name}: {self.detail}"


def _points(rng, n, d, c, max_radius=0.95):
    x = rng.normal(size=(n, d))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * rng.uniform(0.0, max_radius / np.sqrt(c), size=(n, 1))


def check_ball(seed: int = 0, tol: float = 1e-8, pairs: int = 1000) -> list[CheckResult]:
    """Manifold identities over dims {2, 8, 64} and c in {0.5, 1, 2}."""
    rng = np.random.default_rng(seed)
    results = []
    for c in (0.5, 1.0, 2.0):
        for d in (2, 8, 64):
            x = _points(rng, pairs, d, c)
            y = _points(rng, pairs, d, c)
            zero = np.zeros_like(x)
            tag = f"c={c},d={d}"
            err_id = np.abs(ball.mobius_add(zero, y, c) - y).max()
            results.append(CheckResult("ball", f"left_identity[{tag}]", err_id <= tol,
                                       f"max|0+y - y| = {err_id:.3e} (tol {tol:.0e})"))
            err_inv = np.abs(ball.mobius_add(-x, x, c)).max()
            results.append(CheckResult("ball", f"left_inverse[{tag}]", err_inv <= tol,
                                       f"max|(-x)+x| = {err_inv:.3e} (tol {tol:.0e})"))
            dxy, dyx = ball.dist(x, y, c), ball.dist(y, x, c)
            err_sym = np.abs(dxy - dyx).max()
            results.append(CheckResult("ball", f"dist_symmetry[{tag}]", err_sym <= tol,
                                       f"max|d(x,y)-d(y,x)| = {err_sym:.3e}"))
            positive = bool(np.all(dxy > 0))
            results.append(CheckResult("ball", f"dist_positivity[{tag}]", positive,
                                       f"min d(x,y) = {dxy.min():.3e}"))
            err_rt = np.abs(ball.exp0(ball.log0(x, c), c) - x).max()
            v = rng.normal(size=(pairs, d))
            v *= rng.uniform(0, 3.0, size=(pairs, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
            err_rt2 = np.abs(ball.log0(ball.exp0(v, c), c) - v).max()
            results.append(CheckResult("ball", f"exp_log_roundtrip[{tag}]",
                                       max(err_rt, err_rt2) <= tol,
                                       f"max roundtrip err = {max(err_rt, err_rt2):.3e}"))
    a = np.array([0.5, 0.1])
    b = np.array([-0.2, 0.6])
    gap = np.linalg.norm(ball.mobius_add(a, b, 1.0) - ball.mobius_add(b, a, 1.0))
    results.append(CheckResult("ball", "non_commutativity_witness", gap > 1e-6,
                               f"|a+b - b+a| = {gap:.3e} for witness pair"))
    return results


def check_curvature_limit(seed: int = 0, tol: float = 1e-4,
                          queries: int = 100) -> list[CheckResult]:
    """At c = 1e-6 the ball operations track their Euclidean counterparts."""
    rng = np.random.default_rng(seed)
    c = 1e-6
    results = []
    x = _points(rng, 500, 8, 1.0)
    y = _points(rng, 500, 8, 1.0)
    rel_add = (np.linalg.norm(ball.mobius_add(x, y, c) - (x + y), axis=1)
               / np.linalg.norm(x + y, axis=1)).max()
    results.append(CheckResult("climit", "mobius_add_flat", rel_add < tol,
                               f"max rel err = {rel_add:.3e} (tol {tol:.0e})"))
    m = rng.normal(size=(8, 8))
    ref = x @ m.T
    rel_mv = (np.linalg.norm(ball.mobius_matvec(m, x, c) - ref, axis=1)
              / np.linalg.norm(ref, axis=1)).max()
    results.append(CheckResult("climit", "mobius_matvec_flat", rel_mv < tol,
                               f"max rel err = {rel_mv:.3e}"))
    pool = _points(rng, 200, 8, 1.0)
    agree = 0
    for k in range(queries):
        q = _points(rng, 1, 8, 1.0)[0]
        hyp = ball.dist(np.broadcast_to(q, pool.shape), pool, c)
        euc = np.linalg.norm(pool - q, axis=1)
        agree += int(hyp.argmin() == euc.argmin())
    results.append(CheckResult("climit", "nearest_neighbor_ranking", agree == queries,
                               f"{agree}/{queries} queries agree with Euclidean"))
    return results


def _micro_model(rng):
    """A d=4, L=1 model with <=5 neighbors per user and a tiny batch."""
    num_users, num_items, dim = 6, 4, 4
    cfg = ModelConfig(dim=dim, layers=1, tau=0.1)
    params = ParamStore.init(num_users, num_items, dim, 1, cfg.c, rng, init_scale=0.35)
    neighbors = []
    for a in range(num_users):
        k = int(rng.integers(0, 6))
        pool = [u for u in range(num_users) if u != a]
        neighbors.append(sorted(rng.choice(pool, size=min(k, len(pool)),
                                           replace=False).tolist()))
    graph = SocialGraph(neighbors)
    rec = RecBatch(rng.integers(0, num_users, 4).astype(np.intp),
                   rng.integers(0, num_items, 4).astype(np.intp),
                   rng.integers(0, num_items, 4).astype(np.intp))
    soc = SocialBatch(*(rng.integers(0, num_users, 4).astype(np.intp) for _ in range(3)))
    return params, graph, cfg, rec, soc


def _micro_loss(params, graph, cfg, rec, soc, lam=1e-2) -> float:
    tape = Tape()
    leaves = bind_params(tape, params)
    y_pos = forward_pairs(rec.users, rec.pos_items, leaves, graph, cfg)
    y_neg = forward_pairs(rec.users, rec.neg_items, leaves, graph, cfg)
    loss = total_loss(rec_loss(y_pos, y_neg), social_loss(leaves["user_emb"], soc, cfg), lam)
    return float(loss.value)


def check_gradients(seed: int = 0, tol: float = 1e-4, models: int = 50,
                    h: float = 1e-6, floor: float = 1e-8) -> list[CheckResult]:
    """Autodiff vs central finite differences on every parameter of random
    micro-models.

    Coordinates where both gradients are below `floor` are excluded, and a
    discrepancy smaller than the provable roundoff of the difference
    quotient (a few ulps of the loss over 2h) also passes: central
    differences cannot resolve gradients that small in float64.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_at = ""
    checked = 0
    for m in range(models):
        params, graph, cfg, rec, soc = _micro_model(rng)
        tape = Tape()
        leaves = bind_params(tape, params)
        y_pos = forward_pairs(rec.users, rec.pos_items, leaves, graph, cfg)
        y_neg = forward_pairs(rec.users, rec.neg_items, leaves, graph, cfg)
        loss = total_loss(rec_loss(y_pos, y_neg),
                          social_loss(leaves["user_emb"], soc, cfg), 1e-2)
        fd_noise = 8.0 * np.finfo(np.float64).eps * float(loss.value) / (2.0 * h)
        names = [name for name, _, _ in params.named()]
        autos = dict(zip(names, tape.grad(loss, [leaves[n] for n in names])))
        for name, value, _ in params.named():
            flat = value.ravel()
            auto = autos[name].ravel()
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                plus = _micro_loss(params, graph, cfg, rec, soc)
                flat[idx] = orig - h
                minus = _micro_loss(params, graph, cfg, rec, soc)
                flat[idx] = orig
                fd = (plus - minus) / (2 * h)
                if abs(auto[idx]) < floor and abs(fd) < floor:
                    continue
                checked += 1
                rel = abs(auto[idx] - fd) / max(abs(fd), abs(auto[idx]))
                if abs(auto[idx] - fd) <= fd_noise:
                    continue  # below the resolution of the difference quotient
                if rel > worst:
                    worst = rel
                    worst_at = f"model {m}, {name}[{idx}]"
    passed = worst < tol
    where = f" at {worst_at}" if worst_at else ""
    return [CheckResult("grad", "finite_difference_suite", passed,
                        f"{checked} coordinates over {models} models; worst resolved "
                        f"rel err = {worst:.3e}{where} (tol {tol:.0e})")]


def check_aggregation(seed: int = 0, tol: float = 1e-3) -> list[CheckResult]:
    """Tangent-space aggregation vs sequential Mobius accumulation."""
    rng = np.random.default_rng(seed)
    results = []
    worst = 0.0
    for _ in range(200):
        k = int(rng.integers(1, 6))
        pts = 1e-3 * rng.normal(size=(k + 1, 4))
        exact = aggregate_exact(pts[0], list(pts[1:]), 1.0, 1.0)
        tangent = ball.exp0(ball.log0(pts[0], 1.0)
                            + np.sum(ball.log0(pts[1:], 1.0), axis=0), 1.0)
        rel = np.linalg.norm(exact - tangent) / max(np.linalg.norm(tangent), 1e-300)
        worst = max(worst, rel)
    results.append(CheckResult("agg", "near_origin_agreement", worst < tol,
                               f"max rel err = {worst:.3e} over 200 draws (tol {tol:.0e})"))

    # tangent path is permutation-invariant
    pts = _points(rng, 4, 3, 1.0, max_radius=0.7)
    perm = [2, 0, 1]
    t1 = ball.exp0(np.sum(ball.log0(pts[1:], 1.0), axis=0), 1.0)
    t2 = ball.exp0(np.sum(ball.log0(pts[1:][perm], 1.0), axis=0), 1.0)
    inv_err = np.abs(t1 - t2).max()
    results.append(CheckResult("agg", "tangent_permutation_invariance", inv_err < 1e-12,
                               f"max perm diff = {inv_err:.3e}"))

    seq1 = aggregate_exact(pts[0], list(pts[1:]), 1.0, 1.0)
    seq2 = aggregate_exact(pts[0], [pts[1:][k] for k in perm], 1.0, 1.0)
    gap = np.linalg.norm(seq1 - seq2)
    results.append(CheckResult("agg", "mobius_order_sensitivity_witness", gap > 1e-6,
                               f"order change moves result by {gap:.3e}"))
    return results


SUITES = {
    "ball": check_ball,
    "climit": check_curvature_limit,
    "grad": check_gradients,
    "agg": check_aggregation,
}


def run_suites(names=None, seed: int = 0, tol: float | None = None) -> list[CheckResult]:
    names = list(names) if names else list(SUITES)
    results: list[CheckResult] = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown suite {name!r} (choose from {sorted(SUITES)})")
        kwargs = {"seed": seed}
        if tol is not None:
            kwargs["tol"] = tol
        results.extend(SUITES[name](**kwargs))
    return results
