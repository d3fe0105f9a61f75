"""Joint training of the recommendation and social-relation objectives.

Each step draws one recommendation mini-batch and one social mini-batch,
accumulates L = L_rec + lambda * L_social on a fresh tape, backpropagates,
and applies one RSGD update.  Epochs end with a CTR evaluation on the
validation split; training stops early when validation AUC has not
improved for `patience` epochs, and the best-validation parameters are
kept.  All randomness is derived from (seed, stream, epoch) so single-
threaded runs are bit-reproducible.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import VAL, InteractionData
from .errors import NumericError
from .evaluate import accuracy, auc
from .model import ModelConfig, bind_params, forward_pairs, score_pairs
from .objective import (
    rec_loss,
    sample_rec_batch,
    sample_social_batch,
    social_edge_array,
    social_loss,
    total_loss,
)
from .optim import OptState, ParamStore, rsgd_step

log = logging.getLogger("hsr")

# documented search grids (tuning itself is left to the operator)
LR_GRID = (1e-4, 5e-4, 1e-3, 5e-3)
DIM_GRID = (8, 16, 32, 64, 128)
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1)
TAU_GRID = (0.01, 0.05, 0.1, 0.5)


@dataclass
class TrainConfig:
    """Every knob of a training run; defaults follow the reference setup."""

    lr: float = 1e-3
    dim: int = 32
    lam: float = 1e-2
    tau: float = 0.1
    layers: int = 1
    batch: int = 1024
    c: float = 1.0
    gamma: float = 1.0
    fd_r: float = 2.0
    fd_t: float = 1.0
    leaky_slope: float = 0.01
    ball_eps: float = 1e-5
    k_max: int = 512
    epochs: int = 500
    patience: int = 10
    seed: int = 42
    geometry: str = "hyperbolic"
    attention: str = "on"
    threshold: float = 4.0

    def to_model_config(self) -> ModelConfig:
        return ModelConfig(
            dim=self.dim, layers=self.layers, c=self.c, gamma=self.gamma,
            tau=self.tau, fd_r=self.fd_r, fd_t=self.fd_t,
            geometry=self.geometry, attention=self.attention,
            leaky_slope=self.leaky_slope,
        )

    def items(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)


def coerce_config(updates: dict[str, str], base: TrainConfig | None = None) -> TrainConfig:
    """Apply string-valued overrides (config file / CLI) onto a TrainConfig."""
    cfg = base or TrainConfig()
    types = {f.name: f.type for f in fields(TrainConfig)}
    for key, value in updates.items():
        if key not in types:
            raise ValueError(f"unknown config key {key!r}")
        current = getattr(cfg, key)
        if isinstance(current, bool):
            parsed = value in ("1", "true", "True")
        elif isinstance(current, int):
            parsed = int(value)
        elif isinstance(current, float):
            parsed = float(value)
        else:
            parsed = value
        setattr(cfg, key, parsed)
    return cfg


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_auc: float
    val_acc: float
    seconds: float


@dataclass
class TrainResult:
    params: ParamStore            # best-validation parameters
    last_params: ParamStore       # parameters at the final step
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_val_auc: float = float("nan")
    aborted: bool = False


def _stream(seed: int, stream: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, epoch]))


def validation_metrics(params: ParamStore, data: InteractionData,
                       mcfg: ModelConfig) -> tuple[float, float]:
    rows = data.records_for(VAL)
    if len(rows) == 0:
        return float("nan"), float("nan")
    scores = score_pairs(rows[:, 0], rows[:, 1], params, data.social, mcfg)
    labels = rows[:, 2]
    acc = accuracy(scores, labels)
    try:
        return auc(scores, labels), acc
    except ValueError:
        return float("nan"), acc


def train_model(
    data: InteractionData,
    cfg: TrainConfig,
    epoch_hook=None,
) -> TrainResult:
    """Run the optimization loop; returns best and last parameters.

    A non-finite loss aborts the run before the offending update, so the
    returned parameters are the last finite state (result.aborted is set).
    """
    mcfg = cfg.to_model_config()
    init_rng = _stream(cfg.seed, 0, 0)
    params = ParamStore.init(data.num_users, data.num_items, cfg.dim,
                             cfg.layers, cfg.c, init_rng)
    opt = OptState(lr=cfg.lr)
    train_pairs = data.train_positive_pairs()
    train_sets = data.train_positive_sets()
    steps_per_epoch = max(1, math.ceil(len(train_pairs) / cfg.batch))

    result = TrainResult(params=params.copy(), last_params=params)
    result.best_val_auc = float("-inf")
    patience_left = cfg.patience
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        graph = data.social.subsample(cfg.k_max, _stream(cfg.seed, 1, epoch))
        edges = social_edge_array(graph)
        nbr_sets = [set(nb.tolist()) for nb in graph.neighbors]
        rec_rng = _stream(cfg.seed, 2, epoch)
        soc_rng = _stream(cfg.seed, 3, epoch)
        epoch_loss = 0.0
        examples = 0
        for _ in range(steps_per_epoch):
            rb = sample_rec_batch(train_pairs, train_sets, data.num_items,
                                  cfg.batch, rec_rng)
            if len(rb.users) == 0:
                break
            sb = sample_social_batch(graph, cfg.batch, soc_rng, edges, nbr_sets)
            try:
                tape = Tape()
                leaves = bind_params(tape, params)
                b = len(rb.users)
                y_all = forward_pairs(np.concatenate([rb.users, rb.users]),
                                      np.concatenate([rb.pos_items, rb.neg_items]),
                                      leaves, graph, mcfg)
                y_pos = ad.gather_rows(y_all, np.arange(b))
                y_neg = ad.gather_rows(y_all, np.arange(b, 2 * b))
                loss_r = rec_loss(y_pos, y_neg)
                if len(sb.users) and cfg.lam > 0:
                    loss_s = social_loss(leaves["user_emb"], sb, mcfg)
                else:
                    loss_s = loss_r  # unused when lam == 0
                loss = total_loss(loss_r, loss_s, cfg.lam if len(sb.users) else 0.0)
                value = float(loss.value)
                if not np.isfinite(value):
                    raise NumericError(f"loss became non-finite at epoch {epoch}")
                names = [name for name, _, _ in params.named()]
                grads = dict(zip(names, tape.grad(loss, [leaves[n] for n in names])))
                # rsgd_step validates every gradient before mutating, so an
                # abort below always leaves the last finite parameters
                rsgd_step(params, grads, opt, cfg.ball_eps)
            except NumericError as exc:
                result.aborted = True
                log.error("train: %s; aborting with last-good parameters", exc)
                result.last_params = params
                if result.best_epoch == 0:
                    result.params = params.copy()
                return result
            epoch_loss += value
            examples += len(rb.users)

        val_auc, val_acc = validation_metrics(params, data, mcfg)
        stats = EpochStats(epoch, epoch_loss / max(examples, 1), val_auc,
                           val_acc, time.perf_counter() - t0)
        result.history.append(stats)
        result.last_params = params
        if epoch_hook is not None:
            epoch_hook(stats, params)
        log.info("epoch %d: loss=%.5f val_auc=%.4f val_acc=%.4f (%.2fs)",
                 epoch, stats.train_loss, val_auc, val_acc, stats.seconds)

        improved = np.isfinite(val_auc) and val_auc > result.best_val_auc
        if improved:
            result.best_val_auc = float(val_auc)
            result.best_epoch = epoch
            result.params = params.copy()
            patience_left = cfg.patience
        else:
            patience_left -= 1
            if patience_left <= 0:
                log.info("early stop at epoch %d (best %.4f at epoch %d)",
                         epoch, result.best_val_auc, result.best_epoch)
                break
    if result.best_epoch == 0:
        # no epoch ran or validation was empty: best = last
        result.params = params.copy()
    return result
