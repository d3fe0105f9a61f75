"""Social recommender forward pass.

A user's representation is refined over `layers` rounds of social
aggregation: neighbor embeddings are pulled to the origin tangent space,
combined with attention weights conditioned on the target item, pushed
back onto the ball, passed through the geometry's linear map and a lifted
LeakyReLU.  Preference probability comes from a Fermi-Dirac decoder on the
geodesic distance between the aggregated user and the raw item embedding.

Two implementations live here and are cross-checked by tests:

  * plain-numpy reference operations (`attention_logit`, `aggregate_layer`,
    `aggregate_exact`, `predict`) built on `ball`;
  * the batched, autodiff-tracked path (`forward_pairs`) used for training
    and bulk scoring, built on `diffgeom` / `autodiff`.

Setting geometry="euclidean" turns the same network into its flat-space
twin: identity maps, ordinary matrix products, Euclidean distance.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import ball
from .autodiff import Tape, Var
from .diffgeom import make_geometry
from .errors import CompatibilityError
from .optim import ParamStore

CHECKPOINT_MAGIC = b"HSR1"


@dataclass
class ModelConfig:
    """Architecture and decoder hyperparameters."""

    dim: int = 32
    layers: int = 1
    c: float = 1.0
    gamma: float = 1.0          # social influence coefficient
    tau: float = 0.1            # attention softmax temperature
    fd_r: float = 2.0           # Fermi-Dirac offset
    fd_t: float = 1.0           # Fermi-Dirac temperature
    geometry: str = "hyperbolic"
    attention: str = "on"       # "on" | "mean"
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.geometry not in ("hyperbolic", "euclidean"):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.geometry == "hyperbolic" and self.c <= 0:
            raise ValueError("curvature must be positive in hyperbolic geometry")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.fd_t <= 0:
            raise ValueError("fd_t must be positive")
        if self.attention not in ("on", "mean"):
            raise ValueError(f"unknown attention mode {self.attention!r}")


class SocialGraph:
    """Directed trust lists: neighbors[a] = sorted ids user a trusts."""

    def __init__(self, neighbors: Sequence[Sequence[int]], validate: bool = True):
        self.neighbors = [np.asarray(nb, dtype=np.intp) for nb in neighbors]
        if validate:
            n = len(self.neighbors)
            for a, nb in enumerate(self.neighbors):
                if nb.size == 0:
                    continue
                if nb.min() < 0 or nb.max() >= n:
                    raise ValueError(f"user {a}: neighbor id out of range")
                if np.any(nb == a):
                    raise ValueError(f"user {a}: self-loop")
                if np.any(np.diff(nb) <= 0):
                    raise ValueError(f"user {a}: neighbors must be sorted and unique")

    @property
    def num_users(self) -> int:
        return len(self.neighbors)

    @property
    def num_edges(self) -> int:
        return int(sum(nb.size for nb in self.neighbors))

    def out_degrees(self) -> np.ndarray:
        return np.array([nb.size for nb in self.neighbors], dtype=np.intp)

    @classmethod
    def from_edges(cls, edges, num_users: int, symmetrize: bool = False) -> "SocialGraph":
        """Build from (src, dst) pairs; drops self-loops and duplicates."""
        lists: list[set[int]] = [set() for _ in range(num_users)]
        for a, b in edges:
            if a == b:
                continue
            lists[a].add(b)
            if symmetrize:
                lists[b].add(a)
        return cls([sorted(s) for s in lists], validate=False)

    def subsample(self, k_max: int, rng: np.random.Generator) -> "SocialGraph":
        """Cap neighbor lists at k_max by uniform subsampling (kept sorted)."""
        if all(nb.size <= k_max for nb in self.neighbors):
            return self
        out = []
        for nb in self.neighbors:
            if nb.size > k_max:
                nb = np.sort(rng.choice(nb, size=k_max, replace=False))
            out.append(nb)
        return SocialGraph(out, validate=False)


# ---------------------------------------------------------------------------
# numpy reference operations
# ---------------------------------------------------------------------------

def _to_tan(x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    return ball.log0(x, cfg.c) if cfg.geometry == "hyperbolic" else np.asarray(x, dtype=np.float64)


def _from_tan(v: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    return ball.exp0(v, cfg.c) if cfg.geometry == "hyperbolic" else np.asarray(v, dtype=np.float64)


def _linear(mat: np.ndarray, x: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    if cfg.geometry == "hyperbolic":
        return ball.mobius_matvec(mat, x, cfg.c)
    return x @ mat.T


def pair_distance(x: np.ndarray, y: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    if cfg.geometry == "hyperbolic":
        return ball.dist(x, y, cfg.c)
    return np.linalg.norm(np.asarray(x, dtype=np.float64) - y, axis=-1)


def _leaky(v: np.ndarray, slope: float) -> np.ndarray:
    return np.where(v > 0, v, slope * v)


def attention_logit(ua, ub, vi, w: np.ndarray, cfg: ModelConfig) -> float:
    """Unnormalized social influence of neighbor ub on ua, given target item vi:

        (log0(ua) . log0(ub))^T tanh(w^T [log0(ub), log0(vi)])

    with w of shape (2d, d) and [.,.] concatenation in the tangent space.
    """
    ta, tb, tv = (_to_tan(np.asarray(p, dtype=np.float64), cfg) for p in (ua, ub, vi))
    if w.shape[0] != 2 * ta.shape[-1] or w.shape[1] != ta.shape[-1]:
        raise ValueError(f"attention matrix must be (2d, d), got {w.shape}")
    hidden = np.tanh(np.concatenate([tb, tv], axis=-1) @ w)
    return float(np.sum(ta * tb * hidden, axis=-1))


def attention_weights(logits, tau: float) -> np.ndarray:
    """Temperature softmax over a user's neighbor logits; sums to 1."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("attention_weights: empty logit list")
    z = np.exp((logits - logits.max()) / tau)
    return z / z.sum()


def _neighbor_weights(t_a, t_nb, t_vi, w, cfg: ModelConfig) -> np.ndarray:
    """Normalized attention row for one user's neighbor block (k, d)."""
    if cfg.attention == "mean":
        return np.full(len(t_nb), 1.0 / len(t_nb))
    hidden = np.tanh(np.concatenate([t_nb, np.broadcast_to(t_vi, t_nb.shape)], axis=-1) @ w)
    logits = np.sum(t_a * t_nb * hidden, axis=-1)
    return attention_weights(logits, cfg.tau)


def aggregate_layer(
    u_prev: np.ndarray,
    vi: np.ndarray,
    graph: SocialGraph,
    mat: np.ndarray,
    w: np.ndarray,
    cfg: ModelConfig,
) -> np.ndarray:
    """One aggregation round for every user (reference implementation).

    t_a = log0(u_a) + gamma * sum_b pi~_ab log0(u_b); the update is the
    lifted activation of the linear map of exp0(t_a).
    """
    t_prev = _to_tan(u_prev, cfg)
    t_vi = _to_tan(np.asarray(vi, dtype=np.float64), cfg)
    t_out = np.empty_like(t_prev)
    for a in range(len(u_prev)):
        nbrs = graph.neighbors[a]
        t_a = t_prev[a]
        if nbrs.size:
            wts = _neighbor_weights(t_a, t_prev[nbrs], t_vi, w, cfg)
            t_a = t_a + cfg.gamma * (wts @ t_prev[nbrs])
        t_out[a] = t_a
    h = _linear(mat, _from_tan(t_out, cfg), cfg)
    return _from_tan(_leaky(_to_tan(h, cfg), cfg.leaky_slope), cfg)


def aggregate_exact(u_a: np.ndarray, neighbors: np.ndarray, gamma: float, c: float) -> np.ndarray:
    """Order-sensitive Mobius aggregation: u_a (+) (gamma (x) ((u_b1 (+) u_b2) (+) ...)).

    Neighbors must already be in the canonical (sorted-id) order.  Used as
    the sequential reference against the tangent-space path.
    """
    u_a = np.asarray(u_a, dtype=np.float64)
    if len(neighbors) == 0:
        return u_a
    acc = np.asarray(neighbors[0], dtype=np.float64)
    for nb in neighbors[1:]:
        acc = ball.mobius_add(acc, nb, c)
    return ball.mobius_add(u_a, ball.mobius_scalar(gamma, acc, c), c)


def aggregate_exact_layer(
    u_prev: np.ndarray, graph: SocialGraph, mat: np.ndarray, cfg: ModelConfig
) -> np.ndarray:
    """Full-layer variant of `aggregate_exact` (no attention), debug path."""
    combined = np.empty_like(u_prev)
    for a in range(len(u_prev)):
        combined[a] = aggregate_exact(u_prev[a], u_prev[graph.neighbors[a]], cfg.gamma, cfg.c)
    h = _linear(mat, combined, cfg)
    return _from_tan(_leaky(_to_tan(h, cfg), cfg.leaky_slope), cfg)


def predict(u_final, vi, fd_r: float, fd_t: float, cfg: ModelConfig) -> np.ndarray:
    """Fermi-Dirac decoder 1 / (exp((d(u, v) - r) / t) + 1), in (0, 1)."""
    z = (fd_r - pair_distance(u_final, vi, cfg)) / fd_t
    return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))


# ---------------------------------------------------------------------------
# batched tape path
# ---------------------------------------------------------------------------

def bind_params(tape: Tape, params: ParamStore) -> dict[str, Var]:
    """Register every trainable array as a tape leaf, keyed by parameter name."""
    return {name: tape.leaf(value) for name, value, _ in params.named()}


def _frontier_plan(users: np.ndarray, graph: SocialGraph, layers: int):
    """Lazily expand the multi-hop neighborhoods the batch needs.

    Returns (levels, meta): levels[l] = (example_ids, user_ids) whose layer-l
    representation is required; meta[l] = (self_pos, edge_node, edge_prev)
    wiring level l nodes to their own and their neighbors' rows in level l-1.
    levels[layers] is exactly the batch in example order.
    """
    n = len(users)
    levels: list[tuple[np.ndarray, np.ndarray]] = [None] * (layers + 1)  # type: ignore
    meta: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}
    levels[layers] = (np.arange(n, dtype=np.intp), np.asarray(users, dtype=np.intp))
    num_users = graph.num_users
    for level in range(layers, 0, -1):
        cur_ex, cur_uid = levels[level]
        if level == layers:
            # batch rows are distinct (example, user) pairs and neighbor
            # lists carry no duplicates, so no interning is needed
            nbr_lists = [graph.neighbors[a] for a in cur_uid]
            degrees = np.array([nb.size for nb in nbr_lists], dtype=np.intp)
            num_edges = int(degrees.sum())
            self_pos = np.arange(n, dtype=np.intp)
            edge_node = np.repeat(np.arange(n, dtype=np.intp), degrees)
            edge_prev = n + np.arange(num_edges, dtype=np.intp)
            nb_uid = (np.concatenate(nbr_lists) if num_edges
                      else np.empty(0, dtype=np.intp))
            levels[level - 1] = (
                np.concatenate([cur_ex, cur_ex[edge_node]]),
                np.concatenate([cur_uid, nb_uid]),
            )
            meta[level] = (self_pos, edge_node, edge_prev)
            continue
        index: dict[int, int] = {}
        prev_ex: list[int] = []
        prev_uid: list[int] = []
        self_pos = np.empty(len(cur_uid), dtype=np.intp)
        edge_node: list[int] = []
        edge_prev: list[int] = []

        def intern(e: int, u: int) -> int:
            key = e * num_users + u
            pos = index.get(key)
            if pos is None:
                pos = len(prev_ex)
                index[key] = pos
                prev_ex.append(e)
                prev_uid.append(u)
            return pos

        for k in range(len(cur_uid)):
            e = int(cur_ex[k])
            a = int(cur_uid[k])
            self_pos[k] = intern(e, a)
            for b in graph.neighbors[a]:
                edge_node.append(k)
                edge_prev.append(intern(e, int(b)))
        levels[level - 1] = (
            np.asarray(prev_ex, dtype=np.intp),
            np.asarray(prev_uid, dtype=np.intp),
        )
        meta[level] = (
            self_pos,
            np.asarray(edge_node, dtype=np.intp),
            np.asarray(edge_prev, dtype=np.intp),
        )
    return levels, meta


def _segment_max(values: np.ndarray, seg: np.ndarray, num_segments: int) -> np.ndarray:
    out = np.full(num_segments, -np.inf)
    np.maximum.at(out, seg, values)
    return out


def forward_pairs(
    users,
    items,
    leaves: dict[str, Var],
    graph: SocialGraph,
    cfg: ModelConfig,
) -> Var:
    """Preference probabilities for (user, item) pairs, recorded on the tape.

    Runs `cfg.layers` aggregation rounds over each user's lazily-expanded
    social neighborhood, conditioned on the pair's item, then applies the
    Fermi-Dirac decoder.  Returns shape (n, 1).
    """
    users = np.asarray(users, dtype=np.intp)
    items = np.asarray(items, dtype=np.intp)
    num_users = leaves["user_emb"].value.shape[0]
    num_items = leaves["item_emb"].value.shape[0]
    if users.size and (users.min() < 0 or users.max() >= num_users):
        raise ValueError("forward: unknown user id")
    if items.size and (items.min() < 0 or items.max() >= num_items):
        raise ValueError("forward: unknown item id")
    if graph.num_users != num_users:
        raise ValueError("forward: social graph size does not match user embeddings")

    geo = make_geometry(cfg.geometry, cfg.c)
    levels, meta = _frontier_plan(users, graph, cfg.layers)

    reps = ad.gather_rows(leaves["user_emb"], levels[0][1])
    t_items_all = None
    if cfg.layers > 0 and cfg.attention == "on":
        t_items_all = geo.to_tangent(ad.gather_rows(leaves["item_emb"], items))

    for level in range(1, cfg.layers + 1):
        self_pos, edge_node, edge_prev = meta[level]
        m = len(self_pos)
        t_prev = geo.to_tangent(reps)
        t_self = ad.gather_rows(t_prev, self_pos)
        if edge_node.size:
            t_nb = ad.gather_rows(t_prev, edge_prev)
            if cfg.attention == "on":
                t_a = ad.gather_rows(t_prev, self_pos[edge_node])
                edge_ex = levels[level][0][edge_node]
                t_vi = ad.gather_rows(t_items_all, edge_ex)
                hidden = ad.tanh(ad.matmul(ad.concat_cols(t_nb, t_vi),
                                           leaves[f"attn_mat_{level - 1}"]))
                logits = ad.row_sum(t_a * t_nb * hidden)
                # max-shift per segment is softmax-invariant, so it is safe
                # to treat as a constant
                shift = _segment_max(logits.value[:, 0], edge_node, m)
                z = ad.exp((logits - shift[edge_node][:, None]) * (1.0 / cfg.tau))
                denom = ad.segment_sum(z, edge_node, m)
                weights = z / ad.gather_rows(denom, edge_node)
            else:
                deg = np.bincount(edge_node, minlength=m).astype(np.float64)
                weights = (1.0 / deg[edge_node])[:, None]
            agg = ad.segment_sum(t_nb * weights, edge_node, m)
            t_sum = t_self + cfg.gamma * agg
        else:
            t_sum = t_self
        h = geo.linear(geo.from_tangent(t_sum), leaves[f"layer_mat_{level - 1}"])
        reps = geo.from_tangent(ad.leaky_relu(geo.to_tangent(h), cfg.leaky_slope))

    item_pts = ad.gather_rows(leaves["item_emb"], items)
    d = geo.pair_dist(reps, item_pts)
    return ad.sigmoid((cfg.fd_r - d) * (1.0 / cfg.fd_t))


def forward(user: int, item: int, params: ParamStore, graph: SocialGraph,
            cfg: ModelConfig, tape: Tape | None = None) -> Var:
    """Single-pair forward on a (possibly fresh) tape; returns a (1, 1) Var."""
    tape = tape or Tape()
    leaves = bind_params(tape, params)
    return forward_pairs([user], [item], leaves, graph, cfg)


def score_pairs(
    users,
    items,
    params: ParamStore,
    graph: SocialGraph,
    cfg: ModelConfig,
    chunk: int = 8192,
) -> np.ndarray:
    """Bulk probabilities as a plain array (no gradient use), chunked."""
    users = np.asarray(users, dtype=np.intp)
    items = np.asarray(items, dtype=np.intp)
    out = np.empty(len(users), dtype=np.float64)
    for start in range(0, len(users), chunk):
        stop = min(start + chunk, len(users))
        tape = Tape()
        leaves = bind_params(tape, params)
        prob = forward_pairs(users[start:stop], items[start:stop], leaves, graph, cfg)
        out[start:stop] = prob.value[:, 0]
    return out


def exact_user_reps(params: ParamStore, graph: SocialGraph, cfg: ModelConfig) -> np.ndarray:
    """All-user representations via the sequential Mobius path (debug only)."""
    reps = params.user_emb
    for level in range(cfg.layers):
        reps = aggregate_exact_layer(reps, graph, params.layer_mats[level], cfg)
    return reps


def score_pairs_exact(users, items, params: ParamStore, graph: SocialGraph,
                      cfg: ModelConfig) -> np.ndarray:
    """Bulk probabilities under the sequential-Mobius debug aggregation."""
    reps = exact_user_reps(params, graph, cfg)
    users = np.asarray(users, dtype=np.intp)
    items = np.asarray(items, dtype=np.intp)
    return predict(reps[users], params.item_emb[items], cfg.fd_r, cfg.fd_t, cfg)


def attention_matrix(params: ParamStore, graph: SocialGraph, cfg: ModelConfig,
                     user: int, items) -> tuple[np.ndarray, np.ndarray]:
    """First-round attention rows for one user: (neighbor_ids, weights[item, nb]).

    Raises ValueError when the user has no social neighbors.
    """
    nbrs = graph.neighbors[user]
    if nbrs.size == 0:
        raise ValueError(f"attention export: user {user} has no neighbors")
    if cfg.layers < 1:
        raise ValueError("attention export requires at least one aggregation layer")
    t_a = _to_tan(params.user_emb[user], cfg)
    t_nb = _to_tan(params.user_emb[nbrs], cfg)
    w = params.attn_mats[0]
    rows = np.empty((len(items), nbrs.size))
    for r, item in enumerate(items):
        t_vi = _to_tan(params.item_emb[int(item)], cfg)
        rows[r] = _neighbor_weights(t_a, t_nb, t_vi, w, cfg)
    return nbrs.copy(), rows


# ---------------------------------------------------------------------------
# checkpoint io
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ParamStore, cfg: ModelConfig) -> None:
    """Versioned binary dump; reader round-trips bit-exactly.

    Layout: magic "HSR1"; little-endian u32 d, L, num_users, num_items;
    f64 c, gamma, tau, fd_r, fd_t; then row-major f64 arrays: user
    embeddings, item embeddings, layer matrices, attention matrices.
    """
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<4I", params.dim, params.num_layers,
                             params.num_users, params.num_items))
        fh.write(struct.pack("<5d", params.c, cfg.gamma, cfg.tau, cfg.fd_r, cfg.fd_t))
        fh.write(params.user_emb.astype("<f8").tobytes())
        fh.write(params.item_emb.astype("<f8").tobytes())
        for m in params.layer_mats:
            fh.write(m.astype("<f8").tobytes())
        for w in params.attn_mats:
            fh.write(w.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Read a checkpoint; returns (params, header dict). Validates framing."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CompatibilityError(f"{path}: not a checkpoint (bad magic)")
    dim, layers, num_users, num_items = struct.unpack_from("<4I", blob, 4)
    c, gamma, tau, fd_r, fd_t = struct.unpack_from("<5d", blob, 20)
    offset = 60
    expected = (num_users + num_items) * dim + layers * dim * dim + layers * 2 * dim * dim
    if len(blob) - offset != expected * 8:
        raise CompatibilityError(f"{path}: truncated or oversized checkpoint")

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        offset += count * 8
        return arr.reshape(shape).astype(np.float64)

    user = take((num_users, dim))
    item = take((num_items, dim))
    mats = [take((dim, dim)) for _ in range(layers)]
    attn = [take((2 * dim, dim)) for _ in range(layers)]
    header = {"dim": dim, "layers": layers, "num_users": num_users,
              "num_items": num_items, "c": c, "gamma": gamma, "tau": tau,
              "fd_r": fd_r, "fd_t": fd_t}
    return ParamStore(user, item, mats, attn, c), header


def config_from_header(header: dict, **overrides) -> ModelConfig:
    """ModelConfig whose architecture fields come from a checkpoint header."""
    cfg = ModelConfig(dim=header["dim"], layers=header["layers"], c=header["c"],
                      gamma=header["gamma"], tau=header["tau"],
                      fd_r=header["fd_r"], fd_t=header["fd_t"])
    return replace(cfg, **overrides) if overrides else cfg
