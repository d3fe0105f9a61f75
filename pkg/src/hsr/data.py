"""Dataset ingestion, preprocessing, splitting, and synthetic generation.

Raw inputs are whitespace-separated text files: ratings lines are
"user item rating", trust lines are "user user"; '#' starts a comment.
Preprocessing turns ratings into implicit feedback (rating >= threshold),
samples one labeled negative per positive from each user's unrated items,
drops users with no social links, and re-densifies ids.

The synthetic generator plants a latent hierarchy (users and items on a
random tree) so that social neighbors share items, draws social
out-degrees from a clipped power law with a configurable exponent, and
wires edges by tree-proximity-weighted preferential attachment.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .model import SocialGraph

log = logging.getLogger("hsr")

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")


@dataclass
class RawData:
    """Parsed token-level ratings and trust pairs plus ingestion counters."""

    ratings: list[tuple[str, str, float]]
    trust: list[tuple[str, str]]
    duplicate_ratings: int = 0
    dropped_trust_unknown: int = 0
    dropped_trust_self: int = 0


@dataclass
class InteractionData:
    """Implicit-feedback records plus the social graph.

    records columns: user, item, label (0/1), split (0 train / 1 val / 2 test).
    """

    num_users: int
    num_items: int
    records: np.ndarray
    social: SocialGraph
    user_tokens: list[str] = field(default_factory=list)
    item_tokens: list[str] = field(default_factory=list)
    threshold: float | None = None
    seed: int | None = None

    def __post_init__(self):
        self.records = np.asarray(self.records, dtype=np.intp).reshape(-1, 4)

    def split_mask(self, split: int) -> np.ndarray:
        return self.records[:, 3] == split

    def records_for(self, split: int) -> np.ndarray:
        return self.records[self.split_mask(split)]

    def train_positive_pairs(self) -> np.ndarray:
        mask = (self.records[:, 2] == 1) & (self.records[:, 3] == TRAIN)
        return self.records[mask][:, :2]

    def train_positive_sets(self) -> list[set[int]]:
        sets: list[set[int]] = [set() for _ in range(self.num_users)]
        for u, i in self.train_positive_pairs():
            sets[u].add(int(i))
        return sets

    def positive_sets_all(self) -> list[set[int]]:
        """Per-user positives across every split (the 'rated' universe)."""
        sets: list[set[int]] = [set() for _ in range(self.num_users)]
        for u, i, label, _ in self.records:
            if label == 1:
                sets[u].add(int(i))
        return sets

    def test_positive_sets(self) -> list[set[int]]:
        sets: list[set[int]] = [set() for _ in range(self.num_users)]
        for u, i, label, split in self.records:
            if label == 1 and split == TEST:
                sets[u].add(int(i))
        return sets

    @property
    def num_interactions(self) -> int:
        return int(np.sum(self.records[:, 2] == 1))

    @property
    def num_relations(self) -> int:
        return self.social.num_edges


def _parse_line(line: str):
    text = line.split("#", 1)[0].strip()
    return text.split() if text else None


def ingest(ratings_path, trust_path) -> RawData:
    """Parse the two input files; malformed lines fail with their line number.

    Trust pairs naming users absent from the ratings file are dropped (and
    counted); an effectively empty trust file is an error because the
    no-social-links filter would then remove every user.
    """
    ratings: dict[tuple[str, str], float] = {}
    order: list[tuple[str, str]] = []
    duplicates = 0
    users: set[str] = set()
    with open(ratings_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = _parse_line(line)
            if fields is None:
                continue
            if len(fields) != 3:
                raise ValueError(f"{ratings_path}: line {lineno}: expected 'user item rating'")
            try:
                value = float(fields[2])
            except ValueError:
                raise ValueError(f"{ratings_path}: line {lineno}: bad rating {fields[2]!r}") from None
            if not np.isfinite(value):
                raise ValueError(f"{ratings_path}: line {lineno}: non-finite rating")
            key = (fields[0], fields[1])
            if key in ratings:
                duplicates += 1
                ratings[key] = max(ratings[key], value)
            else:
                ratings[key] = value
                order.append(key)
            users.add(fields[0])

    trust: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    dropped_unknown = 0
    dropped_self = 0
    with open(trust_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = _parse_line(line)
            if fields is None:
                continue
            if len(fields) != 2:
                raise ValueError(f"{trust_path}: line {lineno}: expected 'user user'")
            a, b = fields
            if a == b:
                dropped_self += 1
                continue
            if a not in users or b not in users:
                dropped_unknown += 1
                continue
            if (a, b) not in seen:
                seen.add((a, b))
                trust.append((a, b))
    if not trust:
        raise ValueError(
            f"{trust_path}: no usable trust pairs; the social-link filter would empty the dataset"
        )
    if duplicates:
        log.info("ingest: %d duplicate (user,item) ratings merged (kept max)", duplicates)
    if dropped_unknown:
        log.info("ingest: %d trust pairs dropped (unknown user)", dropped_unknown)
    return RawData([(u, i, ratings[(u, i)]) for u, i in order], trust,
                   duplicates, dropped_unknown, dropped_self)


def preprocess(
    raw: RawData,
    threshold: float,
    rng: np.random.Generator,
    symmetrize: bool = False,
) -> InteractionData:
    """Implicit-feedback conversion per the stated rules.

    Positives are ratings >= threshold; each user receives an equal number
    of labeled negatives sampled uniformly from items they never rated
    (capped at availability, with a warning).  Users with no social links
    (in either direction) are removed and ids re-densified.
    """
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    for u, i, _ in raw.ratings:
        user_ids.setdefault(u, len(user_ids))
        item_ids.setdefault(i, len(item_ids))

    degree = np.zeros(len(user_ids), dtype=np.intp)
    edges = []
    for a_tok, b_tok in raw.trust:
        a, b = user_ids[a_tok], user_ids[b_tok]
        edges.append((a, b))
        degree[a] += 1
        degree[b] += 1

    keep = degree > 0
    if not keep.any():
        raise ValueError("preprocess: every user was filtered out (no social links)")
    if (~keep).sum():
        log.info("preprocess: removed %d users with no social links", int((~keep).sum()))

    user_tokens: list[str] = []
    remap_user = -np.ones(len(user_ids), dtype=np.intp)
    for tok, old in user_ids.items():
        if keep[old]:
            remap_user[old] = len(user_tokens)
            user_tokens.append(tok)

    surviving = [(user_ids[u], item_ids[i], r) for u, i, r in raw.ratings if keep[user_ids[u]]]
    item_name = {old: tok for tok, old in item_ids.items()}
    item_tokens: list[str] = []
    remap_item = -np.ones(len(item_ids), dtype=np.intp)
    for _, old_i, _ in surviving:
        if remap_item[old_i] < 0:
            remap_item[old_i] = len(item_tokens)
            item_tokens.append(item_name[old_i])

    num_users = len(user_tokens)
    num_items = len(item_tokens)
    rated: list[set[int]] = [set() for _ in range(num_users)]
    positives: list[list[int]] = [[] for _ in range(num_users)]
    for old_u, old_i, rating in surviving:
        u, i = int(remap_user[old_u]), int(remap_item[old_i])
        rated[u].add(i)
        if rating >= threshold:
            positives[u].append(i)

    graph = SocialGraph.from_edges(
        [(int(remap_user[a]), int(remap_user[b])) for a, b in edges
         if keep[a] and keep[b]],
        num_users,
        symmetrize=symmetrize,
    )

    rows = []
    capped_users = 0
    all_items = np.arange(num_items)
    for u in range(num_users):
        pos = sorted(positives[u])
        for i in pos:
            rows.append((u, i, 1, TRAIN))
        want = len(pos)
        if want == 0:
            continue
        unrated = np.setdiff1d(all_items, np.fromiter(rated[u], dtype=np.intp, count=len(rated[u])))
        if len(unrated) < want:
            capped_users += 1
            want = len(unrated)
        if want:
            negs = np.sort(rng.choice(unrated, size=want, replace=False))
            for j in negs:
                rows.append((u, int(j), 0, TRAIN))
    if capped_users:
        log.warning("preprocess: %d users had fewer unrated items than positives; negatives capped",
                    capped_users)

    return InteractionData(
        num_users=num_users,
        num_items=num_items,
        records=np.asarray(rows, dtype=np.intp).reshape(-1, 4),
        social=graph,
        user_tokens=user_tokens,
        item_tokens=item_tokens,
        threshold=threshold,
    )


def split(data: InteractionData, ratios=(0.7, 0.1, 0.2), rng=None) -> InteractionData:
    """Assign split tags to the labeled records.

    Global counts follow the normalized ratios with largest-remainder
    rounding; the assignment itself is a seeded uniform permutation.
    """
    rng = rng or np.random.default_rng(0)
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.min() < 0 or ratios.sum() <= 0:
        raise ValueError("split ratios must be nonnegative and not all zero")
    ratios = ratios / ratios.sum()
    n = len(data.records)
    exact = n * ratios
    counts = np.floor(exact).astype(int)
    remainder = exact - counts
    for k in np.argsort(-remainder)[: n - counts.sum()]:
        counts[k] += 1
    tags = np.repeat(np.arange(3, dtype=np.intp), counts)
    perm = rng.permutation(n)
    records = data.records.copy()
    records[perm, 3] = tags
    return replace(data, records=records)


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def _tree_distances(paths_a: np.ndarray, paths_b: np.ndarray) -> np.ndarray:
    """Pairwise leaf distances 2 * (depth - common_prefix) on a complete tree."""
    depth = paths_a.shape[1]
    alive = np.ones((paths_a.shape[0], paths_b.shape[0]), dtype=bool)
    common = np.zeros(alive.shape, dtype=np.int32)
    for level in range(depth):
        alive &= paths_a[:, None, level] == paths_b[None, :, level]
        common += alive
    return 2 * (depth - common)


def synth_generate(
    num_users: int,
    num_items: int,
    exponent: float,
    rng: np.random.Generator,
    *,
    tree_depth: int = 7,
    branching: int = 3,
    interaction_decay: float = 0.35,
    social_decay: float = 1.0,
    base_interactions: int = 8,
) -> InteractionData:
    """Planted-hierarchy dataset with power-law social out-degrees.

    Users and items sit on random leaves of a complete tree; a user's
    positives favor tree-nearby, globally popular items; social edges
    prefer tree-nearby, already-popular users.  Every user gets at least
    one social link, so the no-links filter never fires.
    """
    if exponent <= 1:
        raise ValueError("power-law exponent must exceed 1")
    paths_u = rng.integers(0, branching, size=(num_users, tree_depth))
    paths_i = rng.integers(0, branching, size=(num_items, tree_depth))

    # social graph: clipped zipf out-degrees, proximity-weighted
    # preferential attachment
    max_degree = max(4, num_users // 10)
    out_degree = np.clip(rng.zipf(exponent, size=num_users), 1, max_degree)
    d_uu = _tree_distances(paths_u, paths_u)
    in_degree = np.zeros(num_users)
    neighbors: list[np.ndarray] = [np.empty(0, dtype=np.intp)] * num_users
    for u in rng.permutation(num_users):
        w = np.exp(-social_decay * d_uu[u]) * (1.0 + in_degree)
        w[u] = 0.0
        w /= w.sum()
        k = min(int(out_degree[u]), num_users - 1)
        chosen = rng.choice(num_users, size=k, replace=False, p=w)
        neighbors[u] = np.sort(chosen.astype(np.intp))
        in_degree[chosen] += 1.0
    graph = SocialGraph(neighbors, validate=False)

    # interactions: popularity x proximity
    popularity = np.clip(rng.zipf(2.0, size=num_items), 1, 200).astype(np.float64)
    d_ui = _tree_distances(paths_u, paths_i)
    n_pos = np.clip(base_interactions + rng.zipf(2.0, size=num_users) - 1,
                    base_interactions, max(base_interactions, num_items // 10))
    rows = []
    all_items = np.arange(num_items)
    for u in range(num_users):
        w = popularity * np.exp(-interaction_decay * d_ui[u])
        w /= w.sum()
        k = int(n_pos[u])
        pos = np.sort(rng.choice(num_items, size=k, replace=False, p=w))
        for i in pos:
            rows.append((u, int(i), 1, TRAIN))
        pool = np.setdiff1d(all_items, pos)
        negs = np.sort(rng.choice(pool, size=k, replace=False))
        for j in negs:
            rows.append((u, int(j), 0, TRAIN))

    return InteractionData(
        num_users=num_users,
        num_items=num_items,
        records=np.asarray(rows, dtype=np.intp),
        social=graph,
        user_tokens=[f"u{k}" for k in range(num_users)],
        item_tokens=[f"v{k}" for k in range(num_items)],
    )


def degree_histogram(data: InteractionData, which: str) -> list[tuple[int, int]]:
    """Exact (degree, count) pairs for one of the three degree sequences."""
    if which == "user_interactions":
        if data.num_users == 0:
            return []
        mask = data.records[:, 2] == 1
        degrees = np.bincount(data.records[mask, 0], minlength=data.num_users)
    elif which == "item_interactions":
        if data.num_items == 0:
            return []
        mask = data.records[:, 2] == 1
        degrees = np.bincount(data.records[mask, 1], minlength=data.num_items)
    elif which == "social":
        if data.num_users == 0:
            return []
        degrees = data.social.out_degrees()
    else:
        raise ValueError(f"unknown degree sequence {which!r}")
    values, counts = np.unique(degrees, return_counts=True)
    return [(int(v), int(c)) for v, c in zip(values, counts)]


def fit_power_law_slope(degrees, num_bins: int = 14) -> float:
    """Log-log slope of the degree density via sqrt(count)-weighted
    logarithmic binning; for a power law with exponent a this is ~ -a."""
    degrees = np.asarray(degrees, dtype=np.float64)
    degrees = degrees[degrees >= 1]
    if degrees.size == 0 or degrees.max() < 2:
        raise ValueError("fit_power_law_slope: need degrees spanning more than one value")
    hi = degrees.max()
    edges = np.unique(np.round(np.logspace(0, np.log10(hi + 1), num_bins)).astype(int))
    if edges[-1] <= hi:
        edges = np.append(edges, int(hi) + 1)
    counts, _ = np.histogram(degrees, bins=edges)
    widths = np.diff(edges)
    centers = np.sqrt(edges[:-1] * np.clip(edges[1:] - 1, 1, None))
    mask = counts > 0
    density = counts[mask] / widths[mask]
    coef = np.polyfit(np.log(centers[mask]), np.log(density), 1, w=np.sqrt(counts[mask]))
    return float(coef[0])


# ---------------------------------------------------------------------------
# on-disk dataset directory
# ---------------------------------------------------------------------------

def save_dataset(data: InteractionData, outdir) -> None:
    """Write the processed-dataset directory format."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    counts = [int(np.sum(data.records[:, 3] == s)) for s in range(3)]
    meta = [
        f"num_users={data.num_users}",
        f"num_items={data.num_items}",
        f"num_interactions={data.num_interactions}",
        f"num_relations={data.num_relations}",
        f"num_records={len(data.records)}",
        f"threshold={data.threshold if data.threshold is not None else ''}",
        f"seed={data.seed if data.seed is not None else ''}",
        f"split_train={counts[0]}",
        f"split_val={counts[1]}",
        f"split_test={counts[2]}",
    ]
    (outdir / "meta").write_text("\n".join(meta) + "\n")
    with open(outdir / "records.csv", "w") as fh:
        fh.write("user,item,label,split\n")
        for u, i, label, s in data.records:
            fh.write(f"{u},{i},{label},{SPLIT_NAMES[s]}\n")
    with open(outdir / "social.csv", "w") as fh:
        fh.write("src,dst\n")
        for a in range(data.num_users):
            for b in data.social.neighbors[a]:
                fh.write(f"{a},{b}\n")
    for name, tokens in (("idmap_users.csv", data.user_tokens),
                         ("idmap_items.csv", data.item_tokens)):
        with open(outdir / name, "w") as fh:
            fh.write("token,id\n")
            for idx, tok in enumerate(tokens):
                fh.write(f"{tok},{idx}\n")


def load_dataset(indir) -> InteractionData:
    """Read a directory written by save_dataset."""
    indir = Path(indir)
    meta: dict[str, str] = {}
    for line in (indir / "meta").read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    num_users = int(meta["num_users"])
    num_items = int(meta["num_items"])
    split_code = {name: code for code, name in enumerate(SPLIT_NAMES)}
    rows = []
    with open(indir / "records.csv") as fh:
        header = fh.readline()
        if header.strip() != "user,item,label,split":
            raise ValueError(f"{indir}/records.csv: unexpected header")
        for line in fh:
            u, i, label, s = line.strip().split(",")
            rows.append((int(u), int(i), int(label), split_code[s]))
    edges = []
    with open(indir / "social.csv") as fh:
        fh.readline()
        for line in fh:
            a, b = line.strip().split(",")
            edges.append((int(a), int(b)))
    tokens = {}
    for name in ("idmap_users.csv", "idmap_items.csv"):
        items: list[str] = []
        with open(indir / name) as fh:
            fh.readline()
            for line in fh:
                tok, idx = line.rsplit(",", 1)
                assert int(idx) == len(items)
                items.append(tok)
        tokens[name] = items
    return InteractionData(
        num_users=num_users,
        num_items=num_items,
        records=np.asarray(rows, dtype=np.intp).reshape(-1, 4),
        social=SocialGraph.from_edges(edges, num_users),
        user_tokens=tokens["idmap_users.csv"],
        item_tokens=tokens["idmap_items.csv"],
        threshold=float(meta["threshold"]) if meta.get("threshold") else None,
        seed=int(meta["seed"]) if meta.get("seed") else None,
    )
