"""Interaction logs, item hierarchies, the cold-start split and batching."""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .numerics import SparseIncidence

log = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400
OTHER = "__OTHER__"
INTERACTION_COLUMNS = ("user_id", "item_id", "timestamp", "value")


class DataError(ValueError):
    pass


class EmptyDataError(DataError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionLog:
    user_ids: np.ndarray
    item_ids: np.ndarray
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        n = len(self.user_ids)
        if not (len(self.item_ids) == len(self.timestamps) == len(self.values) == n):
            raise DataError("interaction columns differ in length")
        if n and np.min(self.timestamps) < 0:
            raise DataError("timestamps must be nonnegative")

    @classmethod
    def from_records(cls, records) -> "InteractionLog":
        records = list(records)
        if not records:
            return cls.empty()
        users, items, ts, vals = zip(*records)
        return cls(
            np.array(users, dtype=object),
            np.array(items, dtype=object),
            np.array(ts, dtype=np.int64),
            np.array(vals, dtype=np.float32),
        )

    @classmethod
    def empty(cls) -> "InteractionLog":
        return cls(
            np.array([], dtype=object),
            np.array([], dtype=object),
            np.array([], dtype=np.int64),
            np.array([], dtype=np.float32),
        )

    def __len__(self) -> int:
        return len(self.user_ids)

    def subset(self, mask_or_index) -> "InteractionLog":
        return InteractionLog(
            self.user_ids[mask_or_index],
            self.item_ids[mask_or_index],
            self.timestamps[mask_or_index],
            self.values[mask_or_index],
        )

    def records(self):
        return list(zip(self.user_ids, self.item_ids, self.timestamps.tolist(), self.values.tolist()))

    def unique_items(self) -> list:
        return sorted(set(self.item_ids.tolist()))

    def unique_users(self) -> list:
        return sorted(set(self.user_ids.tolist()))


@dataclass(frozen=True)
class Hierarchy:
    """Per-level item -> category label maps; ``levels[0]`` is the finest."""

    levels: tuple

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    def labels(self, level: int, item_ids: Sequence) -> list:
        mapping = self.levels[level]
        missing = [i for i in item_ids if i not in mapping]
        if missing:
            raise DataError(f"item {missing[0]!r} has no category at level_{level + 1}")
        return [mapping[i] for i in item_ids]

    def restrict(self, item_ids) -> "Hierarchy":
        keep = set(item_ids)
        return Hierarchy(tuple({k: v for k, v in lvl.items() if k in keep} for lvl in self.levels))


def _fmt_value(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def load_interactions(path, skip_bad_rows: bool = False) -> InteractionLog:
    """Read a ``user_id,item_id,timestamp,value`` CSV."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"interactions file not found: {path}")
    records, bad = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in INTERACTION_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column {missing[0]!r}")
        pos = [header.index(c) for c in INTERACTION_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                u, i, t, v = (row[p] for p in pos)
                ts = float(t)
                if not math.isfinite(ts) or ts < 0:
                    raise ValueError(t)
                value = float(v)
                if not math.isfinite(value):
                    raise ValueError(v)
            except (IndexError, ValueError):
                bad.append(lineno)
                continue
            records.append((u, i, int(ts), value))
    if bad:
        if not skip_bad_rows:
            raise DataError(f"{path}: unparseable row at line {bad[0]} ({len(bad)} bad rows)")
        log.warning("%s: skipped %d unparseable rows", path, len(bad))
    if not records:
        raise EmptyDataError(f"{path}: no interactions")
    return InteractionLog.from_records(records)


def write_interactions(interactions: InteractionLog, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERACTION_COLUMNS)
        for u, i, t, v in interactions.records():
            w.writerow([u, i, int(t), _fmt_value(v)])


def load_hierarchy(path) -> Hierarchy:
    """Read an ``item_id,level_1,...,level_L`` CSV (level_1 finest)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"hierarchy file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "item_id" or len(header) < 2:
            raise DataError(f"{path}: header must be item_id,level_1,...")
        n_levels = len(header) - 1
        levels = [dict() for _ in range(n_levels)]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_levels + 1:
                raise DataError(f"{path}: line {lineno} has {len(row)} fields, expected {n_levels + 1}")
            for lvl in range(n_levels):
                levels[lvl][row[0]] = row[lvl + 1]
    return Hierarchy(tuple(levels))


def write_hierarchy(h: Hierarchy, path, item_ids=None) -> None:
    if item_ids is None:
        item_ids = sorted(h.levels[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id"] + [f"level_{k + 1}" for k in range(h.n_levels)])
        for item in item_ids:
            w.writerow([item] + [lvl[item] for lvl in h.levels])


def binarize(interactions: InteractionLog, threshold: float = 3.0) -> InteractionLog:
    """Map values ``>= threshold`` to 1 and drop the rest."""
    keep = interactions.values >= threshold
    out = interactions.subset(keep)
    return InteractionLog(out.user_ids, out.item_ids, out.timestamps, np.ones(len(out), dtype=np.float32))


def k_core_filter(interactions: InteractionLog, k: int = 5) -> InteractionLog:
    """Peel users and items with fewer than ``k`` events until nothing changes."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _, u = np.unique(interactions.user_ids.astype(str), return_inverse=True)
    _, i = np.unique(interactions.item_ids.astype(str), return_inverse=True)
    keep = np.ones(len(interactions), dtype=bool)
    while True:
        uc = np.bincount(u[keep], minlength=u.max(initial=-1) + 1)
        ic = np.bincount(i[keep], minlength=i.max(initial=-1) + 1)
        new_keep = keep & (uc[u] >= k) & (ic[i] >= k)
        if new_keep.sum() == keep.sum():
            break
        keep = new_keep
    if not keep.any():
        raise EmptyDataError(f"{k}-core filtering removed every interaction")
    return interactions.subset(keep)


def merge_small_categories(h: Hierarchy, level: int, min_items: int = 150, item_ids=None) -> Hierarchy:
    """Relabel categories with fewer than ``min_items`` items to ``__OTHER__``.

    Sizes are counted over ``item_ids`` when given (the current item
    universe), otherwise over every item in the level's map.
    """
    if not 0 <= level < h.n_levels:
        raise IndexError(f"level {level} out of range for {h.n_levels} levels")
    mapping = h.levels[level]
    universe = list(mapping) if item_ids is None else [i for i in item_ids if i in mapping]
    sizes: dict = {}
    for item in universe:
        sizes[mapping[item]] = sizes.get(mapping[item], 0) + 1
    small = {c for c, n in sizes.items() if n < min_items}
    if not small:
        return h
    merged = {item: (OTHER if c in small else c) for item, c in mapping.items()}
    levels = list(h.levels)
    levels[level] = merged
    return Hierarchy(tuple(levels))


def build_incidence(h: Hierarchy, level: int, item_ids: Sequence) -> SparseIncidence:
    """Incidence of ``item_ids`` (in index order) against the level's categories.

    Categories are indexed in sorted label order.
    """
    labels = h.labels(level, item_ids)
    names = sorted(set(labels))
    lookup = {c: n for n, c in enumerate(names)}
    return SparseIncidence.from_assignment([lookup[c] for c in labels], len(names), names)


def build_incidences(h: Hierarchy, item_ids: Sequence) -> list:
    return [build_incidence(h, lvl, item_ids) for lvl in range(h.n_levels)]


@dataclass(frozen=True)
class ColdStartSplit:
    train: InteractionLog
    test: InteractionLog
    cold_items: tuple
    user_ids: tuple
    item_ids: tuple
    seed: int
    params: dict = field(default_factory=dict)

    @cached_property
    def user_index(self) -> dict:
        return {u: n for n, u in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict:
        return {i: n for n, i in enumerate(self.item_ids)}

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def train_users(self) -> np.ndarray:
        return np.array([self.user_index[u] for u in self.train.user_ids], dtype=np.int64)

    @cached_property
    def train_items(self) -> np.ndarray:
        return np.array([self.item_index[i] for i in self.train.item_ids], dtype=np.int64)

    @cached_property
    def test_users(self) -> np.ndarray:
        return np.array([self.user_index[u] for u in self.test.user_ids], dtype=np.int64)

    @cached_property
    def test_items(self) -> np.ndarray:
        return np.array([self.item_index[i] for i in self.test.item_ids], dtype=np.int64)

    @cached_property
    def cold_index(self) -> np.ndarray:
        return np.array(sorted(self.item_index[i] for i in self.cold_items), dtype=np.int64)

    @cached_property
    def train_keys(self) -> np.ndarray:
        """Sorted unique ``user * n_items + item`` codes of train pairs."""
        return np.unique(self.train_users * self.n_items + self.train_items)

    def seen_items(self, user: int) -> np.ndarray:
        lo = np.searchsorted(self.train_keys, user * self.n_items)
        hi = np.searchsorted(self.train_keys, (user + 1) * self.n_items)
        return self.train_keys[lo:hi] - user * self.n_items

    def manifest(self) -> dict:
        return {
            "seed": int(self.seed),
            "params": dict(self.params),
            "n_train_events": len(self.train),
            "n_test_events": len(self.test),
            "n_users": self.n_users,
            "n_items": self.n_items,
            "cold_items": list(self.cold_items),
            "user_ids": list(self.user_ids),
            "item_ids": list(self.item_ids),
        }


def _floor(x: float) -> int:
    return int(math.floor(x + 1e-9))


def cold_start_split(
    interactions: InteractionLog,
    test_window_days: float = 14,
    cold_fraction: float = 0.2,
    downsample: float = 0.01,
    seed: int = 0,
) -> ColdStartSplit:
    """Time-based holdout with a seeded cold-item partition.

    The last ``test_window_days`` form the test set. ``cold_fraction`` of the
    unique items are drawn (among items with train events) as cold; each cold
    item keeps ``max(1, floor(downsample * n))`` of its ``n`` train events.
    Test events are restricted to cold items and to users seen in train.
    """
    if len(interactions) == 0:
        raise EmptyDataError("empty interaction log")
    ts = interactions.timestamps
    cutoff = ts.max() - test_window_days * SECONDS_PER_DAY
    if ts.min() > cutoff:
        raise DataError(f"log spans less than the {test_window_days}-day test window")
    test_mask = ts > cutoff
    if not test_mask.any():
        raise DataError("empty test window")
    rng = np.random.default_rng(seed)

    n_unique = len(set(interactions.item_ids.tolist()))
    n_cold = _floor(cold_fraction * n_unique)
    if n_cold == 0:
        raise DataError("cold fraction selects zero items")
    train_pos = np.flatnonzero(~test_mask)
    train_items = interactions.item_ids[train_pos]
    eligible = sorted(set(train_items.tolist()))
    if len(eligible) < n_cold:
        raise DataError(f"only {len(eligible)} items have train events, need {n_cold} cold items")
    cold = sorted(eligible[j] for j in rng.choice(len(eligible), n_cold, replace=False))
    cold_set = set(cold)

    by_item: dict = {}
    for p, item in zip(train_pos.tolist(), train_items.tolist()):
        if item in cold_set:
            by_item.setdefault(item, []).append(p)
    keep_train = np.zeros(len(interactions), dtype=bool)
    keep_train[train_pos] = True
    for item in cold:
        pos = np.array(by_item[item])
        n_keep = max(1, _floor(downsample * pos.size))
        chosen = rng.choice(pos.size, n_keep, replace=False)
        drop = np.setdiff1d(pos, pos[chosen])
        keep_train[drop] = False

    train = interactions.subset(keep_train)
    user_ids = tuple(train.unique_users())
    item_ids = tuple(train.unique_items())
    known_users = set(user_ids)
    test_mask &= np.array([i in cold_set for i in interactions.item_ids], dtype=bool)
    test_mask &= np.array([u in known_users for u in interactions.user_ids], dtype=bool)
    test = interactions.subset(test_mask)
    params = {
        "test_window_days": test_window_days,
        "cold_fraction": cold_fraction,
        "downsample": downsample,
    }
    return ColdStartSplit(train, test, tuple(cold), user_ids, item_ids, int(seed), params)


def write_split(split: ColdStartSplit, out_dir) -> None:
    os.makedirs(out_dir, exist_ok=True)
    write_interactions(split.train, os.path.join(out_dir, "train.csv"))
    write_interactions(split.test, os.path.join(out_dir, "test.csv"))
    with open(os.path.join(out_dir, "split.json"), "w", encoding="utf-8") as fh:
        json.dump(split.manifest(), fh, indent=1)
        fh.write("\n")


def read_split(out_dir) -> ColdStartSplit:
    with open(os.path.join(out_dir, "split.json"), encoding="utf-8") as fh:
        m = json.load(fh)
    train = load_interactions(os.path.join(out_dir, "train.csv"))
    test_path = os.path.join(out_dir, "test.csv")
    try:
        test = load_interactions(test_path)
    except EmptyDataError:
        test = InteractionLog.empty()
    return ColdStartSplit(
        train, test, tuple(m["cold_items"]), tuple(m["user_ids"]), tuple(m["item_ids"]),
        int(m["seed"]), m["params"],
    )


def allocate(weights: np.ndarray, total: int, caps: np.ndarray) -> np.ndarray:
    """Largest-remainder apportionment of ``total`` units, respecting ``caps``.

    Ties in the remainder go to the lower index.
    """
    weights = np.asarray(weights, dtype=np.float64)
    caps = np.asarray(caps, dtype=np.int64)
    out = np.zeros(weights.shape, dtype=np.int64)
    total = int(min(total, caps.sum()))
    open_ = caps > 0
    while total > 0:
        w = np.where(open_, weights, 0.0)
        if w.sum() <= 0:
            w = open_.astype(np.float64)
        ideal = total * w / w.sum()
        base = np.floor(ideal + 1e-9).astype(np.int64)
        left = total - base.sum()
        rem = np.where(open_, ideal - base, -1.0)
        order = np.lexsort((np.arange(rem.size), -rem))
        base[order[:left]] += 1
        room = caps - out
        give = np.minimum(base, room)
        out += give
        total -= int(give.sum())
        open_ = open_ & (out < caps)
    return out


@dataclass
class Batch:
    pos_users: np.ndarray
    pos_items: np.ndarray
    neg_users: np.ndarray
    neg_items: np.ndarray
    histogram: list

    @property
    def users(self) -> np.ndarray:
        return np.concatenate([self.pos_users, self.neg_users])

    @property
    def items(self) -> np.ndarray:
        return np.concatenate([self.pos_items, self.neg_items])

    @property
    def labels(self) -> np.ndarray:
        return np.concatenate([np.ones(self.pos_users.size), np.zeros(self.neg_users.size)]).astype(np.float32)

    def __len__(self) -> int:
        return int(self.pos_users.size)


def sample_negatives(split: ColdStartSplit, users: np.ndarray, ratio: int, rng) -> tuple:
    """Uniform non-interacted items, ``ratio`` per entry of ``users``."""
    n_items = split.n_items
    neg_u = np.repeat(users, ratio)
    if neg_u.size == 0:
        return neg_u, neg_u.copy()
    keys = split.train_keys
    neg_i = np.empty_like(neg_u)
    todo = np.arange(neg_u.size)
    for _ in range(1000):
        cand = rng.integers(0, n_items, size=todo.size)
        code = neg_u[todo] * n_items + cand
        pos = np.searchsorted(keys, code)
        hit = (pos < keys.size) & (keys[np.minimum(pos, keys.size - 1)] == code)
        neg_i[todo[~hit]] = cand[~hit]
        todo = todo[hit]
        if todo.size == 0:
            return neg_u, neg_i
    raise DataError("negative sampling failed: some user has interacted with (almost) every item")


def stratified_batches(
    split: ColdStartSplit,
    incidences: Sequence[SparseIncidence],
    level: int = 0,
    batch_size: int = 1024,
    mode: str = "log-proportional",
    ratio: int = 4,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[Batch]:
    """One epoch of category-stratified batches over the train positives.

    Every batch draws positives from each category in proportion to the
    mode's weights (equal counts, or ``ln(1 + category size)``); categories
    that run dry hand their share to the others, so the epoch covers every
    train positive exactly once.
    """
    inc = incidences[level]
    K = inc.n_categories
    if mode == "uniform":
        if batch_size < K:
            raise ConfigError(f"batch_size {batch_size} is smaller than the {K} categories at level_{level + 1}")
        weights = np.ones(K)
    elif mode == "log-proportional":
        weights = np.log1p(inc.sizes.astype(np.float64))
    else:
        raise ConfigError(f"unknown sampling mode {mode!r}")
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    users, items = split.train_users, split.train_items
    perm = rng.permutation(users.size)
    cats = inc.category_of[items[perm]]
    order = np.argsort(cats, kind="stable")
    counts = np.bincount(cats, minlength=K)
    starts = np.concatenate([[0], np.cumsum(counts)])[:-1]
    queues = [perm[order[starts[c]:starts[c] + counts[c]]] for c in range(K)]
    taken = np.zeros(K, dtype=np.int64)
    remaining = counts.copy()
    while remaining.sum() > 0:
        quota = allocate(weights, batch_size, remaining)
        picks = [queues[c][taken[c]:taken[c] + quota[c]] for c in range(K) if quota[c]]
        taken += quota
        remaining -= quota
        idx = np.concatenate(picks)
        pu, pi = users[idx], items[idx]
        nu, ni = sample_negatives(split, pu, ratio, rng)
        hist = [np.bincount(lvl.category_of[pi], minlength=lvl.n_categories) for lvl in incidences]
        yield Batch(pu, pi, nu, ni, hist)


def synth_generate(
    n_users: int = 2000,
    n_items: int = 1000,
    n_levels: int = 2,
    branching: Sequence[int] = (5, 4),
    d_true: int = 16,
    noise: float = 0.3,
    interactions_per_user: int = 20,
    seed: int = 0,
    span_days: float = 120,
    strength: float = 4.0,
    level_scale: float = 0.6,
    start: int = 1_600_000_000,
    return_latent: bool = False,
):
    """Planted-hierarchy interaction data.

    ``branching[0]`` is the number of top-level categories and
    ``branching[k]`` the number of children of every level-``k`` node. Latent
    item vectors are a top-level draw perturbed down the tree (scale shrinks
    by ``level_scale`` per level) plus per-item ``noise``; users pick
    ``interactions_per_user`` distinct items by softmax sampling over
    ``strength * <user, item>``. With ``return_latent`` the planted item
    vectors are returned as a third element.
    """
    if min(n_users, n_items, n_levels, d_true, interactions_per_user) < 1:
        raise ValueError("sizes must be positive")
    if len(branching) != n_levels:
        raise ValueError("need one branching factor per level")
    if interactions_per_user > n_items:
        raise ValueError("interactions_per_user exceeds n_items")
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_true)
    paths = [()]
    vecs = [np.zeros(d_true)]
    for depth, b in enumerate(branching):
        sd = scale * level_scale ** depth
        new_paths, new_vecs = [], []
        for p, v in zip(paths, vecs):
            for c in range(b):
                new_paths.append(p + (c,))
                new_vecs.append(v + rng.normal(0.0, sd, d_true))
        paths, vecs = new_paths, new_vecs
    n_leaves = len(paths)
    leaf_of = rng.permutation(np.arange(n_items) % n_leaves)
    leaf_vecs = np.array(vecs)
    item_vecs = leaf_vecs[leaf_of].copy()
    if noise > 0:
        item_vecs += rng.normal(0.0, noise * scale, (n_items, d_true))
    width = len(str(n_items - 1))
    item_ids = [f"i{j:0{width}d}" for j in range(n_items)]
    levels = []
    for lvl in range(n_levels):
        depth = n_levels - lvl
        levels.append({
            item_ids[j]: "c" + ".".join(str(x) for x in paths[leaf_of[j]][:depth])
            for j in range(n_items)
        })
    hierarchy = Hierarchy(tuple(levels))

    user_vecs = rng.normal(0.0, scale, (n_users, d_true))
    logits = strength * np.sqrt(d_true) * (user_vecs @ item_vecs.T)
    gumbel = rng.gumbel(size=logits.shape)
    picks = np.argsort(-(logits + gumbel), axis=1, kind="stable")[:, :interactions_per_user]
    uw = len(str(n_users - 1))
    users = np.repeat([f"u{u:0{uw}d}" for u in range(n_users)], interactions_per_user)
    items = np.array(item_ids, dtype=object)[picks.reshape(-1)]
    ts = start + np.floor(rng.uniform(0, span_days * SECONDS_PER_DAY, users.size)).astype(np.int64)
    interactions = InteractionLog(
        users.astype(object), items, ts, np.ones(users.size, dtype=np.float32)
    )
    if return_latent:
        return interactions, hierarchy, item_vecs
    return interactions, hierarchy
