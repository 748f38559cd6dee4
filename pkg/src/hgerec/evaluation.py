"""Cold-start HR@k / PR@k, timing comparison and embedding cluster statistics."""
from __future__ import annotations

import json
import platform
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .data import ColdStartSplit, Hierarchy, build_incidences
from .models import RandomModel, random_recommend, topk_from_scores


def _check_users(recommendations, truth):
    if len(recommendations) != len(truth):
        raise ValueError("recommendations and truth cover different users")
    if len(truth) == 0:
        raise ValueError("no users to evaluate")


def hit_rate_at_k(recommendations: Sequence[Sequence], truth: Sequence[set], k: int) -> float:
    """Share of users with at least one relevant item in their top ``k``."""
    _check_users(recommendations, truth)
    hits = sum(1 for recs, rel in zip(recommendations, truth) if any(r in rel for r in list(recs)[:k]))
    return hits / len(truth)


def precision_at_k(recommendations: Sequence[Sequence], truth: Sequence[set], k: int) -> float:
    """Mean over users of ``|top-k ∩ relevant| / |top-k|``."""
    _check_users(recommendations, truth)
    total = 0.0
    for recs, rel in zip(recommendations, truth):
        top = list(recs)[:k]
        if top:
            total += sum(1 for r in top if r in rel) / len(top)
    return total / len(truth)


@dataclass
class EvalReport:
    metrics: dict
    n_test_users: int
    n_cold_items: int
    n_short_lists: int = 0
    candidate_mode: str = "cold"
    seed: int = 0
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "metrics": {str(k): {"hr": v["hr"], "pr": v["pr"]} for k, v in sorted(self.metrics.items())},
            "n_test_users": self.n_test_users,
            "n_cold_items": self.n_cold_items,
            "n_short_lists": self.n_short_lists,
            "candidate_mode": self.candidate_mode,
            "seed": self.seed,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_tsv(self) -> str:
        lines = ["k\thr\tpr"]
        lines += [f"{k}\t{v['hr']!r}\t{v['pr']!r}" for k, v in sorted(self.metrics.items())]
        return "\n".join(lines) + "\n"


def evaluation_sets(split: ColdStartSplit, candidate_mode: str = "cold"):
    """Evaluated users, their relevant cold items, and the candidate pool."""
    if candidate_mode == "cold":
        pool = split.cold_index
    elif candidate_mode == "all":
        pool = np.arange(split.n_items)
    else:
        raise ValueError(f"unknown candidate mode {candidate_mode!r}")
    cold = set(split.cold_index.tolist())
    truth: dict = {}
    for u, i in zip(split.test_users.tolist(), split.test_items.tolist()):
        if i in cold:
            truth.setdefault(u, set()).add(i)
    users = sorted(truth)
    return users, [truth[u] for u in users], pool


def recommend_for_users(model, split: ColdStartSplit, users, pool, k: int, chunk: int = 512):
    """Top-``k`` unseen pool items per user (shorter lists when the pool runs out)."""
    recs = []
    if isinstance(model, RandomModel):
        for u in users:
            cand = np.setdiff1d(pool, split.seen_items(u))
            recs.append(random_recommend(u, min(k, cand.size), cand, model.seed))
        return recs
    for lo in range(0, len(users), chunk):
        block = users[lo:lo + chunk]
        scores = model.score_matrix(block, pool)
        for row, u in enumerate(block):
            keep = ~np.isin(pool, split.seen_items(u))
            recs.append(topk_from_scores(scores[row, keep], pool[keep], k))
    return recs


def evaluate_cold(model, split: ColdStartSplit, ks: Sequence[int] = (10, 20), candidate_mode: str = "cold",
                  config: dict | None = None) -> EvalReport:
    """HR@k and PR@k over users holding test events on cold items."""
    users, truth, pool = evaluation_sets(split, candidate_mode)
    if not users:
        raise ValueError("no evaluable users: the test set has no cold-item events")
    k_max = max(ks)
    recs = recommend_for_users(model, split, users, pool, k_max)
    metrics = {
        k: {"hr": hit_rate_at_k(recs, truth, k), "pr": precision_at_k(recs, truth, k)} for k in ks
    }
    short = sum(1 for r in recs if len(r) < k_max)
    seed = getattr(model, "seed", None)
    return EvalReport(metrics, len(users), len(split.cold_items), short, candidate_mode,
                      split.seed if seed is None else seed, config or {})


# ---------------------------------------------------------------- timing


@dataclass
class TimingReport:
    rows: list
    epochs: int
    hardware: str = field(default_factory=lambda: f"{platform.machine()} {platform.processor() or platform.platform()}")
    kinds: tuple = ("mf", "hge")

    @property
    def ratios(self) -> list:
        return [r["ratio"] for r in self.rows]

    def to_dict(self) -> dict:
        return {"kinds": list(self.kinds), "epochs": self.epochs, "hardware": self.hardware, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_tsv(self) -> str:
        a, b = self.kinds
        lines = [f"d\t{a}_epoch_seconds\t{b}_epoch_seconds\tratio"]
        lines += [f"{r['d']}\t{r['baseline_epoch_seconds']:.6f}\t{r['model_epoch_seconds']:.6f}\t{r['ratio']:.4f}"
                  for r in self.rows]
        return "\n".join(lines) + "\n"


def timing_benchmark(split: ColdStartSplit, hierarchy: Hierarchy, config, d_values=tuple(range(20, 201, 20)),
                     epochs: int = 5, warmup: int = 1, kinds=("mf", "hge")) -> TimingReport:
    """Median epoch wall-clock of ``kinds[1]`` over ``kinds[0]`` for each ``d``.

    Both models use SGD and replay one pre-generated batch sequence, so the
    ratio isolates the extra layer cost.
    """
    from .training import Trainer, init_model, time_epochs

    incidences = build_incidences(hierarchy, split.item_ids)
    rows = []
    for d in d_values:
        cfg = config.replace(d=d, optimizer="sgd")
        trainers = [Trainer(init_model(kind, split, incidences, cfg), split, incidences, cfg) for kind in kinds]
        batches = list(trainers[0].batches(0))
        times = time_epochs(trainers, batches, epochs, warmup)
        secs = [float(np.median(t)) for t in times]
        rows.append({
            "d": d,
            "baseline_epoch_seconds": secs[0],
            "model_epoch_seconds": secs[1],
            "ratio": secs[1] / secs[0],
        })
    return TimingReport(rows, epochs, kinds=tuple(kinds))


# ---------------------------------------------------------------- clustering


@dataclass
class ClusterReport:
    levels: list

    def separation(self, level: int = 0) -> float:
        return self.levels[level]["separation"]

    def to_dict(self) -> dict:
        return {"levels": self.levels}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_tsv(self) -> str:
        lines = ["level\tintra\tinter\tseparation"]
        lines += [f"{r['level']}\t{r['intra']!r}\t{r['inter']!r}\t{r['separation']!r}" for r in self.levels]
        return "\n".join(lines) + "\n"


def _pair_cosines(unit: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    if a.size == 0:
        return float("nan")
    return float(np.mean(np.einsum("ij,ij->i", unit[a], unit[b])))


def _intra_pairs(cats: np.ndarray, n_pairs: int, rng):
    members = [np.flatnonzero(cats == c) for c in np.unique(cats)]
    counts = np.array([m.size * (m.size - 1) // 2 for m in members], dtype=np.int64)
    if counts.sum() < n_pairs:
        pairs = [np.array(np.triu_indices(m.size, 1)) for m in members]
        a = np.concatenate([m[p[0]] for m, p in zip(members, pairs)]) if members else np.array([], int)
        b = np.concatenate([m[p[1]] for m, p in zip(members, pairs)]) if members else np.array([], int)
        return a, b
    which = rng.choice(len(members), n_pairs, p=counts / counts.sum())
    a = np.empty(n_pairs, dtype=np.int64)
    b = np.empty(n_pairs, dtype=np.int64)
    for c in np.unique(which):
        sel = np.flatnonzero(which == c)
        m = members[c]
        x = rng.integers(0, m.size, sel.size)
        y = (x + rng.integers(1, m.size, sel.size)) % m.size
        a[sel], b[sel] = m[x], m[y]
    return a, b


def _inter_pairs(cats: np.ndarray, n_pairs: int, rng):
    n = cats.size
    sizes = np.bincount(cats)
    total = n * (n - 1) // 2 - int(np.sum(sizes * (sizes - 1) // 2))
    if total < n_pairs:
        a, b = np.triu_indices(n, 1)
        keep = cats[a] != cats[b]
        return a[keep], b[keep]
    a_out, b_out = [], []
    need = n_pairs
    while need > 0:
        a = rng.integers(0, n, 2 * need)
        b = rng.integers(0, n, 2 * need)
        keep = cats[a] != cats[b]
        a_out.append(a[keep][:need])
        b_out.append(b[keep][:need])
        need -= a_out[-1].size
    return np.concatenate(a_out), np.concatenate(b_out)


def cluster_report(item_embeddings: np.ndarray, incidences, n_pairs: int = 10_000, seed: int = 0) -> ClusterReport:
    """Mean intra- and inter-category cosine similarity for every level.

    Pairs are enumerated when a level has fewer than ``n_pairs`` of them and
    sampled uniformly (seeded) otherwise. Zero vectors have cosine 0.
    """
    e = np.asarray(item_embeddings, dtype=np.float64)
    if e.shape[0] != incidences[0].n_items:
        raise ValueError("embedding rows must match the item count")
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    unit = np.divide(e, norms, out=np.zeros_like(e), where=norms > 0)
    rows = []
    for lvl, inc in enumerate(incidences):
        rng = np.random.default_rng([seed, lvl])
        cats = np.asarray(inc.category_of)
        intra = _pair_cosines(unit, *_intra_pairs(cats, n_pairs, rng))
        inter = _pair_cosines(unit, *_inter_pairs(cats, n_pairs, rng))
        rows.append({"level": lvl + 1, "intra": intra, "inter": inter, "separation": intra - inter})
    return ClusterReport(rows)


def export_embeddings(model, path, item_ids: Sequence, hierarchy: Hierarchy) -> None:
    """Write ``item_id, level_1..level_L, e_1..e_d`` as TSV (6 significant digits)."""
    emb = np.asarray(model.item_factors() if hasattr(model, "item_factors") else model)
    if emb.shape[0] != len(item_ids):
        raise ValueError("embedding rows must match the item ids")
    labels = [hierarchy.labels(lvl, item_ids) for lvl in range(hierarchy.n_levels)]
    header = ["item_id"] + [f"level_{k + 1}" for k in range(hierarchy.n_levels)] + [
        f"e_{j + 1}" for j in range(emb.shape[1])]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for n, item in enumerate(item_ids):
            cells = [str(item)] + [lab[n] for lab in labels] + [f"{v:.6g}" for v in emb[n].tolist()]
            fh.write("\t".join(cells) + "\n")


def read_embeddings(path):
    """Parse an exported TSV back into ``(item_ids, categories, matrix)``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        n_levels = sum(1 for h in header if h.startswith("level_"))
        ids, cats, rows = [], [], []
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            ids.append(cells[0])
            cats.append(cells[1:1 + n_levels])
            rows.append([float(v) for v in cells[1 + n_levels:]])
    return ids, cats, np.array(rows, dtype=np.float64)
