"""Slow, obviously-correct reference implementations used only by the tests.

Nothing here imports the package: each function re-derives its result from
the definition with plain loops (or a generic optimizer).
"""
import math

import numpy as np
from scipy.optimize import minimize


def loop_matmul(a, b):
    n, k = len(a), len(a[0])
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += float(a[i][t]) * float(b[t][j])
            out[i][j] = s
    return out


def loop_dot(u, v):
    return sum(float(x) * float(y) for x, y in zip(u, v))


def peel_kcore(records, k):
    """Drop events whose user or item has < k events, repeat until stable."""
    events = list(records)
    while True:
        users, items = {}, {}
        for u, i, *_ in events:
            users[u] = users.get(u, 0) + 1
            items[i] = items.get(i, 0) + 1
        kept = [r for r in events if users[r[0]] >= k and items[r[1]] >= k]
        if len(kept) == len(events):
            return kept
        events = kept


def brute_hit_rate(recs, truth, k):
    hits = 0
    for r, t in zip(recs, truth):
        found = False
        for item in list(r)[:k]:
            for rel in t:
                if item == rel:
                    found = True
        hits += found
    return hits / len(truth)


def brute_precision(recs, truth, k):
    total = 0.0
    for r, t in zip(recs, truth):
        top = list(r)[:k]
        if not top:
            continue
        count = 0
        for item in top:
            if item in t:
                count += 1
        total += count / len(top)
    return total / len(truth)


def full_sort_topk(scores, candidates, k):
    pairs = sorted(zip(candidates, scores), key=lambda p: (-p[1], p[0]))
    return [c for c, _ in pairs[:k]]


def hge_layer_loop(e, category_of, w1, w2, activation="relu", alpha=0.01):
    """Per-item output of one layer (no skip), by explicit loops in float64."""
    n_items, d = len(e), len(e[0])
    out = [[0.0] * d for _ in range(n_items)]
    for c in range(len(w1)):
        members = [j for j in range(n_items) if category_of[j] == c]
        acts = {}
        for j in members:
            s = loop_dot(w1[c], w2[j])
            if activation == "relu":
                if s > 0:
                    acts[j] = s
            elif activation == "leaky_relu":
                acts[j] = s if s > 0 else alpha * s
            else:
                acts[j] = s
        if not acts:
            continue
        top = max(acts.values())
        z = sum(math.exp(a - top) for a in acts.values())
        pooled = [0.0] * d
        for j, a in acts.items():
            p = math.exp(a - top) / z
            for t in range(d):
                pooled[t] += p * float(e[j][t])
        for j in members:
            out[j] = list(pooled)
    return out


def hge_model_loop(item_emb, layers, skip=True, activation="relu"):
    """``layers``: list of (category_of, w1, w2), finest first."""
    e = [[float(v) for v in row] for row in item_emb]
    for category_of, w1, w2 in layers:
        out = hge_layer_loop(e, category_of, w1, w2, activation)
        e = [[a + b for a, b in zip(r, o)] for r, o in zip(e, out)] if skip else out
    return e


def als_objective_dense(counts, x, y, lam_x, lam_y, alpha):
    counts = np.asarray(counts, dtype=np.float64)
    p = (counts > 0).astype(np.float64)
    c = 1.0 + alpha * counts
    r = p - x @ y.T
    return float(np.sum(c * r * r) + lam_x * np.sum(x * x) + lam_y * np.sum(y * y))


def als_gd_oracle(counts, d, lam_x, lam_y, alpha, restarts=8, seed=0):
    """Best L-BFGS minimum of the explicit weighted objective over restarts."""
    counts = np.asarray(counts, dtype=np.float64)
    n_u, n_i = counts.shape
    p = (counts > 0).astype(np.float64)
    c = 1.0 + alpha * counts

    def f(theta):
        x = theta[:n_u * d].reshape(n_u, d)
        y = theta[n_u * d:].reshape(n_i, d)
        r = p - x @ y.T
        val = np.sum(c * r * r) + lam_x * np.sum(x * x) + lam_y * np.sum(y * y)
        gx = -2 * (c * r) @ y + 2 * lam_x * x
        gy = -2 * (c * r).T @ x + 2 * lam_y * y
        return val, np.concatenate([gx.ravel(), gy.ravel()])

    rng = np.random.default_rng(seed)
    best = math.inf
    for _ in range(restarts):
        theta0 = rng.normal(0, 0.5, (n_u + n_i) * d)
        res = minimize(f, theta0, jac=True, method="L-BFGS-B", options={"maxiter": 5000, "gtol": 1e-10})
        best = min(best, float(res.fun))
    return best


def hypergeometric_hit_rate(k, n_candidates, n_relevant=1):
    """P(at least one relevant in a uniform k-subset)."""
    if k >= n_candidates:
        return 1.0
    miss = math.comb(n_candidates - n_relevant, k) / math.comb(n_candidates, k)
    return 1.0 - miss
