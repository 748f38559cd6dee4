"""Random, MF, implicit ALS, HybridMF and hierarchical graph embedding models.

Every gradient-trained model exposes the same small surface used by the
trainer: ``parameters()`` (ordered name -> array), ``logits(users, items)``
for paired scores and ``backward(users, items, dlogits)`` returning dense
gradients keyed like ``parameters()``.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .numerics import DTYPE, SparseIncidence, gated_row_softmax, leaky_relu, relu, scatter_rows

ACTIVATIONS = ("relu", "leaky_relu", "identity")


def _uniform(rng, low, high, shape):
    return rng.uniform(low, high, shape).astype(DTYPE)


class _Embedding:
    kind = "base"

    def parameters(self) -> dict:
        raise NotImplementedError

    def param_count(self) -> int:
        return int(sum(p.size for p in self.parameters().values()))

    def astype(self, dtype):
        """Deep copy with every parameter block cast to ``dtype``."""
        other = copy.deepcopy(self)
        for name, value in other.parameters().items():
            value_cast = value.astype(dtype)
            other.set_parameter(name, value_cast)
        return other

    def set_parameter(self, name: str, value: np.ndarray) -> None:
        setattr(self, name, value)

    def user_factors(self) -> np.ndarray:
        raise NotImplementedError

    def item_factors(self) -> np.ndarray:
        raise NotImplementedError

    def score_matrix(self, users, items) -> np.ndarray:
        """Scores for every (user, item) combination, float64."""
        uf = self.user_factors()[np.asarray(users)].astype(np.float64)
        itf = self.item_factors()[np.asarray(items)].astype(np.float64)
        return uf @ itf.T

    def score_items(self, u: int, items) -> np.ndarray:
        return self.score_matrix([u], items)[0]

    def logits(self, users, items) -> np.ndarray:
        uf = self.user_factors()[users]
        itf = self.item_factors()[items]
        return np.einsum("ij,ij->i", uf, itf)


@dataclass
class MfModel(_Embedding):
    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    kind = "mf"

    def __post_init__(self):
        if self.user_embeddings.ndim != 2 or self.item_embeddings.ndim != 2:
            raise ValueError("embeddings must be 2-d")
        if self.user_embeddings.shape[1] != self.item_embeddings.shape[1] or self.user_embeddings.shape[1] < 1:
            raise ValueError("user and item embeddings need the same positive width")

    @classmethod
    def init(cls, n_users: int, n_items: int, d: int, seed: int = 0, scale: float = 0.01):
        rng = np.random.default_rng(seed)
        return cls(_uniform(rng, -scale, scale, (n_users, d)), _uniform(rng, -scale, scale, (n_items, d)))

    @property
    def d(self) -> int:
        return self.user_embeddings.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_embeddings.shape[0]

    def parameters(self) -> dict:
        return {"user_embeddings": self.user_embeddings, "item_embeddings": self.item_embeddings}

    def user_factors(self):
        return self.user_embeddings

    def item_factors(self):
        return self.item_embeddings

    def score(self, u: int, i: int) -> float:
        return mf_score(self, u, i)

    def backward(self, users, items, dlogits) -> dict:
        g = dlogits[:, None]
        return {
            "user_embeddings": scatter_rows(users, g * self.item_embeddings[items], self.n_users),
            "item_embeddings": scatter_rows(items, g * self.user_embeddings[users], self.n_items),
        }


def mf_score(m: MfModel, u: int, i: int) -> float:
    if not (0 <= u < m.n_users and 0 <= i < m.n_items):
        raise IndexError(f"user {u} / item {i} out of range")
    return float(np.dot(m.user_embeddings[u], m.item_embeddings[i]))


# ---------------------------------------------------------------- ALS


@dataclass
class AlsModel(_Embedding):
    x: np.ndarray
    y: np.ndarray
    lambda_x: float = 0.1
    lambda_y: float = 0.1
    alpha: float = 40.0
    loss_history: list = field(default_factory=list)
    kind = "als"

    def __post_init__(self):
        if self.lambda_x < 0 or self.lambda_y < 0:
            raise ValueError("regularization weights must be nonnegative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def parameters(self) -> dict:
        return {"x": self.x, "y": self.y}

    def user_factors(self):
        return self.x

    def item_factors(self):
        return self.y


def counts_matrix(users, items, n_users: int, n_items: int) -> sp.csr_matrix:
    """Event counts as a CSR user x item matrix (duplicates add up)."""
    data = np.ones(len(users), dtype=np.float64)
    m = sp.csr_matrix((data, (np.asarray(users), np.asarray(items))), shape=(n_users, n_items))
    m.sum_duplicates()
    m.sort_indices()
    return m


def als_loss(counts: sp.csr_matrix, x, y, lambda_x: float, lambda_y: float, alpha: float) -> float:
    """Confidence-weighted squared loss over every cell plus ridge terms.

    ``c = 1 + alpha * count`` and ``r = 1`` on observed cells, ``c = 1`` and
    ``r = 0`` elsewhere.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    total = float(np.sum((x.T @ x) * (y.T @ y)))
    coo = counts.tocoo()
    pred = np.einsum("ij,ij->i", x[coo.row], y[coo.col])
    conf = 1.0 + alpha * coo.data
    total += float(np.sum(conf * (1.0 - pred) ** 2 - pred ** 2))
    total += lambda_x * float(np.sum(x * x)) + lambda_y * float(np.sum(y * y))
    return total


def _als_half_step(counts: sp.csr_matrix, fixed: np.ndarray, reg: float, alpha: float) -> np.ndarray:
    d = fixed.shape[1]
    gram = fixed.T @ fixed
    out = np.zeros((counts.shape[0], d))
    eye = np.eye(d)
    for r in range(counts.shape[0]):
        lo, hi = counts.indptr[r], counts.indptr[r + 1]
        if lo == hi and reg == 0:
            continue
        cols = counts.indices[lo:hi]
        extra = alpha * counts.data[lo:hi]
        f = fixed[cols]
        a = gram + (f.T * extra) @ f + reg * eye
        b = f.T @ (1.0 + extra)
        try:
            out[r] = np.linalg.solve(a, b)
        except np.linalg.LinAlgError as exc:
            raise ArithmeticError(f"singular ALS normal equations at row {r}; use a positive lambda") from exc
    return out


def als_fit_counts(
    counts: sp.csr_matrix,
    d: int = 20,
    lambda_x: float = 0.1,
    lambda_y: float = 0.1,
    alpha: float = 40.0,
    iterations: int = 15,
    seed: int = 0,
    track_loss: bool = False,
    tol: float | None = None,
) -> AlsModel:
    """Alternate exact ridge solves for users then items.

    With ``track_loss`` the objective is recorded after initialisation and
    after every half-step in ``loss_history``. With ``tol`` the loop stops
    early once a full alternation lowers the objective by less than ``tol``
    relative; ``iterations`` is then a cap.
    """
    if d < 1 or iterations < 1:
        raise ValueError("d and iterations must be >= 1")
    rng = np.random.default_rng(seed)
    n_users, n_items = counts.shape
    x = rng.uniform(-0.01, 0.01, (n_users, d))
    y = rng.uniform(-0.01, 0.01, (n_items, d))
    counts_t = counts.T.tocsr()
    counts_t.sort_indices()
    history = []
    prev = None
    if track_loss:
        history.append(als_loss(counts, x, y, lambda_x, lambda_y, alpha))
    for _ in range(iterations):
        x = _als_half_step(counts, y, lambda_x, alpha)
        if track_loss:
            history.append(als_loss(counts, x, y, lambda_x, lambda_y, alpha))
        y = _als_half_step(counts_t, x, lambda_y, alpha)
        if track_loss or tol is not None:
            loss = als_loss(counts, x, y, lambda_x, lambda_y, alpha)
        if track_loss:
            history.append(loss)
        if tol is not None:
            if prev is not None and prev - loss <= tol * abs(prev):
                break
            prev = loss
    return AlsModel(x.astype(DTYPE), y.astype(DTYPE), lambda_x, lambda_y, alpha, history)


def als_fit(split, d: int = 20, lambda_x: float = 0.1, lambda_y: float = 0.1, alpha: float = 40.0,
            iterations: int = 15, seed: int = 0, track_loss: bool = False) -> AlsModel:
    counts = counts_matrix(split.train_users, split.train_items, split.n_users, split.n_items)
    return als_fit_counts(counts, d, lambda_x, lambda_y, alpha, iterations, seed, track_loss)


# ---------------------------------------------------------------- HybridMF


def feature_index(incidences: Sequence[SparseIncidence]) -> np.ndarray:
    """I x L matrix of global feature ids (category ids offset per level)."""
    cols, offset = [], 0
    for inc in incidences:
        cols.append(inc.category_of + offset)
        offset += inc.n_categories
    return np.stack(cols, axis=1).astype(np.int64)


@dataclass
class HybridMfModel(_Embedding):
    """MF plus summed category embeddings on the item side and biases.

    There are no user features in any supported dataset, so the user side is
    the plain user embedding.
    """

    user_embeddings: np.ndarray
    item_embeddings: np.ndarray
    feature_embeddings: np.ndarray
    user_bias: np.ndarray
    item_bias: np.ndarray
    item_features: np.ndarray
    level_sizes: tuple = ()
    kind = "hybrid"

    @classmethod
    def init(cls, n_users: int, incidences, d: int, seed: int = 0, scale: float = 0.01):
        rng = np.random.default_rng(seed)
        feats = feature_index(incidences)
        n_items = feats.shape[0]
        n_feat = sum(inc.n_categories for inc in incidences)
        return cls(
            _uniform(rng, -scale, scale, (n_users, d)),
            _uniform(rng, -scale, scale, (n_items, d)),
            _uniform(rng, -scale, scale, (n_feat, d)),
            np.zeros(n_users, dtype=DTYPE),
            np.zeros(n_items, dtype=DTYPE),
            feats,
            tuple(inc.n_categories for inc in incidences),
        )

    @property
    def n_users(self):
        return self.user_embeddings.shape[0]

    @property
    def n_items(self):
        return self.item_embeddings.shape[0]

    @property
    def d(self):
        return self.user_embeddings.shape[1]

    def parameters(self) -> dict:
        return {
            "user_embeddings": self.user_embeddings,
            "item_embeddings": self.item_embeddings,
            "feature_embeddings": self.feature_embeddings,
            "user_bias": self.user_bias,
            "item_bias": self.item_bias,
        }

    def user_factors(self):
        return self.user_embeddings

    def item_factors(self):
        return self.item_embeddings + self.feature_embeddings[self.item_features].sum(axis=1)

    def score_matrix(self, users, items):
        users, items = np.asarray(users), np.asarray(items)
        base = super().score_matrix(users, items)
        return base + self.user_bias[users].astype(np.float64)[:, None] + self.item_bias[items].astype(np.float64)[None, :]

    def logits(self, users, items):
        return super().logits(users, items) + self.user_bias[users] + self.item_bias[items]

    def score(self, u: int, i: int) -> float:
        return hybrid_score(self, u, i)

    def backward(self, users, items, dlogits) -> dict:
        g = dlogits[:, None]
        itf = self.item_factors()
        g_item = scatter_rows(items, g * self.user_embeddings[users], self.n_items)
        n_feat = self.feature_embeddings.shape[0]
        g_feat = sum(scatter_rows(self.item_features[:, col], g_item, n_feat)
                     for col in range(self.item_features.shape[1]))
        return {
            "user_embeddings": scatter_rows(users, g * itf[items], self.n_users),
            "item_embeddings": g_item,
            "feature_embeddings": g_feat,
            "user_bias": scatter_rows(users, dlogits, self.n_users),
            "item_bias": scatter_rows(items, dlogits, self.n_items),
        }


def hybrid_score(m: HybridMfModel, u: int, i: int) -> float:
    if not (0 <= u < m.n_users and 0 <= i < m.n_items):
        raise IndexError(f"user {u} / item {i} out of range")
    item_vec = m.item_embeddings[i] + m.feature_embeddings[m.item_features[i]].sum(axis=0)
    return float(np.dot(m.user_embeddings[u], item_vec) + m.user_bias[u] + m.item_bias[i])


# ---------------------------------------------------------------- HGE


@dataclass
class HgeLayer:
    """One hierarchy level's graph embedding operator.

    Each category ``c`` scores its member items with ``<w1[c], w2[j]>``,
    passes the scores through the activation, and turns them into weights
    with a softmax restricted to the category (``masked``) or over all items.
    Under ReLU, items whose score is cut to zero drop out of the softmax and
    contribute nothing. Every member of ``c`` receives the weighted sum of
    input embeddings as the layer output; the skip connection is applied by
    the model.
    """

    incidence: SparseIncidence
    w1: np.ndarray
    w2: np.ndarray
    level: int = 0
    activation: str = "relu"
    alpha: float = 0.01
    skip: bool = True
    masked: bool = True

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.activation == "leaky_relu" and not 0 < self.alpha < 1:
            raise ValueError("leaky_relu alpha must lie in (0, 1)")
        if self.w1.shape[0] != self.incidence.n_categories or self.w2.shape[0] != self.incidence.n_items:
            raise ValueError("w1 rows must equal the category count and w2 rows the item count")
        if self.w1.shape[1] != self.w2.shape[1]:
            raise ValueError("w1 and w2 need the same hidden size")
        cats = self.incidence.category_of
        self._order = self.incidence.order
        sizes = np.bincount(cats, minlength=self.incidence.n_categories)
        self._nonempty = np.flatnonzero(sizes)
        self._starts = np.concatenate([[0], np.cumsum(sizes)])[:-1][self._nonempty]
        n_items = self.incidence.n_items
        self._members = sp.csr_matrix(
            (np.ones(n_items, dtype=DTYPE), (cats, np.arange(n_items))),
            shape=(self.incidence.n_categories, n_items),
        )
        self._members.sort_indices()
        # Same sparsity patterns with per-item weights swapped into ``data``.
        self._pooled = self._members.copy()
        self._spread = sp.csr_matrix(
            (np.ones(n_items, dtype=DTYPE), cats.copy(), np.arange(n_items + 1)),
            shape=(n_items, self.incidence.n_categories),
        )

    def _pool(self, p: np.ndarray, rows: np.ndarray) -> np.ndarray:
        """``sum_j p_j rows_j`` per category."""
        self._pooled.data = np.take(p, self._members.indices)
        return self._pooled @ rows

    def _spread_back(self, p: np.ndarray, g_cat: np.ndarray) -> np.ndarray:
        """``p_j * g_cat[category(j)]`` for every item."""
        self._spread.data = p
        return self._spread @ g_cat

    @classmethod
    def init(cls, incidence: SparseIncidence, h: int, seed=0, level: int = 0, **flags):
        rng = np.random.default_rng(seed)
        w1 = _uniform(rng, 0.0, 0.01, (incidence.n_categories, h))
        w2 = _uniform(rng, -0.01, 0.01, (incidence.n_items, h))
        return cls(incidence, w1, w2, level, **flags)

    @property
    def h(self) -> int:
        return self.w1.shape[1]

    def param_count(self) -> int:
        return int(self.w1.size + self.w2.size)

    @property
    def gated(self) -> bool:
        return self.activation == "relu"

    def _act(self, s):
        if self.activation == "relu":
            return relu(s)
        if self.activation == "leaky_relu":
            return leaky_relu(s, self.alpha)
        return s

    def _act_grad(self, s):
        if self.activation == "relu":
            return (s > 0).astype(s.dtype)
        if self.activation == "leaky_relu":
            return np.where(s > 0, 1, self.alpha).astype(s.dtype)
        return np.ones_like(s)

    def _segment_sum(self, rows: np.ndarray) -> np.ndarray:
        """Per-category sums of item rows."""
        if rows.ndim == 1:
            sums = np.bincount(self.incidence.category_of, rows, self.incidence.n_categories)
            return sums.astype(rows.dtype, copy=False)
        return self._members @ rows

    def _masked_softmax(self, a: np.ndarray) -> np.ndarray:
        # Under ReLU inactive entries are exactly 0 and active ones positive,
        # so the plain per-category max equals the max over the active set.
        cats = self.incidence.category_of
        top = np.maximum.reduceat(a[self._order], self._starts)
        if self._nonempty.size != self.incidence.n_categories:
            full = np.zeros(self.incidence.n_categories, dtype=a.dtype)
            full[self._nonempty] = top
            top = full
        shifted = a - top[cats]
        w = np.zeros_like(a)
        if self.gated:
            np.exp(shifted, out=w, where=a > 0)
        else:
            np.exp(shifted, out=w)
        z = self._segment_sum(w)[cats]
        return np.divide(w, z, out=np.zeros_like(w), where=z > 0)

    def weights(self):
        """Raw scores and the softmax weights, item-indexed when masked (I,), K x I otherwise."""
        return self._weights()[:2]

    def _weights(self):
        if self.masked:
            w1c = np.take(self.w1, self.incidence.category_of, axis=0)
            s = np.einsum("ij,ij->i", w1c, self.w2)
            if not self._nonempty.size:
                return s, np.zeros_like(s), w1c
            return s, self._masked_softmax(self._act(s)), w1c
        s = self.w1 @ self.w2.T
        a = self._act(s)
        everything = [np.arange(self.incidence.n_items)] * self.incidence.n_categories
        return s, gated_row_softmax(a, everything, gate=self.gated), None

    def forward(self, e: np.ndarray):
        """Layer output (without skip) and a cache for :meth:`backward`."""
        if e.shape[0] != self.incidence.n_items:
            raise ValueError(f"expected {self.incidence.n_items} item rows, got {e.shape[0]}")
        s, p, w1c = self._weights()
        if self.masked:
            g = self._pool(p, e)
        else:
            g = p @ e
        return np.take(g, self.incidence.category_of, axis=0), (e, s, p, w1c)

    def category_embeddings(self, e: np.ndarray) -> np.ndarray:
        s, p = self.weights()
        return self._pool(p, e) if self.masked else p @ e

    def backward(self, cache, g_out: np.ndarray):
        """Gradients w.r.t. the layer input, ``w1`` and ``w2``."""
        e, s, p, w1c = cache
        if self.masked:
            g_cat = self._segment_sum(g_out)
            g_cat_i = np.take(g_cat, self.incidence.category_of, axis=0)
            g_e = self._spread_back(p, g_cat)
            dp = np.einsum("ij,ij->i", g_cat_i, e)
            ds = p * (dp - self._segment_sum(p * dp)[self.incidence.category_of])
            if not self.gated:
                # under ReLU p is already 0 wherever the derivative is
                ds *= self._act_grad(s)
            g_w1 = self._segment_sum(ds[:, None] * self.w2)
            g_w2 = ds[:, None] * w1c
        else:
            g_cat = self._segment_sum(g_out)
            g_e = p.T @ g_cat
            dp = g_cat @ e.T
            ds = p * (dp - np.sum(p * dp, axis=1, keepdims=True)) * self._act_grad(s)
            g_w1 = ds @ self.w2
            g_w2 = ds.T @ self.w1
        return g_e, g_w1.astype(self.w1.dtype, copy=False), g_w2.astype(self.w2.dtype, copy=False)


def hge_layer_forward(layer: HgeLayer, e: np.ndarray) -> np.ndarray:
    return layer.forward(e)[0]


@dataclass
class HgeModel(_Embedding):
    base: MfModel
    layers: list = field(default_factory=list)
    kind = "hge"

    def __post_init__(self):
        levels = [layer.level for layer in self.layers]
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("layers must be ordered by strictly increasing level")
        for layer in self.layers:
            if layer.incidence.n_items != self.base.n_items:
                raise ValueError("every layer must cover the model's item universe")

    @classmethod
    def init(cls, n_users: int, incidences, d: int, h: int, seed: int = 0, levels=None, **flags):
        base = MfModel.init(n_users, incidences[0].n_items if incidences else 0, d, seed)
        levels = range(len(incidences)) if levels is None else levels
        layers = [
            HgeLayer.init(incidences[lvl], h, seed=[seed, lvl + 1], level=lvl, **flags)
            for lvl in levels
        ]
        return cls(base, layers)

    @property
    def n_users(self):
        return self.base.n_users

    @property
    def n_items(self):
        return self.base.n_items

    @property
    def d(self):
        return self.base.d

    def parameters(self) -> dict:
        params = dict(self.base.parameters())
        for n, layer in enumerate(self.layers):
            params[f"layer{n}.w1"] = layer.w1
            params[f"layer{n}.w2"] = layer.w2
        return params

    def set_parameter(self, name, value):
        if name.startswith("layer"):
            idx, attr = name[5:].split(".")
            setattr(self.layers[int(idx)], attr, value)
        else:
            setattr(self.base, name, value)

    def user_factors(self):
        return self.base.user_embeddings

    def forward(self):
        e = self.base.item_embeddings
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(e)
            caches.append(cache)
            e = np.add(out, e, out=out) if layer.skip else out
        return e, caches

    def item_factors(self):
        return hge_item_embeddings(self)

    def logits(self, users, items):
        e, _ = self.forward()
        return np.einsum("ij,ij->i", self.base.user_embeddings[users], e[items])

    def score(self, u: int, i: int) -> float:
        return float(np.dot(self.base.user_embeddings[u], hge_item_embeddings(self)[i]))

    def backward(self, users, items, dlogits, forward=None) -> dict:
        return hge_backward(self, users, items, dlogits, forward)


def hge_item_embeddings(m: HgeModel) -> np.ndarray:
    return m.forward()[0]


def hge_backward(m: HgeModel, users, items, dlogits, forward=None) -> dict:
    """Exact gradients of ``sum(dlogits * <user, final item embedding>)``.

    ``forward`` may carry a precomputed ``m.forward()`` result.
    """
    e, caches = forward if forward is not None else m.forward()
    g = dlogits[:, None]
    u = m.base.user_embeddings
    grads = {"user_embeddings": scatter_rows(users, g * e[items], m.n_users)}
    g_e = scatter_rows(items, g * u[users], m.n_items)
    layer_grads = {}
    for n in range(len(m.layers) - 1, -1, -1):
        layer = m.layers[n]
        g_in, g_w1, g_w2 = layer.backward(caches[n], g_e)
        layer_grads[f"layer{n}.w1"] = g_w1
        layer_grads[f"layer{n}.w2"] = g_w2
        g_e = np.add(g_in, g_e, out=g_in) if layer.skip else g_in
    grads["item_embeddings"] = g_e
    for n in range(len(m.layers)):
        grads[f"layer{n}.w1"] = layer_grads[f"layer{n}.w1"]
        grads[f"layer{n}.w2"] = layer_grads[f"layer{n}.w2"]
    return grads


def hge_param_formula(n_users: int, n_items: int, d: int, categories: Sequence[int], h: int) -> int:
    """``(|U| + I) * d + sum over levels of (I + K) * h``."""
    return (n_users + n_items) * d + sum((n_items + k) * h for k in categories)


def unfactorized_param_count(n_items: int, n_categories: int) -> int:
    """Size of a dense category x item weight matrix."""
    return n_items * n_categories


# ---------------------------------------------------------------- Random / ranking


@dataclass
class RandomModel:
    n_items: int
    seed: int = 0
    kind = "random"

    def param_count(self) -> int:
        return 0


def random_recommend(u: int, k: int, candidates, seed: int = 0) -> list:
    """Seeded uniform sample of ``k`` candidates without replacement."""
    candidates = np.asarray(candidates)
    if k > candidates.size:
        raise ValueError(f"k={k} exceeds {candidates.size} candidates")
    rng = np.random.default_rng([seed, u])
    return candidates[rng.permutation(candidates.size)[:k]].tolist()


def topk_from_scores(scores, candidates, k: int) -> list:
    """Highest ``k`` scores, ties broken by ascending candidate index."""
    scores = np.asarray(scores)
    candidates = np.asarray(candidates)
    order = np.lexsort((candidates, -scores))
    return candidates[order[:k]].tolist()


def recommend_topk(model, u: int, k: int, candidates, exclude=None) -> list:
    """Top-``k`` candidates for user ``u`` after dropping ``exclude``.

    Returns fewer than ``k`` items when too few candidates remain.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if exclude is not None and len(exclude):
        candidates = candidates[~np.isin(candidates, np.asarray(exclude))]
    candidates = np.sort(candidates)
    k_eff = min(k, candidates.size)
    if isinstance(model, RandomModel):
        return random_recommend(u, k_eff, candidates, model.seed)
    return topk_from_scores(model.score_items(u, candidates), candidates, k_eff)


def param_count(model) -> int:
    return model.param_count()
