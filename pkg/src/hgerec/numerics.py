"""Dense/sparse primitives shared by every model.

Dense matrices are plain ``numpy`` arrays of ``float32``; the item-category
structure of one hierarchy level is a :class:`SparseIncidence`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

DTYPE = np.float32


class ShapeError(ValueError):
    pass


class EvaluationError(ArithmeticError):
    pass


def as_matrix(a, dtype=DTYPE) -> np.ndarray:
    arr = np.asarray(a, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with 64-bit accumulation, returned in the input dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out_dtype = np.result_type(a.dtype, b.dtype, DTYPE)
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(out_dtype)


def relu(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    return np.maximum(a, 0).astype(a.dtype, copy=False)


def leaky_relu(a: np.ndarray, alpha: float) -> np.ndarray:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky_relu alpha must lie in (0, 1), got {alpha}")
    a = np.asarray(a)
    return np.maximum(a * a.dtype.type(alpha), a)


def gated_row_softmax(
    scores: np.ndarray, support: Sequence[Sequence[int]], gate: bool = True
) -> np.ndarray:
    """Row-wise softmax restricted to ``support[row]``.

    With ``gate`` on, entries that are not strictly positive are dropped from
    the support as well (they get weight exactly 0). A row whose active set is
    empty comes out all zeros.
    """
    scores = np.asarray(scores)
    out = np.zeros_like(scores)
    for r, cols in enumerate(support):
        cols = np.asarray(cols, dtype=np.intp)
        if cols.size == 0:
            continue
        vals = scores[r, cols]
        if gate:
            keep = vals > 0
            cols, vals = cols[keep], vals[keep]
            if cols.size == 0:
                continue
        w = np.exp(vals - vals.max())
        out[r, cols] = w / w.sum()
    return out


def segment_softmax(
    values: np.ndarray, active: np.ndarray, seg_starts: np.ndarray, n_seg: int
) -> np.ndarray:
    """Softmax of ``values`` within contiguous segments, over ``active`` entries.

    ``values`` must already be sorted by segment; ``seg_starts`` holds the
    first position of each non-empty segment. Inactive entries get 0 and a
    segment with no active entry is all zeros.
    """
    masked = np.where(active, values, -np.inf)
    seg_max = np.maximum.reduceat(masked, seg_starts)
    seg_max = np.where(np.isfinite(seg_max), seg_max, 0)
    lengths = np.diff(np.append(seg_starts, values.shape[0]))
    shifted = masked - np.repeat(seg_max, lengths)
    w = np.where(active, np.exp(shifted), 0).astype(values.dtype)
    z = np.add.reduceat(w, seg_starts)
    z_rep = np.repeat(z, lengths)
    return np.divide(w, z_rep, out=np.zeros_like(w), where=z_rep > 0)


def scatter_rows(index: np.ndarray, rows: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum ``rows[j]`` into output row ``index[j]`` (duplicates accumulate).

    Done as a sparse selection-matrix product, which is far faster than
    ``np.add.at`` and sums each output row in a fixed order.
    """
    index = np.asarray(index)
    rows = np.asarray(rows)
    sel = sp.csr_matrix(
        (np.ones(index.size, dtype=rows.dtype), (index, np.arange(index.size))),
        shape=(n_rows, index.size),
    )
    if rows.ndim == 1:
        return np.asarray(sel @ rows, dtype=rows.dtype)
    return np.asarray(sel @ rows, dtype=rows.dtype).reshape((n_rows,) + rows.shape[1:])


@dataclass(frozen=True)
class SparseIncidence:
    """Item to category membership at one hierarchy level.

    The induced item-item graph (items sharing a category, self loops
    included) is block diagonal once items are ordered by category.
    """

    category_of: np.ndarray
    n_categories: int
    members: tuple = field(repr=False)
    labels: tuple = ()

    @classmethod
    def from_assignment(cls, category_of, n_categories: int | None = None, labels=()):
        category_of = np.asarray(category_of, dtype=np.int64)
        if category_of.ndim != 1:
            raise ShapeError("category_of must be 1-d")
        if n_categories is None:
            n_categories = int(category_of.max()) + 1 if category_of.size else 0
        if category_of.size and (category_of.min() < 0 or category_of.max() >= n_categories):
            raise ValueError("category index out of range")
        order = np.argsort(category_of, kind="stable")
        counts = np.bincount(category_of, minlength=n_categories)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        members = tuple(
            np.sort(order[bounds[c]:bounds[c + 1]]) for c in range(n_categories)
        )
        category_of.setflags(write=False)
        return cls(category_of=category_of, n_categories=n_categories, members=members, labels=tuple(labels))

    @property
    def n_items(self) -> int:
        return int(self.category_of.shape[0])

    @property
    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members], dtype=np.int64)

    @property
    def order(self) -> np.ndarray:
        """Item indices grouped by category (stable within a category)."""
        return np.argsort(self.category_of, kind="stable")

    def item_adjacency(self) -> np.ndarray:
        """Dense item-item same-category matrix; only for small instances."""
        c = self.category_of
        return (c[:, None] == c[None, :]).astype(DTYPE)

    def dense(self) -> np.ndarray:
        """Dense I x K incidence matrix."""
        g = np.zeros((self.n_items, self.n_categories), dtype=DTYPE)
        g[np.arange(self.n_items), self.category_of] = 1
        return g


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: tuple
    passed: bool


def finite_diff_check(
    forward: Callable[[np.ndarray], float],
    analytic_grad: np.ndarray,
    point: np.ndarray,
    eps: float = 1e-6,
    tol: float = 1e-4,
) -> GradCheckReport:
    """Compare ``analytic_grad`` with central differences of ``forward``.

    The perturbed point is float64 so the comparison is not limited by the
    32-bit storage of the model parameters. Per coordinate, the part of the
    discrepancy within the difference quotient's own rounding error
    (``8 * eps64 * |f| / eps``) is not counted; otherwise an exactly-zero
    gradient would be judged against pure rounding noise.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.array(point, dtype=np.float64)
    grad = np.asarray(analytic_grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise ShapeError(f"gradient shape {grad.shape} does not match point {x.shape}")
    numeric = np.zeros_like(x)
    noise = np.zeros_like(x)
    flat = x.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        f_plus = float(forward(x))
        flat[j] = orig - eps
        f_minus = float(forward(x))
        flat[j] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError(f"non-finite forward value at coordinate {j}")
        numeric.reshape(-1)[j] = (f_plus - f_minus) / (2 * eps)
        noise.reshape(-1)[j] = 8 * np.finfo(np.float64).eps * max(abs(f_plus), abs(f_minus)) / (2 * eps)
    denom = np.maximum(np.maximum(np.abs(grad), np.abs(numeric)), 1e-8)
    rel = np.maximum(np.abs(grad - numeric) - noise, 0.0) / denom
    if rel.size == 0:
        return GradCheckReport(0.0, (), True)
    worst = int(np.argmax(rel))
    err = float(rel.reshape(-1)[worst])
    coord = tuple(int(v) for v in np.unravel_index(worst, rel.shape))
    return GradCheckReport(err, coord, err < tol)
