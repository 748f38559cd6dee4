"""Mini-batch training for MF, HybridMF and HGE, grid search, checkpoints."""
from __future__ import annotations

import dataclasses
import io
import json
import logging
import struct
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import data as _data
from .data import ColdStartSplit, Hierarchy, build_incidences, stratified_batches
from .models import AlsModel, HgeLayer, HgeModel, HybridMfModel, MfModel
from .numerics import DTYPE, SparseIncidence

log = logging.getLogger(__name__)

GD_KINDS = ("mf", "hybrid", "hge")


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    d: int = 32
    h: int = 8
    learning_rate: float = 0.01
    epochs: int = 30
    batch_size: int = 1024
    negatives_per_positive: int = 4
    l2_user: float = 1e-4
    l2_item: float = 1e-4
    l2_layer: float = 1e-4
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    loss: str = "bce"
    sampling_mode: str = "log-proportional"
    sampling_level: int = 0
    seed: int = 0
    levels: list | None = None
    activation: str = "relu"
    leaky_alpha: float = 0.01
    skip: bool = True
    masked_softmax: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1 or self.d < 1 or self.h < 1:
            raise ValueError("epochs, batch_size, d and h must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("bce", "bpr"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "bpr" and self.negatives_per_positive < 1:
            raise ValueError("bpr needs at least one negative per positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy on logits and its gradient w.r.t. each logit."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape:
        raise ValueError("logits and labels differ in length")
    n = max(z.size, 1)
    sign = 2 * y - 1
    m = -sign * z
    # log(1 + exp(m)) without overflow
    loss = np.maximum(m, 0) + np.log1p(np.exp(-np.abs(m)))
    sig = np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))
    return float(loss.sum() / n), (sig - y) / n


def bpr_loss(pos_logits, neg_logits):
    """Mean ``-log sigmoid(pos - neg)`` over aligned pairs, with gradients."""
    diff = np.asarray(pos_logits, dtype=np.float64) - np.asarray(neg_logits, dtype=np.float64)
    loss, g = bce_with_logits(diff, np.ones_like(diff))
    return loss, g, -g


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        lr = DTYPE(self.lr)
        for name, g in grads.items():
            p = params[name]
            p -= (lr * g).astype(p.dtype, copy=False)


class Adam:
    def __init__(self, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= DTYPE(b1)
            m += DTYPE(1 - b1) * g
            v *= DTYPE(b2)
            v += DTYPE(1 - b2) * (g * g)
            p -= (DTYPE(self.lr / c1) * m / (np.sqrt(v / DTYPE(c2)) + DTYPE(self.eps))).astype(p.dtype, copy=False)


def make_optimizer(config: TrainConfig):
    if config.optimizer == "sgd":
        return Sgd(config.learning_rate)
    return Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)


def init_model(kind: str, split: ColdStartSplit, incidences: Sequence[SparseIncidence], config: TrainConfig):
    if kind == "mf":
        return MfModel.init(split.n_users, split.n_items, config.d, config.seed)
    if kind == "hybrid":
        if not incidences:
            raise ValueError("HybridMF needs an item hierarchy")
        return HybridMfModel.init(split.n_users, incidences, config.d, config.seed)
    if kind == "hge":
        if not incidences:
            raise ValueError("HGE needs an item hierarchy")
        return HgeModel.init(
            split.n_users, incidences, config.d, config.h, config.seed, levels=config.levels,
            activation=config.activation, alpha=config.leaky_alpha, skip=config.skip,
            masked=config.masked_softmax,
        )
    raise ValueError(f"unknown model kind {kind!r}")


def _flat_incidence(n_items: int) -> list:
    return [SparseIncidence.from_assignment(np.zeros(n_items, dtype=np.int64), 1)]


def _touched_rows(model, users, items) -> dict:
    """Parameter rows a batch reads, for sparse L2."""
    uu = np.unique(users)
    ii = np.unique(items)
    rows = {"user_embeddings": uu, "item_embeddings": ii}
    if isinstance(model, HybridMfModel):
        rows["feature_embeddings"] = np.unique(model.item_features[ii])
    return rows


class Trainer:
    """Runs epochs of stratified batches through one model and optimizer."""

    def __init__(self, model, split: ColdStartSplit, incidences, config: TrainConfig):
        self.model = model
        self.split = split
        self.incidences = list(incidences) if incidences else _flat_incidence(split.n_items)
        self.config = config
        self.optimizer = make_optimizer(config)
        self.history: list = []

    def batches(self, epoch: int):
        c = self.config
        level = c.sampling_level if c.sampling_level < len(self.incidences) else 0
        return stratified_batches(
            self.split, self.incidences, level, c.batch_size, c.sampling_mode,
            c.negatives_per_positive, c.seed, epoch,
        )

    def l2_weights(self) -> dict:
        c = self.config
        return {"user_embeddings": c.l2_user, "item_embeddings": c.l2_item, "feature_embeddings": c.l2_item}

    def batch_step(self, batch) -> float:
        """Forward, backward and one optimizer step; returns the batch loss."""
        model, c = self.model, self.config
        users, items = batch.users, batch.items
        fwd = None
        if isinstance(model, HgeModel):
            fwd = model.forward()
            e = fwd[0]
            logits = np.einsum("ij,ij->i", model.base.user_embeddings[users], e[items])
        else:
            logits = model.logits(users, items)
        if c.loss == "bce":
            loss, dlogits = bce_with_logits(logits, batch.labels)
        else:
            n_pos = batch.pos_users.size
            pos = np.repeat(logits[:n_pos], c.negatives_per_positive)
            loss, gp, gn = bpr_loss(pos, logits[n_pos:])
            dlogits = np.concatenate([gp.reshape(n_pos, -1).sum(axis=1), gn])
        dlogits = dlogits.astype(DTYPE)
        if fwd is not None:
            grads = model.backward(users, items, dlogits, fwd)
        else:
            grads = model.backward(users, items, dlogits)
        params = model.parameters()
        l2 = self.l2_weights()
        for name, rows in _touched_rows(model, users, items).items():
            if l2.get(name, 0) > 0:
                sub = params[name][rows]
                loss += 0.5 * l2[name] * float(np.sum(sub.astype(np.float64) ** 2))
                grads[name][rows] += DTYPE(l2[name]) * sub
        if c.l2_layer > 0:
            lam = DTYPE(c.l2_layer)
            for name in params:
                if name.startswith("layer"):
                    flat = params[name].reshape(-1)
                    loss += 0.5 * c.l2_layer * float(np.dot(flat, flat))
                    grads[name] += lam * params[name]
        if not np.isfinite(loss):
            raise TrainingError(
                f"non-finite loss; learning_rate={c.learning_rate} is the likely cause"
            )
        self.optimizer.step(params, grads)
        return loss

    def run_epoch(self, epoch: int) -> float:
        total, n = 0.0, 0
        for batch in self.batches(epoch):
            total += self.batch_step(batch) * len(batch)
            n += len(batch)
        mean = total / max(n, 1)
        self.history.append(mean)
        return mean

    def fit(self):
        for epoch in range(self.config.epochs):
            loss = self.run_epoch(epoch)
            log.debug("epoch %d loss %.6f", epoch, loss)
        return self.model, self.history


def fit(kind: str, split: ColdStartSplit, hierarchy: Hierarchy | None, config: TrainConfig, incidences=None):
    """Train a fresh model of ``kind`` on ``split``; returns ``(model, loss_history)``.

    The hierarchy also drives batch stratification for MF, so MF and HGE fed
    the same config see identical batches.
    """
    if incidences is None and hierarchy is not None:
        incidences = build_incidences(hierarchy, split.item_ids)
    if kind == "als":
        from .models import als_fit
        model = als_fit(split, config.d, config.l2_user, config.l2_item, seed=config.seed,
                        iterations=config.epochs, track_loss=True)
        return model, list(model.loss_history)
    model = init_model(kind, split, incidences, config)
    return Trainer(model, split, incidences, config).fit()


def time_epochs(trainers, batches, n_epochs: int = 5, warmup: int = 1) -> list:
    """Per-epoch wall-clock seconds for each trainer replaying ``batches``.

    Trainers take turns batch by batch (alternating who goes first) and each
    one's epoch time is the sum of its own step times, so load drift on a
    shared machine hits every trainer alike.
    """
    clock = time.perf_counter
    times = [[] for _ in trainers]
    for n in range(warmup + n_epochs):
        spent = [0.0] * len(trainers)
        for b, batch in enumerate(batches):
            order = range(len(trainers)) if (n + b) % 2 == 0 else reversed(range(len(trainers)))
            for t in order:
                t0 = clock()
                trainers[t].batch_step(batch)
                spent[t] += clock() - t0
        if n >= warmup:
            for t, dt in enumerate(spent):
                times[t].append(dt)
    return times


D_GRID = tuple(range(20, 201, 20))
LR_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


def validation_split(split: ColdStartSplit) -> ColdStartSplit:
    """Carve a validation split from the train window with the test protocol."""
    return _data.cold_start_split(split.train, seed=split.seed, **split.params)


def grid_search(split: ColdStartSplit, hierarchy: Hierarchy | None, base: TrainConfig, kind: str = "hge",
                d_grid=D_GRID, lr_grid=LR_GRID, k: int = 10):
    """Pick ``(d, learning_rate)`` by PR@k on a validation carve-out.

    Returns the best config and one table row per grid cell. Ties go to the
    smaller ``d``, then the smaller learning rate.
    """
    from .evaluation import evaluate_cold

    val = validation_split(split)
    table = []
    for d in d_grid:
        for lr in lr_grid:
            cfg = base.replace(d=d, learning_rate=lr)
            try:
                model, _ = fit(kind, val, hierarchy, cfg)
                report = evaluate_cold(model, val, ks=[k])
                score = report.metrics[k]["pr"]
            except TrainingError as exc:
                log.warning("grid cell d=%s lr=%s diverged: %s", d, lr, exc)
                score = float("nan")
            table.append({"d": d, "learning_rate": lr, f"pr@{k}": score})
    finite = [r for r in table if np.isfinite(r[f"pr@{k}"])]
    if not finite:
        raise TrainingError("every grid cell diverged")
    best = max(finite, key=lambda r: (r[f"pr@{k}"], -r["d"], -r["learning_rate"]))
    return base.replace(d=best["d"], learning_rate=best["learning_rate"]), table


# ---------------------------------------------------------------- checkpoints

MAGIC = b"HGE1"
VERSION = 1
KIND_CODES = {"mf": 1, "hybrid": 2, "hge": 3, "als": 4}
KIND_NAMES = {v: k for k, v in KIND_CODES.items()}


def _dumps(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _model_header(model):
    """(dims, integer tables, model metadata) for the checkpoint header."""
    if isinstance(model, (MfModel, AlsModel)):
        uf = model.user_factors()
        dims = [uf.shape[0], model.item_factors().shape[0], uf.shape[1]]
        meta = {}
        if isinstance(model, AlsModel):
            meta = {"lambda_x": model.lambda_x, "lambda_y": model.lambda_y, "alpha": model.alpha}
        return dims, [], meta
    if isinstance(model, HybridMfModel):
        sizes = list(model.level_sizes)
        offsets = np.concatenate([[0], np.cumsum(sizes)])[:-1]
        dims = [model.n_users, model.n_items, model.d, len(sizes)] + sizes
        local = model.item_features - offsets[None, :]
        return dims, [local.T], {}
    if isinstance(model, HgeModel):
        h = model.layers[0].h if model.layers else 0
        dims = [model.n_users, model.n_items, model.d, h, len(model.layers)]
        tables = []
        layers_meta = []
        for layer in model.layers:
            dims += [layer.level, layer.incidence.n_categories]
            tables.append(layer.incidence.category_of)
            layers_meta.append({
                "activation": layer.activation, "alpha": layer.alpha,
                "skip": layer.skip, "masked": layer.masked,
                "labels": list(layer.incidence.labels),
            })
        return dims, tables, {"layers": layers_meta}
    raise CheckpointError(f"cannot checkpoint {type(model).__name__}")


def checkpoint_bytes(model, config: dict | None = None, history=None) -> bytes:
    dims, tables, meta = _model_header(model)
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IB", VERSION, KIND_CODES[model.kind]))
    buf.write(struct.pack("<I", len(dims)))
    buf.write(struct.pack(f"<{len(dims)}I", *dims))
    for table in tables:
        buf.write(np.asarray(table, dtype="<u4").tobytes())
    for value in model.parameters().values():
        buf.write(np.ascontiguousarray(value, dtype="<f4").tobytes())
    for blob in (_dumps({"model": meta, "config": config or {}}), _dumps([float(x) for x in (history or [])])):
        buf.write(struct.pack("<I", len(blob)))
        buf.write(blob)
    return buf.getvalue()


def save_checkpoint(model, path, config: dict | None = None, history=None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model, config, history))


@dataclass
class Checkpoint:
    model: object
    config: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointError(
                f"truncated checkpoint: {what} needs {self.pos + n} bytes, file has {len(self.raw)}"
            )
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, n: int, what: str):
        return struct.unpack(f"<{n}I", self.take(4 * n, what))

    def array(self, shape, dtype, what: str) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count, what), dtype=dtype).reshape(shape)


def read_checkpoint(path, expect_kind: str | None = None) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    r = _Reader(raw)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not an HGE1 checkpoint")
    (version,) = r.u32(1, "version")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    (code,) = struct.unpack("<B", r.take(1, "model kind"))
    kind = KIND_NAMES.get(code)
    if kind is None:
        raise CheckpointError(f"{path}: unknown model kind tag {code}")
    if expect_kind is not None and kind != expect_kind:
        raise CheckpointError(f"{path}: checkpoint holds a {kind} model, expected {expect_kind}")
    (n_dims,) = r.u32(1, "dimension count")
    dims = r.u32(n_dims, "dimension header")
    f32 = np.dtype("<f4")
    u32 = np.dtype("<u4")

    def block(shape, what):
        return r.array(shape, f32, what).astype(DTYPE)

    tables = []
    if kind in ("mf", "als"):
        nu, ni, d = dims
        payload = [((nu, d), "user block"), ((ni, d), "item block")]
    elif kind == "hybrid":
        nu, ni, d, n_levels = dims[:4]
        counts = dims[4:4 + n_levels]
        tables = [r.array((n_levels, ni), u32, "feature table").astype(np.int64)]
        payload = [((nu, d), "user block"), ((ni, d), "item block"), ((sum(counts), d), "feature block"),
                   ((nu,), "user bias"), ((ni,), "item bias")]
    else:
        nu, ni, d, h, n_layers = dims[:5]
        lk = dims[5:5 + 2 * n_layers]
        for n in range(n_layers):
            tables.append(r.array((ni,), u32, f"layer {n} categories").astype(np.int64))
        payload = [((nu, d), "user block"), ((ni, d), "item block")]
        for n in range(n_layers):
            payload += [((lk[2 * n + 1], h), f"layer {n} w1"), ((ni, h), f"layer {n} w2")]
    blocks = [block(shape, what) for shape, what in payload]
    (n_cfg,) = r.u32(1, "config length")
    echo = json.loads(r.take(n_cfg, "config echo"))
    (n_hist,) = r.u32(1, "history length")
    history = json.loads(r.take(n_hist, "loss history"))
    if r.pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - r.pos} trailing bytes after payload")
    meta = echo.get("model", {})

    if kind == "mf":
        model = MfModel(*blocks)
    elif kind == "als":
        model = AlsModel(blocks[0], blocks[1], meta["lambda_x"], meta["lambda_y"], meta["alpha"])
    elif kind == "hybrid":
        offsets = np.concatenate([[0], np.cumsum(counts)])[:-1]
        feats = tables[0].T + offsets[None, :]
        model = HybridMfModel(*blocks, feats.astype(np.int64), tuple(counts))
    else:
        base = MfModel(blocks[0], blocks[1])
        layers = []
        for n in range(n_layers):
            lm = meta["layers"][n]
            inc = SparseIncidence.from_assignment(tables[n], lk[2 * n + 1], lm.get("labels", ()))
            layers.append(HgeLayer(inc, blocks[2 + 2 * n], blocks[3 + 2 * n], lk[2 * n],
                                   lm["activation"], lm["alpha"], lm["skip"], lm["masked"]))
        model = HgeModel(base, layers)
    return Checkpoint(model, echo.get("config", {}), history)


def load_checkpoint(path, expect_kind: str | None = None):
    return read_checkpoint(path, expect_kind).model
