"""Command-line entry point: ``hgerec <subcommand> [flags]``.

Every run is driven by one JSON config (all sections optional, unknown keys
rejected) plus a seed, and writes the fully resolved config into its output
directory as ``config.json``.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from . import data as _data
from .training import CheckpointError, TrainConfig, TrainingError

EXIT_FAILURE = 1
EXIT_USAGE = 2


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class SynthSection(_Strict):
    n_users: int = Field(2000, ge=1)
    n_items: int = Field(1000, ge=1)
    n_levels: int = Field(2, ge=1)
    branching: list[int] = [5, 4]
    d_true: int = Field(16, ge=1)
    noise: float = Field(0.3, ge=0)
    interactions_per_user: int = Field(20, ge=1)
    span_days: float = Field(120, gt=0)
    strength: float = 4.0
    level_scale: float = Field(0.6, gt=0)


class DataSection(_Strict):
    interactions: Optional[str] = None
    hierarchy: Optional[str] = None
    prepared: Optional[str] = None
    threshold: float = 3.0
    k_core: int = Field(5, ge=1)
    min_category_items: int = Field(150, ge=0)
    skip_bad_rows: bool = False
    synth: SynthSection = SynthSection()


class SplitSection(_Strict):
    test_window_days: float = Field(14, gt=0)
    cold_fraction: float = Field(0.2, ge=0, le=1)
    downsample: float = Field(0.01, ge=0, le=1)
    seed: Optional[int] = Field(None, ge=0)


class ModelSection(_Strict):
    kind: Literal["random", "mf", "als", "hybrid", "hge"] = "hge"
    d: int = Field(32, ge=1)
    h: int = Field(8, ge=1)
    levels: Optional[list[int]] = None
    activation: Literal["relu", "leaky_relu", "identity"] = "relu"
    leaky_alpha: float = Field(0.01, gt=0, lt=1)
    skip: bool = True
    masked_softmax: bool = True
    als_alpha: float = Field(40.0, ge=0)
    als_lambda_x: float = Field(0.1, ge=0)
    als_lambda_y: float = Field(0.1, ge=0)


class TrainSection(_Strict):
    learning_rate: float = Field(0.01, ge=0)
    epochs: int = Field(30, ge=1)
    batch_size: int = Field(1024, ge=1)
    negatives_per_positive: int = Field(4, ge=0)
    l2_user: float = Field(1e-4, ge=0)
    l2_item: float = Field(1e-4, ge=0)
    l2_layer: float = Field(1e-4, ge=0)
    optimizer: Literal["adam", "sgd"] = "adam"
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    adam_eps: float = Field(1e-8, gt=0)
    loss: Literal["bce", "bpr"] = "bce"
    sampling_mode: Literal["log-proportional", "uniform"] = "log-proportional"
    sampling_level: int = Field(0, ge=0)
    d_grid: list[int] = list(range(20, 201, 20))
    lr_grid: list[float] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]


class EvalSection(_Strict):
    ks: list[int] = [10, 20]
    candidate_mode: Literal["cold", "all"] = "cold"
    cluster_pairs: int = Field(10_000, ge=1)
    benchmark_d: list[int] = list(range(20, 201, 20))
    benchmark_epochs: int = Field(5, ge=3)
    benchmark_warmup: int = Field(1, ge=0)

    @field_validator("ks")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) < 1:
            raise ValueError("ks must be a non-empty list of positive integers")
        return v


class RunConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2 ** 64)
    data: DataSection = DataSection()
    split: SplitSection = SplitSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()

    @property
    def split_seed(self) -> int:
        return self.seed if self.split.seed is None else self.split.seed

    def train_config(self) -> TrainConfig:
        m, t = self.model, self.train
        return TrainConfig(
            d=m.d, h=m.h, learning_rate=t.learning_rate, epochs=t.epochs, batch_size=t.batch_size,
            negatives_per_positive=t.negatives_per_positive, l2_user=t.l2_user, l2_item=t.l2_item,
            l2_layer=t.l2_layer, optimizer=t.optimizer, beta1=t.beta1, beta2=t.beta2, adam_eps=t.adam_eps,
            loss=t.loss, sampling_mode=t.sampling_mode, sampling_level=t.sampling_level, seed=self.seed,
            levels=m.levels, activation=m.activation, leaky_alpha=m.leaky_alpha, skip=m.skip,
            masked_softmax=m.masked_softmax,
        )

    def resolved(self) -> dict:
        return self.model_dump(mode="json")


class CliError(Exception):
    """Failure reported as one JSON line on stderr."""

    def __init__(self, code: str, message: str, exit_code: int = EXIT_FAILURE, **fields):
        super().__init__(message)
        self.code = code
        self.exit_code = exit_code
        self.fields = fields

    def line(self) -> str:
        return json.dumps({"error": self.code, "message": str(self), **self.fields}, sort_keys=True)


def _validation_message(exc: ValidationError) -> tuple[str, str]:
    err = exc.errors()[0]
    key = ".".join(str(p) for p in err["loc"]) or "<root>"
    if err["type"] == "extra_forbidden":
        return key, f"unknown config key {key!r}"
    expected = err.get("ctx", {}).get("expected")
    detail = err["msg"] + (f" (expected {expected})" if expected else "")
    return key, f"config key {key!r}: {detail}"


def load_config(path: str | None, seed: int | None = None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        if not os.path.exists(path):
            raise CliError("missing_input", f"config file not found: {path}", EXIT_USAGE, path=path)
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError("bad_config", f"{path}: invalid JSON ({exc})", EXIT_USAGE, path=path) from exc
        if not isinstance(raw, dict):
            raise CliError("bad_config", f"{path}: top level must be an object", EXIT_USAGE, path=path)
    if seed is not None:
        raw = {**raw, "seed": seed}
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        key, msg = _validation_message(exc)
        raise CliError("bad_config", msg, EXIT_USAGE, key=key) from exc


# ---------------------------------------------------------------- helpers


def _write_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _require(path: str | None, what: str) -> str:
    if path is None:
        raise CliError("missing_input", f"no {what} given", EXIT_USAGE)
    if not os.path.exists(path):
        raise CliError("missing_input", f"{what} not found: {path}", EXIT_USAGE, path=path)
    return path


def _prepared(cfg: RunConfig):
    root = _require(cfg.data.prepared, "prepared dataset directory (data.prepared)")
    _require(os.path.join(root, "split.json"), "split manifest")
    split = _data.read_split(root)
    hpath = os.path.join(root, "hierarchy.csv")
    hierarchy = _data.load_hierarchy(hpath) if os.path.exists(hpath) else None
    return split, hierarchy


def _load_model(path: str | None, kind: str | None = None):
    from .training import read_checkpoint

    _require(path, "checkpoint")
    return read_checkpoint(path, expect_kind=kind)


def _synth(cfg: RunConfig):
    s = cfg.data.synth
    return _data.synth_generate(
        n_users=s.n_users, n_items=s.n_items, n_levels=s.n_levels, branching=tuple(s.branching),
        d_true=s.d_true, noise=s.noise, interactions_per_user=s.interactions_per_user, seed=cfg.seed,
        span_days=s.span_days, strength=s.strength, level_scale=s.level_scale,
    )


def _split(cfg: RunConfig, log):
    p = cfg.split
    return _data.cold_start_split(log, p.test_window_days, p.cold_fraction, p.downsample, cfg.split_seed)


def _train(cfg: RunConfig, split, hierarchy):
    from .models import als_fit
    from .training import fit

    kind = cfg.model.kind
    if kind == "random":
        raise CliError("bad_config", "model.kind 'random' has nothing to train", EXIT_USAGE, key="model.kind")
    if kind == "als":
        t = cfg.train
        m = cfg.model
        model = als_fit(split, m.d, m.als_lambda_x, m.als_lambda_y, m.als_alpha,
                        iterations=t.epochs, seed=cfg.seed, track_loss=True)
        return model, list(model.loss_history)
    if kind in ("hge", "hybrid") and hierarchy is None:
        raise CliError("missing_input", f"model.kind {kind!r} needs the prepared hierarchy.csv", EXIT_USAGE)
    return fit(kind, split, hierarchy, cfg.train_config())


# ---------------------------------------------------------------- subcommands


def cmd_synth(cfg: RunConfig, out: str, args) -> dict:
    log, hierarchy = _synth(cfg)
    _data.write_interactions(log, os.path.join(out, "interactions.csv"))
    _data.write_hierarchy(hierarchy, os.path.join(out, "hierarchy.csv"))
    return {"interactions": len(log), "users": len(log.unique_users()), "items": len(log.unique_items())}


def cmd_prepare(cfg: RunConfig, out: str, args) -> dict:
    d = cfg.data
    log = _data.load_interactions(_require(d.interactions, "interactions CSV (data.interactions)"),
                                  skip_bad_rows=d.skip_bad_rows)
    log = _data.binarize(log, d.threshold)
    if len(log) == 0:
        raise CliError("empty_data", f"no interaction reaches data.threshold={d.threshold}")
    log = _data.k_core_filter(log, d.k_core)
    split = _split(cfg, log)
    _data.write_split(split, out)
    summary = {"train_events": len(split.train), "test_events": len(split.test),
               "users": split.n_users, "items": split.n_items, "cold_items": len(split.cold_items)}
    if d.hierarchy is not None:
        hierarchy = _data.load_hierarchy(_require(d.hierarchy, "hierarchy CSV"))
        items = list(split.item_ids)
        hierarchy.labels(0, items)  # every item needs a category
        hierarchy = hierarchy.restrict(items)
        for level in range(hierarchy.n_levels):
            hierarchy = _data.merge_small_categories(hierarchy, level, d.min_category_items, items)
        _data.write_hierarchy(hierarchy, os.path.join(out, "hierarchy.csv"), items)
        summary["levels"] = hierarchy.n_levels
    return summary


def cmd_train(cfg: RunConfig, out: str, args) -> dict:
    from .training import save_checkpoint

    split, hierarchy = _prepared(cfg)
    model, history = _train(cfg, split, hierarchy)
    resolved = cfg.resolved()
    save_checkpoint(model, os.path.join(out, "model.ckpt"), resolved, history)
    _write_json(os.path.join(out, "history.json"), {"loss": [float(x) for x in history]})
    return {"kind": cfg.model.kind, "epochs": len(history), "final_loss": float(history[-1]) if history else None}


def cmd_grid(cfg: RunConfig, out: str, args) -> dict:
    from .training import grid_search

    if cfg.model.kind not in ("mf", "hybrid", "hge"):
        raise CliError("bad_config", "grid search covers mf, hybrid and hge", EXIT_USAGE, key="model.kind")
    split, hierarchy = _prepared(cfg)
    k = min(cfg.eval.ks)
    best, table = grid_search(split, hierarchy, cfg.train_config(), cfg.model.kind,
                              cfg.train.d_grid, cfg.train.lr_grid, k=k)
    best_cfg = cfg.model_copy(deep=True)
    best_cfg.model.d = best.d
    best_cfg.train.learning_rate = best.learning_rate
    _write_json(os.path.join(out, "grid.json"), {"metric": f"pr@{k}", "rows": table,
                                                  "best": {"d": best.d, "learning_rate": best.learning_rate}})
    _write_json(os.path.join(out, "best_config.json"), best_cfg.resolved())
    if args.tsv:
        lines = [f"d\tlearning_rate\tpr@{k}"] + [f"{r['d']}\t{r['learning_rate']!r}\t{r[f'pr@{k}']!r}" for r in table]
        _write_text(os.path.join(out, "grid.tsv"), "\n".join(lines) + "\n")
    return {"best_d": best.d, "best_learning_rate": best.learning_rate}


def cmd_evaluate(cfg: RunConfig, out: str, args) -> dict:
    from .data import build_incidences
    from .evaluation import cluster_report, evaluate_cold
    from .models import RandomModel

    if cfg.model.kind == "random" and args.checkpoint is None:
        split, hierarchy = _prepared(cfg)
        model = RandomModel(split.n_items, cfg.seed)
    else:
        ckpt = _load_model(args.checkpoint)
        split, hierarchy = _prepared(cfg)
        model = ckpt.model
        if model.item_factors().shape[0] != split.n_items or model.user_factors().shape[0] != split.n_users:
            raise CliError("mismatch", f"checkpoint {args.checkpoint} does not fit the prepared dataset",
                           path=args.checkpoint)
    report = evaluate_cold(model, split, cfg.eval.ks, cfg.eval.candidate_mode, config=cfg.resolved())
    report.seed = cfg.seed
    _write_text(os.path.join(out, "report.json"), report.to_json())
    if args.tsv:
        _write_text(os.path.join(out, "report.tsv"), report.to_tsv())
    if hierarchy is not None and hasattr(model, "item_factors"):
        clusters = cluster_report(model.item_factors(), build_incidences(hierarchy, split.item_ids),
                                  cfg.eval.cluster_pairs, cfg.seed)
        _write_text(os.path.join(out, "clusters.json"), clusters.to_json())
        if args.tsv:
            _write_text(os.path.join(out, "clusters.tsv"), clusters.to_tsv())
    return {f"{m}@{k}": v[m] for k, v in sorted(report.metrics.items()) for m in ("hr", "pr")}


def cmd_benchmark(cfg: RunConfig, out: str, args) -> dict:
    from .evaluation import timing_benchmark

    if cfg.data.prepared is not None:
        split, hierarchy = _prepared(cfg)
    else:
        log, hierarchy = _synth(cfg)
        split = _split(cfg, _data.k_core_filter(log, cfg.data.k_core))
    if hierarchy is None:
        raise CliError("missing_input", "the benchmark needs an item hierarchy", EXIT_USAGE)
    e = cfg.eval
    report = timing_benchmark(split, hierarchy, cfg.train_config(), e.benchmark_d, e.benchmark_epochs,
                              e.benchmark_warmup)
    _write_text(os.path.join(out, "timing.json"), report.to_json())
    if args.tsv:
        _write_text(os.path.join(out, "timing.tsv"), report.to_tsv())
    return {"max_ratio": max(report.ratios)}


def cmd_export(cfg: RunConfig, out: str, args) -> dict:
    from .evaluation import export_embeddings

    ckpt = _load_model(args.checkpoint)
    split, hierarchy = _prepared(cfg)
    if hierarchy is None:
        hierarchy = _data.Hierarchy(({i: _data.OTHER for i in split.item_ids},))
    path = os.path.join(out, "embeddings.tsv")
    export_embeddings(ckpt.model, path, list(split.item_ids), hierarchy)
    return {"path": path, "items": split.n_items}


COMMANDS = {
    "prepare": cmd_prepare,
    "synth": cmd_synth,
    "train": cmd_train,
    "grid": cmd_grid,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "export": cmd_export,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message, EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--threads", type=int, help="cap BLAS worker threads")
    common.add_argument("--deterministic", action="store_true", help="single-threaded reductions")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--tsv", action="store_true", help="also write flat TSV tables")
    common.add_argument("--prepared", help="prepared dataset directory (overrides data.prepared)")

    parser = _Parser(prog="hgerec", description="Cold-start recommendation with hierarchical graph embeddings.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name in ("evaluate", "export"):
            p.add_argument("--checkpoint", help="model checkpoint written by train")
    return parser


def _thread_limit(args):
    n = 1 if args.deterministic else args.threads
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise CliError("usage", "--threads must be >= 1", EXIT_USAGE)
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None) -> dict:
    args = build_parser().parse_args(argv)
    if args.seed is not None and args.seed < 0:
        raise CliError("usage", "--seed must be a non-negative integer", EXIT_USAGE)
    cfg = load_config(args.config, args.seed)
    if args.prepared is not None:
        cfg.data.prepared = args.prepared
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "config.json"), cfg.resolved())
    with _thread_limit(args):
        return COMMANDS[args.command](cfg, args.out, args)


def main(argv=None) -> int:
    try:
        summary = run(argv)
    except CliError as exc:
        print(exc.line(), file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(CliError("missing_input", str(exc), path=exc.filename).line(), file=sys.stderr)
        return EXIT_USAGE
    except (_data.DataError, CheckpointError, TrainingError, ValueError, ArithmeticError) as exc:
        print(CliError(type(exc).__name__, str(exc).splitlines()[0] if str(exc) else "").line(), file=sys.stderr)
        return EXIT_FAILURE
    for key, value in summary.items():
        print(f"{key}\t{value}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
