import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgerec.data import ColdStartSplit, Hierarchy, InteractionLog, build_incidences
from hgerec.models import HgeModel, MfModel
from hgerec.numerics import finite_diff_check
from hgerec.training import (
    LR_GRID,
    Adam,
    CheckpointError,
    Sgd,
    TrainConfig,
    Trainer,
    TrainingError,
    bce_with_logits,
    bpr_loss,
    checkpoint_bytes,
    fit,
    grid_search,
    init_model,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)


def hand_fixture():
    """6 items in two categories of three, 4 users, all data in train."""
    items = ("i0", "i1", "i2", "i3", "i4", "i5")
    recs = [("u0", "i0", 1), ("u0", "i1", 2), ("u0", "i2", 3),
            ("u1", "i3", 1), ("u1", "i4", 2), ("u1", "i5", 3),
            ("u2", "i0", 4), ("u2", "i4", 5), ("u3", "i2", 6), ("u3", "i5", 7)]
    log = InteractionLog.from_records([(u, i, t, 1.0) for u, i, t in recs])
    split = ColdStartSplit(log, InteractionLog.empty(), (), ("u0", "u1", "u2", "u3"), items, 0, {})
    h = Hierarchy(({i: "a" if i in items[:3] else "b" for i in items}, {i: "all" for i in items}))
    return split, h


FAST = dict(d=4, h=2, batch_size=4, epochs=20, learning_rate=0.05)


# ---------------------------------------------------------------- losses


def test_bce_at_zero():
    loss, g = bce_with_logits([0.0], [1])
    assert loss == pytest.approx(math.log(2))
    assert g[0] == pytest.approx(-0.5)


def test_bce_saturates():
    loss, _ = bce_with_logits([50.0], [1])
    assert loss == pytest.approx(0.0, abs=1e-20)
    loss, _ = bce_with_logits([-800.0], [1])
    assert loss == pytest.approx(800.0)


def test_bce_length_mismatch():
    with pytest.raises(ValueError):
        bce_with_logits([0.0, 1.0], [1])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_bce_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(scale=3, size=9)
    y = rng.integers(0, 2, 9).astype(float)
    _, g = bce_with_logits(z, y)
    rep = finite_diff_check(lambda p: bce_with_logits(p, y)[0], g, z)
    assert rep.max_rel_error < 1e-6


def test_bpr_gradients():
    rng = np.random.default_rng(0)
    pos, neg = rng.normal(size=5), rng.normal(size=5)
    loss, gp, gn = bpr_loss(pos, neg)
    assert loss == pytest.approx(np.mean(np.log1p(np.exp(-(pos - neg)))))
    assert finite_diff_check(lambda p: bpr_loss(p, neg)[0], gp, pos).passed
    assert finite_diff_check(lambda n: bpr_loss(pos, n)[0], gn, neg).passed


# ---------------------------------------------------------------- fit


@pytest.mark.parametrize("kind", ["mf", "hybrid", "hge"])
def test_hand_fixture_loss_strictly_decreases(kind):
    split, h = hand_fixture()
    _, hist = fit(kind, split, h, TrainConfig(**FAST))
    assert len(hist) == 20 and all(math.isfinite(v) for v in hist)
    assert all(b < a for a, b in zip(hist[:5], hist[1:6]))


# plain gradient descent; adam's momentum can overshoot a ReLU gate at this scale
@pytest.mark.parametrize("kind", ["mf", "hybrid", "hge"])
def test_positive_only_small_lr_monotone(kind):
    split, h = hand_fixture()
    cfg = TrainConfig(**{**FAST, "negatives_per_positive": 0, "learning_rate": 1e-3, "epochs": 8,
                         "optimizer": "sgd"})
    _, hist = fit(kind, split, h, cfg)
    assert all(b < a for a, b in zip(hist[:6], hist[1:7]))


def test_bpr_training_runs():
    split, h = hand_fixture()
    _, hist = fit("hge", split, h, TrainConfig(**{**FAST, "loss": "bpr"}))
    assert hist[-1] < hist[0]


@pytest.mark.parametrize("optimizer", ["sgd", "adam"])
def test_zero_learning_rate_leaves_parameters(optimizer):
    split, h = hand_fixture()
    cfg = TrainConfig(**{**FAST, "learning_rate": 0.0, "optimizer": optimizer, "epochs": 3})
    incs = build_incidences(h, split.item_ids)
    model = init_model("hge", split, incs, cfg)
    before = checkpoint_bytes(model)
    Trainer(model, split, incs, cfg).fit()
    assert checkpoint_bytes(model) == before


@pytest.mark.parametrize("kind", ["mf", "hybrid", "hge", "als"])
def test_same_seed_same_checkpoint(kind):
    split, h = hand_fixture()
    cfg = TrainConfig(**FAST)
    a, ha = fit(kind, split, h, cfg)
    b, hb = fit(kind, split, h, cfg)
    assert checkpoint_bytes(a, history=ha) == checkpoint_bytes(b, history=hb)


def test_non_finite_loss_aborts_naming_learning_rate():
    split, h = hand_fixture()
    cfg = TrainConfig(**{**FAST, "optimizer": "sgd", "learning_rate": 1e30, "l2_user": 0, "l2_item": 0})
    with pytest.raises(TrainingError, match="learning_rate"):
        fit("mf", split, h, cfg)


def test_huge_l2_shrinks_embeddings():
    split, h = hand_fixture()
    cfg = TrainConfig(**{**FAST, "optimizer": "sgd", "learning_rate": 1e-3, "epochs": 50,
                         "l2_user": 1e3, "l2_item": 1e3, "l2_layer": 1e3})
    incs = build_incidences(h, split.item_ids)
    model = init_model("hge", split, incs, cfg)
    init = {k: np.linalg.norm(v) for k, v in model.parameters().items()}
    Trainer(model, split, incs, cfg).fit()
    for name in ("user_embeddings", "item_embeddings"):
        assert np.linalg.norm(model.parameters()[name]) < 0.01 * init[name]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ValueError):
        TrainConfig(loss="bpr", negatives_per_positive=0)


def test_hge_needs_hierarchy():
    split, _ = hand_fixture()
    with pytest.raises(ValueError):
        fit("hge", split, None, TrainConfig(**FAST))


# ---------------------------------------------------------------- optimizers


def test_sgd_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0], np.float32)}
    Sgd(0.5).step(p, {"w": np.zeros(2, np.float32)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_zero_gradient_only_advances_bookkeeping():
    p = {"w": np.array([1.0, -2.0], np.float32)}
    opt = Adam(0.5)
    for _ in range(3):
        opt.step(p, {"w": np.zeros(2, np.float32)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert opt.t == 3


def test_adam_first_step_has_learning_rate_magnitude():
    p = {"w": np.zeros(3, np.float32)}
    Adam(0.1).step(p, {"w": np.array([5.0, -0.01, 2.0], np.float32)})
    np.testing.assert_allclose(p["w"], [-0.1, 0.1, -0.1], rtol=1e-5)


# ---------------------------------------------------------------- grid search


def test_single_cell_grid_returns_it(small_benchmark):
    split, h, _ = small_benchmark
    best, table = grid_search(split, h, TrainConfig(epochs=2, batch_size=256), d_grid=(12,), lr_grid=(0.01,))
    assert (best.d, best.learning_rate) == (12, 0.01)
    assert len(table) == 1


def test_grid_table_has_one_row_per_cell(small_benchmark):
    split, h, _ = small_benchmark
    _, table = grid_search(split, h, TrainConfig(epochs=1, batch_size=512), kind="mf",
                           d_grid=(4, 8, 12), lr_grid=(1e-3, 1e-2))
    assert len(table) == 6
    assert [(r["d"], r["learning_rate"]) for r in table] == [(d, lr) for d in (4, 8, 12) for lr in (1e-3, 1e-2)]
    assert all(0 <= r["pr@10"] <= 1 for r in table)


def test_grid_picks_interior_learning_rate(small_benchmark):
    """Non-blocking: warns instead of failing when the best lr sits on a grid endpoint."""
    split, h, _ = small_benchmark
    best, _ = grid_search(split, h, TrainConfig(epochs=10, batch_size=256), d_grid=(16,), lr_grid=LR_GRID)
    if best.learning_rate in (LR_GRID[0], LR_GRID[-1]):
        warnings.warn(f"grid chose endpoint learning rate {best.learning_rate}")


# ---------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("kind", ["mf", "hybrid", "hge", "als"])
def test_checkpoint_round_trip_bytes(kind, tmp_path):
    split, h = hand_fixture()
    model, hist = fit(kind, split, h, TrainConfig(**{**FAST, "epochs": 2}))
    path, again = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save_checkpoint(model, path, {"kind": kind}, hist)
    ck = read_checkpoint(path)
    assert ck.config == {"kind": kind} and ck.history == hist
    save_checkpoint(ck.model, again, ck.config, ck.history)
    assert path.read_bytes() == again.read_bytes()
    users = np.arange(split.n_users)
    np.testing.assert_array_equal(ck.model.score_matrix(users, range(6)), model.score_matrix(users, range(6)))


def test_truncated_checkpoint_names_lengths(tmp_path):
    split, h = hand_fixture()
    model, _ = fit("hge", split, h, TrainConfig(**{**FAST, "epochs": 1}))
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:len(raw) // 2])
    with pytest.raises(CheckpointError, match=r"needs \d+ bytes, file has %d" % (len(raw) // 2)):
        load_checkpoint(path)


def test_trailing_bytes_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(checkpoint_bytes(MfModel.init(2, 2, 2)) + b"x")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(path)


def test_kind_tag_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(MfModel.init(2, 3, 4), path)
    with pytest.raises(CheckpointError, match="holds a mf model, expected hge"):
        load_checkpoint(path, expect_kind="hge")


def test_bad_magic_and_version(tmp_path):
    raw = checkpoint_bytes(MfModel.init(2, 3, 4))
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(raw[:4] + (2).to_bytes(4, "little") + raw[8:])
    with pytest.raises(CheckpointError, match="version 2"):
        load_checkpoint(path)


def test_checkpoint_layout_header():
    raw = checkpoint_bytes(MfModel.init(2, 3, 4))
    assert raw[:4] == b"HGE1"
    assert int.from_bytes(raw[4:8], "little") == 1
    assert raw[8] == 1
    assert len(raw) >= 13 + 12 + 4 * (2 + 3) * 4


def test_loaded_hge_keeps_flags(tmp_path):
    split, h = hand_fixture()
    cfg = TrainConfig(**{**FAST, "epochs": 1, "skip": False, "activation": "leaky_relu"})
    model, _ = fit("hge", split, h, cfg)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path, expect_kind="hge")
    assert isinstance(back, HgeModel)
    assert [(l.skip, l.activation) for l in back.layers] == [(False, "leaky_relu")] * 2
