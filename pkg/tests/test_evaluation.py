import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import calibration_split
from hgerec.data import Hierarchy
from hgerec.evaluation import (
    cluster_report,
    evaluate_cold,
    export_embeddings,
    hit_rate_at_k,
    precision_at_k,
    read_embeddings,
    timing_benchmark,
)
from hgerec.models import MfModel, RandomModel
from hgerec.numerics import SparseIncidence
from hgerec.training import TrainConfig
from oracles import brute_hit_rate, brute_precision, hypergeometric_hit_rate

# ---------------------------------------------------------------- metrics


def test_hit_rate_examples():
    assert hit_rate_at_k([["x", "a"]], [{"a"}], 2) == 1.0
    assert hit_rate_at_k([["a"], ["b"]], [{"a"}, {"c"}], 1) == 0.5


def test_precision_examples():
    assert precision_at_k([["a", "c"]], [{"a", "b"}], 2) == 0.5
    assert precision_at_k([["a", "b"]], [{"a", "b", "z"}], 2) == 1.0


def test_crafted_three_users_match_brute_force():
    recs = [[1, 2, 3], [4, 5, 6], [7, 1, 2]]
    truth = [{3}, {9}, {1, 2}]
    for k in (1, 2, 3):
        assert hit_rate_at_k(recs, truth, k) == brute_hit_rate(recs, truth, k)
        assert precision_at_k(recs, truth, k) == brute_precision(recs, truth, k)


def test_random_twenty_users_match_counting_oracle():
    rng = np.random.default_rng(3)
    recs = [rng.permutation(30)[:10].tolist() for _ in range(20)]
    truth = [set(rng.choice(30, rng.integers(1, 6), replace=False).tolist()) for _ in range(20)]
    for k in (1, 5, 10):
        assert precision_at_k(recs, truth, k) == brute_precision(recs, truth, k)
        assert hit_rate_at_k(recs, truth, k) == brute_hit_rate(recs, truth, k)


def test_metrics_reject_empty_users():
    with pytest.raises(ValueError):
        hit_rate_at_k([], [], 1)
    with pytest.raises(ValueError):
        precision_at_k([[1]], [], 1)


def exhaustive_instances(n_items, n_users):
    """Every top-3 list over a small item set, paired with seeded truth sets."""
    lists = list(itertools.permutations(range(n_items), 3))
    rng = np.random.default_rng(n_items * 10 + n_users)
    for _ in range(30):
        picks = rng.integers(0, len(lists), n_users)
        recs = [list(lists[p]) for p in picks]
        truth = [set(rng.choice(n_items, rng.integers(1, n_items + 1), replace=False).tolist())
                 for _ in range(n_users)]
        yield recs, truth


@pytest.mark.parametrize("n_items", [3, 5, 10])
@pytest.mark.parametrize("n_users", [1, 3, 5])
def test_metrics_equal_brute_force_on_small_fixtures(n_items, n_users):
    for recs, truth in exhaustive_instances(n_items, n_users):
        for k in (1, 2, 3):
            assert hit_rate_at_k(recs, truth, k) == brute_hit_rate(recs, truth, k)
            assert precision_at_k(recs, truth, k) == brute_precision(recs, truth, k)


@st.composite
def ranked_case(draw):
    n_users = draw(st.integers(1, 5))
    recs = [draw(st.permutations(list(range(10)))) for _ in range(n_users)]
    truth = [draw(st.sets(st.integers(0, 9), min_size=1)) for _ in range(n_users)]
    return recs, truth


@settings(max_examples=100)
@given(ranked_case())
def test_hit_rate_non_decreasing_in_k(case):
    recs, truth = case
    rates = [hit_rate_at_k(recs, truth, k) for k in range(1, 11)]
    assert rates == sorted(rates)
    assert all(0 <= r <= 1 for r in rates)


@settings(max_examples=100)
@given(ranked_case())
def test_precision_equals_hit_rate_at_one_with_single_relevant(case):
    recs, truth = case
    truth = [{min(t)} for t in truth]
    assert precision_at_k(recs, truth, 1) == hit_rate_at_k(recs, truth, 1)


# ---------------------------------------------------------------- evaluate_cold


def oracle_model(split):
    """One-hot MF that gives each user's relevant cold item the top score."""
    d = split.n_items
    users = np.zeros((split.n_users, d), np.float32)
    for u, i in zip(split.test_users, split.test_items):
        users[u, i] = 1.0
    return MfModel(users, np.eye(d, dtype=np.float32))


def test_perfect_model_hits_every_user():
    split = calibration_split()
    rep = evaluate_cold(oracle_model(split), split, ks=[1, 10])
    assert rep.metrics[10]["hr"] == 1.0 and rep.metrics[1]["pr"] == 1.0
    assert rep.metrics[10]["pr"] == pytest.approx(0.1)
    assert rep.n_test_users == 50 and rep.n_cold_items == 20


def test_seeder_and_warm_items_never_enter_evaluation():
    split = calibration_split()
    rep = evaluate_cold(oracle_model(split), split, ks=[20])
    # 20 cold candidates, none seen by evaluated users: no short lists
    assert rep.n_short_lists == 0 and rep.n_test_users == 50


@pytest.mark.parametrize("k", [1, 5])
def test_random_baseline_calibration(k):
    split = calibration_split()
    hrs = [evaluate_cold(RandomModel(split.n_items, seed=s), split, ks=[k]).metrics[k]["hr"] for s in range(200)]
    p = hypergeometric_hit_rate(k, 20)
    assert p == pytest.approx(k / 20)
    sigma = math.sqrt(p * (1 - p) / (200 * 50))
    assert abs(np.mean(hrs) - p) <= 3 * sigma


def test_no_evaluable_users():
    split = calibration_split()
    split.__dict__["cold_items"] = ()
    with pytest.raises(ValueError):
        evaluate_cold(RandomModel(split.n_items), split)


def test_report_json_is_stable():
    split = calibration_split()
    a = evaluate_cold(oracle_model(split), split).to_json()
    b = evaluate_cold(oracle_model(split), split).to_json()
    assert a == b
    assert list(json.loads(a)["metrics"]) == ["10", "20"]


# ---------------------------------------------------------------- timing


def test_timing_report_shape(small_benchmark):
    split, h, _ = small_benchmark
    rep = timing_benchmark(split, h, TrainConfig(batch_size=512), epochs=3)
    assert [r["d"] for r in rep.rows] == list(range(20, 201, 20))
    assert all(r > 0 for r in rep.ratios)
    assert len(rep.to_tsv().strip().splitlines()) == 11


def test_mf_against_itself_is_even(small_benchmark):
    split, h, _ = small_benchmark
    rep = timing_benchmark(split, h, TrainConfig(batch_size=256), d_values=(20, 100), epochs=7, kinds=("mf", "mf"))
    assert all(0.9 <= r <= 1.1 for r in rep.ratios), rep.ratios


# ---------------------------------------------------------------- clustering


def test_identical_embeddings_have_no_separation():
    inc = [SparseIncidence.from_assignment([0, 0, 1, 1, 2, 2])]
    rep = cluster_report(np.ones((6, 3)), inc)
    assert rep.levels[0]["intra"] == pytest.approx(1.0)
    assert rep.levels[0]["inter"] == pytest.approx(1.0)
    assert rep.separation() == pytest.approx(0.0)


def test_orthogonal_category_embeddings():
    cats = [0, 0, 1, 1, 2, 2]
    inc = [SparseIncidence.from_assignment(cats)]
    rep = cluster_report(np.eye(3)[cats] * 2.5, inc)
    assert rep.levels[0]["intra"] == pytest.approx(1.0)
    assert rep.levels[0]["inter"] == pytest.approx(0.0)
    assert rep.separation() == pytest.approx(1.0)


def test_sampled_pairs_are_seeded_and_bounded():
    rng = np.random.default_rng(0)
    cats = rng.integers(0, 4, 400)
    inc = [SparseIncidence.from_assignment(cats, 4), SparseIncidence.from_assignment(cats // 2, 2)]
    e = rng.normal(size=(400, 5))
    a, b = cluster_report(e, inc, n_pairs=500, seed=1), cluster_report(e, inc, n_pairs=500, seed=1)
    assert a.to_json() == b.to_json()
    for row in a.levels:
        assert -1 <= row["intra"] <= 1 and -1 <= row["inter"] <= 1


def test_singleton_categories_contribute_no_intra_pairs():
    inc = [SparseIncidence.from_assignment([0, 1, 2, 2])]
    e = np.array([[1.0, 0], [0, 1.0], [1.0, 1.0], [1.0, 1.0]])
    assert cluster_report(e, inc).levels[0]["intra"] == pytest.approx(1.0)


# ---------------------------------------------------------------- export


def toy_export(tmp_path, n_items=3, d=2):
    items = [f"i{n}" for n in range(n_items)]
    h = Hierarchy(({i: f"c{n % 2}" for n, i in enumerate(items)}, {i: "root" for i in items}))
    m = MfModel.init(1, n_items, d, seed=4)
    m.item_embeddings[:] = np.random.default_rng(1).normal(size=(n_items, d))
    path = tmp_path / "emb.tsv"
    export_embeddings(m, path, items, h)
    return path, items, m


def test_export_rows_and_header(tmp_path):
    path, _, _ = toy_export(tmp_path)
    lines = path.read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].split("\t") == ["item_id", "level_1", "level_2", "e_1", "e_2"]


def test_export_round_trip(tmp_path):
    path, items, m = toy_export(tmp_path, n_items=17, d=5)
    ids, cats, emb = read_embeddings(path)
    assert ids == items and cats[1] == ["c1", "root"]
    np.testing.assert_allclose(emb, m.item_embeddings, rtol=1e-5, atol=1e-5)


def test_export_rows_equal_items_plus_header(tmp_path, small_benchmark):
    split, h, incs = small_benchmark
    m = MfModel.init(split.n_users, split.n_items, 3)
    path = tmp_path / "e.tsv"
    export_embeddings(m, path, split.item_ids, h)
    assert len(path.read_text().splitlines()) == split.n_items + 1
