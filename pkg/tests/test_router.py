import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deem.dataset import TEST, TRAIN, DateGroup, make_sample
from deem.errors import ConfigError, EmptyEvaluationSet, UnknownDate, UnlabeledTestSamples
from deem.experts import ExpertSpec
from deem.progressive import RunConfig
from deem.router import BranchedModel, build_final_model, evaluate, infer, load_model, save_model

CLASSES = ("a", "b", "c")
CONFIG = RunConfig(specs=[ExpertSpec("nearest_centroid"), ExpertSpec("knn", {"n_neighbors": 1})], k=1)


def _group(date, label_of, n=6):
    """Group whose training labels come from ``label_of(i)``; test is already labelled."""
    train = [make_sample(f"{date}_{i:04d}.jpg", [float(i), 0.0], TRAIN, label_of(i)) for i in range(n)]
    test = [make_sample(f"{date}_{100 + i:04d}.jpg", [float(i), 0.1], TEST) for i in range(2)]
    final = train + [s.with_pseudo_label(label_of(i)) for i, s in enumerate(test)]
    return DateGroup(date, tuple(train), tuple(test)), final


@pytest.fixture(scope="module")
def three_branch_model():
    groups = [_group("d1", lambda i: 0), _group("d2", lambda i: 1), _group("d3", lambda i: 2)]
    return build_final_model(groups, CONFIG, CLASSES)


def test_one_branch_per_date(three_branch_model):
    assert three_branch_model.dates == ["d1", "d2", "d3"]


def test_single_group():
    model = build_final_model([_group("only", lambda i: i % 3)], CONFIG, CLASSES)
    assert model.dates == ["only"]


def test_dispatch_follows_the_name(three_branch_model):
    x = [2.0, 0.0]
    assert infer(three_branch_model, "d1_9999.jpg", x) == 0
    assert infer(three_branch_model, "d2_9999.jpg", x) == 1
    assert infer(three_branch_model, "path/to/d3_0001.png", x) == 2


def test_unknown_date_is_an_error(three_branch_model):
    with pytest.raises(UnknownDate):
        infer(three_branch_model, "d9_0001.jpg", [0.0, 0.0])
    with pytest.raises(UnknownDate):
        three_branch_model.predict(["d1_0001.jpg", "d9_0001.jpg"], np.zeros((2, 2)))
    with pytest.raises(KeyError):
        three_branch_model.branch_for("d9_0001.jpg")


def test_inference_is_deterministic(three_branch_model):
    X = np.random.default_rng(0).normal(0, 3, (20, 2))
    names = [f"d{1 + i % 3}_{i:04d}.jpg" for i in range(20)]
    a = three_branch_model.predict(names, X)
    b = three_branch_model.predict(names, X)
    assert np.array_equal(a, b)
    assert [infer(three_branch_model, n, x) for n, x in zip(names, X)] == list(a)


def _eval_samples(date, n):
    return [make_sample(f"{date}_{500 + i:04d}.jpg", [float(i), 0.0], TEST) for i in range(n)]


def test_evaluate_accuracy_values(three_branch_model):
    s1 = _eval_samples("d1", 4)
    assert evaluate(three_branch_model, s1, {s.id: 0 for s in s1})["average"] == 1.0
    assert evaluate(three_branch_model, s1, {s.id: 2 for s in s1})["average"] == 0.0
    labels = {s.id: (0 if i < 3 else 1) for i, s in enumerate(s1)}
    assert evaluate(three_branch_model, s1, labels)["average"] == 0.75


def test_evaluate_per_group_and_overall(three_branch_model):
    s1, s2 = _eval_samples("d1", 4), _eval_samples("d2", 2)
    labels = {s.id: 0 for s in s1} | {s2[0].id: 1, s2[1].id: 0}
    ev = evaluate(three_branch_model, s1 + s2, labels)
    assert ev["per_group"] == {"d1": 1.0, "d2": 0.5}
    assert ev["average"] == 0.75
    assert ev["overall"] == pytest.approx(5 / 6)
    assert ev["count"] == 6
    rev = evaluate(three_branch_model, (s1 + s2)[::-1], labels)
    assert rev == ev


def test_evaluate_empty(three_branch_model):
    with pytest.raises(EmptyEvaluationSet):
        evaluate(three_branch_model, [])


def test_unlabeled_test_samples_block_the_build():
    group, final = _group("d1", lambda i: 0)
    with pytest.raises(UnlabeledTestSamples):
        build_final_model([(group, final[:-1])], CONFIG, CLASSES)


def test_class_table_must_match():
    group, final = _group("d1", lambda i: 0)
    ens = CONFIG.fit_ensemble(final, 3)
    with pytest.raises(ConfigError):
        BranchedModel({"d1": ens}, ("a", "b"))
    with pytest.raises(ConfigError):
        BranchedModel({}, CLASSES)


def test_save_load_round_trip(tmp_path, three_branch_model):
    save_model(three_branch_model, tmp_path / "m")
    back = load_model(tmp_path / "m")
    assert back.dates == three_branch_model.dates and back.class_names == CLASSES
    X = np.random.default_rng(1).normal(0, 3, (12, 2))
    names = [f"d{1 + i % 3}_{i:04d}.jpg" for i in range(12)]
    assert np.array_equal(back.predict(names, X), three_branch_model.predict(names, X))
    save_model(back, tmp_path / "m2")
    for f in ("model.json", "d1.json", "d2.json", "d3.json"):
        assert (tmp_path / "m" / f).read_bytes() == (tmp_path / "m2" / f).read_bytes()


def test_branches_are_independent():
    g1, g2 = _group("d1", lambda i: 0), _group("d2", lambda i: i % 2)
    g2_alt = _group("d2", lambda i: 2)
    a = build_final_model([g1, g2], CONFIG, CLASSES)
    b = build_final_model([g1, g2_alt], CONFIG, CLASSES)
    X = np.random.default_rng(2).normal(0, 3, (10, 2))
    names = [f"d1_{i:04d}.jpg" for i in range(10)]
    assert np.array_equal(a.predict(names, X), b.predict(names, X))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["d1", "d2", "d3"]), st.floats(-5, 5)), min_size=1, max_size=15))
def test_batch_predict_equals_per_branch_predict(three_branch_model, rows):
    names = [f"{d}_{i:04d}.jpg" for i, (d, _) in enumerate(rows)]
    X = np.array([[v, 0.0] for _, v in rows])
    got = three_branch_model.predict(names, X)
    for n, x, g in zip(names, X, got):
        assert g == int(three_branch_model.branches[n[:2]].predict(x.reshape(1, -1))[0])
