import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import wsosvm.harness as harness
from oracles import rank_sum_enumeration
from wsosvm.harness import (CVConfig, Dataset, TuningError, auxiliary_sizes, full_training_set,
                            metrics, rank_sum_one_sided, repeated_cv, select_best,
                            stratified_folds, tune)


def blobs(seed=0, n1=10, n2=10, m12=20, m0=20, dim=3, gap=4.0):
    rng = np.random.default_rng(seed)
    X1 = rng.normal(size=(n1, dim))
    X2 = rng.normal(size=(n2, dim)) + gap
    return Dataset(np.vstack([X1, X2]), np.r_[np.ones(n1, int), 2 * np.ones(n2, int)],
                   rng.normal(size=(m12, dim)) + gap / 2, rng.normal(size=(m0, dim)) - gap)


# -- folds -----------------------------------------------------------------------------

def test_folds_one_of_each_class():
    folds = stratified_folds([1] * 5 + [2] * 5, 5, seed=3)
    for f in range(5):
        assert sorted(np.array([1] * 5 + [2] * 5)[folds == f]) == [1, 2]


def test_folds_deterministic():
    labels = [1, 2] * 20
    assert np.array_equal(stratified_folds(labels, 10, 7), stratified_folds(labels, 10, 7))
    assert not np.array_equal(stratified_folds(labels, 10, 7), stratified_folds(labels, 10, 8))


def test_folds_cohort_sized_split():
    labels = np.r_[np.full(130, 2), np.full(188, 1)]
    folds = stratified_folds(labels, 10, 0)
    sizes = np.bincount(folds, minlength=10)
    assert set(sizes) <= {31, 32}
    per_class2 = np.bincount(folds[labels == 2], minlength=10)
    assert set(per_class2) <= {12, 13, 14}


def test_folds_errors():
    with pytest.raises(ValueError):
        stratified_folds([1, 2, 1], 4, 0)
    with pytest.raises(ValueError):
        stratified_folds([1, 2, 1], 1, 0)


@settings(max_examples=60, deadline=None)
@given(n1=st.integers(1, 30), n2=st.integers(1, 30), k=st.integers(2, 10), seed=st.integers(0, 2**32))
def test_folds_partition_and_balance(n1, n2, k, seed):
    if k > n1 + n2:
        return
    labels = np.r_[np.ones(n1, int), 2 * np.ones(n2, int)]
    rng = np.random.default_rng(seed)
    labels = labels[rng.permutation(len(labels))]
    folds = stratified_folds(labels, k, seed)
    assert folds.min() >= 0 and folds.max() < k
    for cls in (1, 2):
        counts = np.bincount(folds[labels == cls], minlength=k)
        assert counts.max() - counts.min() <= 1
    sizes = np.bincount(folds, minlength=k)
    assert sizes.max() - sizes.min() <= 1


# -- metrics ---------------------------------------------------------------------------

def test_metrics_examples():
    assert metrics([1, 2, 2, 1], [1, 2, 2, 1]) == harness.Metrics(1.0, 1.0, 1.0)
    assert metrics([1, 1, 1, 1], [1, 1, 2, 2]) == harness.Metrics(0.5, 0.0, 1.0)
    assert metrics([2, 1, 1, 2], [2, 2, 1, 1]) == harness.Metrics(0.5, 0.5, 0.5)


def test_metrics_undefined_and_errors():
    m = metrics([2, 2], [2, 2])
    assert m.specificity is None and m.sensitivity == 1.0
    with pytest.raises(ValueError):
        metrics([1, 2], [1])
    with pytest.raises(ValueError):
        metrics([], [])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0, 1, 2]), st.sampled_from([1, 2])), min_size=1, max_size=40))
def test_metrics_accuracy_identity(pairs):
    pred, truth = map(np.array, zip(*pairs))
    m = metrics(pred, truth)
    P, N = np.sum(truth == 2), np.sum(truth == 1)
    acc = ((m.sensitivity or 0) * P + (m.specificity or 0) * N) / (P + N)
    assert math.isclose(m.accuracy, acc, abs_tol=1e-12)


# -- config, sizes ---------------------------------------------------------------------

def test_config_validation():
    CVConfig(C1_grid=(0.01, 100), C2_grid=(1,))
    for bad in ({"folds": 1}, {"C1_grid": ()}, {"C1_grid": (0.001,)}, {"C2_grid": (200,)},
                {"C2_grid": (10, 1)}, {"repeats": 0}):
        with pytest.raises(ValueError):
            CVConfig(**bad)


def test_auxiliary_sizes_sum_to_biopsy_count():
    for n in range(1, 60):
        m12, m0 = auxiliary_sizes(n)
        assert m12 + m0 == n and m12 % 2 == 0 and abs(m12 - m0) <= 2


def test_full_training_set_caps_pools():
    ds = blobs(m12=4, m0=3)
    ts = full_training_set(ds, 0)
    assert ts.sizes == (10, 10, 3, 4)
    assert full_training_set(ds, 0, ablation=True).sizes == (10, 10, 3, 0)


# -- repeated CV -----------------------------------------------------------------------

def test_cv_bookkeeping_and_determinism():
    ds = blobs(n1=4, n2=4, m12=8, m0=8)
    cfg = CVConfig(folds=2, repeats=2, seed=5)
    a = repeated_cv(ds, "linear", 1.0, 1.0, cfg)
    b = repeated_cv(ds, "linear", 1.0, 1.0, cfg)
    assert len(a.records) == 4
    assert [(r.repeat, r.fold) for r in a.records] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert a == b
    assert all(r.n_train + r.n_test == 8 for r in a.records)


def test_cv_separable_is_perfect():
    rep = repeated_cv(blobs(gap=10.0), "linear", 1.0, 1.0, CVConfig(folds=5, repeats=3, seed=1))
    assert rep.summary()["accuracy"] == (1.0, 0.0)
    assert rep.failures == 0


def test_cv_jobs_do_not_change_results():
    ds = blobs(seed=2, gap=2.0)
    one = repeated_cv(ds, "gaussian", 1.0, 1.0, CVConfig(folds=4, repeats=2, seed=3))
    many = repeated_cv(ds, "gaussian", 1.0, 1.0, CVConfig(folds=4, repeats=2, seed=3, jobs=3))
    assert one == many


def test_cv_summary_ranges():
    rep = repeated_cv(blobs(seed=4, gap=1.0), "gaussian", 1.0, 1.0, CVConfig(folds=5, repeats=3))
    for mean, std in rep.summary().values():
        assert 0 <= mean <= 1 and std >= 0
    acc = rep.accuracies()
    assert math.isclose(rep.summary()["accuracy"][1], float(np.std(acc)))


def test_cv_failures_are_recorded(monkeypatch):
    def boom(*args, **kwargs):
        raise ValueError("solver refused")
    monkeypatch.setattr(harness, "train", boom)
    rep = repeated_cv(blobs(), "linear", 1.0, 1.0, CVConfig(folds=2, repeats=1))
    assert rep.failures == 2 and rep.repeat_metrics == []
    assert all(r.error == "solver refused" and r.accuracy is None for r in rep.records)


# -- tuning ----------------------------------------------------------------------------

def test_select_best_tie_rules():
    assert select_best({(1.0, 10.0): 0.9, (0.1, 100.0): 0.9, (10.0, 1.0): 0.8}) == (0.1, 100.0)
    assert select_best({(1.0, 10.0): 0.9, (1.0, 1.0): 0.9}) == (1.0, 1.0)


def test_tune_single_point_grid():
    res = tune(blobs(gap=8.0), "linear", CVConfig(folds=4, C1_grid=(1.0,), C2_grid=(1.0,)))
    assert (res.C1, res.C2) == (1.0, 1.0)
    assert res.retained == [1.0]


def test_tune_screening_threshold_is_strict(monkeypatch):
    screen = {0.1: 0.79, 1.0: 0.81, 10.0: 0.80}

    def fake(fn, ds, plans, config, kernel, gamma, C1, C2):
        if fn is harness._screen_fold:
            return screen[C2]
        return 0.5 + 0.01 * C1

    monkeypatch.setattr(harness, "_cv_accuracy", fake)
    res = tune(blobs(), "linear", CVConfig(C1_grid=(0.1, 1.0), C2_grid=(0.1, 1.0, 10.0)))
    assert res.retained == [1.0]
    assert (res.C1, res.C2) == (1.0, 1.0)


def test_tune_reports_best_screening_on_failure(monkeypatch):
    monkeypatch.setattr(harness, "_cv_accuracy", lambda fn, *a: 0.6)
    with pytest.raises(TuningError, match="0.6000"):
        tune(blobs(), "linear", CVConfig(C1_grid=(1.0,), C2_grid=(1.0,)))


# -- rank sum --------------------------------------------------------------------------

def test_rank_sum_small_example():
    assert rank_sum_one_sided([3, 4], [1, 2]) == pytest.approx(1 / 6, abs=1e-15)
    assert Fraction(1, 6) == rank_sum_enumeration([3, 4], [1, 2])


def test_rank_sum_identical_samples():
    assert rank_sum_one_sided([1, 2, 3], [1, 2, 3]) >= 0.5
    assert rank_sum_one_sided([5.0] * 4, [5.0] * 4) == 1.0


def test_rank_sum_errors():
    with pytest.raises(ValueError):
        rank_sum_one_sided([], [1])
    with pytest.raises(ValueError):
        rank_sum_one_sided([1], [2], method="bogus")


@settings(max_examples=40, deadline=None)
@given(a=st.lists(st.integers(0, 6), min_size=1, max_size=5),
       b=st.lists(st.integers(0, 6), min_size=1, max_size=5))
def test_rank_sum_exact_matches_enumeration(a, b):
    assert abs(rank_sum_one_sided(a, b, "exact") - float(rank_sum_enumeration(a, b))) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(a=st.lists(st.integers(0, 6), min_size=1, max_size=6),
       b=st.lists(st.integers(0, 6), min_size=1, max_size=6))
def test_rank_sum_two_tails_cover(a, b):
    up = rank_sum_one_sided(a, b, "exact")
    down = rank_sum_one_sided(b, a, "exact")
    assert 0 < up <= 1 and 0 < down <= 1
    assert up + down >= 1 - 1e-12


def test_rank_sum_exact_vs_normal_at_ten():
    rng = np.random.default_rng(11)
    for _ in range(5):
        a = rng.normal(0.3, 1, 10)
        b = rng.normal(0, 1, 10)
        assert abs(rank_sum_one_sided(a, b, "exact") - rank_sum_one_sided(a, b, "normal")) <= 0.02


def test_rank_sum_auto_switches_to_normal():
    a, b = list(range(11, 22)), list(range(11))
    assert rank_sum_one_sided(a, b) == rank_sum_one_sided(a, b, "normal")
