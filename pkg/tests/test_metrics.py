import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from chronocl.config import default_config, default_strategy
from chronocl.metrics import AucMatrix, MetricSeries, UndefinedMetricError, auc, c_auc, evaluate_model, fwt_auc
from chronocl.model import Arch, init_model, zero_model
from chronocl.stream import extract_batch, make_eval_sets, stream_rng
from chronocl.strategies import init_state, step


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def test_four_pair_example():
    assert auc([0.9, 0.8, 0.3, 0.2], [1, 0, 1, 0]) == 0.75


def test_all_ties_and_perfect():
    assert auc(np.ones(10), [0, 1] * 5) == 0.5
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0


@pytest.mark.parametrize("labels", [[1, 1, 1], [0, 0], []])
def test_single_class_is_undefined(labels):
    with pytest.raises(UndefinedMetricError):
        auc(np.zeros(len(labels)), labels)


def test_length_mismatch():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [0, 1, 1])


labelled = st.integers(2, 50).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.integers(-5, 5).map(float)),  # small integer pool forces ties
    arrays(np.int64, n, elements=st.integers(0, 1)),
)).filter(lambda t: 0 < t[1].sum() < len(t[1]))


@settings(max_examples=300, deadline=None)
@given(labelled)
def test_matches_brute_force(data):
    s, y = data
    assert abs(auc(s, y) - brute_auc(s, y)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_negation_complements(data):
    s, y = data
    assert auc(s, y) + auc(-s, y) == 1.0


@settings(max_examples=200, deadline=None)
@given(labelled)
def test_monotone_transform_invariance(data):
    s, y = data
    assert auc(s, y) == auc(np.exp(s / 3.0) * 2 + 7, y)


# -- matrix metrics ------------------------------------------------------------

def test_one_released_dataset():
    m = AucMatrix(np.array([[0.8, 0.5, 0.55]]), [0, 1, 2])
    assert c_auc(m, 0) == 0.8
    assert fwt_auc(m, 0) == 0.525


def test_c_auc_mean_of_prefix():
    m = AucMatrix(np.array([[0.9, 0.8, 0.7, 0.5]] * 4), [0, 1, 2, 3])
    assert abs(c_auc(m, 2) - 0.8) < 1e-15
    assert c_auc(AucMatrix(np.full((2, 2), 0.5), [0, 1]), 1) == 0.5


def test_fwt_absent_at_last_event_and_single_future():
    m = AucMatrix(np.array([[0.9, 0.6], [0.9, 0.8]]), [0, 1])
    assert fwt_auc(m, 1) is None
    assert fwt_auc(m, 0) == 0.6
    series = MetricSeries.from_matrix(m)
    assert series.fwt_auc[-1] is None
    assert series.final_eval_auc == c_auc(m, 1)


def test_matrix_requires_release_order():
    with pytest.raises(ValueError):
        AucMatrix(np.array([[0.9, 0.6, 0.7]]), [0, 2, 1])


@pytest.mark.parametrize("vals", [[[1.2, 0.5]], [[-0.1, 0.5]]])
def test_matrix_rejects_out_of_range(vals):
    with pytest.raises(ValueError):
        AucMatrix(np.array(vals), [0, 1])


def test_matrix_rejects_ragged_release_list():
    with pytest.raises(ValueError):
        AucMatrix(np.full((2, 3), 0.5), [0, 1])


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, n), elements=st.floats(0, 1)), st.integers(0, n - 1))))
def test_released_and_future_partition_row(data):
    vals, t = data
    n = vals.shape[1]
    m = AucMatrix(vals, list(range(n)))
    seen, fut = len(m.seen(t)), len(m.future(t))
    f = fwt_auc(m, t)
    total = c_auc(m, t) * seen + (f * fut if f is not None else 0.0)
    assert abs(total / n - vals[t].mean()) < 1e-12


def test_matrix_csv_has_header_of_ids():
    m = AucMatrix(np.array([[0.5, 0.75]]), [0, 1], [3, 4])
    assert m.to_csv() == "event,3,4\n0,0.5,0.75\n"


# -- evaluate_model ------------------------------------------------------------

def test_zero_model_row_is_chance():
    sched = default_config().schedule.build(0)
    row = evaluate_model(zero_model(Arch(32, 32)), make_eval_sets(sched, 100, 0))
    np.testing.assert_array_equal(row, 0.5)


def test_evaluation_is_side_effect_free():
    sched = default_config().schedule.build(0)
    sets = make_eval_sets(sched, 100, 0)
    m = init_model(Arch(32, 32), np.random.default_rng(0))
    np.testing.assert_array_equal(evaluate_model(m, sets), evaluate_model(m, sets))


def test_trained_on_one_generator_ignores_the_rest():
    seen, unseen = [], []
    for seed in range(20):
        cfg = default_config(seed=seed)
        sched = cfg.schedule.build(seed)
        st_ = init_state(default_strategy("Naive"), init_model(Arch(32, 32), stream_rng(seed, 3)), stream_rng(seed, 4))
        rng = stream_rng(seed, 1)
        for _ in range(200):
            st_ = step(st_, extract_batch(0, sched, 16, rng))
        row = evaluate_model(st_.model, make_eval_sets(sched, 500, seed))
        seen.append(row[0])
        unseen.extend(row[1:])
    assert min(seen) > 0.9
    assert abs(np.mean(unseen) - 0.5) <= 0.07
