import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fedcast.metrics import (ClientMetrics, Triple, mae, rmse, smape, weighted_report,
                             weighted_triple, window_metrics)
from fedcast.signals import Modality


def test_rmse_examples():
    assert rmse([0.5, 2.0], [0.5, 2.0]) == 0.0
    assert rmse([1, 1], [0, 2]) == 1.0
    assert rmse([3], [0]) == 3.0


def test_mae_examples():
    assert mae([0.5, 2.0], [0.5, 2.0]) == 0.0
    assert mae([1, 1], [0, 2]) == 1.0
    assert mae([-1], [1]) == 2.0


def test_smape_examples():
    assert smape([2.0, -3.0], [2.0, -3.0]) == 0.0
    assert smape([1], [3]) == 100.0
    assert smape([0], [0]) == 0.0
    # one zero-denominator term, one maximal term
    assert smape([0, 1], [0, -1]) == 100.0


@pytest.mark.parametrize("fn", [rmse, mae, smape])
def test_length_mismatch(fn):
    with pytest.raises(ValueError):
        fn([1, 2], [1])
    with pytest.raises(ValueError):
        fn([], [])


finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(finite, finite), min_size=1, max_size=30))
def test_rmse_at_least_mae(pairs):
    f, t = map(np.array, zip(*pairs))
    r, m = rmse(f, t), mae(f, t)
    assert r >= 0 and m >= 0
    assert r >= m - 1e-12 * max(1.0, m)
    assert 0 <= smape(f, t) <= 200


@pytest.mark.parametrize("c", [0.5, 10.0])
def test_scaling(c):
    rng = np.random.default_rng(0)
    f, t = rng.normal(size=64), rng.normal(size=64)
    assert rmse(c * f, c * t) == pytest.approx(c * rmse(f, t), rel=1e-9)
    assert mae(c * f, c * t) == pytest.approx(c * mae(f, t), rel=1e-9)
    assert smape(c * f, c * t) == pytest.approx(smape(f, t), rel=1e-9)


def test_window_metrics_unweighted_per_window():
    f = np.array([[1.0, 1.0], [3.0, 3.0]])
    t = np.array([[0.0, 2.0], [3.0, 3.0]])
    m = window_metrics(f, t)
    assert m.rmse == 0.5 and m.mae == 0.5


def _cm(cid, n, r, mod=Modality.ECG):
    return ClientMetrics(cid, n, r, r / 2, 10 * r, mod)


def test_weighted_examples():
    one = weighted_report(1, [_cm(0, 7, 0.3)])
    assert one.weighted == Triple(0.3, 0.15, 3.0)
    assert weighted_report(1, [_cm(0, 1, 1.0), _cm(1, 3, 3.0)]).weighted.rmse == 2.5
    assert weighted_report(1, [_cm(0, 2, 1.0), _cm(1, 2, 2.0)]).weighted.rmse == 1.5


def test_per_modality():
    rep = weighted_report(3, [_cm(0, 1, 1.0), _cm(1, 1, 3.0), _cm(2, 5, 9.0, Modality.ICG)])
    assert rep.per_modality[Modality.ECG].rmse == 2.0
    assert rep.per_modality[Modality.ICG].rmse == 9.0
    assert rep.round == 3
    assert [c.client_id for c in rep.per_client] == [0, 1, 2]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.integers(1, 100)), min_size=1, max_size=8),
       st.randoms(use_true_random=False))
def test_order_invariant(items, rnd):
    triples = [(Triple(r, r, r), n) for r, n in items]
    shuffled = list(triples)
    rnd.shuffle(shuffled)
    a, b = weighted_triple(triples), weighted_triple(shuffled)
    assert a == b
    lo, hi = min(r for r, _ in items), max(r for r, _ in items)
    assert lo <= a.rmse <= hi


def test_rejects_bad_weights():
    with pytest.raises(ValueError):
        weighted_triple([(Triple(1, 1, 1), 0)])
    with pytest.raises(ValueError):
        weighted_report(1, [])
