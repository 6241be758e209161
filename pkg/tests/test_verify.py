import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from lightvar.errors import ShapeMismatchError
from lightvar.verify import (ScoreSeries, innovation_stats, regrid_average, rmse,
                             write_scores)

fields = arrays(np.float64, (6, 4), elements=st.floats(-50, 50))


def test_rmse_basics():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((30, 30))
    b = rng.standard_normal((30, 30))
    assert rmse(a, a) == 0.0
    assert rmse(a + 2.5, a) == pytest.approx(2.5, rel=1e-14)
    assert abs(rmse(a, b) - np.sqrt(((a - b) ** 2).mean())) <= 1e-12
    with pytest.raises(ShapeMismatchError):
        rmse(a, b[:-1])


@settings(max_examples=50)
@given(fields, fields, fields)
def test_rmse_is_a_metric(a, b, c):
    assert rmse(a, b) == pytest.approx(rmse(b, a))
    assert (rmse(a, b) == 0) == np.array_equal(a, b)
    assert rmse(a, c) <= rmse(a, b) + rmse(b, c) + 1e-9


def test_regrid_examples():
    np.testing.assert_array_equal(regrid_average(np.full((4, 6), 3.0), 2), np.full((2, 3), 3.0))
    checker = 2.0 * (np.indices((6, 6)).sum(axis=0) % 2)
    np.testing.assert_array_equal(regrid_average(checker, 2), np.ones((3, 3)))
    with pytest.raises(ShapeMismatchError):
        regrid_average(np.ones((5, 4)), 2)
    with pytest.raises(ShapeMismatchError):
        regrid_average(np.ones((2, 2, 2)), 1)


@settings(max_examples=50)
@given(arrays(np.float64, (6, 12), elements=st.floats(-1e3, 1e3)), st.sampled_from([1, 2, 3, 6]),
       st.floats(-100, 100))
def test_regrid_preserves_mean_and_commutes_with_shift(f, factor, c):
    coarse = regrid_average(f, factor)
    assert coarse.mean() == pytest.approx(f.mean(), abs=1e-10)
    np.testing.assert_allclose(regrid_average(f + c, factor), coarse + c, atol=1e-9)


def test_innovation_stats():
    empty = innovation_stats([], [])
    assert not empty.defined and empty.max is None and empty.mean is None
    assert empty.histogram.sum() == 0
    y = np.array([12.53, 5.0, 3.0, 1.5])
    hx = np.array([1.0, 4.0, 4.0, 0.5])
    s = innovation_stats(y, hx)
    assert s.max == pytest.approx(11.53)
    assert s.count == 4 and s.histogram.sum() == 4
    with pytest.raises(ShapeMismatchError):
        innovation_stats([1.0], [1.0, 2.0])


def test_score_series_written(tmp_path):
    s = ScoreSeries("free")
    s.append(0, 1.5)
    s.append(60, 1.25)
    with pytest.raises(ValueError):
        s.append(120, -1.0)
    a = ScoreSeries("analysis", [0.0], [0.5])
    path = tmp_path / "scores.csv"
    write_scores([s, a], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,rmse,label"
    assert lines[1:] == ["0.0,1.5,free", "60.0,1.25,free", "0.0,0.5,analysis"]
