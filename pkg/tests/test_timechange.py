import numpy as np
import pytest

from impulseopt.timechange import TimeMap, physical_time, scale_factors


def test_breakpoints_include_start():
    tm = TimeMap(t0=0.0, instants=(10.0, 30.0, 100.0))
    assert np.allclose(tm.breakpoints, [0.0, 10.0, 30.0, 100.0])
    assert tm.n_segments == 3


def test_scaled_instants_are_fractions_of_span():
    tm = TimeMap(t0=0.0, instants=(25.0, 50.0, 100.0))
    assert np.allclose(tm.scaled, [0.25, 0.5, 1.0])


def test_scaled_with_nonzero_origin():
    tm = TimeMap(t0=10.0, instants=(20.0, 30.0))
    assert np.allclose(tm.scaled, [0.5, 1.0])


def test_negative_duration_rejected():
    with pytest.raises(ValueError):
        TimeMap(t0=0.0, instants=(30.0, 10.0))


def test_zero_length_segment_allowed():
    tm = TimeMap(t0=0.0, instants=(0.0, 100.0))
    assert scale_factors(tm)[0] == 0.0


def test_scale_factors_are_segment_durations_times_count():
    tm = TimeMap(t0=0.0, instants=(10.0, 30.0, 100.0))
    assert np.allclose(scale_factors(tm), [3 * 10.0, 3 * 20.0, 3 * 70.0])


def test_physical_time_hits_breakpoints_exactly():
    tm = TimeMap(t0=5.0, instants=(10.0, 30.0, 100.0))
    s = np.array([0.0, 1 / 3, 2 / 3, 1.0])
    assert np.allclose(physical_time(s, tm), tm.breakpoints)


def test_physical_time_is_piecewise_affine():
    tm = TimeMap(t0=0.0, instants=(10.0, 110.0))
    # Midpoint of the second normalized subinterval -> midpoint in seconds.
    assert physical_time(0.75, tm) == pytest.approx(60.0)


def test_physical_time_scalar_round_trip():
    tm = TimeMap(t0=0.0, instants=(40.0,))
    out = physical_time(0.5, tm)
    assert np.isscalar(out) or out.ndim == 0
    assert out == pytest.approx(20.0)


def test_physical_time_rejects_out_of_range():
    tm = TimeMap(t0=0.0, instants=(40.0,))
    with pytest.raises(ValueError):
        physical_time(1.5, tm)


def test_scaled_requires_positive_span():
    tm = TimeMap(t0=0.0, instants=(0.0,))
    with pytest.raises(ValueError):
        tm.scaled
