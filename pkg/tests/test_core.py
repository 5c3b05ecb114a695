import numpy as np
import pytest

from plumeinv.core import (DegenerateFrameError, Measurement, Source, SourceSet, Survey, downwind_frame,
                           downwind_offsets, rotate, wind_from_met, wind_to_met)


def test_northerly_wind_points_south():
    np.testing.assert_allclose(wind_from_met(5.0, 0.0), [0.0, -5.0], atol=1e-12)
    np.testing.assert_allclose(wind_from_met(2.0, 90.0), [-2.0, 0.0], atol=1e-12)


def test_met_round_trip():
    rng = np.random.default_rng(1)
    speed = rng.uniform(0.5, 20, 100)
    direction = rng.uniform(0, 360, 100)
    s, d = wind_to_met(wind_from_met(speed, direction))
    np.testing.assert_allclose(s, speed, rtol=1e-12)
    np.testing.assert_allclose(np.cos(np.deg2rad(d - direction)), 1.0, atol=1e-12)


def test_rotation_is_counter_clockwise():
    np.testing.assert_allclose(rotate([1.0, 0.0], np.pi / 2), [0.0, 1.0], atol=1e-15)


def test_downwind_frame_axes():
    src = Source((0.0, 0.0))
    # wind blowing toward +x: a point 100 m east and 20 m north is downwind and to the left
    assert downwind_frame((100.0, 20.0, 50.0), src, (3.0, 0.0)) == pytest.approx((100.0, 20.0, 50.0))
    # a 90 degree bias turns the wind toward +y
    dr, dh, dv = downwind_frame((0.0, 100.0, 0.0), src, (3.0, 0.0), bias=np.pi / 2)
    assert dr == pytest.approx(100.0)
    assert dh == pytest.approx(0.0, abs=1e-12)


def test_frame_preserves_horizontal_distance():
    rng = np.random.default_rng(2)
    pos = np.column_stack([rng.normal(0, 1000, (50, 2)), rng.uniform(0, 500, 50)])
    winds = rng.normal(0, 5, (50, 2))
    dr, dh, dv, speed = downwind_offsets(pos, (10.0, -30.0), winds, 0.3)
    np.testing.assert_allclose(np.hypot(dr, dh), np.hypot(pos[:, 0] - 10.0, pos[:, 1] + 30.0), rtol=1e-12)
    np.testing.assert_allclose(speed, np.hypot(*winds.T), rtol=1e-12)
    np.testing.assert_array_equal(dv, pos[:, 2])


def test_zero_wind_is_degenerate():
    with pytest.raises(DegenerateFrameError):
        downwind_frame((1.0, 1.0, 1.0), Source((0.0, 0.0)), (0.0, 0.0))


def test_survey_validation():
    with pytest.raises(ValueError):
        Survey([0.0], [[0, 0, 0]], [1.0], [[1, 0]])
    with pytest.raises(ValueError):
        Survey([0.0, 0.0], [[0, 0, 0]] * 2, [1.0, 1.0], [[1, 0]] * 2)
    with pytest.raises(ValueError):
        Survey([0.0, 1.0], [[0, 0, -1], [0, 0, 0]], [1.0, 1.0], [[1, 0]] * 2)
    with pytest.raises(ValueError):
        Measurement(0.0, (0.0, 0.0, 0.0), float("nan"), (1.0, 0.0))


def test_survey_is_read_only(track):
    with pytest.raises(ValueError):
        track.concentrations[0] = 0.0
    m = track[3]
    assert isinstance(m, Measurement)
    assert Survey.from_measurements(list(track)).n == track.n


def test_source_validation_and_arrays():
    with pytest.raises(ValueError):
        Source((0.0, 0.0), half_width=-1.0)
    with pytest.raises(ValueError):
        Source((0.0, 0.0), emission_rate=-1.0)
    ss = SourceSet.from_arrays([[1, 2], [3, 4]], [5, 6], [0.1, 0.2], 10.0)
    assert ss.m == 2
    np.testing.assert_array_equal(ss.locations, [[1, 2], [3, 4]])
    np.testing.assert_array_equal(ss.heights, [10.0, 10.0])
