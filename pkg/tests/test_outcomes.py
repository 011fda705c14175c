import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pdxitr import (
    TrajectoryError,
    VolumeTrajectory,
    compute_bar,
    compute_ttd,
    tumor_volume,
)


def test_tumor_volume_hand_value():
    assert tumor_volume(10.0, 8.0) == pytest.approx(10 * 64 * math.pi / 6, abs=1e-9)


def test_tumor_volume_unit():
    assert tumor_volume(6 / math.pi, 1.0) == pytest.approx(1.0)


def test_tumor_volume_axis_order():
    with pytest.raises(TrajectoryError, match="minor axis"):
        tumor_volume(1.0, 2.0)
    with pytest.raises(TrajectoryError):
        tumor_volume(0.0, 0.0)


def test_bar_hand_trajectory():
    # candidates: day 11 -> mean(0,-5,-10,-20)/100 = -8.75%; day 14 -> -13%
    traj = VolumeTrajectory((0, 4, 7, 11, 14), (100, 95, 90, 80, 70))
    assert compute_bar(traj) == pytest.approx(13.0, abs=1e-12)


def test_bar_constant_volume_is_zero():
    traj = VolumeTrajectory((0, 14), (50, 50))
    assert compute_bar(traj) == 0.0


def test_bar_needs_followup_past_day_10():
    traj = VolumeTrajectory((0, 7), (100, 90))
    with pytest.raises(TrajectoryError, match="day 10"):
        compute_bar(traj)


def test_bar_sign_convention():
    # growing tumor -> positive relative change -> negative returned value
    growing = VolumeTrajectory((0, 12), (100, 150))
    assert compute_bar(growing) < 0
    shrinking = VolumeTrajectory((0, 12), (100, 50))
    assert compute_bar(shrinking) > 0


def test_ttd_first_crossing():
    traj = VolumeTrajectory((0, 7, 14), (100, 150, 210))
    res = compute_ttd(traj)
    assert res.log_ttd == pytest.approx(math.log(14))
    assert not res.censored


def test_ttd_exact_doubling():
    traj = VolumeTrajectory((0, 5), (100, 200))
    assert compute_ttd(traj).log_ttd == pytest.approx(math.log(5))


def test_ttd_censored_at_last_day():
    traj = VolumeTrajectory((0, 7, 14), (100, 120, 130))
    res = compute_ttd(traj)
    assert res.log_ttd == pytest.approx(math.log(14))
    assert res.censored


def test_trajectory_validation():
    with pytest.raises(TrajectoryError):
        VolumeTrajectory((1, 5), (100, 110))  # must start at day 0
    with pytest.raises(TrajectoryError):
        VolumeTrajectory((0, 5, 5), (100, 110, 120))  # strictly increasing
    with pytest.raises(TrajectoryError):
        VolumeTrajectory((0, 5), (100, 0))  # positive volumes
    with pytest.raises(TrajectoryError):
        VolumeTrajectory((0,), (100,))  # at least two points


def test_from_axes_computes_volumes():
    traj = VolumeTrajectory.from_axes((0, 12), [(10, 8), (10, 8)])
    assert traj.volumes[0] == pytest.approx(tumor_volume(10, 8))
    assert compute_bar(traj) == 0.0


@given(
    st.lists(st.floats(min_value=10.0, max_value=1000.0), min_size=2, max_size=8),
    st.integers(min_value=1, max_value=5),
)
def test_bar_shift_invariance_under_scaling(volumes, spacing):
    """BAR depends only on relative change: scaling all volumes is a no-op."""
    days = tuple(i * (10 + spacing) for i in range(len(volumes)))
    traj = VolumeTrajectory(days, tuple(volumes))
    scaled = VolumeTrajectory(days, tuple(3.0 * v for v in volumes))
    assert compute_bar(traj) == pytest.approx(compute_bar(scaled), rel=1e-9, abs=1e-9)
