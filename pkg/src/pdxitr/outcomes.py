"""Tumor-volume trajectories and the two response summaries.

Best average response (BAR) is the minimum, over measurement days past
day 10, of the running mean of relative volume change from baseline, in
percent; we return -BAR so that larger is better.  Time to tumor doubling
(TTD) is the first measurement day at which volume reaches twice baseline,
on the natural-log scale; trajectories that never double are right-censored
at the last day.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class TrajectoryError(ValueError):
    """Raised for malformed or insufficient volume trajectories."""


@dataclass(frozen=True)
class VolumeTrajectory:
    """Volume measurements over time for one mouse.

    ``days`` must start at 0 and strictly increase; ``volumes`` are
    positive, with at least two measurements.  ``axes`` optionally holds
    the raw (major, minor) caliper measurements in mm.
    """

    days: tuple[float, ...]
    volumes: tuple[float, ...]
    axes: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        days = tuple(float(d) for d in self.days)
        volumes = tuple(float(v) for v in self.volumes)
        object.__setattr__(self, "days", days)
        object.__setattr__(self, "volumes", volumes)
        if len(days) != len(volumes):
            raise TrajectoryError("days and volumes must have equal length")
        if len(days) < 2:
            raise TrajectoryError("trajectory needs at least 2 measurements")
        if days[0] != 0:
            raise TrajectoryError("first measurement must be at day 0")
        if any(b <= a for a, b in zip(days, days[1:])):
            raise TrajectoryError("days must be strictly increasing")
        if any(v <= 0 for v in volumes):
            raise TrajectoryError("volumes must be positive")
        if self.axes is not None and len(self.axes) != len(days):
            raise TrajectoryError("axes length must match measurements")

    @classmethod
    def from_axes(cls, days, axes) -> "VolumeTrajectory":
        axes = tuple((float(l), float(w)) for l, w in axes)
        volumes = tuple(tumor_volume(l, w) for l, w in axes)
        return cls(tuple(days), volumes, axes)


def tumor_volume(major: float, minor: float) -> float:
    """Approximate tumor volume in mm^3 from caliper axes: l * w^2 * pi/6."""
    if minor <= 0 or major <= 0:
        raise TrajectoryError("tumor axes must be positive")
    if minor > major:
        raise TrajectoryError(f"minor axis {minor} exceeds major axis {major}")
    return major * minor * minor * math.pi / 6.0


def compute_bar(traj: VolumeTrajectory) -> float:
    """Return -BAR in percent (larger = better response).

    BAR = min over measurements t with day > 10 of the mean of
    (V_l - V_0)/V_0 for l = 0..t, times 100.  The baseline term is
    included in the average (it is identically zero), matching the
    (t + 1) divisor.
    """
    days = np.asarray(traj.days)
    volumes = np.asarray(traj.volumes)
    rel = (volumes - volumes[0]) / volumes[0]
    running_mean = np.cumsum(rel) / np.arange(1, len(rel) + 1)
    eligible = days > 10
    if not eligible.any():
        raise TrajectoryError("insufficient follow-up: no measurement past day 10")
    bar = running_mean[eligible].min() * 100.0
    return -bar


class TtdResult(NamedTuple):
    log_ttd: float
    censored: bool


def compute_ttd(traj: VolumeTrajectory) -> TtdResult:
    """Natural log of the first measurement day with volume >= 2 * baseline.

    No interpolation between measurement days.  If the tumor never
    doubles, returns ln(last day) with the censored flag set.
    """
    days = np.asarray(traj.days)
    volumes = np.asarray(traj.volumes)
    doubled = volumes[1:] >= 2.0 * volumes[0]
    if doubled.any():
        day = days[1:][doubled][0]
        return TtdResult(math.log(day), False)
    return TtdResult(math.log(days[-1]), True)
