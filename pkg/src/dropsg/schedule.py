"""Free-fall kinematics, tooth-crossing times, and microwave pulse schedules.

Region-local time: t = 0 at entry into the teeth region, which coincides with
the opening pi/2 pulse. Crossing times come from the closed-form root of the
constant-acceleration fall, so a ~10^4-event schedule is exact and cheap.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .model import MagnetGeometry, Scenario


class ScheduleError(ValueError):
    pass


class ScheduleTruncatedError(ScheduleError):
    """The teeth region ends before the requested scheme duration."""

    def __init__(self, shortfall: float):
        self.shortfall = shortfall
        super().__init__(
            f"teeth region shorter than the fall distance by {shortfall:.6g} m")


class GateError(ValueError):
    pass


class JitterReorderError(ScheduleError):
    """Jitter so large that pulse events would change order."""


@dataclass(frozen=True)
class DropKinematics:
    entry_velocity: float       # m/s, speed at teeth-region entry
    g_vertical: float           # m/s^2
    teeth_region_length: float  # m

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "DropKinematics":
        g = scenario.constants.g_surface
        return cls(
            entry_velocity=entry_velocity(scenario.geometry.homogeneous_length, g),
            g_vertical=g,
            teeth_region_length=scenario.geometry.teeth_region_length,
        )

    def position(self, t):
        """Fall distance inside the teeth region after region-local time t."""
        return self.entry_velocity * t + 0.5 * self.g_vertical * t * t

    def time_at(self, z):
        """Positive root of position(t) = z."""
        v0, g = self.entry_velocity, self.g_vertical
        return (-v0 + np.sqrt(v0 * v0 + 2.0 * g * z)) / g


class PulseKind(Enum):
    PI_HALF_OPEN = "PI_HALF_OPEN"
    PI = "PI"
    PI_MIDPOINT = "PI_MIDPOINT"
    PI_HALF_CLOSE = "PI_HALF_CLOSE"


class Axis(Enum):
    X = "X"
    Y = "Y"


#: Pulse-axis cycle applied to the pi pulses, repeated over the whole train.
XY8_CYCLE = (Axis.X, Axis.Y, Axis.X, Axis.Y, Axis.Y, Axis.X, Axis.Y, Axis.X)

#: A pi pulse and the midpoint flip closer than this are one physical event.
MIDPOINT_MERGE_TOL = 1e-9  # s


@dataclass(frozen=True)
class PulseEvent:
    time: float       # s from teeth-region entry
    kind: PulseKind
    axis: Axis
    index: int


@dataclass(frozen=True)
class PulseSchedule:
    events: tuple[PulseEvent, ...]
    kinematics: DropKinematics
    period: float                 # s, oscillation period T of the scheme
    merged_midpoint: bool = False  # midpoint pi coincided with a crossing

    @property
    def pi_events(self) -> tuple[PulseEvent, ...]:
        return tuple(e for e in self.events
                     if e.kind in (PulseKind.PI, PulseKind.PI_MIDPOINT))

    @property
    def crossing_times(self) -> np.ndarray:
        """Times of the field sign changes the schedule was built against."""
        times = [e.time for e in self.events if e.kind is PulseKind.PI]
        if self.merged_midpoint:
            times.extend(e.time for e in self.events if e.kind is PulseKind.PI_MIDPOINT)
        return np.sort(np.asarray(times))

    @property
    def times(self) -> np.ndarray:
        return np.asarray([e.time for e in self.events])


def entry_velocity(homogeneous_length: float, g: float) -> float:
    """Speed gained by free fall through the homogeneous pre-drop region."""
    if homogeneous_length < 0:
        raise ScheduleError(f"length must be >= 0 (got {homogeneous_length!r})")
    if g <= 0:
        raise ScheduleError(f"g must be positive (got {g!r})")
    return math.sqrt(2.0 * g * homogeneous_length)


def crossing_times(kinematics: DropKinematics, geometry: MagnetGeometry,
                   t_max: Optional[float] = None) -> np.ndarray:
    """Times of the tooth-crossing field sign changes, strictly increasing.

    Breakpoints sit at z_k = w*(f + k). The list is truncated at the end of
    the teeth region, or earlier at t_max when the caller asks for a time
    horizon. Gaps shrink monotonically as the diamond accelerates.
    """
    w = geometry.tooth_width
    first = w * geometry.first_tooth_fraction
    z_end = kinematics.teeth_region_length
    if t_max is not None:
        z_end = min(z_end, float(kinematics.position(t_max)))
    if z_end < first:
        return np.empty(0)
    n = int(math.floor((z_end - first) / w)) + 1
    z = first + w * np.arange(n)
    times = kinematics.time_at(z)
    if t_max is not None:
        times = times[times < t_max]
    return times


def build_schedule(kinematics: DropKinematics, geometry: MagnetGeometry,
                   period: float) -> PulseSchedule:
    """Compile the full pulse train for a two-oscillation scheme of period T.

    pi/2 pulses open at t = 0 and close at t = 2T; a pi pulse fires at every
    crossing in (0, 2T); the motional-decoupling pi is inserted at exactly
    t = T unless a crossing lies within 1 ns, in which case the two merge
    into a single event. Axis labels follow the XY8 cycle over the pi train.
    """
    if period <= 0:
        raise ScheduleError(f"period must be positive (got {period!r})")
    t_end = 2.0 * period
    fall = float(kinematics.position(t_end))
    if fall > kinematics.teeth_region_length:
        raise ScheduleTruncatedError(fall - kinematics.teeth_region_length)

    crossings = crossing_times(kinematics, geometry, t_max=t_end)
    crossings = crossings[crossings > 0.0]

    merged = False
    pi_times: list[tuple[float, PulseKind]] = []
    for t in crossings:
        if abs(t - period) < MIDPOINT_MERGE_TOL:
            pi_times.append((float(t), PulseKind.PI_MIDPOINT))
            merged = True
        else:
            pi_times.append((float(t), PulseKind.PI))
    if not merged:
        pi_times.append((period, PulseKind.PI_MIDPOINT))
        pi_times.sort(key=lambda item: item[0])

    events = [PulseEvent(0.0, PulseKind.PI_HALF_OPEN, Axis.X, 0)]
    for i, (t, kind) in enumerate(pi_times):
        events.append(PulseEvent(t, kind, XY8_CYCLE[i % len(XY8_CYCLE)], i + 1))
    events.append(PulseEvent(t_end, PulseKind.PI_HALF_CLOSE, Axis.X, len(events)))

    times = [e.time for e in events]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScheduleError("schedule events are not strictly increasing")
    return PulseSchedule(tuple(events), kinematics, period, merged_midpoint=merged)


@dataclass(frozen=True)
class GateCalibration:
    gate_z: tuple[float, ...]
    gate_times: tuple[float, ...]
    fitted_v0: float          # m/s at the first gate datum z = 0
    fitted_time_offset: float  # s
    residual: float           # s, rms time residual


def calibrate_from_gates(gate_z: Sequence[float], gate_times: Sequence[float],
                         g: float) -> GateCalibration:
    """Fit (v0, t_offset) of z = v0*(t-t0) + g*(t-t0)^2/2 to timing-gate data.

    The model is linearized as z - g*t^2/2 = alpha*t + beta and inverted in
    closed form, so two gates give an exact fit with zero residual.
    """
    z = np.asarray(gate_z, dtype=float)
    t = np.asarray(gate_times, dtype=float)
    if len(z) < 2 or len(z) != len(t):
        raise GateError("need at least 2 gates with matching times")
    if len(np.unique(z)) != len(z):
        raise GateError("degenerate gate placement: duplicate z positions")
    if g <= 0:
        raise GateError(f"g must be positive (got {g!r})")

    y = z - 0.5 * g * t * t
    design = np.column_stack([t, np.ones_like(t)])
    (alpha, beta), *_ = np.linalg.lstsq(design, y, rcond=None)
    disc = alpha * alpha - 2.0 * g * beta
    if disc <= 0:
        raise GateError("gate data inconsistent with forward free fall")
    v0 = math.sqrt(disc)
    t0 = (v0 - alpha) / g
    predicted = t0 + (-v0 + np.sqrt(v0 * v0 + 2.0 * g * z)) / g
    residual = float(np.sqrt(np.mean((t - predicted) ** 2)))
    return GateCalibration(tuple(z), tuple(t), v0, t0, residual)


def apply_jitter(schedule: PulseSchedule, sigma: float, seed) -> PulseSchedule:
    """Perturb every event time by an independent N(0, sigma) draw.

    Deterministic for a given seed; sigma = 0 returns the schedule unchanged.
    Raises if the perturbed events would reorder. Jittered schedules are
    sensitivity-study artifacts and no longer honor the t = 0 / t = 2T anchor
    invariants.
    """
    if sigma < 0:
        raise ScheduleError(f"sigma must be >= 0 (got {sigma!r})")
    if sigma == 0:
        return schedule
    rng = np.random.Generator(np.random.PCG64(seed))
    offsets = rng.normal(0.0, sigma, size=len(schedule.events))
    new_times = [float(e.time + dt) for e, dt in zip(schedule.events, offsets)]
    if any(b <= a for a, b in zip(new_times, new_times[1:])):
        raise JitterReorderError(
            f"sigma {sigma!r} reorders events (min gap {min(np.diff(schedule.times)):.3g} s)")
    events = tuple(replace(e, time=t) for e, t in zip(schedule.events, new_times))
    return PulseSchedule(events, schedule.kinematics, schedule.period,
                         merged_midpoint=schedule.merged_midpoint)


def write_schedule_csv(schedule: PulseSchedule, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "time_s", "kind", "axis"])
        for e in schedule.events:
            writer.writerow([e.index, repr(e.time), e.kind.value, e.axis.value])


def read_schedule_csv(path, kinematics: DropKinematics,
                      period: float) -> PulseSchedule:
    """Replay a schedule exported by write_schedule_csv."""
    events = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["index", "time_s", "kind", "axis"]:
            raise ScheduleError(f"{path}: unexpected header {header!r}")
        for row in reader:
            index, time_s, kind, axis = row
            events.append(PulseEvent(float(time_s), PulseKind(kind), Axis(axis), int(index)))
    merged = not any(e.time == period and e.kind is PulseKind.PI_MIDPOINT for e in events)
    has_midpoint = any(e.kind is PulseKind.PI_MIDPOINT for e in events)
    return PulseSchedule(tuple(events), kinematics, period,
                         merged_midpoint=merged and has_midpoint)
