"""Event-driven propagation of the two superposition branches.

Between consecutive events the force on each branch is linear in x, so each
segment is a harmonic arc with a closed-form solution; the engine therefore
has no discretization drift. Internally the branch pair is propagated in
separation/common-mode coordinates, an exact decomposition of the linear
dynamics: the separation never touches the large (hundreds of microns)
bias-field equilibrium offset, which keeps the round-off floor of the
interference observable at the 1e-21 m level.

Spin flips fire at schedule pulse events; field sign flips fire at the tooth
crossings (by default the schedule's pi-pulse times, overridable so drift and
jitter studies can mistime one stream against the other). The midpoint pi
flips spins only, which is what inverts the relative force for the second
oscillation.

Sign convention: spin -1 with field sign +1 is pulled toward +x, so branch A
(initial spin -1) takes the upper path. The A/B assignment is an arbitrary
relabeling; only the relative geometry is physical, and the tests pin this
choice.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from .model import InvalidScenarioError, Scenario, derive_quantities
from .schedule import PulseKind, PulseSchedule

#: Branch positions beyond this bound mean the diamond hit the magnets.
POSITION_SANITY_BOUND = 1e-3  # m

#: Recombination thresholds at the midpoint and closing pulses.
RECOMBINATION_POSITION_TOL = 2e-9  # m
RECOMBINATION_VELOCITY_TOL = 1e-7  # m/s


class CrashedIntoMagnetsError(RuntimeError):
    def __init__(self, t, x):
        self.time = t
        self.position = x
        super().__init__(f"branch position {x:.3e} m exceeded the sanity bound "
                         f"at t = {t:.6f} s: crashed into magnets")


class IntegrationFailureError(RuntimeError):
    pass


class SpinLabel(IntEnum):
    """NV spin states used by the scheme; the value is the S_z eigenvalue."""

    ZERO = 0
    MINUS_ONE = -1


@dataclass(frozen=True)
class BranchState:
    x: float      # m
    vx: float     # m/s
    spin: SpinLabel
    t: float      # s


@dataclass(frozen=True, slots=True)
class SegmentPiece:
    """One constant-force segment with the branch-pair state at its start."""

    t_start: float
    t_end: float
    sigma: int
    spin_a: int
    spin_b: int
    x_eq_a: float
    x_eq_b: float
    omega: float
    # mode coordinates at t_start: separation d = x_a - x_b, common c
    d0: float
    vd0: float
    c0: float
    vc0: float
    d_eq: float
    c_eq: float


@dataclass(frozen=True)
class RecombinationReport:
    """|separation| and |relative velocity| at the midpoint and closing pulses."""

    t_mid: float
    dx_mid: float
    dvx_mid: float
    t_end: float
    dx_end: float
    dvx_end: float

    @property
    def separable(self) -> bool:
        return (self.dx_mid < RECOMBINATION_POSITION_TOL
                and self.dx_end < RECOMBINATION_POSITION_TOL
                and self.dvx_mid < RECOMBINATION_VELOCITY_TOL
                and self.dvx_end < RECOMBINATION_VELOCITY_TOL)


@dataclass(frozen=True)
class SimulationResult:
    times: np.ndarray
    x_a: np.ndarray
    v_a: np.ndarray
    spin_a: np.ndarray
    x_b: np.ndarray
    v_b: np.ndarray
    spin_b: np.ndarray
    separation: np.ndarray    # x_a - x_b
    common_mode: np.ndarray   # (x_a + x_b) / 2
    segments: tuple
    recombination: RecombinationReport
    time_in_minus_one: tuple[float, float]  # accumulated per branch over the run
    omega: float
    scenario: Scenario

    @property
    def separable(self) -> bool:
        return self.recombination.separable


def segment_equilibrium(spin, sigma: int, scenario: Scenario) -> float:
    """Equilibrium x position for one branch during one field segment.

    Force balance of the drop Hamiltonian: the spin-gradient pull, the tilt
    component of gravity, and the bias-field diamagnetic kick against the
    restoring diamagnetic stiffness.
    """
    c, d, g, f = scenario.constants, scenario.diamond, scenario.geometry, scenario.frame
    s_z = float(spin.value if isinstance(spin, SpinLabel) else spin)
    chi_v = abs(d.susceptibility) * d.volume / c.vacuum_permeability
    stiffness = chi_v * g.gradient_magnitude ** 2
    if stiffness == 0:
        raise InvalidScenarioError(["gradient_magnitude must be nonzero"])
    force = (d.g_factor_parallel * c.bohr_magneton * s_z * sigma * g.gradient_magnitude
             + d.mass * c.g_surface * math.sin(f.phi)
             + chi_v * g.bias_field * sigma * g.gradient_magnitude)
    return -force / stiffness


def _rotate(x, v, x_eq, omega, dt):
    """Advance one harmonic arc by dt about x_eq; exact up to round-off."""
    cos_wt = math.cos(omega * dt)
    sin_wt = math.sin(omega * dt)
    dx = x - x_eq
    return (x_eq + dx * cos_wt + (v / omega) * sin_wt,
            -omega * dx * sin_wt + v * cos_wt)


def propagate_segment(state: BranchState, x_eq: float, omega: float,
                      dt: float) -> BranchState:
    """Closed-form propagation of a single branch through one segment."""
    if dt < 0:
        raise ValueError(f"dt must be >= 0 (got {dt!r})")
    if dt == 0:
        return state
    x, v = _rotate(state.x, state.vx, x_eq, omega, dt)
    return BranchState(x=x, vx=v, spin=state.spin, t=state.t + dt)


def _event_table(scenario, schedule, field_crossings):
    """Merged breakpoints: (times, sigma-flip counts, spin-flip counts)."""
    open_t = schedule.events[0].time
    close_t = schedule.events[-1].time
    if schedule.events[0].kind is not PulseKind.PI_HALF_OPEN:
        raise ValueError("schedule must start with the opening pi/2 pulse")
    if schedule.events[-1].kind is not PulseKind.PI_HALF_CLOSE:
        raise ValueError("schedule must end with the closing pi/2 pulse")

    spin_flips = [e.time for e in schedule.events
                  if e.kind in (PulseKind.PI, PulseKind.PI_MIDPOINT)]
    if field_crossings is None:
        sigma_flips = schedule.crossing_times.tolist()
    else:
        sigma_flips = [float(t) for t in field_crossings]

    flips: dict[float, list[int]] = {}
    for t in sigma_flips:
        flips.setdefault(t, [0, 0])[0] += 1
    for t in spin_flips:
        flips.setdefault(t, [0, 0])[1] += 1

    grid = np.arange(0.0, close_t, scenario.sampling_interval)
    points = {float(t) for t in grid if open_t < t < close_t}
    points.update(t for t in flips if open_t < t <= close_t)
    points.add(close_t)
    times = sorted(points)
    n_sigma = [flips.get(t, (0, 0))[0] for t in times]
    n_spin = [flips.get(t, (0, 0))[1] for t in times]
    mids = [e.time for e in schedule.events if e.kind is PulseKind.PI_MIDPOINT]
    if len(mids) != 1:
        raise ValueError("schedule must contain exactly one midpoint pi pulse")
    return open_t, times, n_sigma, n_spin, mids[0], close_t


def simulate_branches(scenario: Scenario, schedule: PulseSchedule,
                      field_crossings: Optional[Sequence[float]] = None) -> SimulationResult:
    """Propagate both branches through the full scheme.

    Output rows sit on the uniform sampling grid plus every exact event time.
    field_crossings overrides where the field sign flips (default: the
    schedule's pi-pulse times), which is how mistimed-pulse studies are run.
    """
    derived = derive_quantities(scenario)
    omega = derived.angular_frequency
    c, d, g, f = scenario.constants, scenario.diamond, scenario.geometry, scenario.frame
    chi_v = abs(d.susceptibility) * d.volume / c.vacuum_permeability
    stiffness = chi_v * g.gradient_magnitude ** 2
    eq_spin_unit = d.g_factor_parallel * c.bohr_magneton * g.gradient_magnitude / stiffness
    tilt_eq = -d.mass * c.g_surface * math.sin(f.phi) / stiffness
    bias_eq_unit = -chi_v * g.bias_field * g.gradient_magnitude / stiffness

    open_t, times, n_sigma, n_spin, mid_t, close_t = _event_table(
        scenario, schedule, field_crossings)

    sigma = 1
    spin_a, spin_b = -1.0, 0.0   # branch A |-1>, branch B |0> after the opening pulse
    d_sep, vd, com, vc = 0.0, 0.0, 0.0, 0.0
    t_prev = open_t

    rows_t, rows = [open_t], [(0.0, 0.0, 0.0, 0.0, spin_a, spin_b)]
    segments = []
    time_minus_a = 0.0
    time_minus_b = 0.0
    rec = {}

    for tb, ns, np_ in zip(times, n_sigma, n_spin):
        if tb > t_prev:
            dt = tb - t_prev
            eq_a = -spin_a * sigma * eq_spin_unit
            eq_b = -spin_b * sigma * eq_spin_unit
            com_eq = tilt_eq + sigma * bias_eq_unit + 0.5 * (eq_a + eq_b)
            d_eq = eq_a - eq_b
            segments.append(SegmentPiece(
                t_start=t_prev, t_end=tb, sigma=sigma,
                spin_a=int(spin_a), spin_b=int(spin_b),
                x_eq_a=tilt_eq + sigma * bias_eq_unit + eq_a,
                x_eq_b=tilt_eq + sigma * bias_eq_unit + eq_b,
                omega=omega, d0=d_sep, vd0=vd, c0=com, vc0=vc,
                d_eq=d_eq, c_eq=com_eq))
            d_sep, vd = _rotate(d_sep, vd, d_eq, omega, dt)
            com, vc = _rotate(com, vc, com_eq, omega, dt)
            if spin_a == -1.0:
                time_minus_a += dt
            if spin_b == -1.0:
                time_minus_b += dt
            t_prev = tb

        if tb == mid_t or tb == close_t:
            rec[tb] = (abs(d_sep), abs(vd))

        if ns % 2 == 1:
            sigma = -sigma
        if np_ % 2 == 1:
            spin_a = -1.0 - spin_a
            spin_b = -1.0 - spin_b

        x_a = com + 0.5 * d_sep
        x_b = com - 0.5 * d_sep
        if abs(x_a) > POSITION_SANITY_BOUND or abs(x_b) > POSITION_SANITY_BOUND:
            raise CrashedIntoMagnetsError(tb, max(x_a, x_b, key=abs))
        rows_t.append(tb)
        rows.append((d_sep, vd, com, vc, spin_a, spin_b))

    arr = np.asarray(rows)
    sep, vsep, common, vcom = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    recombination = RecombinationReport(
        t_mid=mid_t, dx_mid=rec[mid_t][0], dvx_mid=rec[mid_t][1],
        t_end=close_t, dx_end=rec[close_t][0], dvx_end=rec[close_t][1])
    return SimulationResult(
        times=np.asarray(rows_t),
        x_a=common + 0.5 * sep, v_a=vcom + 0.5 * vsep,
        spin_a=arr[:, 4].astype(int),
        x_b=common - 0.5 * sep, v_b=vcom - 0.5 * vsep,
        spin_b=arr[:, 5].astype(int),
        separation=sep, common_mode=common,
        segments=tuple(segments), recombination=recombination,
        time_in_minus_one=(time_minus_a, time_minus_b),
        omega=omega, scenario=scenario)


# Dormand-Prince 5(4) tableau
_DP_A = (
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84)
_DP_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

_MIN_STEP = 1e-16  # s


def _dp54_segment(y, t0, t1, accel, rel_tol, atol):
    """Adaptive Dormand-Prince 5(4) over [t0, t1] with a fixed force field."""

    def f(state):
        return np.array([state[1], accel(state[0], 0), state[3], accel(state[2], 1)])

    t = t0
    h = t1 - t0
    k1 = f(y)
    while t < t1:
        h = min(h, t1 - t)
        if h < _MIN_STEP:
            raise IntegrationFailureError(f"step size underflow at t = {t!r}")
        ks = [k1]
        for row in _DP_A:
            yk = y + h * sum(a * k for a, k in zip(row, ks))
            ks.append(f(yk))
        y_new = y + h * sum(b * k for b, k in zip(_DP_B, ks))
        ks.append(f(y_new))
        err = h * sum(e * k for e, k in zip(_DP_E, ks))
        scale = atol + rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = float(np.max(np.abs(err) / scale))
        if not math.isfinite(err_norm):
            h *= 0.2  # overflowed trial step: retry much smaller
            continue
        if err_norm <= 1.0:
            t += h
            y = y_new
            k1 = ks[6]
        factor = 0.9 * err_norm ** -0.2 if err_norm > 0 else 5.0
        h *= min(5.0, max(0.2, factor))
    return y


def integrate_reference(scenario: Scenario, schedule: PulseSchedule,
                        rel_tol: float = 1e-10,
                        field_crossings: Optional[Sequence[float]] = None) -> SimulationResult:
    """Independent cross-check: adaptive RK integration of the same force field.

    Each branch is integrated in raw coordinates (no mode decomposition) with
    steps clipped to the exact event times, so the two engines share nothing
    but the per-segment acceleration a = -omega^2 (x - x_eq). Output rows sit
    on the same grid as simulate_branches for pointwise comparison.
    """
    if not (1e-12 <= rel_tol <= 1e-6):
        raise ValueError(f"rel_tol must lie in [1e-12, 1e-6] (got {rel_tol!r})")
    derived = derive_quantities(scenario)
    omega = derived.angular_frequency
    omega_sq = omega * omega
    atol = rel_tol * np.array([derived.equilibrium_offset,
                               derived.equilibrium_offset * omega] * 2)

    open_t, times, n_sigma, n_spin, mid_t, close_t = _event_table(
        scenario, schedule, field_crossings)

    sigma = 1
    spins = [-1.0, 0.0]
    y = np.zeros(4)  # (x_a, v_a, x_b, v_b)
    t_prev = open_t
    rows_t, rows = [open_t], [(0.0, 0.0, 0.0, 0.0, *spins)]
    time_minus = [0.0, 0.0]
    rec = {}

    for tb, ns, np_ in zip(times, n_sigma, n_spin):
        if tb > t_prev:
            eq = [segment_equilibrium(s, sigma, scenario) for s in spins]

            def accel(x, branch, eq=eq):
                return -omega_sq * (x - eq[branch])

            y = _dp54_segment(y, t_prev, tb, accel, rel_tol, atol)
            time_minus[0] += (tb - t_prev) if spins[0] == -1.0 else 0.0
            time_minus[1] += (tb - t_prev) if spins[1] == -1.0 else 0.0
            t_prev = tb

        if tb == mid_t or tb == close_t:
            rec[tb] = (abs(y[0] - y[2]), abs(y[1] - y[3]))
        if ns % 2 == 1:
            sigma = -sigma
        if np_ % 2 == 1:
            spins = [-1.0 - s for s in spins]
        if abs(y[0]) > POSITION_SANITY_BOUND or abs(y[2]) > POSITION_SANITY_BOUND:
            raise CrashedIntoMagnetsError(tb, max(y[0], y[2], key=abs))
        rows_t.append(tb)
        rows.append((y[0], y[1], y[2], y[3], spins[0], spins[1]))

    arr = np.asarray(rows)
    recombination = RecombinationReport(
        t_mid=mid_t, dx_mid=rec[mid_t][0], dvx_mid=rec[mid_t][1],
        t_end=close_t, dx_end=rec[close_t][0], dvx_end=rec[close_t][1])
    return SimulationResult(
        times=np.asarray(rows_t),
        x_a=arr[:, 0], v_a=arr[:, 1], spin_a=arr[:, 4].astype(int),
        x_b=arr[:, 2], v_b=arr[:, 3], spin_b=arr[:, 5].astype(int),
        separation=arr[:, 0] - arr[:, 2],
        common_mode=0.5 * (arr[:, 0] + arr[:, 2]),
        segments=(), recombination=recombination,
        time_in_minus_one=(time_minus[0], time_minus[1]),
        omega=omega, scenario=scenario)


def write_trajectory_csv(result: SimulationResult, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", "xA_m", "vA_ms", "spinA", "xB_m", "vB_ms",
                         "spinB", "dx_m", "common_m"])
        for i in range(len(result.times)):
            writer.writerow([
                repr(float(result.times[i])),
                repr(float(result.x_a[i])), repr(float(result.v_a[i])),
                int(result.spin_a[i]),
                repr(float(result.x_b[i])), repr(float(result.v_b[i])),
                int(result.spin_b[i]),
                repr(float(result.separation[i])),
                repr(float(result.common_mode[i])),
            ])
