"""Named, reproducible experiment recipes over the simulator.

Reports are bit-reproducible for a given (config, seed, version): rows are
ordered by sweep index regardless of execution order, JSON keys are sorted,
and no timestamps enter the output. The report writer emits a JSON summary,
per-point CSV files, and a matplotlib figure per experiment.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .dynamics import integrate_reference, simulate_branches, write_trajectory_csv
from .interference import numeric_phase
from .model import (Scenario, apply_overrides, derive_quantities, ensure_valid,
                    scenario_to_dict)
from .schedule import DropKinematics, apply_jitter, build_schedule, crossing_times

#: Reference tilt for phase-error reporting in the sensitivity studies.
PHASE_PROBE_TILT = 500e-6  # rad


class ExperimentError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario = field(default_factory=Scenario)
    sweep_param: Optional[str] = None     # config key, e.g. "toothWidth"
    sweep_values: tuple = ()
    seed: int = 0
    workers: int = 1
    phase_mode: str = "analytic"
    oracle: bool = False
    oracle_rel_tol: float = 1e-10


@dataclass
class ExperimentReport:
    name: str
    rows: list
    headline: dict
    provenance: dict
    extras: dict = field(default_factory=dict, repr=False)  # not serialized

    def to_json(self) -> str:
        payload = {
            "name": self.name,
            "headline": self.headline,
            "rows": self.rows,
            "provenance": self.provenance,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _provenance(scenario: Scenario) -> dict:
    canonical = json.dumps(scenario_to_dict(scenario), sort_keys=True)
    return {
        "scenario_sha256": hashlib.sha256(canonical.encode()).hexdigest(),
        "version": __version__,
    }


def _baseline(scenario: Scenario):
    derived = derive_quantities(scenario)
    kin = DropKinematics.from_scenario(scenario)
    sched = build_schedule(kin, scenario.geometry, derived.period)
    result = simulate_branches(scenario, sched)
    return derived, kin, sched, result


def _analytic_separation(result, derived):
    t = result.times
    T = derived.period
    omega = derived.angular_frequency
    return np.where(t <= T,
                    derived.equilibrium_offset * (1.0 - np.cos(omega * t)),
                    derived.equilibrium_offset * (1.0 - np.cos(omega * (t - T))))


def run_replication(scenario: Optional[Scenario] = None) -> ExperimentReport:
    """Headline numbers of the default proposal in one report."""
    scenario = ensure_valid(scenario or Scenario())
    try:
        derived, kin, sched, result = _baseline(scenario)
        region_crossings = crossing_times(kin, scenario.geometry)
        ana = _analytic_separation(result, derived)
        abs_sep = np.abs(result.separation)
        i_max = int(np.argmax(abs_sep))

        full_geo = apply_overrides(scenario, ["firstToothFraction=1.0"])
        sched_full = build_schedule(DropKinematics.from_scenario(full_geo),
                                    full_geo.geometry, derived.period)
        result_full = simulate_branches(full_geo, sched_full)

        probe = apply_overrides(scenario, [f"phi={PHASE_PROBE_TILT!r}"])
        phase = numeric_phase(result, probe)
    except Exception as exc:
        raise ExperimentError(f"replication sub-run failed: {exc}") from exc

    common_half = float(np.max(np.abs(result.common_mode)))
    common_full = float(np.max(np.abs(result_full.common_mode)))
    headline = {
        "max_separation_analytic_m": derived.max_separation,
        "angular_frequency_rad_s": derived.angular_frequency,
        "frequency_hz": derived.angular_frequency / (2.0 * math.pi),
        "equilibrium_offset_m": derived.equilibrium_offset,
        "period_s": derived.period,
        "crossings_in_region": int(len(region_crossings)),
        "crossings_in_scheme": int(len(sched.crossing_times)),
        "pi_pulse_count": int(len(sched.pi_events)),
        "max_separation_simulated_m": float(abs_sep[i_max]),
        "max_separation_time_s": float(result.times[i_max]),
        "recombination_dx_mid_m": result.recombination.dx_mid,
        "recombination_dx_end_m": result.recombination.dx_end,
        "recombination_dv_mid_ms": result.recombination.dvx_mid,
        "recombination_dv_end_ms": result.recombination.dvx_end,
        "analytic_vs_simulated_max_dev_m": float(np.max(np.abs(abs_sep - ana))),
        "common_mode_peak_half_width_m": common_half,
        "common_mode_peak_full_width_m": common_full,
        "common_mode_cancellation_ratio": common_half / common_full,
        "gravity_phase_at_probe_tilt_rad": phase.delta_phase,
        "fringe_period_rad": 2.0 * math.pi / phase.gravity_kernel,
        "residual_zeeman_bias_phase_rad": phase.delta.zeeman_bias,
        "residual_zeeman_gradient_phase_rad": phase.delta.zeeman_gradient,
        "residual_zfs_phase_rad": phase.delta.zfs,
    }
    return ExperimentReport(
        name="replication", rows=[], headline=headline,
        provenance=_provenance(scenario),
        extras={"result": result, "result_full_width": result_full})


def run_jitter_sensitivity(sigmas: Sequence[float], n_trials: int = 32,
                           seed: int = 0,
                           scenario: Optional[Scenario] = None) -> ExperimentReport:
    """Pulse-timing jitter study: spins flip at jittered times, teeth stay put."""
    scenario = ensure_valid(scenario or Scenario())
    derived, kin, sched, baseline = _baseline(scenario)
    true_crossings = sched.crossing_times
    probe = apply_overrides(scenario, [f"phi={PHASE_PROBE_TILT!r}"])
    base_phase = numeric_phase(baseline, probe).delta_phase

    rows = []
    for i, sigma in enumerate(sigmas):
        if sigma < 0:
            raise ExperimentError(f"sigma must be >= 0 (got {sigma!r})")
        dx_end, dv_end, phase_err = [], [], []
        for trial in range(n_trials if sigma > 0 else 1):
            trial_seed = seed * 1_000_000 + i * 1_000 + trial
            jittered = apply_jitter(sched, sigma, trial_seed)
            result = simulate_branches(scenario, jittered,
                                       field_crossings=true_crossings)
            dx_end.append(result.recombination.dx_end)
            dv_end.append(result.recombination.dvx_end)
            phase = numeric_phase(result, probe, require_separable=False)
            phase_err.append(abs(phase.delta_phase - base_phase))
        rows.append({
            "sigma_s": float(sigma),
            "trials": len(dx_end),
            "mean_dx_end_m": float(np.mean(dx_end)),
            "max_dx_end_m": float(np.max(dx_end)),
            "mean_dv_end_ms": float(np.mean(dv_end)),
            "max_dv_end_ms": float(np.max(dv_end)),
            "mean_gravity_phase_error_rad": float(np.mean(phase_err)),
            "max_gravity_phase_error_rad": float(np.max(phase_err)),
        })
    headline = {
        "baseline_dx_end_m": baseline.recombination.dx_end,
        "baseline_gravity_phase_rad": base_phase,
        "n_trials": n_trials,
        "seed": seed,
    }
    loglog = [(math.log(r["sigma_s"]), math.log(r["max_dx_end_m"]))
              for r in rows if r["sigma_s"] > 0 and r["max_dx_end_m"] > 0]
    if len(loglog) >= 2:
        xs, ys = zip(*loglog)
        slope = np.polyfit(xs, ys, 1)[0]
        headline["residual_loglog_slope"] = float(slope)
    return ExperimentReport(name="jitter", rows=rows, headline=headline,
                            provenance=_provenance(scenario))


def run_drift_sensitivity(gradient_scales: Sequence[float] = (),
                          length_offsets: Sequence[float] = (),
                          scenario: Optional[Scenario] = None) -> ExperimentReport:
    """Thermal-drift study: the pulse schedule stays nominal while the field
    gradient magnitude or the tooth positions are perturbed underneath it."""
    scenario = ensure_valid(scenario or Scenario())
    derived, kin, sched, baseline = _baseline(scenario)
    nominal_crossings = sched.crossing_times
    probe = apply_overrides(scenario, [f"phi={PHASE_PROBE_TILT!r}"])
    base_phase = numeric_phase(baseline, probe).delta_phase
    teeth_length = scenario.geometry.teeth_region_length

    rows = []
    for scale in gradient_scales:
        perturbed = apply_overrides(
            scenario, [f"gradientMagnitude={scenario.geometry.gradient_magnitude * scale!r}"])
        result = simulate_branches(perturbed, sched, field_crossings=nominal_crossings)
        probe_p = apply_overrides(perturbed, [f"phi={PHASE_PROBE_TILT!r}"])
        phase = numeric_phase(result, probe_p, require_separable=False)
        rows.append({
            "kind": "gradient_scale",
            "value": float(scale),
            "dx_end_m": float(result.separation[-1]),
            "abs_dx_end_m": result.recombination.dx_end,
            "dv_end_ms": result.recombination.dvx_end,
            "gravity_phase_error_rad": abs(phase.delta_phase - base_phase),
        })
    for offset in length_offsets:
        stretch = 1.0 + offset / teeth_length
        z_nominal = kin.position(nominal_crossings)
        moved_times = kin.time_at(z_nominal * stretch)
        result = simulate_branches(scenario, sched, field_crossings=moved_times)
        phase = numeric_phase(result, probe, require_separable=False)
        rows.append({
            "kind": "length_offset",
            "value": float(offset),
            "dx_end_m": float(result.separation[-1]),
            "abs_dx_end_m": result.recombination.dx_end,
            "dv_end_ms": result.recombination.dvx_end,
            "gravity_phase_error_rad": abs(phase.delta_phase - base_phase),
        })
    headline = {
        "baseline_dx_end_m": baseline.recombination.dx_end,
        "baseline_gravity_phase_rad": base_phase,
    }
    return ExperimentReport(name="drift", rows=rows, headline=headline,
                            provenance=_provenance(scenario))


def _sweep_point(args):
    index, scenario, key, value, phase_mode, oracle, oracle_rel_tol = args
    try:
        point = apply_overrides(scenario, [f"{key}={value!r}"])
        ensure_valid(point)
        derived = derive_quantities(point)
        kin = DropKinematics.from_scenario(point)
        sched = build_schedule(kin, point.geometry, derived.period)
        result = simulate_branches(point, sched)
        abs_sep = np.abs(result.separation)
        i_max = int(np.argmax(abs_sep))
        if phase_mode == "numeric":
            kernel = numeric_phase(result, point, require_separable=False).gravity_kernel
        else:
            from .interference import fringe_scan

            kernel = float(fringe_scan(point, [PHASE_PROBE_TILT]).delta_phases[0]
                           / math.sin(PHASE_PROBE_TILT))
        row = {
            "index": index,
            "param_value": float(value),
            "crossings": int(len(sched.crossing_times)),
            "max_separation_m": float(abs_sep[i_max]),
            "max_separation_time_s": float(result.times[i_max]),
            "dx_end_m": result.recombination.dx_end,
            "dv_end_ms": result.recombination.dvx_end,
            "separable": result.separable,
            "fringe_kernel_rad": kernel,
        }
        if oracle:
            ref = integrate_reference(point, sched, rel_tol=oracle_rel_tol)
            row["oracle_max_dev_m"] = float(
                np.max(np.abs(result.separation - ref.separation)))
        return index, row, result, None
    except Exception as exc:  # per-point failures recorded, run continues
        return index, {"index": index, "param_value": float(value)}, None, str(exc)


def run_sweep(config: ExperimentConfig) -> ExperimentReport:
    """Deterministic parameter sweep; points execute on a bounded worker pool."""
    scenario = ensure_valid(config.scenario)
    if not config.sweep_param or len(config.sweep_values) == 0:
        raise ExperimentError("sweep needs a parameter name and at least one value")
    if not all(math.isfinite(v) for v in config.sweep_values):
        raise ExperimentError("sweep values must be finite")

    tasks = [(i, scenario, config.sweep_param, float(v), config.phase_mode,
              config.oracle, config.oracle_rel_tol)
             for i, v in enumerate(config.sweep_values)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            outcomes = list(pool.map(_sweep_point, tasks))
    else:
        outcomes = [_sweep_point(t) for t in tasks]

    outcomes.sort(key=lambda item: item[0])
    rows, failures, results = [], [], {}
    for index, row, result, error in outcomes:
        if error is not None:
            row["error"] = error
            failures.append(index)
        else:
            results[index] = result
        rows.append(row)

    headline = {
        "sweep_param": config.sweep_param,
        "points": len(rows),
        "failed_points": len(failures),
    }
    return ExperimentReport(name="sweep", rows=rows, headline=headline,
                            provenance=_provenance(scenario),
                            extras={"results": results})


def write_report(report: ExperimentReport, out_dir) -> list[str]:
    """Write summary JSON, per-point/rows CSV, trajectory CSVs, and figures.

    Returns the list of paths written (relative to out_dir).
    """
    from . import plotting

    os.makedirs(out_dir, exist_ok=True)
    written = []

    def path_of(name):
        written.append(name)
        return os.path.join(out_dir, name)

    with open(path_of(f"{report.name}_summary.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")

    if report.rows:
        fieldnames = sorted({k for row in report.rows for k in row})
        with open(path_of(f"{report.name}_rows.csv"), "w", encoding="utf-8",
                  newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            for row in report.rows:
                writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})

    if report.name == "replication":
        result = report.extras["result"]
        write_trajectory_csv(result, path_of("replication_trajectory.csv"))
        plotting.save_figure(
            plotting.trajectory_figure(result, title="half-width first tooth"),
            path_of("replication_paths.png"))
        plotting.save_figure(
            plotting.trajectory_figure(report.extras["result_full_width"],
                                       title="full-width first tooth"),
            path_of("replication_paths_full_width.png"))
    elif report.name == "jitter" and report.rows:
        sigmas = [row["sigma_s"] for row in report.rows]
        residuals = [row["max_dx_end_m"] for row in report.rows]
        positive = [(s, r) for s, r in zip(sigmas, residuals) if s > 0 and r > 0]
        if positive:
            plotting.save_figure(
                plotting.sensitivity_figure([p[0] for p in positive],
                                            [p[1] for p in positive],
                                            xlabel="pulse jitter sigma (s)",
                                            logx=True, logy=True),
                path_of("jitter_residuals.png"))
    elif report.name == "drift" and report.rows:
        offsets = [row["value"] for row in report.rows if row["kind"] == "length_offset"]
        residuals = [row["abs_dx_end_m"] for row in report.rows
                     if row["kind"] == "length_offset"]
        if offsets:
            plotting.save_figure(
                plotting.sensitivity_figure(offsets, residuals,
                                            xlabel="teeth-length offset (m)"),
                path_of("drift_residuals.png"))
    elif report.name == "sweep" and report.rows:
        for index, result in sorted(report.extras.get("results", {}).items()):
            write_trajectory_csv(result, path_of(f"point_{index:03d}.csv"))
        values = [row["param_value"] for row in report.rows if "error" not in row]
        maxima = [row["max_separation_m"] for row in report.rows if "error" not in row]
        if values:
            plotting.save_figure(
                plotting.sweep_figure(values, maxima, report.headline["sweep_param"]),
                path_of("sweep_max_separation.png"))
    return written
