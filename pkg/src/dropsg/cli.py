"""Command-line surface.

Subcommands: params, schedule, simulate, fringe, experiment, fieldmap.
Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every command is deterministic given its flags, config, and seed. The
DROPSG_OUTDIR environment variable sets the default output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import warnings

import numpy as np

from . import __version__
from .dynamics import integrate_reference, simulate_branches, write_trajectory_csv
from .experiments import (ExperimentConfig, run_drift_sensitivity,
                          run_jitter_sensitivity, run_replication,
                          run_sweep, write_report)
from .field import fit_square_wave, ingest_field_map, write_field_map_csv
from .interference import fringe_scan, write_fringe_csv
from .model import (InvalidScenarioError, Scenario, ScenarioFileError,
                    apply_overrides, derive_quantities, load_scenario,
                    validate_scenario)
from .schedule import (DropKinematics, apply_jitter, build_schedule,
                       write_schedule_csv)

log = logging.getLogger("dropsg")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2

EXPERIMENTS = ("replication", "jitter", "drift", "sweep")


def _default_outdir():
    return os.environ.get("DROPSG_OUTDIR", ".")


def _load(args) -> Scenario:
    scenario = load_scenario(args.config) if args.config else Scenario()
    overrides = list(args.set or [])
    if getattr(args, "first_tooth_fraction", None) is not None:
        overrides.append(f"firstToothFraction={args.first_tooth_fraction!r}")
    if overrides:
        scenario = apply_overrides(scenario, overrides)
    errors = validate_scenario(scenario)
    if errors:
        raise InvalidScenarioError(errors)
    return scenario


def _prepare(scenario):
    derived = derive_quantities(scenario)
    kin = DropKinematics.from_scenario(scenario)
    sched = build_schedule(kin, scenario.geometry, derived.period)
    return derived, kin, sched


def cmd_params(args) -> int:
    scenario = _load(args)
    d = derive_quantities(scenario)
    if args.format == "json":
        print(json.dumps({
            "equilibriumOffset_m": d.equilibrium_offset,
            "maxSeparation_m": d.max_separation,
            "angularFrequency_rad_s": d.angular_frequency,
            "frequency_Hz": d.angular_frequency / (2 * math.pi),
            "period_s": d.period,
            "commonModeAccel_m_s2": d.common_mode_accel,
            "spinAccel_m_s2": d.spin_accel,
        }, indent=2, sort_keys=True))
    else:
        print(f"max separation s      : {d.max_separation * 1e9:10.3f} nm")
        print(f"equilibrium offset    : {d.equilibrium_offset * 1e9:10.3f} nm")
        print(f"oscillation frequency : {d.angular_frequency / (2 * math.pi):10.3f} Hz"
              f"  ({d.angular_frequency:.4f} rad/s)")
        print(f"period T              : {d.period * 1e3:10.3f} ms")
        print(f"half period T/2       : {d.period * 5e2:10.3f} ms")
        print(f"scheme length 2T      : {d.period * 2e3:10.3f} ms")
        print(f"common-mode accel     : {d.common_mode_accel:10.4f} m/s^2")
        print(f"spin accel            : {d.spin_accel:10.3e} m/s^2")
    return EXIT_OK


def cmd_schedule(args) -> int:
    scenario = _load(args)
    derived, kin, sched = _prepare(scenario)
    if args.jitter:
        sched = apply_jitter(sched, args.jitter, args.seed)
    out = args.out or os.path.join(_default_outdir(), "schedule.csv")
    write_schedule_csv(sched, out)
    print(f"wrote {len(sched.events)} events to {out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scenario = _load(args)
    derived, kin, sched = _prepare(scenario)
    result = simulate_branches(scenario, sched)
    out = args.out or os.path.join(_default_outdir(), "trajectory.csv")
    write_trajectory_csv(result, out)
    abs_sep = np.abs(result.separation)
    i_max = int(np.argmax(abs_sep))
    print(f"wrote {len(result.times)} samples to {out}")
    print(f"max |dx| = {abs_sep[i_max] * 1e9:.3f} nm at t = {result.times[i_max] * 1e3:.3f} ms")
    print(f"recombination |dx| at T: {result.recombination.dx_mid:.3e} m, "
          f"at 2T: {result.recombination.dx_end:.3e} m")
    if args.oracle:
        ref = integrate_reference(scenario, sched, rel_tol=args.rel_tol)
        dev = float(np.max(np.abs(result.separation - ref.separation)))
        print(f"oracle max |dx| deviation: {dev:.3e} m (rel_tol {args.rel_tol:g})")
    if args.plot:
        from . import plotting

        plotting.save_figure(plotting.trajectory_figure(result), args.plot)
        print(f"wrote figure {args.plot}")
    return EXIT_OK


def cmd_fringe(args) -> int:
    scenario = _load(args)
    if args.points < 1:
        raise ScenarioFileError("--points must be >= 1")
    if args.points == 1 or args.phi_min == args.phi_max:
        phis = np.array([args.phi_min])
    else:
        phis = np.linspace(args.phi_min, args.phi_max, args.points)
    fringe = fringe_scan(scenario, phis, mode=args.mode)
    out = args.out or os.path.join(_default_outdir(), "fringe.csv")
    write_fringe_csv(fringe, out)
    print(f"wrote {len(fringe.phis)} points to {out}")
    if args.plot:
        from . import plotting

        plotting.save_figure(plotting.fringe_figure(fringe), args.plot)
        print(f"wrote figure {args.plot}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    scenario = _load(args)
    out_dir = args.out_dir or _default_outdir()
    if args.name == "replication":
        report = run_replication(scenario)
    elif args.name == "jitter":
        sigmas = [float(s) for s in args.sigmas.split(",")]
        report = run_jitter_sensitivity(sigmas, n_trials=args.trials,
                                        seed=args.seed, scenario=scenario)
    elif args.name == "drift":
        scales = [float(s) for s in args.scales.split(",")] if args.scales else []
        offsets = [float(s) for s in args.offsets.split(",")] if args.offsets else []
        report = run_drift_sensitivity(scales, offsets, scenario=scenario)
    elif args.name == "sweep":
        if not args.sweep_param or not args.sweep_values:
            raise ScenarioFileError("sweep needs --sweep-param and --sweep-values")
        config = ExperimentConfig(
            scenario=scenario, sweep_param=args.sweep_param,
            sweep_values=tuple(float(v) for v in args.sweep_values.split(",")),
            seed=args.seed, workers=args.workers, oracle=args.oracle)
        report = run_sweep(config)
    else:
        print(f"unknown experiment {args.name!r}; available: {', '.join(EXPERIMENTS)}",
              file=sys.stderr)
        return EXIT_USAGE
    written = write_report(report, out_dir)
    for name in written:
        print(f"wrote {os.path.join(out_dir, name)}")
    failed = report.headline.get("failed_points", 0)
    if failed:
        print(f"{failed} sweep point(s) failed", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_fieldmap(args) -> int:
    spec = {"z": args.z_col, "dbx_dx": args.dbx_col}
    if args.dby_col:
        spec["dby_dx"] = args.dby_col
    if args.dbz_col:
        spec["dbz_dx"] = args.dbz_col
    if args.bx_col:
        spec["bx"] = args.bx_col
    fmap = ingest_field_map(args.path, spec, gradient_unit=args.gradient_unit)
    print(f"ingested {len(fmap.z)} samples "
          f"(z: {fmap.z[0]:.6g} .. {fmap.z[-1]:.6g} m, {fmap.dropped_rows} NaN rows dropped)")
    if args.out:
        write_field_map_csv(fmap, args.out)
        print(f"wrote normalized map to {args.out}")
    if args.fit:
        z_range = None
        if args.z_min is not None or args.z_max is not None:
            z_range = (args.z_min if args.z_min is not None else float(fmap.z[0]),
                       args.z_max if args.z_max is not None else float(fmap.z[-1]))
        fit = fit_square_wave(fmap, z_range)
        if args.format == "json":
            print(json.dumps({
                "avgGradientMagnitude_T_m": fit.avg_gradient_magnitude,
                "fittedPitch_m": fit.fitted_pitch,
                "fittedBias_T": fit.fitted_bias,
                "residualRms_T_m": fit.residual_rms,
                "signChanges": fit.sign_changes,
            }, indent=2, sort_keys=True))
        else:
            print(f"avg |gradient|  : {fit.avg_gradient_magnitude:.4f} T/m")
            pitch = f"{fit.fitted_pitch * 1e6:.3f} um" if fit.fitted_pitch else "unset (no sign changes)"
            print(f"fitted pitch    : {pitch}")
            bias = f"{fit.fitted_bias * 1e3:.3f} mT" if fit.fitted_bias is not None else "unset (no Bx column)"
            print(f"fitted bias     : {bias}")
            print(f"residual rms    : {fit.residual_rms:.4f} T/m")
            print(f"sign changes    : {fit.sign_changes}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dropsg",
        description="Deterministic simulator of a falling-nanodiamond "
                    "Stern-Gerlach interferometer with magnetic-tooth "
                    "dynamical decoupling.")
    parser.add_argument("--version", action="version", version=f"dropsg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, tooth_flag=False):
        p.add_argument("--config", help="scenario config file (flat JSON)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (dotted or bare), repeatable")
        p.add_argument("-v", "--verbose", action="count", default=0)
        if tooth_flag:
            p.add_argument("--first-tooth-fraction", type=float,
                           help="shorthand for firstToothFraction")

    p = sub.add_parser("params", help="print the derived closed-form quantities")
    common(p)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("schedule", help="compile the pulse schedule to CSV")
    common(p, tooth_flag=True)
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--jitter", type=float, default=0.0, metavar="SIGMA_S")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("simulate", help="propagate both branches, write trajectory CSV")
    common(p, tooth_flag=True)
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--oracle", action="store_true",
                   help="cross-check with the adaptive integrator")
    p.add_argument("--rel-tol", type=float, default=1e-10)
    p.add_argument("--plot", metavar="FILE", help="write a paths/separation figure")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fringe", help="predict interference fringes over a tilt scan")
    common(p)
    p.add_argument("--phi-min", type=float, default=-500e-6)
    p.add_argument("--phi-max", type=float, default=500e-6)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--mode", choices=("analytic", "numeric"), default="analytic")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--plot", metavar="FILE", help="write a P_A(phi) figure")
    p.set_defaults(func=cmd_fringe)

    p = sub.add_parser("experiment", help="run a named experiment recipe")
    common(p)
    p.add_argument("name", help=f"one of: {', '.join(EXPERIMENTS)}")
    p.add_argument("--out-dir", help="report output directory")
    p.add_argument("--sigmas", default="0,1e-10,1e-9,1e-8",
                   help="comma-separated jitter sigmas in seconds")
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scales", default="1.0,0.999,1.001",
                   help="comma-separated gradient scale factors")
    p.add_argument("--offsets", default="0,-1e-8,1e-8",
                   help="comma-separated teeth-length offsets in meters")
    p.add_argument("--sweep-param", help="config key to sweep")
    p.add_argument("--sweep-values", help="comma-separated values")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--oracle", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("fieldmap", help="ingest and fit a field-map export")
    p.add_argument("path")
    p.add_argument("--z-col", required=True, help="header name of the z column")
    p.add_argument("--dbx-col", required=True, help="header name of dBx/dx")
    p.add_argument("--dby-col")
    p.add_argument("--dbz-col")
    p.add_argument("--bx-col")
    p.add_argument("--gradient-unit", choices=("T/m", "T/mm"))
    p.add_argument("--out", help="write the normalized map back out as CSV")
    p.add_argument("--fit", action="store_true")
    p.add_argument("--z-min", type=float)
    p.add_argument("--z-max", type=float)
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(func=cmd_fieldmap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            return args.func(args)
    except (InvalidScenarioError, ScenarioFileError) as exc:
        if isinstance(exc, InvalidScenarioError):
            for error in exc.errors:
                print(f"error: {error}", file=sys.stderr)
        else:
            print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures
        log.debug("unhandled failure", exc_info=True)
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
