"""dropsg: falling-nanodiamond Stern-Gerlach interferometer simulator.

Compiles magnet-tooth geometry into dynamical-decoupling pulse schedules,
propagates the two spatial superposition branches exactly through the
piecewise-harmonic trap, and predicts the tilt-scan interference fringes.
"""

__version__ = "0.1.0"

from .model import (AnalyticDerived, DiamondParams, InvalidScenarioError,
                    MagnetGeometry, PhysicalConstants, Scenario,
                    ScenarioFileError, TiltedFrame, apply_overrides,
                    derive_quantities, ensure_valid, load_scenario, preset,
                    validate_scenario)
from .field import (FieldMap, IdealToothField, SquareWaveFit, fit_square_wave,
                    ingest_field_map, write_field_map_csv)
from .schedule import (Axis, DropKinematics, GateCalibration, PulseEvent,
                       PulseKind, PulseSchedule, apply_jitter, build_schedule,
                       calibrate_from_gates, crossing_times, entry_velocity,
                       read_schedule_csv, write_schedule_csv)
from .dynamics import (BranchState, CrashedIntoMagnetsError, SegmentPiece,
                       SimulationResult, SpinLabel, integrate_reference,
                       propagate_segment, segment_equilibrium,
                       simulate_branches, write_trajectory_csv)
from .interference import (AnalyticPhases, BranchesNotSeparableError,
                           FringeResult, GravityModel, PhaseComputation,
                           PhaseLedger, analytic_phases, fringe_scan,
                           gravity_at, numeric_phase, write_fringe_csv)
from .experiments import (ExperimentConfig, ExperimentReport,
                          run_drift_sensitivity, run_jitter_sensitivity,
                          run_replication, run_sweep, write_report)
