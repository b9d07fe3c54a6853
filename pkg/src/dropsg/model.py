"""Scenario parameters, validation, and closed-form derived quantities.

All quantities are SI. Display units (nm, ms, urad) belong to the CLI layer
only. The defaults are the reference parameter set the acceptance numbers are
pinned against, also available as the named preset "paper-2022".
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field


class InvalidScenarioError(ValueError):
    """Raised when a scenario violates one or more invariants."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid scenario: " + "; ".join(self.errors))


class ScenarioFileError(ValueError):
    """Raised when a scenario config file cannot be parsed or has bad keys."""


@dataclass(frozen=True)
class PhysicalConstants:
    bohr_magneton: float = 9.2740100783e-24    # J/T
    vacuum_permeability: float = 1.25663706212e-6  # T*m/A
    hbar: float = 1.054571817e-34              # J*s
    g_surface: float = 9.81                    # m/s^2
    earth_radius: float = 6.371e6              # m


@dataclass(frozen=True)
class DiamondParams:
    mass: float = 2.9e-17            # kg
    volume: float = 8.2e-21          # m^3
    susceptibility: float = -2.2e-5  # dimensionless, negative for diamond
    density: float = 3510.0          # kg/m^3
    g_factor_parallel: float = 2.0029
    zfs: float = 2.87e9              # Hz, zero-field splitting


@dataclass(frozen=True)
class MagnetGeometry:
    homogeneous_length: float = 1.27      # m, pre-drop in the homogeneous field
    tooth_width: float = 115e-6           # m
    first_tooth_fraction: float = 0.5     # first tooth width / tooth width
    gradient_magnitude: float = 940.0     # T/m, average |dBx/dx|
    bias_field: float = 0.42              # T, Bx at x = 0
    teeth_region_length: float = 1.13     # m


#: Tilt magnitude beyond which the small-angle treatment is rejected.
MAX_TILT = 1e-3  # rad


@dataclass(frozen=True)
class TiltedFrame:
    phi: float = 0.0  # rad, magnet z axis vs gravity vertical


@dataclass(frozen=True)
class Scenario:
    constants: PhysicalConstants = field(default_factory=PhysicalConstants)
    diamond: DiamondParams = field(default_factory=DiamondParams)
    geometry: MagnetGeometry = field(default_factory=MagnetGeometry)
    frame: TiltedFrame = field(default_factory=TiltedFrame)
    sampling_interval: float = 5e-5       # s, trajectory output cadence
    gravity_gradient_enabled: bool = True


@dataclass(frozen=True)
class AnalyticDerived:
    """Closed-form quantities every other module anchors to.

    max_separation = 2 * equilibrium_offset and period = 2*pi/angular_frequency
    hold exactly by construction.
    """

    equilibrium_offset: float   # m, separation of the two spin equilibria / 2
    max_separation: float       # m
    angular_frequency: float    # rad/s
    period: float               # s
    common_mode_accel: float    # m/s^2, bias-field kick at x = 0
    spin_accel: float           # m/s^2, spin-dependent gradient force / mass


def _positive(name, value, errors):
    if not (value > 0):
        errors.append(f"{name} must be positive (got {value!r})")


def validate_scenario(scenario: Scenario) -> list[str]:
    """Check every invariant and return the full list of violations.

    All violations are reported together. A mass/volume/density mismatch of
    less than 2% is tolerated as rounding and raised as a warning only.
    """
    errors: list[str] = []
    c, d, g, f = scenario.constants, scenario.diamond, scenario.geometry, scenario.frame

    for name in ("bohr_magneton", "vacuum_permeability", "hbar", "g_surface", "earth_radius"):
        _positive(f"constants.{name}", getattr(c, name), errors)

    _positive("diamond.mass", d.mass, errors)
    _positive("diamond.volume", d.volume, errors)
    _positive("diamond.density", d.density, errors)
    if not (d.susceptibility < 0):
        errors.append(f"susceptibility must be negative (got {d.susceptibility!r})")
    if not (1.9 < d.g_factor_parallel < 2.1):
        errors.append(
            f"g_factor_parallel must lie in (1.9, 2.1) (got {d.g_factor_parallel!r})")
    if d.mass > 0 and d.volume > 0 and d.density > 0:
        implied = d.density * d.volume
        if abs(implied - d.mass) > 0.02 * d.mass:
            warnings.warn(
                f"mass {d.mass!r} and density*volume {implied!r} disagree by more "
                "than 2%", stacklevel=2)

    for name in ("homogeneous_length", "tooth_width", "teeth_region_length"):
        _positive(f"geometry.{name}", getattr(g, name), errors)
    if not (0 < g.first_tooth_fraction <= 1):
        errors.append(
            f"first_tooth_fraction must lie in (0, 1] (got {g.first_tooth_fraction!r})")
    _positive("geometry.gradient_magnitude", g.gradient_magnitude, errors)
    if not (g.bias_field >= 0):
        errors.append(f"bias_field must be non-negative (got {g.bias_field!r})")

    if not (abs(f.phi) < MAX_TILT):
        errors.append(
            f"tilt outside small-angle regime: |phi| must be < {MAX_TILT} rad "
            f"(got {f.phi!r})")

    if not (scenario.sampling_interval > 0):
        errors.append(
            f"sampling_interval must be positive (got {scenario.sampling_interval!r})")
    elif not errors:
        period = derive_quantities(scenario).period
        if not (scenario.sampling_interval < period):
            errors.append(
                f"sampling_interval {scenario.sampling_interval!r} must be shorter "
                f"than the oscillation period {period!r}")
    return errors


def ensure_valid(scenario: Scenario) -> Scenario:
    errors = validate_scenario(scenario)
    if errors:
        raise InvalidScenarioError(errors)
    return scenario


def derive_quantities(scenario: Scenario) -> AnalyticDerived:
    """Evaluate the closed forms for separation, frequency, and accelerations.

    Pure function: identical inputs give bit-identical outputs.
    """
    c, d, g = scenario.constants, scenario.diamond, scenario.geometry
    chi = abs(d.susceptibility)
    if chi == 0 or d.volume == 0 or g.gradient_magnitude == 0:
        raise InvalidScenarioError(
            ["susceptibility, volume, and gradient_magnitude must be nonzero"])

    dx_eq = (d.g_factor_parallel * c.bohr_magneton * c.vacuum_permeability
             / (d.volume * chi * g.gradient_magnitude))
    omega = math.sqrt(chi / (d.density * c.vacuum_permeability)) * g.gradient_magnitude
    a0 = chi * d.volume * g.gradient_magnitude * g.bias_field / (d.mass * c.vacuum_permeability)
    a_s = d.g_factor_parallel * c.bohr_magneton * g.gradient_magnitude / d.mass
    return AnalyticDerived(
        equilibrium_offset=dx_eq,
        max_separation=2.0 * dx_eq,
        angular_frequency=omega,
        period=2.0 * math.pi / omega,
        common_mode_accel=a0,
        spin_accel=a_s,
    )


# Config file keys (flat JSON) -> (scenario section, attribute).
CONFIG_KEYS = {
    "bohrMagneton": ("constants", "bohr_magneton"),
    "vacuumPermeability": ("constants", "vacuum_permeability"),
    "hbar": ("constants", "hbar"),
    "gSurface": ("constants", "g_surface"),
    "earthRadius": ("constants", "earth_radius"),
    "mass": ("diamond", "mass"),
    "volume": ("diamond", "volume"),
    "susceptibility": ("diamond", "susceptibility"),
    "density": ("diamond", "density"),
    "gFactorParallel": ("diamond", "g_factor_parallel"),
    "zfs": ("diamond", "zfs"),
    "homogeneousLength": ("geometry", "homogeneous_length"),
    "toothWidth": ("geometry", "tooth_width"),
    "firstToothFraction": ("geometry", "first_tooth_fraction"),
    "gradientMagnitude": ("geometry", "gradient_magnitude"),
    "biasField": ("geometry", "bias_field"),
    "teethRegionLength": ("geometry", "teeth_region_length"),
    "phi": ("frame", "phi"),
    "samplingInterval": ("scenario", "sampling_interval"),
    "gravityGradientEnabled": ("scenario", "gravity_gradient_enabled"),
}

_BOOL_KEYS = {"gravityGradientEnabled"}


def scenario_from_dict(data: dict) -> Scenario:
    """Build a Scenario from a flat config mapping; missing keys keep defaults."""
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ScenarioFileError(f"unknown config keys: {', '.join(unknown)}")
    sections = {"constants": {}, "diamond": {}, "geometry": {}, "frame": {}, "scenario": {}}
    for key, value in data.items():
        section, attr = CONFIG_KEYS[key]
        if key in _BOOL_KEYS:
            if not isinstance(value, bool):
                raise ScenarioFileError(f"config key {key!r} must be a boolean")
        else:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioFileError(f"config key {key!r} must be a number")
            value = float(value)
        sections[section][attr] = value
    return Scenario(
        constants=PhysicalConstants(**sections["constants"]),
        diamond=DiamondParams(**sections["diamond"]),
        geometry=MagnetGeometry(**sections["geometry"]),
        frame=TiltedFrame(**sections["frame"]),
        **sections["scenario"],
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    out = {}
    for key, (section, attr) in CONFIG_KEYS.items():
        obj = scenario if section == "scenario" else getattr(scenario, section)
        out[key] = getattr(obj, attr)
    return out


def load_scenario(path) -> Scenario:
    """Load a flat JSON scenario config; unknown keys are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioFileError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(data, dict):
        raise ScenarioFileError(f"{path}: config must be a JSON object")
    return scenario_from_dict(data)


def apply_overrides(scenario: Scenario, overrides) -> Scenario:
    """Apply dotted-key or bare-key overrides, e.g. ``geometry.toothWidth=2.3e-4``.

    Values are parsed as JSON scalars (numbers, true/false). Overrides are
    applied before validation, so a failing combination is reported by
    validate_scenario rather than here.
    """
    updates: dict[str, object] = {}
    for item in overrides:
        if "=" not in item:
            raise ScenarioFileError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            section, bare = key.split(".", 1)
            if bare not in CONFIG_KEYS or CONFIG_KEYS[bare][0] != section:
                raise ScenarioFileError(f"unknown override key {key!r}")
            key = bare
        elif key not in CONFIG_KEYS:
            raise ScenarioFileError(f"unknown override key {key!r}")
        try:
            updates[key] = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ScenarioFileError(f"override {item!r}: bad value ({exc.msg})") from exc

    current = scenario_to_dict(scenario)
    current.update(updates)
    return scenario_from_dict(current)


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None


#: Named parameter presets; "paper-2022" is the pinned reference set.
PRESETS = {"paper-2022": Scenario()}
