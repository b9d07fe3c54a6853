import numpy as np
import pytest

from dropsg import (DropKinematics, Scenario, build_schedule, derive_quantities,
                    integrate_reference, simulate_branches)
from dropsg.model import apply_overrides


@pytest.fixture(scope="session")
def scenario():
    return Scenario()


@pytest.fixture(scope="session")
def derived(scenario):
    return derive_quantities(scenario)


@pytest.fixture(scope="session")
def kinematics(scenario):
    return DropKinematics.from_scenario(scenario)


@pytest.fixture(scope="session")
def schedule(scenario, derived, kinematics):
    return build_schedule(kinematics, scenario.geometry, derived.period)


@pytest.fixture(scope="session")
def result(scenario, schedule):
    """Baseline simulation: paper defaults, half-width first tooth."""
    return simulate_branches(scenario, schedule)


@pytest.fixture(scope="session")
def result_full_width(scenario, derived):
    sc = apply_overrides(scenario, ["firstToothFraction=1.0"])
    kin = DropKinematics.from_scenario(sc)
    sched = build_schedule(kin, sc.geometry, derived.period)
    return simulate_branches(sc, sched)


@pytest.fixture(scope="session")
def reference_result(scenario, schedule):
    return integrate_reference(scenario, schedule, rel_tol=1e-10)


@pytest.fixture(scope="session")
def no_teeth_scenario(scenario):
    """Tooth width too large for any crossing; bias off."""
    return apply_overrides(scenario, ["toothWidth=10.0", "biasField=0"])


@pytest.fixture(scope="session")
def no_teeth_result(no_teeth_scenario, derived):
    kin = DropKinematics.from_scenario(no_teeth_scenario)
    sched = build_schedule(kin, no_teeth_scenario.geometry, derived.period)
    return simulate_branches(no_teeth_scenario, sched)


def uniform_sample_indices(result, sampling_interval):
    """Indices of the uniform-cadence rows within a result's sample times."""
    grid = np.arange(0.0, result.times[-1], sampling_interval)
    idx = np.searchsorted(result.times, grid)
    idx = idx[idx < len(result.times)]
    keep = np.isclose(result.times[idx], grid[: len(idx)], rtol=0, atol=1e-15)
    return idx[keep]
