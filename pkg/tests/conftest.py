"""Shared fixtures. The shipped S+C+L loop scenario is solved once per session."""

from __future__ import annotations

import numpy as np
import pytest

from ramanqot.config import load_scenario
from ramanqot.fitting import fit_profiles
from ramanqot.gn import nli_closed_form
from ramanqot.loop_scenario import scenario_path
from ramanqot.raman import PumpSet, RamanSolverConfig, solve_power_evolution
from ramanqot.spectral import FibreSpec, SpectralTable, uniform_plan


def flat_fibre(length=71.0, att_db=0.2, gain_peak=0.0, **kw) -> FibreSpec:
    """Wavelength-flat loss; optional triangular Raman gain peaking at 13 THz."""
    att = SpectralTable.constant(att_db, 1300.0, 1700.0, "nm", "dB/km")
    gain = SpectralTable(np.array([0.0, 13.0, 20.0]), np.array([0.0, gain_peak, 0.0]), "THz",
                         "1/W/km")
    return FibreSpec(length, att, gain, **kw)


@pytest.fixture
def make_fibre():
    return flat_fibre


@pytest.fixture
def fibre_flat():
    return flat_fibre()


@pytest.fixture
def plan3():
    """Three 32 GBaud channels on a 32.5 GHz grid in the C band, 0 dBm each."""
    return uniform_plan(193.35e12, 3, 32.5e9, 32e9, 1e-3)


@pytest.fixture(scope="session")
def shipped():
    return load_scenario(scenario_path())


@pytest.fixture(scope="session")
def shipped_span(shipped):
    """Pumped and unpumped profiles of the shipped span at the launch powers."""
    sc = shipped.scenario
    fibre = shipped.fibres["ssmf"]
    pumps = shipped.pump_sets["raman"]
    cfg = RamanSolverConfig()
    on = solve_power_evolution(fibre, sc.plan, pumps, cfg)
    off = solve_power_evolution(fibre, sc.plan, PumpSet(), cfg)
    return {"fibre": fibre, "pumps": pumps, "plan": sc.plan, "on": on, "off": off, "cfg": cfg}


@pytest.fixture(scope="session")
def shipped_fits(shipped_span):
    return fit_profiles(shipped_span["on"], 4)


@pytest.fixture(scope="session")
def shipped_closed_form(shipped_span, shipped_fits):
    return nli_closed_form(shipped_span["fibre"], shipped_span["plan"], shipped_fits)


@pytest.fixture(scope="session")
def shipped_trace(shipped):
    from ramanqot.link import run_scenario

    return run_scenario(shipped.scenario.with_recirculations(15))
