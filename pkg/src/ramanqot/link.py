"""Recirculating-loop link model: stages, running state and scenario execution.

A :class:`LinkState` carries three per-channel powers through the chain:
signal, accumulated ASE and accumulated NLI, all in watts over each
channel's symbol-rate bandwidth. Stages act on the state one at a time.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .fitting import fit_profiles
from .gn import NliResult, QuadratureConfig, nli_closed_form, nli_integral
from .raman import (PowerProfileSet, PumpSet, RamanSolverConfig, distributed_ase,
                    solve_power_evolution)
from .spectral import (H_PLANCK, ChannelPlan, FibreSpec, SpectralTable, db_to_linear,
                       frequency_to_wavelength, watt_to_dbm)

_logger = logging.getLogger(__name__)

__all__ = [
    "LumpedAmp", "Loss", "Wss", "FibreSpan", "Stage", "LinkModel", "LinkState",
    "LinkScenario", "LinkTrace", "StageError", "SpanResult", "apply_stage", "run_scenario",
    "snapshot_spectrum", "SpectrumSnapshot", "write_trace_csv", "write_snapshot_csv",
    "stage_tables", "NLI_METHODS", "FLOOR_DBM",
]

NLI_METHODS = ("closed-form", "integral", "none")
FLOOR_DBM = -120.0

Level = Union[SpectralTable, float]


def _level_db(level: Level, plan: ChannelPlan, stage_name: str, what: str) -> np.ndarray:
    """Evaluate a scalar or tabulated dB quantity at every channel of ``plan``."""
    if isinstance(level, SpectralTable):
        x = level.to_abscissa(plan.frequencies)
        missing = np.flatnonzero(~level.covers(x))
        if missing.size:
            k = int(missing[0])
            raise ValueError(
                f"stage {stage_name!r}: {what} table {level.name!r} does not cover channel {k} "
                f"({plan.wavelengths[k]:.3f} nm); table spans {level.x[0]:g}-{level.x[-1]:g} "
                f"{level.abscissa_unit}")
        values = np.asarray(level(x), dtype=float)
    else:
        values = np.full(len(plan), float(level))
    if not np.all(np.isfinite(values)):
        raise ValueError(f"stage {stage_name!r}: {what} is not finite")
    return values


# -- stages -------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LumpedAmp:
    """Lumped amplifier: gain and noise figure in dB (tables or scalars)."""

    gain: Level
    noise_figure: Level = 5.0
    name: str = "amp"


@dataclass(frozen=True, eq=False)
class Loss:
    """Passive loss in dB (table or scalar)."""

    attenuation: Level
    name: str = "loss"


@dataclass(frozen=True, eq=False)
class Wss:
    """Wavelength-selective switch attenuation profile in dB."""

    attenuation: SpectralTable
    name: str = "wss"


@dataclass(frozen=True, eq=False)
class FibreSpan:
    fibre: FibreSpec
    pumps: PumpSet = field(default_factory=PumpSet)
    name: str = "span"


Stage = Union[LumpedAmp, Loss, Wss, FibreSpan]


def stage_tables(stage: Stage) -> list[tuple[str, SpectralTable]]:
    """Wavelength-indexed tables a stage will look up per channel."""
    if isinstance(stage, LumpedAmp):
        out = [("gain", stage.gain), ("noise figure", stage.noise_figure)]
    elif isinstance(stage, (Loss, Wss)):
        out = [("attenuation", stage.attenuation)]
    elif isinstance(stage, FibreSpan):
        out = [("attenuation", stage.fibre.attenuation)]
    else:
        raise TypeError(f"unknown stage type {type(stage).__name__}")
    return [(what, t) for what, t in out if isinstance(t, SpectralTable)]


# -- model settings and state ---------------------------------------------------------

@dataclass(frozen=True)
class LinkModel:
    """Numerical settings shared by every fibre span of a scenario.

    ``nli_method`` is ``closed-form`` (default), ``integral`` or ``none``.
    ``nf_warning_db`` only triggers a log warning; it is never enforced.
    Span results are reused when a span sees the same input powers again
    (to ``reuse_rtol``), which makes a power-balanced loop cost one solve.
    """

    solver: RamanSolverConfig = field(default_factory=RamanSolverConfig)
    nli_method: str = "closed-form"
    fit_terms: int = 4
    fit_gate_db: float = 0.5
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    nf_warning_db: float = 3.0
    reuse_rtol: float = 1e-12

    def __post_init__(self):
        if self.nli_method not in NLI_METHODS:
            raise ValueError(f"nli_method must be one of {NLI_METHODS}, got {self.nli_method!r}")
        if self.reuse_rtol < 0:
            raise ValueError("reuse_rtol must be >= 0")


@dataclass(frozen=True, eq=False)
class LinkState:
    """Per-channel signal, ASE and NLI power in W."""

    signal: np.ndarray
    ase: np.ndarray
    nli: np.ndarray

    def __post_init__(self):
        arrs = []
        for name in ("signal", "ase", "nli"):
            a = np.array(getattr(self, name), dtype=float).ravel()
            a.setflags(write=False)
            object.__setattr__(self, name, a)
            arrs.append(a)
        if not arrs[0].size == arrs[1].size == arrs[2].size:
            raise ValueError("signal, ASE and NLI arrays differ in length")
        if not np.all(np.isfinite(np.concatenate(arrs))):
            raise ValueError("link state holds non-finite powers")
        if np.any(arrs[0] <= 0):
            raise ValueError(f"signal power must be > 0 (channel {int(np.argmin(arrs[0]))})")
        if np.any(arrs[1] < 0) or np.any(arrs[2] < 0):
            raise ValueError("ASE and NLI powers must be >= 0")

    @classmethod
    def launch(cls, plan: ChannelPlan) -> "LinkState":
        n = len(plan)
        return cls(plan.powers, np.zeros(n), np.zeros(n))

    def __len__(self) -> int:
        return int(self.signal.size)

    def scaled(self, factor) -> "LinkState":
        return LinkState(self.signal * factor, self.ase * factor, self.nli * factor)


@dataclass(frozen=True, eq=False)
class SpanResult:
    """Everything one fibre span contributed, kept for export and reuse."""

    input_power: np.ndarray
    profiles: PowerProfileSet
    transmission: np.ndarray
    ase: np.ndarray
    nli: np.ndarray  # referred to the span output
    nli_detail: Optional[NliResult] = None  # referred to the span input


class StageError(RuntimeError):
    """A stage failed inside :func:`run_scenario`; the original error is ``__cause__``."""

    def __init__(self, message: str, recirculation: int, stage: str):
        super().__init__(message)
        self.recirculation = recirculation
        self.stage = stage


# -- stage application ------------------------------------------------------------------

def _check(state: LinkState, plan: ChannelPlan):
    if len(state) != len(plan):
        raise ValueError(f"state has {len(state)} channels but the plan has {len(plan)}")


def _solve_span(stage: FibreSpan, plan: ChannelPlan, power: np.ndarray,
                model: LinkModel) -> SpanResult:
    launch = plan.with_powers(power)
    prof = solve_power_evolution(stage.fibre, launch, stage.pumps, model.solver)
    trans = prof.transmission()
    ase = distributed_ase(stage.fibre, prof, launch, model.solver)
    detail = None
    if model.nli_method == "integral":
        detail = nli_integral(stage.fibre, prof, launch, model.quadrature)
    elif model.nli_method == "closed-form":
        fits = fit_profiles(prof, model.fit_terms)
        detail = nli_closed_form(stage.fibre, launch, fits, model.fit_gate_db)
    # the GN integrals refer NLI to the span input; it then sees the span transmission
    nli = np.zeros(len(plan)) if detail is None else detail.nli * trans
    _logger.debug("span %r solved in %d sweeps", stage.name, prof.iterations)
    return SpanResult(power.copy(), prof, trans, ase, nli, detail)


def apply_stage(state: LinkState, stage: Stage, plan: ChannelPlan,
                model: LinkModel = LinkModel(),
                span_cache: Optional[dict] = None) -> LinkState:
    """Propagate ``state`` through one stage.

    ``span_cache`` (optional) maps a span's ``id`` to earlier
    :class:`SpanResult` objects; a cached result is reused when its input
    powers match the current signal to ``model.reuse_rtol``.
    """
    return _apply(state, stage, plan, model, span_cache)[0]


def _apply(state, stage, plan, model, span_cache):
    _check(state, plan)
    if isinstance(stage, LumpedAmp):
        g = db_to_linear(_level_db(stage.gain, plan, stage.name, "gain"))
        nf_db = _level_db(stage.noise_figure, plan, stage.name, "noise figure")
        if np.any(nf_db < model.nf_warning_db):
            _logger.warning("stage %r: noise figure %.2f dB below %.2f dB", stage.name,
                            float(nf_db.min()), model.nf_warning_db)
        excess = g * db_to_linear(nf_db) - 1.0
        # G F < 1 has no physical meaning for an amplifier; add no noise then
        added = H_PLANCK * plan.frequencies * np.maximum(excess, 0.0) * plan.symbol_rates
        return LinkState(state.signal * g, state.ase * g + added, state.nli * g), None

    if isinstance(stage, (Loss, Wss)):
        att = _level_db(stage.attenuation, plan, stage.name, "attenuation")
        return state.scaled(db_to_linear(-att)), None

    if isinstance(stage, FibreSpan):
        _level_db(stage.fibre.attenuation, plan, stage.name, "attenuation")
        result = None
        if span_cache is not None:
            for old in span_cache.get(id(stage), ()):
                if np.allclose(old.input_power, state.signal, rtol=model.reuse_rtol, atol=0.0):
                    result = old
                    break
        if result is None:
            result = _solve_span(stage, plan, state.signal, model)
            if span_cache is not None:
                span_cache.setdefault(id(stage), []).append(result)
        return LinkState(result.profiles.output_power(),
                         state.ase * result.transmission + result.ase,
                         state.nli * result.transmission + result.nli), result

    raise TypeError(f"unknown stage type {type(stage).__name__}")


# -- scenarios --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LinkScenario:
    plan: ChannelPlan
    loop_stages: tuple = ()
    recirculations: int = 1
    trx_snr: Optional[SpectralTable] = None
    model: LinkModel = field(default_factory=LinkModel)
    name: str = "scenario"

    def __post_init__(self):
        object.__setattr__(self, "loop_stages", tuple(self.loop_stages))
        if int(self.recirculations) != self.recirculations or self.recirculations < 1:
            raise ValueError("recirculations must be an integer >= 1")
        for stage in self.loop_stages:
            for what, table in stage_tables(stage):
                _level_db(table, self.plan, stage.name, what)
        if self.trx_snr is not None:
            _level_db(self.trx_snr, self.plan, "transceiver", "SNR")

    def with_recirculations(self, n: int) -> "LinkScenario":
        return LinkScenario(self.plan, self.loop_stages, n, self.trx_snr, self.model, self.name)


@dataclass(frozen=True, eq=False)
class LinkTrace:
    """Launch state plus the state after every recirculation (``states[k-1]`` after k)."""

    launch: LinkState
    states: tuple
    spans: tuple = ()  # SpanResult per (recirculation, span stage) in execution order

    @property
    def final(self) -> LinkState:
        return self.states[-1] if self.states else self.launch

    def __len__(self) -> int:
        return len(self.states)


def run_scenario(scenario: LinkScenario) -> LinkTrace:
    """Apply the loop stages ``scenario.recirculations`` times."""
    plan = scenario.plan
    state = LinkState.launch(plan)
    launch = state
    cache: dict = {}
    states, spans = [], []
    for rec in range(1, scenario.recirculations + 1):
        for stage in scenario.loop_stages:
            try:
                state, span = _apply(state, stage, plan, scenario.model, cache)
            except Exception as exc:
                raise StageError(f"recirculation {rec}, stage {stage.name!r}: {exc}", rec,
                                 stage.name) from exc
            if span is not None:
                spans.append(span)
        states.append(state)
    return LinkTrace(launch, tuple(states), tuple(spans))


# -- export ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectrumSnapshot:
    wavelength: np.ndarray  # nm
    signal_dbm: np.ndarray
    ase_dbm: np.ndarray
    nli_dbm: np.ndarray

    def rows(self):
        for k in range(self.wavelength.size):
            yield (self.wavelength[k], self.signal_dbm[k], self.ase_dbm[k], self.nli_dbm[k])


def _dbm_floor(p: np.ndarray, floor: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    out = np.full(p.shape, float(floor))
    pos = p > 0
    if np.any(pos):
        out[pos] = np.maximum(watt_to_dbm(p[pos]), floor)
    return out


def snapshot_spectrum(state: LinkState, plan: ChannelPlan,
                      floor_dbm: float = FLOOR_DBM) -> SpectrumSnapshot:
    """Per-channel powers in dBm; zero powers are reported at ``floor_dbm``."""
    _check(state, plan)
    return SpectrumSnapshot(plan.wavelengths, _dbm_floor(state.signal, floor_dbm),
                            _dbm_floor(state.ase, floor_dbm), _dbm_floor(state.nli, floor_dbm))


def write_snapshot_csv(path, snapshot: SpectrumSnapshot) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["wavelength_nm", "signal_dbm", "ase_dbm", "nli_dbm"])
        for row in snapshot.rows():
            wr.writerow([f"{v:.6g}" for v in row])
    return path


def write_trace_csv(path, trace: LinkTrace, plan: ChannelPlan) -> Path:
    """One row per (recirculation, channel); recirculation 0 is the launch state."""
    path = Path(path)
    wl = frequency_to_wavelength(plan.frequencies)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["recirculation", "channel", "wavelength_nm", "signal_w", "ase_w", "nli_w"])
        for rec, st in enumerate((trace.launch,) + trace.states):
            for k in range(len(plan)):
                wr.writerow([rec, k, f"{wl[k]:.6g}", f"{st.signal[k]:.6g}", f"{st.ase[k]:.6g}",
                             f"{st.nli[k]:.6g}"])
    return path
