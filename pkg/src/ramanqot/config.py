"""YAML scenario files.

A scenario file names the channel plan, fibres, pump sets, the loop stage
list and numerical settings. Spectral tables are referenced by path,
relative to the scenario file. Every error is reported as
``file:line: message``. A minimal file::

    plan:
      symbol_rate_gbaud: 32
      bands:
        - {first_frequency_thz: 193.0, channels: 3, spacing_ghz: 50, total_power_dbm: 4.8}
    fibres:
      ssmf: {length_km: 71, attenuation_db_km: loss.csv, raman_gain: gain.csv}
    loop:
      - {type: fibre_span, fibre: ssmf}
      - {type: amp, gain_db: 14.2, noise_figure_db: 5}
    recirculations: 5

See the shipped ``data/scl_loop/scenario.yaml`` for every option.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .gn import IslandScope, QuadratureConfig
from .link import FibreSpan, LinkModel, LinkScenario, Loss, LumpedAmp, Wss, stage_tables
from .qot import DEFAULT_BANDS, PILOT_OVERHEAD
from .raman import Direction, Pump, PumpSet, RamanSolverConfig
from .spectral import (Channel, ChannelPlan, FibreSpec, Modulation, SpectralTable,
                       dbm_to_watt, read_table)

_logger = logging.getLogger(__name__)

__all__ = ["ConfigError", "ScenarioConfig", "load_scenario", "validate_scenario"]


class ConfigError(ValueError):
    """Malformed or inconsistent scenario file; ``str()`` is ``file:line: message``."""

    def __init__(self, message: str, path: Optional[Path] = None, line: Optional[int] = None):
        self.path, self.line, self.detail = path, line, message
        where = "" if path is None else f"{path}:{line}: " if line else f"{path}: "
        super().__init__(where + message)


# -- line-aware YAML --------------------------------------------------------------------

class _Map(dict):
    line: int = 0
    key_lines: dict


class _Loader(yaml.SafeLoader):
    pass


def _construct_map(loader, node):
    loader.flatten_mapping(node)
    out = _Map()
    out.line = node.start_mark.line + 1
    out.key_lines = {}
    for key_node, value_node in node.value:
        key = loader.construct_object(key_node, deep=True)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", None, key_node.start_mark.line + 1)
        out[key] = loader.construct_object(value_node, deep=True)
        out.key_lines[key] = key_node.start_mark.line + 1
    return out


_Loader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


class _Reader:
    """Typed access to one mapping with file/line-anchored errors."""

    def __init__(self, data, path: Path, where: str, line: int = 0):
        self.path, self.where = path, where
        if not isinstance(data, dict):
            raise ConfigError(f"{where}: expected a mapping", path, line or None)
        self.data = data
        self.line = getattr(data, "line", line)
        self.used: set = set()

    def fail(self, msg: str, key: Optional[str] = None):
        line = getattr(self.data, "key_lines", {}).get(key, self.line) if key else self.line
        raise ConfigError(f"{self.where}: {msg}", self.path, line)

    def has(self, key):
        return key in self.data

    def raw(self, key, default=...):
        self.used.add(key)
        if key not in self.data:
            if default is ...:
                self.fail(f"missing required key {key!r}")
            return default
        return self.data[key]

    def number(self, key, default=..., minimum=None, positive=False, integer=False):
        val = self.raw(key, default)
        if val is default and default is not ...:
            return val
        try:
            if isinstance(val, bool):
                raise TypeError
            num = float(val)
        except (TypeError, ValueError):
            self.fail(f"{key!r} must be a number, got {val!r}", key)
        if not np.isfinite(num):
            self.fail(f"{key!r} must be finite", key)
        if positive and not num > 0:
            self.fail(f"{key!r} must be > 0", key)
        if minimum is not None and num < minimum:
            self.fail(f"{key!r} must be >= {minimum}", key)
        if integer:
            if num != int(num):
                self.fail(f"{key!r} must be an integer", key)
            return int(num)
        return num

    def text(self, key, default=..., choices=None):
        val = self.raw(key, default)
        if val is default and default is not ...:
            return val
        if not isinstance(val, str):
            self.fail(f"{key!r} must be a string", key)
        if choices is not None and val not in choices:
            self.fail(f"{key!r} must be one of {sorted(choices)}, got {val!r}", key)
        return val

    def child(self, key, default=...):
        val = self.raw(key, default)
        if val is default and default is not ...:
            return None
        return _Reader(val, self.path, f"{self.where}.{key}" if self.where else key,
                       getattr(self.data, "key_lines", {}).get(key, self.line))

    def items(self, key):
        val = self.raw(key)
        if not isinstance(val, list) or not val:
            self.fail(f"{key!r} must be a non-empty list", key)
        return val

    def done(self):
        extra = sorted(set(self.data) - self.used, key=str)
        if extra:
            self.fail(f"unknown key {extra[0]!r}", extra[0])


# -- scenario ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """A loaded scenario plus the settings the CLI needs beyond the link model."""

    scenario: LinkScenario
    path: Path
    bands: dict
    overhead: float
    fibres: dict
    pump_sets: dict


def _table(r: _Reader, key: str, base: Path, abscissa: str = "nm", unit: str = "",
           scale: float = 1.0, allow_scalar: bool = True, default=...):
    """A value that is either a number or a table reference ``path`` / ``{file, abscissa}``."""
    val = r.raw(key, default)
    if val is default and default is not ...:
        return val
    line = getattr(r.data, "key_lines", {}).get(key, r.line)
    if isinstance(val, dict):
        sub = _Reader(val, r.path, f"{r.where}.{key}", line)
        fname = sub.text("file")
        abscissa = sub.text("abscissa", abscissa, choices={"nm", "THz", "Hz"})
        extrap = sub.text("extrapolation", "clamp", choices={"clamp", "error"})
        sub.done()
    elif isinstance(val, str):
        fname, extrap = val, "clamp"
    elif allow_scalar and isinstance(val, (int, float)) and not isinstance(val, bool):
        if not np.isfinite(val):
            r.fail(f"{key!r} must be finite", key)
        return float(val) * scale
    else:
        r.fail(f"{key!r} must be {'a number or ' if allow_scalar else ''}a table file", key)
    target = (base / fname).resolve()
    if not target.is_file():
        raise ConfigError(f"{r.where}.{key}: table file {fname!r} not found", r.path, line)
    try:
        return read_table(target, abscissa, unit, extrap, scale)
    except ValueError as exc:
        raise ConfigError(f"{r.where}.{key}: {exc}", r.path, line) from None


def _plan(r: _Reader) -> ChannelPlan:
    rs_default = r.number("symbol_rate_gbaud", None, positive=True)
    mod = r.text("modulation", "QAM64", choices={m.value for m in Modulation})
    chans = []
    for k, item in enumerate(r.items("bands")):
        b = _Reader(item, r.path, f"plan.bands[{k}]", r.line)
        f0 = b.number("first_frequency_thz", positive=True) * 1e12
        n = b.number("channels", integer=True, minimum=1)
        spacing = b.number("spacing_ghz", positive=True) * 1e9
        rs = b.number("symbol_rate_gbaud", rs_default, positive=True)
        if rs is None:
            b.fail("no symbol rate given (set plan.symbol_rate_gbaud or a per-band value)")
        if b.has("total_power_dbm") == b.has("channel_power_dbm"):
            b.fail("give exactly one of 'total_power_dbm' and 'channel_power_dbm'")
        if b.has("total_power_dbm"):
            p = dbm_to_watt(b.number("total_power_dbm")) / n
        else:
            p = dbm_to_watt(b.number("channel_power_dbm"))
        b.text("name", "")
        b.done()
        chans += [Channel(f0 + spacing * j, rs * 1e9, float(p), Modulation(mod)) for j in range(n)]
    r.done()
    chans.sort(key=lambda c: c.center_frequency)
    try:
        return ChannelPlan(tuple(chans))
    except ValueError as exc:
        r.fail(str(exc))


def _fibre(r: _Reader, base: Path) -> FibreSpec:
    kw = dict(
        length=r.number("length_km", positive=True),
        attenuation=_table(r, "attenuation_db_km", base, "nm", "dB/km", allow_scalar=False),
        gamma=r.number("gamma", 1.4, minimum=0.0),
        a_eff=r.number("a_eff_um2", 83.0, positive=True),
        dispersion=r.number("dispersion_ps_nm_km", 16.5),
        dispersion_slope=r.number("dispersion_slope_ps_nm2_km", 0.09),
        reference_wavelength=r.number("reference_wavelength_nm", 1550.0, positive=True),
    )
    # gain tables are either already divided by A_eff (1/W/km) or given as g_R in m/W
    if r.has("raman_gain") == r.has("raman_gain_coefficient_m_w"):
        r.fail("give exactly one of 'raman_gain' (1/W/km) and 'raman_gain_coefficient_m_w'")
    if r.has("raman_gain"):
        gain = _table(r, "raman_gain", base, "THz", "1/W/km", allow_scalar=False)
    else:
        scale = 1e3 / (kw["a_eff"] * 1e-12)
        gain = _table(r, "raman_gain_coefficient_m_w", base, "THz", "1/W/km", scale=scale,
                      allow_scalar=False)
    if gain.abscissa_unit != "THz":
        r.fail("Raman gain must be tabulated against frequency separation in THz", "raman_gain")
    r.done()
    try:
        return FibreSpec(attenuation=kw.pop("attenuation"), raman_gain=gain, **kw)
    except ValueError as exc:
        r.fail(str(exc))


def _pumps(items, path: Path, where: str, line: int) -> PumpSet:
    if not isinstance(items, list):
        raise ConfigError(f"{where}: expected a list of pumps", path, line)
    out = []
    for k, item in enumerate(items):
        p = _Reader(item, path, f"{where}[{k}]", line)
        wl = p.number("wavelength_nm", positive=True)
        power = p.number("power_mw", minimum=0.0) * 1e-3
        direction = p.text("direction", "backward", choices={"forward", "backward"})
        p.done()
        out.append(Pump(wl, power, Direction(direction)))
    try:
        return PumpSet(tuple(out))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}", path, line) from None


def _model(r: Optional[_Reader]) -> LinkModel:
    if r is None:
        return LinkModel()
    solver = RamanSolverConfig(
        z_step_max=r.number("z_step_km", 0.1, positive=True),
        bvp_tolerance=r.number("bvp_tolerance", 1e-4, positive=True),
        max_iterations=r.number("max_iterations", 50, integer=True, minimum=1),
        include_pump_depletion=bool(r.raw("pump_depletion", True)),
        include_isrs=bool(r.raw("isrs", True)),
        temperature=r.number("temperature_k", 298.0, minimum=0.0),
    )
    quad = QuadratureConfig(
        nodes=r.number("quadrature_nodes", 16, integer=True, minimum=4),
        scope=IslandScope(r.text("quadrature_scope", "all", choices={"all", "axes"})),
    )
    model = LinkModel(
        solver=solver,
        nli_method=r.text("nli_method", "closed-form", choices={"closed-form", "integral", "none"}),
        fit_terms=r.number("fit_terms", 4, integer=True, minimum=1),
        fit_gate_db=r.number("fit_gate_db", 0.5, positive=True),
        quadrature=quad,
        nf_warning_db=r.number("nf_warning_db", 3.0),
        reuse_rtol=r.number("reuse_rtol", 1e-12, minimum=0.0),
    )
    r.done()
    return model


_STAGE_TYPES = {"amp", "loss", "wss", "fibre_span"}


def _stage(item, k: int, path: Path, base: Path, line: int, fibres: dict, pump_sets: dict):
    s = _Reader(item, path, f"loop[{k}]", line)
    kind = s.text("type", choices=_STAGE_TYPES)
    name = s.text("name", f"{kind}{k}")
    s.where = f"loop[{k}] ({name})"
    if kind == "amp":
        stage = LumpedAmp(_table(s, "gain_db", base, unit="dB"),
                          _table(s, "noise_figure_db", base, unit="dB", default=5.0), name)
    elif kind == "loss":
        stage = Loss(_table(s, "attenuation_db", base, unit="dB"), name)
    elif kind == "wss":
        stage = Wss(_table(s, "attenuation_db", base, unit="dB", allow_scalar=False), name)
    else:
        fname = s.text("fibre")
        if fname not in fibres:
            s.fail(f"unknown fibre {fname!r}", "fibre")
        pname = s.text("pumps", None)
        if pname is not None and pname not in pump_sets:
            s.fail(f"unknown pump set {pname!r}", "pumps")
        stage = FibreSpan(fibres[fname], pump_sets[pname] if pname else PumpSet(), name)
    s.done()
    # every looked-up table must cover the plan; report against this stage's line
    return stage, s.line


def load_scenario(path, recirculations: Optional[int] = None) -> ScenarioConfig:
    """Parse and validate a scenario file; raises :class:`ConfigError`."""
    path = Path(path)
    base = path.resolve().parent
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc.strerror}", path) from None
    try:
        data = yaml.load(text, Loader=_Loader)
    except ConfigError as exc:
        raise ConfigError(exc.detail, path, exc.line) from None
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise ConfigError(f"YAML syntax error: {exc.problem}", path,
                          mark.line + 1 if mark else None) from None
    root = _Reader(data, path, "", 1)
    root.where = "scenario"
    name = root.text("name", path.stem)
    plan = _plan(root.child("plan"))

    fibres = {}
    fr = root.child("fibres")
    for key in fr.data:
        fibres[key] = _fibre(fr.child(key), base)
    fr.done()

    pump_sets = {}
    pr = root.child("pumps", None)
    if pr is not None:
        for key in pr.data:
            pump_sets[key] = _pumps(pr.raw(key), path, f"pumps.{key}",
                                    pr.data.key_lines.get(key, pr.line))
        pr.done()

    stages, lines = [], []
    for k, item in enumerate(root.items("loop")):
        st, line = _stage(item, k, path, base, root.data.key_lines.get("loop", 1), fibres,
                          pump_sets)
        stages.append(st)
        lines.append(line)

    n_rec = root.number("recirculations", 1, integer=True, minimum=1)
    if recirculations is not None:
        n_rec = int(recirculations)
    trx = _table(root, "transceiver_snr_db", base, unit="dB", default=None)
    if isinstance(trx, float):
        lo, hi = float(plan.wavelengths.min()), float(plan.wavelengths.max())
        trx = SpectralTable.constant(trx, lo, hi, "nm", "dB", "transceiver_snr_db")
    model = _model(root.child("model", None))

    bands = dict(DEFAULT_BANDS)
    br = root.child("band_edges_nm", None)
    if br is not None:
        bands = {}
        for key in br.data:
            val = br.raw(key)
            if (not isinstance(val, list) or len(val) != 2
                    or not all(isinstance(v, (int, float)) for v in val) or not val[0] < val[1]):
                br.fail(f"band {key!r} needs [low, high] in nm with low < high", key)
            bands[str(key)] = (float(val[0]), float(val[1]))
        br.done()
    overhead = root.number("pilot_overhead", PILOT_OVERHEAD, minimum=0.0)
    if overhead >= 1:
        root.fail("'pilot_overhead' must be < 1", "pilot_overhead")
    root.done()

    for stage, line in zip(stages, lines):
        for what, table in stage_tables(stage):
            x = table.to_abscissa(plan.frequencies)
            miss = np.flatnonzero(~table.covers(x))
            if miss.size:
                k = int(miss[0])
                raise ConfigError(
                    f"stage {stage.name!r}: {what} table {table.name!r} does not cover channel "
                    f"{k} ({plan.wavelengths[k]:.3f} nm)", path, line)
    if trx is not None and not np.all(trx.covers(trx.to_abscissa(plan.frequencies))):
        raise ConfigError("transceiver SNR table does not cover the channel plan", path,
                          root.data.key_lines.get("transceiver_snr_db"))
    try:
        scenario = LinkScenario(plan, tuple(stages), n_rec, trx, model, name)
    except ValueError as exc:
        raise ConfigError(str(exc), path) from None
    return ScenarioConfig(scenario, path, bands, overhead, fibres, pump_sets)


def validate_scenario(path) -> list[str]:
    """Load ``path`` and return a list of warnings; raises :class:`ConfigError` on errors."""
    cfg = load_scenario(path)
    warnings = []
    sc = cfg.scenario
    for stage in sc.loop_stages:
        if isinstance(stage, LumpedAmp):
            nf = stage.noise_figure
            vals = nf.at_frequency(sc.plan.frequencies) if isinstance(nf, SpectralTable) else nf
            if np.min(vals) < sc.model.nf_warning_db:
                warnings.append(f"stage {stage.name!r}: noise figure below "
                                f"{sc.model.nf_warning_db} dB")
        if isinstance(stage, FibreSpan):
            for p in stage.pumps:
                if p.frequency <= sc.plan.frequencies.max():
                    warnings.append(f"stage {stage.name!r}: pump at {p.wavelength} nm lies "
                                    "inside or below the signal band")
    return warnings
