"""Generator for the shipped S+C+L recirculating-loop scenario.

The scenario is a 71 km SSMF span with four backward Raman pumps, three
lumped gain blocks, a WSS and flat insertion losses, loaded with 381
channels at 32 GBaud on a 32.5 GHz grid. Measured curves for the fibre and
the loop components are not available, so the tables written here are
stand-ins:

* fibre attenuation from a Rayleigh + IR + UV + OH-residue formula;
* Raman gain from a 13-band multi-Voigt model of the fused-silica Raman
  response (Hollenbeck and Cantrell parameters), scaled to a 0.4 1/W/km
  peak and shifted in frequency by :data:`GAIN_SHIFT_THZ`;
* gain-block and WSS curves derived from a span solve so that the loop is
  power-transparent channel by channel.

All per-channel tables are written on the exact channel wavelengths at full
float precision, so the loaded loop is transparent to round-off and one
span solve serves every recirculation.

Run ``python3 -m ramanqot.loop_scenario OUTDIR`` to regenerate the files.
"""

from __future__ import annotations

import argparse
import logging
from pathlib import Path

import numpy as np
from scipy.special import voigt_profile

from .raman import Pump, PumpSet, RamanSolverConfig, on_off_gain, solve_power_evolution
from .spectral import C_LIGHT, ChannelPlan, FibreSpec, SpectralTable, linear_to_db

_logger = logging.getLogger(__name__)

__all__ = ["attenuation_table", "raman_gain_table", "loop_tables", "write_scenario",
           "GAIN_SHIFT_THZ", "DATA_DIR", "scenario_path"]

DATA_DIR = Path(__file__).resolve().parent / "data" / "scl_loop"

# frequency offset applied to the multi-Voigt gain model; see the calibration note in
# the decision log
GAIN_SHIFT_THZ = -0.75

# band layout: (name, first frequency THz, channels, total launch dBm, WSS loss dB, NF dB)
BANDS = (
    ("L", 187.05, 120, 14.8, 7.0, 6.0),
    ("C", 191.5, 141, 15.1, 7.0, 5.0),
    ("S", 197.95, 120, 18.3, 4.5, 7.5),
)
SPACING_GHZ = 32.5
SYMBOL_RATE_GBAUD = 32.0
PUMPS_NM_MW = ((1365.0, 505.8), (1385.0, 374.1), (1405.0, 324.3), (1425.0, 295.8))
BAND_EDGES_NM = {"S": (1460.0, 1525.0), "C": (1525.0, 1567.0), "L": (1567.0, 1625.0)}
FRONT_LOSS_DB = 12.0  # AOMs, couplers and scrambler, lumped
GB1_DB = 13.0
VOA_DB = 1.0
TRX_SNR_DB = 21.0  # illustrative back-to-back figure

# Raman band centres (cm^-1), amplitudes, Gaussian and Lorentzian FWHM (cm^-1)
_VOIGT = np.array([
    [56.25, 1.0, 52.1, 17.37], [100.0, 11.4, 110.42, 38.81], [231.25, 36.67, 175.0, 58.33],
    [362.5, 67.67, 162.5, 54.17], [463.0, 74.0, 135.33, 45.11], [497.0, 4.5, 24.5, 8.17],
    [611.5, 6.8, 41.5, 13.83], [691.67, 4.6, 155.0, 51.67], [793.67, 4.2, 59.5, 19.83],
    [835.5, 4.5, 64.3, 21.43], [930.0, 2.7, 150.0, 50.0], [1080.0, 3.1, 91.0, 30.33],
    [1215.0, 3.0, 160.0, 53.33],
])
_THZ_PER_CM = 0.0299792458


def attenuation_table() -> SpectralTable:
    """Low-water-peak SSMF loss in dB/km on 1350-1630 nm, 1 nm steps."""
    wl = np.arange(1350.0, 1631.0)
    um = wl / 1000.0
    att = (0.76 / um ** 4 + 0.032 + 6e11 * np.exp(-48.5 / um)
           + 0.012 * np.exp(-(((wl - 1383.0) / 12.0) ** 2)))
    return SpectralTable(wl, att, "nm", "dB/km", name="attenuation")


def raman_gain_table(peak: float = 0.4, shift_thz: float = GAIN_SHIFT_THZ) -> SpectralTable:
    """Multi-Voigt Raman gain (1/W/km) against separation on 0-40 THz, 0.1 THz steps."""
    nu = np.round(np.arange(0.0, 40.001, 0.1), 4)
    pos, amp, gw, lw = _VOIGT.T
    sigma = gw / (2.0 * np.sqrt(2.0 * np.log(2.0))) * _THZ_PER_CM
    hwhm = lw / 2.0 * _THZ_PER_CM
    centre = pos * _THZ_PER_CM

    def response(x):
        # odd in x so the response vanishes at zero shift
        return sum(a * s * (voigt_profile(x - c, s, g) - voigt_profile(x + c, s, g))
                   for a, c, s, g in zip(amp, centre, sigma, hwhm))

    g = response(nu - shift_thz)
    g = np.where(nu - shift_thz > 0, g, 0.0)
    g = g / g.max() * peak
    g[0] = 0.0
    return SpectralTable(nu, g, "THz", "1/W/km", name="raman_gain")


def default_fibre(shift_thz: float = GAIN_SHIFT_THZ) -> FibreSpec:
    return FibreSpec(71.0, attenuation_table(), raman_gain_table(shift_thz=shift_thz))


def default_pumps() -> PumpSet:
    return PumpSet(tuple(Pump(wl, mw * 1e-3) for wl, mw in PUMPS_NM_MW))


def _band_index(plan: ChannelPlan) -> np.ndarray:
    """Index into :data:`BANDS` for every channel."""
    out = np.empty(len(plan), dtype=int)
    f = plan.frequencies
    for k, (_, f0, n, *_rest) in enumerate(BANDS):
        lo, hi = f0 * 1e12, (f0 + (n - 1) * SPACING_GHZ * 1e-3) * 1e12
        sel = (f >= lo - 1.0) & (f <= hi + 1.0)
        out[sel] = k
    return out


def loop_tables(fibre: FibreSpec, plan: ChannelPlan, pumps: PumpSet,
                solver: RamanSolverConfig = RamanSolverConfig()) -> dict[str, np.ndarray]:
    """Per-channel loop curves (dB) that make the loop transparent at the launch powers.

    ``gb2`` undoes the span's net gain, ``wss`` is the band insertion loss
    plus the on/off gain above its in-band minimum, and ``gb3`` undoes the
    WSS.
    """
    on = solve_power_evolution(fibre, plan, pumps, solver)
    off = solve_power_evolution(fibre, plan, PumpSet(), solver)
    span_db = linear_to_db(on.transmission())
    onoff = on_off_gain(on, off)
    band = _band_index(plan)
    shaping = np.empty(len(plan))
    for k in range(len(BANDS)):
        sel = band == k
        shaping[sel] = onoff[sel] - onoff[sel].min()
    il = np.array([BANDS[k][4] for k in band])
    nf = np.array([BANDS[k][5] for k in band])
    wss = il + shaping
    return {"span_db": span_db, "onoff_db": onoff, "gb2": -span_db, "wss": wss, "gb3": wss,
            "nf": nf, "voa": np.full(len(plan), VOA_DB)}


def _write_channel_table(path: Path, plan: ChannelPlan, values: np.ndarray, header: str):
    # wavelength computed exactly as SpectralTable.to_abscissa does, so lookups hit nodes
    wl = C_LIGHT / plan.frequencies * 1e9
    order = np.argsort(wl)
    with path.open("w") as fh:
        fh.write(f"wavelength_nm,{header}\n")
        for k in order:
            fh.write(f"{float(wl[k])!r},{float(values[k])!r}\n")


def _write_table(path: Path, table: SpectralTable, xname: str, yname: str):
    with path.open("w") as fh:
        fh.write(f"{xname},{yname}\n")
        for x, y in zip(table.x, table.y):
            fh.write(f"{float(x)!r},{float(y)!r}\n")


_YAML = """\
# S+C+L recirculating loop: 71 km SSMF, four backward Raman pumps,
# three gain blocks, WSS power balancing and per-band VOAs.
# Regenerate with: python3 -m ramanqot.loop_scenario <directory>
name: scl_loop
plan:
  symbol_rate_gbaud: {rs}
  modulation: QAM64
  bands:
{bands}
band_edges_nm:
{edges}
fibres:
  ssmf:
    length_km: 71
    attenuation_db_km: attenuation.csv
    raman_gain: {{file: raman_gain.csv, abscissa: THz}}
    gamma: 1.4
    a_eff_um2: 83
    dispersion_ps_nm_km: 16.5
    dispersion_slope_ps_nm2_km: 0.09
    reference_wavelength_nm: 1550
pumps:
  raman:
{pumps}
loop:
  - {{type: fibre_span, name: span, fibre: ssmf, pumps: raman}}
  - {{type: amp, name: gain_block_2, gain_db: gain_block_2.csv, noise_figure_db: noise_figure.csv}}
  - {{type: wss, name: wss, attenuation_db: wss.csv}}
  - {{type: amp, name: gain_block_3, gain_db: gain_block_3.csv, noise_figure_db: noise_figure.csv}}
  - {{type: loss, name: front_end_loss, attenuation_db: {front}}}
  - {{type: amp, name: gain_block_1, gain_db: {gb1}, noise_figure_db: noise_figure.csv}}
  - {{type: loss, name: band_voa, attenuation_db: voa.csv}}
recirculations: 15
transceiver_snr_db: {trx}
pilot_overhead: 0.03125
model:
  nli_method: closed-form
  fit_terms: 4
  fit_gate_db: 0.5
  z_step_km: 0.1
  bvp_tolerance: 1.0e-4
  temperature_k: 298
  reuse_rtol: 1.0e-12
"""


def write_scenario(directory, shift_thz: float = GAIN_SHIFT_THZ) -> Path:
    """Write ``scenario.yaml`` and its tables into ``directory``; returns the YAML path."""
    from .config import load_scenario

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    fibre = default_fibre(shift_thz)
    _write_table(directory / "attenuation.csv", fibre.attenuation, "wavelength_nm", "db_per_km")
    _write_table(directory / "raman_gain.csv", fibre.raman_gain, "separation_thz",
                 "gain_per_w_km")
    bands = "\n".join(
        f"    - {{name: {name}, first_frequency_thz: {f0}, channels: {n}, "
        f"spacing_ghz: {SPACING_GHZ}, total_power_dbm: {p}}}"
        for name, f0, n, p, *_ in BANDS)
    edges = "\n".join(f"  {k}: [{lo}, {hi}]" for k, (lo, hi) in BAND_EDGES_NM.items())
    pumps = "\n".join(f"    - {{wavelength_nm: {wl}, power_mw: {mw}, direction: backward}}"
                      for wl, mw in PUMPS_NM_MW)
    path = directory / "scenario.yaml"
    text = _YAML.format(rs=SYMBOL_RATE_GBAUD, bands=bands, edges=edges, pumps=pumps,
                        front=FRONT_LOSS_DB, gb1=GB1_DB, trx=TRX_SNR_DB)
    # placeholder tables let the loader build the plan exactly as users will see it
    names = ("gain_block_2", "gain_block_3", "wss", "noise_figure", "voa")
    for name in names:
        (directory / f"{name}.csv").write_text("wavelength_nm,value\n1000,0\n2000,0\n")
    path.write_text(text)
    cfg = load_scenario(path)
    plan = cfg.scenario.plan
    tables = loop_tables(cfg.fibres["ssmf"], plan, cfg.pump_sets["raman"],
                         cfg.scenario.model.solver)
    _write_channel_table(directory / "gain_block_2.csv", plan, tables["gb2"], "gain_db")
    _write_channel_table(directory / "gain_block_3.csv", plan, tables["gb3"], "gain_db")
    _write_channel_table(directory / "wss.csv", plan, tables["wss"], "attenuation_db")
    _write_channel_table(directory / "noise_figure.csv", plan, tables["nf"], "noise_figure_db")
    _write_channel_table(directory / "voa.csv", plan, tables["voa"], "attenuation_db")
    _logger.info("wrote scenario to %s", path)
    return path


def scenario_path() -> Path:
    """Location of the shipped scenario file."""
    return DATA_DIR / "scenario.yaml"


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="Write the S+C+L loop scenario and its tables.")
    ap.add_argument("directory", type=Path)
    ap.add_argument("--gain-shift-thz", type=float, default=GAIN_SHIFT_THZ)
    args = ap.parse_args(argv)
    print(write_scenario(args.directory, args.gain_shift_thz))
    return 0


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
