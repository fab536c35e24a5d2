"""Quality-of-transmission figures: SNR combination, 64-QAM GMI, throughput, reports.

SNRs are signal-to-noise power ratios over the channel's symbol-rate
bandwidth, in dB. GMI is the bit-wise achievable rate of Gray-labelled
64-QAM on an AWGN channel, counted over both polarisations (12 bits/symbol
at most).
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .link import LinkState
from .spectral import ChannelPlan, SpectralTable, db_to_linear, linear_to_db

_logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_BANDS", "PILOT_OVERHEAD", "combine_snr", "gmi_64qam", "gmi_monte_carlo",
    "throughput", "band_of", "QotReport", "qot_report", "write_report_csv",
    "read_report_csv", "write_summary",
]

DEFAULT_BANDS: dict[str, tuple[float, float]] = {
    "S": (1460.0, 1530.0),
    "C": (1530.0, 1565.0),
    "L": (1565.0, 1625.0),
}
PILOT_OVERHEAD = 1.0 / 32.0
_GH_NODES = 64


def combine_snr(snr_db: Sequence[float]) -> float:
    """Combine independent noise contributions: ``1/SNR = sum 1/SNR_c`` (linear).

    ``+inf`` entries stand for a noise source that is absent.
    """
    vals = np.asarray(list(snr_db), dtype=float)
    if vals.size == 0:
        raise ValueError("combine_snr needs at least one SNR component")
    if np.any(np.isnan(vals)) or np.any(vals == -np.inf):
        raise ValueError("SNR components must be finite dB values or +inf")
    inv = np.sum(np.where(np.isinf(vals), 0.0, 10.0 ** (-vals / 10.0)))
    return math.inf if inv == 0 else float(-10.0 * np.log10(inv))


def _combine_arrays(*components: np.ndarray) -> np.ndarray:
    inv = sum(np.where(np.isinf(c), 0.0, 10.0 ** (-np.asarray(c, float) / 10.0))
              for c in components)
    with np.errstate(divide="ignore"):
        return np.where(inv > 0, -10.0 * np.log10(np.where(inv > 0, inv, 1.0)), np.inf)


# -- GMI ------------------------------------------------------------------------------

def _gray(m: int) -> np.ndarray:
    """Gray labels of ``m`` PAM levels as an (m, log2 m) bit array."""
    bits = int(round(math.log2(m)))
    g = np.arange(m) ^ (np.arange(m) >> 1)
    return (g[:, None] >> np.arange(bits - 1, -1, -1)[None, :]) & 1


@lru_cache(maxsize=None)
def _pam_setup(m: int = 8, nodes: int = _GH_NODES):
    levels = np.arange(-(m - 1), m, 2, dtype=float)
    levels /= np.sqrt(np.mean(levels ** 2))
    t, w = np.polynomial.hermite.hermgauss(nodes)
    return levels, _gray(m), t, w / np.sqrt(np.pi)


def _gmi_pam(snr_lin: float, m: int = 8) -> float:
    """GMI (bits per real dimension) of Gray ``m``-PAM with unit power at ``snr_lin``."""
    levels, labels, t, w = _pam_setup(m)
    bits = labels.shape[1]
    sigma = math.sqrt(1.0 / snr_lin)
    # y[j, q] = x_j + sqrt(2) sigma t_q; metric[j, q, l] = log p(y | x_l) up to a constant
    y = levels[:, None] + math.sqrt(2.0) * sigma * t[None, :]
    metric = -((y[:, :, None] - levels[None, None, :]) ** 2) / (2.0 * sigma ** 2)
    total = logsumexp(metric, axis=2)
    loss = 0.0
    for k in range(bits):
        same = labels[:, k][:, None] == labels[:, k][None, :]  # (j, l)
        masked = np.where(same[:, None, :], metric, -np.inf)
        loss += np.mean((total - logsumexp(masked, axis=2)) @ w)
    return max(0.0, bits - loss / math.log(2.0))


def gmi_64qam(snr_db) -> np.ndarray | float:
    """Dual-polarisation GMI of Gray 64-QAM (bits/symbol) by Gauss-Hermite quadrature.

    Square Gray 64-QAM splits into two independent Gray 8-PAM dimensions at
    the same SNR, so the result is ``4 * GMI_8PAM(snr)``.
    """
    arr = np.asarray(snr_db, dtype=float)
    if not np.all(np.isfinite(arr) | (arr == np.inf)):
        raise ValueError("SNR must be finite")
    out = np.array([12.0 if s == np.inf else 4.0 * _gmi_pam(float(db_to_linear(s)))
                    for s in arr.ravel()]).reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def gmi_monte_carlo(snr_db: float, samples: int = 1_000_000, seed: int = 1) -> float:
    """Monte-Carlo dual-polarisation GMI of Gray 64-QAM using the 2-D constellation.

    Exists as an independent check on :func:`gmi_64qam`.
    """
    rng = np.random.default_rng(seed)
    gray = _gray(8)
    axis = np.arange(-7, 8, 2, dtype=float)
    points = (axis[:, None] + 1j * axis[None, :]).ravel()
    labels = np.concatenate([np.repeat(gray, 8, axis=0), np.tile(gray, (8, 1))], axis=1)
    points /= np.sqrt(np.mean(np.abs(points) ** 2))
    n0 = 1.0 / db_to_linear(snr_db)
    loss = 0.0
    chunk = 50_000
    done = 0
    while done < samples:
        n = min(chunk, samples - done)
        tx = rng.integers(0, 64, n)
        noise = rng.normal(scale=math.sqrt(n0 / 2), size=(n, 2)) @ np.array([1.0, 1j])
        y = points[tx] + noise
        metric = -np.abs(y[:, None] - points[None, :]) ** 2 / n0
        total = logsumexp(metric, axis=1)
        for k in range(6):
            same = labels[:, k][None, :] == labels[tx, k][:, None]
            loss += np.sum(total - logsumexp(np.where(same, metric, -np.inf), axis=1))
        done += n
    gmi = 6.0 - loss / (samples * math.log(2.0))
    return 2.0 * max(0.0, gmi)


def throughput(gmi, symbol_rate, overhead: float = PILOT_OVERHEAD):
    """Net per-channel rates ``gmi * Rs * (1 - overhead)`` and their sum, in bit/s."""
    if not 0.0 <= overhead < 1.0:
        raise ValueError("overhead must lie in [0, 1)")
    rates = np.asarray(gmi, dtype=float) * np.asarray(symbol_rate, dtype=float) * (1.0 - overhead)
    return rates, float(np.sum(rates))


def band_of(wavelength_nm, bands: Mapping[str, tuple[float, float]] = DEFAULT_BANDS):
    """Band name per wavelength (``lo <= lambda < hi``); ``"-"`` if none applies."""
    wl = np.atleast_1d(np.asarray(wavelength_nm, dtype=float))
    out = np.full(wl.shape, "-", dtype=object)
    for name, (lo, hi) in bands.items():
        out[(wl >= lo) & (wl < hi) & (out == "-")] = name
    return out


# -- report -----------------------------------------------------------------------------

def _q(x) -> np.ndarray:
    """Quantise to the six significant digits used in every CSV file."""
    arr = np.asarray(x, dtype=float)
    return np.array([float(f"{v:.6g}") for v in arr.ravel()]).reshape(arr.shape)


@dataclass(frozen=True, eq=False)
class QotReport:
    """Per-channel QoT table. Fields are stored at CSV precision (6 significant digits).

    ``snr_trx`` is NaN for channels without a transceiver figure.
    """

    channel: np.ndarray
    wavelength: np.ndarray  # nm
    band: tuple
    snr_trx: np.ndarray
    snr_ase: np.ndarray
    snr_nli: np.ndarray
    snr_total: np.ndarray
    gmi: np.ndarray
    rate: np.ndarray  # bit/s
    recirculations: int = 0
    bands: dict = field(default_factory=lambda: dict(DEFAULT_BANDS))

    def __post_init__(self):
        for name in ("wavelength", "snr_trx", "snr_ase", "snr_nli", "snr_total", "gmi", "rate"):
            object.__setattr__(self, name, _q(getattr(self, name)))
        object.__setattr__(self, "channel", np.asarray(self.channel, dtype=int))
        object.__setattr__(self, "band", tuple(str(b) for b in self.band))

    def __len__(self) -> int:
        return int(self.channel.size)

    @property
    def total_throughput(self) -> float:
        return float(np.sum(self.rate))

    def band_throughput(self) -> dict[str, float]:
        names = list(self.bands) + sorted(set(self.band) - set(self.bands))
        out = {}
        for name in names:
            sel = np.array([b == name for b in self.band])
            if sel.any():
                out[name] = float(np.sum(self.rate[sel]))
        return out

    def worst_channel(self, band: Optional[str] = None) -> int:
        """Plan index of the lowest total SNR (within ``band`` if given)."""
        sel = np.ones(len(self), bool) if band is None else np.array([b == band for b in self.band])
        if not sel.any():
            raise ValueError(f"no channel in band {band!r}")
        k = np.flatnonzero(sel)[np.argmin(self.snr_total[sel])]
        return int(self.channel[k])

    def equals(self, other: "QotReport") -> bool:
        """Field-by-field equality (NaN equals NaN)."""
        arrays = ("channel", "wavelength", "snr_trx", "snr_ase", "snr_nli", "snr_total", "gmi",
                  "rate")
        return (all(np.array_equal(getattr(self, a), getattr(other, a), equal_nan=True)
                    for a in arrays)
                and self.band == other.band and self.recirculations == other.recirculations)


def _ratio_db(signal, noise):
    with np.errstate(divide="ignore"):
        return np.where(noise > 0, linear_to_db(signal / np.where(noise > 0, noise, 1.0)), np.inf)


def qot_report(plan: ChannelPlan, state: LinkState, trx_snr: Optional[SpectralTable] = None,
               overhead: float = PILOT_OVERHEAD,
               bands: Mapping[str, tuple[float, float]] = DEFAULT_BANDS,
               recirculations: int = 0) -> QotReport:
    """Build the per-channel report for a receiver-side :class:`LinkState`."""
    if len(state) != len(plan):
        raise ValueError("state and plan disagree on the channel count")
    snr_ase = _ratio_db(state.signal, state.ase)
    snr_nli = _ratio_db(state.signal, state.nli)
    if trx_snr is None:
        snr_trx = np.full(len(plan), np.nan)
        total = _combine_arrays(snr_ase, snr_nli)
    else:
        snr_trx = np.asarray(trx_snr.at_frequency(plan.frequencies), dtype=float)
        total = _combine_arrays(snr_trx, snr_ase, snr_nli)
    total = _q(total)
    gmi = _q(gmi_64qam(total))
    rates, _ = throughput(gmi, plan.symbol_rates, overhead)
    wl = plan.wavelengths
    return QotReport(np.arange(len(plan)), wl, tuple(band_of(wl, bands)), snr_trx, snr_ase,
                     snr_nli, total, gmi, rates, recirculations, dict(bands))


_COLUMNS = ["channel", "wavelength_nm", "band", "snr_trx_db", "snr_ase_db", "snr_nli_db",
            "snr_total_db", "gmi_bits", "rate_bps"]


def _fmt(v: float) -> str:
    return "" if np.isnan(v) else f"{v:.6g}"


def write_report_csv(path, report: QotReport) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# recirculations={report.recirculations}\n")
        wr = csv.writer(fh)
        wr.writerow(_COLUMNS)
        for k in range(len(report)):
            wr.writerow([int(report.channel[k]), _fmt(report.wavelength[k]), report.band[k],
                         _fmt(report.snr_trx[k]), _fmt(report.snr_ase[k]),
                         _fmt(report.snr_nli[k]), _fmt(report.snr_total[k]),
                         _fmt(report.gmi[k]), _fmt(report.rate[k])])
    return path


def read_report_csv(path, bands: Mapping[str, tuple[float, float]] = DEFAULT_BANDS) -> QotReport:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# recirculations="):
            raise ValueError(f"{path}:1: missing '# recirculations=' header")
        recirc = int(first.split("=", 1)[1])
        rd = csv.DictReader(fh)
        if rd.fieldnames != _COLUMNS:
            raise ValueError(f"{path}:2: unexpected columns {rd.fieldnames}")
        rows = list(rd)

    def col(name):
        return np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])

    return QotReport(np.array([int(r["channel"]) for r in rows]), col("wavelength_nm"),
                     tuple(r["band"] for r in rows), col("snr_trx_db"), col("snr_ase_db"),
                     col("snr_nli_db"), col("snr_total_db"), col("gmi_bits"), col("rate_bps"),
                     recirc, dict(bands))


def write_summary(path, report: QotReport, extra: Optional[dict] = None) -> Path:
    """Structured run summary as JSON with sorted keys (byte-stable across runs)."""
    worst = report.worst_channel()
    summary = {
        "recirculations": report.recirculations,
        "channels": len(report),
        "total_throughput_bps": float(f"{report.total_throughput:.6g}"),
        "band_throughput_bps": {k: float(f"{v:.6g}") for k, v in report.band_throughput().items()},
        "worst_channel": {"index": worst,
                          "wavelength_nm": float(report.wavelength[worst]),
                          "snr_total_db": float(report.snr_total[worst])},
    }
    for name in report.bands:
        if name in report.band:
            k = report.worst_channel(name)
            summary.setdefault("worst_channel_per_band", {})[name] = {
                "index": k, "wavelength_nm": float(report.wavelength[k]),
                "snr_total_db": float(report.snr_total[k])}
    if extra:
        summary.update(extra)
    path = Path(path)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return path
