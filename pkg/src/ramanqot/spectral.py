"""Frequency grids, unit conversions and tabulated wavelength-dependent data.

Everything downstream works in SI-ish link units: frequencies in Hz,
distances in km, powers in W, attenuation in 1/km (power, natural log),
Raman gain in 1/W/km and dispersion in s^2/km, s^3/km.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.constants import h as H_PLANCK
from scipy.constants import k as K_BOLTZMANN

_logger = logging.getLogger(__name__)

ArrayLike = Union[float, Sequence[float], np.ndarray]

DB_PER_NEPER = 10.0 / math.log(10.0)

__all__ = [
    "C_LIGHT",
    "H_PLANCK",
    "K_BOLTZMANN",
    "DB_PER_NEPER",
    "Modulation",
    "Channel",
    "ChannelPlan",
    "SpectralTable",
    "FibreSpec",
    "db_to_linear",
    "linear_to_db",
    "dbm_to_watt",
    "watt_to_dbm",
    "wavelength_to_frequency",
    "frequency_to_wavelength",
    "beta_coefficients",
    "interpolate",
    "read_table",
    "uniform_plan",
]


# -- unit conversions ---------------------------------------------------------

def _finite(x, what):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what}: non-finite input {x!r}")
    return arr


def db_to_linear(x_db: ArrayLike):
    """Convert dB to a linear power ratio, ``10**(x/10)``."""
    arr = _finite(x_db, "db_to_linear")
    out = np.power(10.0, arr / 10.0)
    return float(out) if out.ndim == 0 else out


def linear_to_db(x: ArrayLike):
    """Convert a positive linear power ratio to dB."""
    arr = _finite(x, "linear_to_db")
    if np.any(arr <= 0):
        raise ValueError(f"linear_to_db: non-positive input {x!r}")
    out = 10.0 * np.log10(arr)
    return float(out) if out.ndim == 0 else out


def dbm_to_watt(p_dbm: ArrayLike):
    return db_to_linear(p_dbm) * 1e-3


def watt_to_dbm(p_w: ArrayLike):
    return linear_to_db(np.asarray(p_w, dtype=float) * 1e3)


def wavelength_to_frequency(wavelength_nm: ArrayLike):
    """Vacuum wavelength in nm to optical frequency in Hz."""
    out = C_LIGHT / (np.asarray(wavelength_nm, dtype=float) * 1e-9)
    return float(out) if out.ndim == 0 else out


def frequency_to_wavelength(frequency_hz: ArrayLike):
    """Optical frequency in Hz to vacuum wavelength in nm."""
    out = C_LIGHT / np.asarray(frequency_hz, dtype=float) * 1e9
    return float(out) if out.ndim == 0 else out


# -- channel plan -------------------------------------------------------------

class Modulation(str, Enum):
    QAM64 = "QAM64"
    GAUSSIAN = "Gaussian"


@dataclass(frozen=True)
class Channel:
    center_frequency: float  # Hz
    symbol_rate: float  # Baud
    launch_power: float  # W
    modulation: Modulation = Modulation.QAM64

    @property
    def wavelength(self) -> float:
        """Centre wavelength in nm."""
        return frequency_to_wavelength(self.center_frequency)


@dataclass(frozen=True)
class ChannelPlan:
    """Ordered WDM channel list. Spacing is whatever the centres imply."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        chans = tuple(self.channels)
        object.__setattr__(self, "channels", chans)
        if not chans:
            raise ValueError("channel plan is empty")
        for k, ch in enumerate(chans):
            if not ch.launch_power > 0:
                raise ValueError(f"channel {k}: launch power must be > 0")
            if not ch.symbol_rate > 0:
                raise ValueError(f"channel {k}: symbol rate must be > 0")
        for k in range(1, len(chans)):
            lo, hi = chans[k - 1], chans[k]
            if not hi.center_frequency > lo.center_frequency:
                raise ValueError(f"channel {k}: centre frequencies must be strictly increasing")
            # tolerate round-off on exactly abutting channels
            gap = hi.center_frequency - lo.center_frequency
            need = 0.5 * (lo.symbol_rate + hi.symbol_rate)
            if gap < need * (1 - 1e-12):
                raise ValueError(f"channels {k - 1} and {k} overlap")

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([ch.center_frequency for ch in self.channels])

    @property
    def wavelengths(self) -> np.ndarray:
        return frequency_to_wavelength(self.frequencies)

    @property
    def symbol_rates(self) -> np.ndarray:
        return np.array([ch.symbol_rate for ch in self.channels])

    @property
    def powers(self) -> np.ndarray:
        return np.array([ch.launch_power for ch in self.channels])

    def with_powers(self, powers: ArrayLike) -> "ChannelPlan":
        powers = np.broadcast_to(np.asarray(powers, dtype=float), (len(self),))
        return ChannelPlan(tuple(
            Channel(ch.center_frequency, ch.symbol_rate, float(p), ch.modulation)
            for ch, p in zip(self.channels, powers)))

    def subset(self, indices: Sequence[int]) -> "ChannelPlan":
        return ChannelPlan(tuple(self.channels[i] for i in indices))


def uniform_plan(f_start: float, n_channels: int, spacing: float, symbol_rate: float,
                 power: float, modulation: Modulation = Modulation.QAM64) -> ChannelPlan:
    """Evenly spaced plan starting at ``f_start`` (Hz) with equal powers (W)."""
    freqs = f_start + spacing * np.arange(n_channels)
    return ChannelPlan(tuple(Channel(float(f), symbol_rate, power, modulation) for f in freqs))


# -- tables -------------------------------------------------------------------

_ABSCISSA_UNITS = ("nm", "THz", "Hz")


@dataclass(frozen=True, eq=False)
class SpectralTable:
    """Piecewise-linear lookup table over wavelength or frequency.

    ``abscissa_unit`` is one of ``nm``, ``THz`` or ``Hz``; ``value_unit`` is a
    free-form tag (``dB``, ``dB/km``, ``1/W/km`` ...). Out-of-range lookups
    either clamp to the end values or raise, per ``extrapolation``.
    """

    x: np.ndarray
    y: np.ndarray
    abscissa_unit: str = "nm"
    value_unit: str = ""
    extrapolation: str = "clamp"
    name: str = field(default="", compare=False)

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        y = np.array(self.y, dtype=float).ravel()
        if x.size != y.size:
            raise ValueError(f"table {self.name!r}: abscissa and values differ in length")
        if x.size < 2:
            raise ValueError(f"table {self.name!r}: need at least 2 samples")
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
            raise ValueError(f"table {self.name!r}: non-finite samples")
        if np.any(np.diff(x) <= 0):
            raise ValueError(f"table {self.name!r}: abscissae must be strictly increasing")
        if self.abscissa_unit not in _ABSCISSA_UNITS:
            raise ValueError(f"table {self.name!r}: unknown abscissa unit {self.abscissa_unit!r}")
        if self.extrapolation not in ("clamp", "error"):
            raise ValueError(f"table {self.name!r}: extrapolation must be 'clamp' or 'error'")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @classmethod
    def constant(cls, value: float, lo: float, hi: float, abscissa_unit: str = "nm",
                 value_unit: str = "", name: str = "") -> "SpectralTable":
        return cls(np.array([lo, hi]), np.array([value, value]), abscissa_unit, value_unit,
                   "clamp", name)

    @property
    def range(self) -> tuple[float, float]:
        return float(self.x[0]), float(self.x[-1])

    def __call__(self, x: ArrayLike):
        return interpolate(self, x)

    def covers(self, x: ArrayLike) -> np.ndarray:
        xa = np.asarray(x, dtype=float)
        return (xa >= self.x[0]) & (xa <= self.x[-1])

    def to_abscissa(self, frequency_hz: ArrayLike) -> np.ndarray:
        """Express optical frequencies in this table's abscissa unit."""
        f = np.asarray(frequency_hz, dtype=float)
        if self.abscissa_unit == "nm":
            return C_LIGHT / f * 1e9
        if self.abscissa_unit == "THz":
            return f * 1e-12
        return f

    def at_frequency(self, frequency_hz: ArrayLike):
        return interpolate(self, self.to_abscissa(frequency_hz))


def interpolate(table: SpectralTable, x: ArrayLike):
    """Linear interpolation in ``table``; exact at the nodes."""
    xa = np.asarray(x, dtype=float)
    if table.extrapolation == "error":
        bad = ~table.covers(xa)
        if np.any(bad):
            first = np.atleast_1d(xa)[np.atleast_1d(bad)][0]
            raise ValueError(
                f"table {table.name!r}: {first:g} {table.abscissa_unit} outside "
                f"[{table.x[0]:g}, {table.x[-1]:g}]")
    out = np.interp(xa, table.x, table.y)
    return float(out) if out.ndim == 0 else out


def read_table(path: Union[str, Path], abscissa_unit: str = "nm", value_unit: str = "",
               extrapolation: str = "clamp", scale: float = 1.0) -> SpectralTable:
    """Read a two-column table (whitespace or comma separated).

    One non-numeric header line is allowed; ``#`` starts a comment.
    ``scale`` multiplies the value column (used e.g. for 1/A_eff conversion).
    """
    path = Path(path)
    xs, ys = [], []
    header_seen = False
    with path.open() as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                if header_seen or xs:
                    raise ValueError(f"{path}:{lineno}: unparsable row {raw.strip()!r}") from None
                header_seen = True
                continue
            if len(vals) < 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(vals)}")
            xs.append(vals[0])
            ys.append(vals[1])
    try:
        return SpectralTable(np.array(xs), np.array(ys) * scale, abscissa_unit, value_unit,
                             extrapolation, name=path.name)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


# -- fibre --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FibreSpec:
    """Single-mode fibre description.

    ``attenuation`` is in dB/km over wavelength (nm). ``raman_gain`` is in
    1/W/km over frequency separation (THz), already divided by the effective
    area; beyond its last node the gain is taken as zero.
    """

    length: float  # km
    attenuation: SpectralTable
    raman_gain: SpectralTable
    gamma: float = 1.4  # 1/W/km
    a_eff: float = 83.0  # um^2
    dispersion: float = 16.5  # ps/nm/km
    dispersion_slope: float = 0.09  # ps/nm^2/km
    reference_wavelength: float = 1550.0  # nm

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("fibre length must be > 0")
        if not self.gamma >= 0:
            # gamma = 0 is allowed as a linear-fibre limit
            raise ValueError("fibre gamma must be >= 0")
        if not self.a_eff > 0:
            raise ValueError("effective area must be > 0")
        if not self.reference_wavelength > 0:
            raise ValueError("reference wavelength must be > 0")
        if np.any(self.attenuation.y <= 0):
            raise ValueError("attenuation must be > 0 over the table range")
        if self.raman_gain.abscissa_unit != "THz":
            raise ValueError("Raman gain table must be tabulated against THz separation")
        if self.raman_gain.x[0] > 0 or abs(interpolate(self.raman_gain, 0.0)) > 0:
            raise ValueError("Raman gain must vanish at zero frequency separation")

    @property
    def reference_frequency(self) -> float:
        return C_LIGHT / (self.reference_wavelength * 1e-9)

    def alpha(self, frequency_hz: ArrayLike) -> np.ndarray:
        """Power attenuation in 1/km (natural log) at the given frequencies."""
        return np.asarray(self.attenuation.at_frequency(frequency_hz)) / DB_PER_NEPER

    def alpha_db(self, frequency_hz: ArrayLike) -> np.ndarray:
        return np.asarray(self.attenuation.at_frequency(frequency_hz))

    def gain(self, separation_hz: ArrayLike) -> np.ndarray:
        """Raman gain (1/W/km) at absolute frequency separation (Hz)."""
        d = np.abs(np.asarray(separation_hz, dtype=float)) * 1e-12
        g = np.interp(d, self.raman_gain.x, self.raman_gain.y)
        return np.where(d > self.raman_gain.x[-1], 0.0, g)

    def replace(self, **changes) -> "FibreSpec":
        return replace(self, **changes)


def beta_coefficients(fibre: FibreSpec) -> dict[str, float]:
    """Group-velocity dispersion and its slope at the reference wavelength.

    Returns ``beta2`` in ps^2/km and ``beta3`` in ps^3/km.
    """
    lam = fibre.reference_wavelength * 1e-9
    d = fibre.dispersion * 1e-3  # ps/nm/km -> s/m/km
    s = fibre.dispersion_slope * 1e6  # ps/nm^2/km -> s/m^2/km
    k = lam ** 2 / (2 * math.pi * C_LIGHT)
    beta2 = -d * k
    beta3 = k ** 2 * (s + 2 * d / lam)
    return {"beta2": beta2 * 1e24, "beta3": beta3 * 1e36}
