"""Coupled Raman power evolution over one fibre span.

Every wave (WDM channel or pump) obeys

    dP_i/dz = d_i * P_i * ( -alpha_i + sum_j s_ij g(|f_j - f_i|) P_j )

with ``d_i = +1`` for forward and ``-1`` for backward waves, ``s_ij = 1`` when
``f_j > f_i`` and ``s_ij = -f_i/f_j`` otherwise. Counter-propagating
problems are solved by alternating forward and backward sweeps, each
integrating one direction with the other frozen, until the boundary values
stop moving.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .integrate import StepSizeError, integrate_on_grid
from .spectral import (
    H_PLANCK,
    K_BOLTZMANN,
    ChannelPlan,
    FibreSpec,
    frequency_to_wavelength,
    linear_to_db,
    wavelength_to_frequency,
)

_logger = logging.getLogger(__name__)

__all__ = [
    "Direction",
    "WaveKind",
    "Pump",
    "PumpSet",
    "RamanSolverConfig",
    "PowerProfileSet",
    "RamanConvergenceError",
    "StepSizeError",
    "solve_waves",
    "solve_power_evolution",
    "shooting_mismatch",
    "on_off_gain",
    "distributed_ase",
    "phonon_occupancy",
    "write_profiles_csv",
]


class Direction(str, Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class WaveKind(str, Enum):
    SIGNAL = "signal"
    PUMP = "pump"


@dataclass(frozen=True)
class Pump:
    wavelength: float  # nm
    power: float  # W
    direction: Direction = Direction.BACKWARD

    @property
    def frequency(self) -> float:
        return wavelength_to_frequency(self.wavelength)


@dataclass(frozen=True)
class PumpSet:
    pumps: tuple[Pump, ...] = ()

    def __post_init__(self):
        pumps = tuple(self.pumps)
        object.__setattr__(self, "pumps", pumps)
        for p in pumps:
            if not p.power >= 0:
                raise ValueError(f"pump at {p.wavelength} nm: power must be >= 0")
        wl = [p.wavelength for p in pumps]
        if len(set(wl)) != len(wl):
            raise ValueError("pump wavelengths must be distinct")

    def __len__(self) -> int:
        return len(self.pumps)

    def __iter__(self):
        return iter(self.pumps)

    @property
    def total_power(self) -> float:
        return float(sum(p.power for p in self.pumps))

    def scaled(self, factor: float) -> "PumpSet":
        return PumpSet(tuple(Pump(p.wavelength, p.power * factor, p.direction) for p in self.pumps))

    def active(self) -> tuple[Pump, ...]:
        return tuple(p for p in self.pumps if p.power > 0)


@dataclass(frozen=True)
class RamanSolverConfig:
    z_step_max: float = 0.1  # km
    bvp_tolerance: float = 1e-4
    max_iterations: int = 50
    include_pump_depletion: bool = True
    include_isrs: bool = True
    temperature: float = 298.0  # K
    rtol: float = 1e-9

    def __post_init__(self):
        if not self.z_step_max > 0:
            raise ValueError("z_step_max must be > 0")
        if not self.bvp_tolerance > 0:
            raise ValueError("bvp_tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0 K")


class RamanConvergenceError(RuntimeError):
    """The forward/backward sweeps did not settle within ``max_iterations``."""

    def __init__(self, message: str, mismatch: float, iterations: int):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class PowerProfileSet:
    """Power of every wave along the span, in the signal (forward) frame.

    ``power`` has shape ``(n_waves, n_z)``; signals come first in channel-plan
    order, then pumps.
    """

    z: np.ndarray  # km
    frequency: np.ndarray  # Hz
    kind: tuple[WaveKind, ...]
    direction: tuple[Direction, ...]
    power: np.ndarray  # W
    iterations: int = 0
    mismatch: float = 0.0
    symbol_rate: Optional[np.ndarray] = field(default=None)

    @property
    def length(self) -> float:
        return float(self.z[-1])

    @property
    def signal_index(self) -> np.ndarray:
        return np.array([k == WaveKind.SIGNAL for k in self.kind])

    @property
    def pump_index(self) -> np.ndarray:
        return np.array([k == WaveKind.PUMP for k in self.kind])

    @property
    def signal_power(self) -> np.ndarray:
        return self.power[self.signal_index]

    @property
    def signal_frequency(self) -> np.ndarray:
        return self.frequency[self.signal_index]

    @property
    def pump_power(self) -> np.ndarray:
        return self.power[self.pump_index]

    @property
    def pump_frequency(self) -> np.ndarray:
        return self.frequency[self.pump_index]

    def output_power(self) -> np.ndarray:
        """Signal powers at the span end (W)."""
        return self.signal_power[:, -1]

    def transmission(self) -> np.ndarray:
        """Net linear signal transmission P(L)/P(0) per channel."""
        sp = self.signal_power
        return sp[:, -1] / sp[:, 0]


# -- solver -------------------------------------------------------------------

def _coupling_matrix(fibre: FibreSpec, freqs: np.ndarray) -> np.ndarray:
    df = freqs[None, :] - freqs[:, None]  # f_j - f_i
    g = fibre.gain(df)
    ratio = freqs[:, None] / freqs[None, :]
    s = np.where(df > 0, 1.0, -ratio)
    m = s * g
    np.fill_diagonal(m, 0.0)
    return m


def _z_grid(length: float, z_step_max: float) -> np.ndarray:
    n = max(1, int(np.ceil(length / z_step_max - 1e-9)))
    return np.linspace(0.0, length, n + 1)


class _Frozen:
    """Log-linear interpolation of a frozen set of profiles on the z grid."""

    def __init__(self, z: np.ndarray, power: np.ndarray):
        self.z = z
        self.logp = np.log(power)

    def __call__(self, x: float) -> np.ndarray:
        z = self.z
        k = min(max(int(np.searchsorted(z, x, side="right")) - 1, 0), z.size - 2)
        t = (x - z[k]) / (z[k + 1] - z[k])
        return np.exp((1 - t) * self.logp[:, k] + t * self.logp[:, k + 1])


def _sweep(z, alpha, m, idx, other, frozen, p0, sign, rtol):
    """Integrate the waves ``idx`` from their boundary with ``other`` frozen.

    ``sign`` is +1 for the forward set (z: 0 -> L) and -1 for the backward
    set, which is integrated in the reversed coordinate s = L - z.
    """
    a = alpha[idx]
    m_self = m[np.ix_(idx, idx)]
    m_other = m[np.ix_(idx, other)] if other.size else None
    length = z[-1]

    if sign > 0:
        nodes = z

        def rhs(x, p):
            acc = m_self @ p
            if m_other is not None:
                acc = acc + m_other @ frozen(x)
            return p * (acc - a)
    else:
        nodes = length - z[::-1]

        def rhs(x, p):
            acc = m_self @ p
            if m_other is not None:
                acc = acc + m_other @ frozen(length - x)
            return p * (acc - a)

    sol = integrate_on_grid(rhs, p0, nodes, rtol=rtol)
    return sol.T if sign > 0 else sol[::-1].T


def solve_waves(fibre: FibreSpec, frequency: np.ndarray, direction: Sequence[Direction],
                boundary_power: np.ndarray, cfg: RamanSolverConfig = RamanSolverConfig(),
                kind: Optional[Sequence[WaveKind]] = None,
                coupling: Optional[np.ndarray] = None) -> PowerProfileSet:
    """Solve the coupled power equations for an arbitrary set of waves.

    ``boundary_power`` holds the launch power of each wave at its own input
    end (z = 0 for forward waves, z = L for backward ones).
    """
    freq = np.asarray(frequency, dtype=float)
    p_b = np.asarray(boundary_power, dtype=float)
    direction = tuple(Direction(d) for d in direction)
    kind = tuple(WaveKind(k) for k in kind) if kind is not None else (WaveKind.SIGNAL,) * freq.size
    if not (freq.size == p_b.size == len(direction) == len(kind)):
        raise ValueError("frequency, direction, kind and boundary_power must align")
    if np.any(p_b <= 0):
        raise ValueError("all wave launch powers must be > 0")
    wl = frequency_to_wavelength(freq)
    cover = fibre.attenuation.covers(wl)
    if not np.all(cover):
        bad = np.atleast_1d(wl)[~np.atleast_1d(cover)]
        raise ValueError(
            f"wavelengths {np.round(bad, 3).tolist()} nm outside the attenuation table "
            f"[{fibre.attenuation.x[0]:g}, {fibre.attenuation.x[-1]:g}] nm")

    z = _z_grid(fibre.length, cfg.z_step_max)
    alpha = np.atleast_1d(fibre.alpha(freq))
    m = _coupling_matrix(fibre, freq) if coupling is None else np.array(coupling, dtype=float)
    is_pump = np.array([k == WaveKind.PUMP for k in kind])
    if not cfg.include_isrs:
        m[np.ix_(~is_pump, ~is_pump)] = 0.0
    if not cfg.include_pump_depletion:
        m[np.ix_(is_pump, ~is_pump)] = 0.0

    fwd = np.flatnonzero([d == Direction.FORWARD for d in direction])
    bwd = np.flatnonzero([d == Direction.BACKWARD for d in direction])
    power = np.empty((freq.size, z.size))
    # undepleted guess: pure attenuation from each wave's own input end
    power[fwd] = p_b[fwd, None] * np.exp(-alpha[fwd, None] * z[None, :])
    power[bwd] = p_b[bwd, None] * np.exp(-alpha[bwd, None] * (z[-1] - z)[None, :])

    if bwd.size == 0 or fwd.size == 0:
        idx, sign = (fwd, 1) if bwd.size == 0 else (bwd, -1)
        power[idx] = _sweep(z, alpha, m, idx, np.array([], dtype=int), None, p_b[idx], sign,
                            cfg.rtol)
        if not np.all(np.isfinite(power)):
            raise FloatingPointError(f"power profiles became non-finite; launch powers up to "
                                     f"{p_b.max():.3g} W are outside the solver's range")
        return PowerProfileSet(z, freq, kind, direction, power, iterations=1, mismatch=0.0)

    def ends():
        return np.concatenate([power[fwd, -1], power[bwd, 0]])

    previous = ends()
    mismatch = np.inf
    relax = 1.0
    last_change = np.inf
    for it in range(1, cfg.max_iterations + 1):
        old_bwd = power[bwd].copy()
        new_bwd = _sweep(z, alpha, m, bwd, fwd, _Frozen(z, power[fwd]), p_b[bwd], -1, cfg.rtol)
        if relax < 1.0:
            new_bwd = old_bwd ** (1 - relax) * new_bwd ** relax
        power[bwd] = new_bwd
        power[fwd] = _sweep(z, alpha, m, fwd, bwd, _Frozen(z, power[bwd]), p_b[fwd], 1, cfg.rtol)
        current = ends()
        if not np.all(np.isfinite(power)):
            raise FloatingPointError(
                f"power profiles became non-finite on sweep {it}; launch powers "
                f"up to {p_b.max():.3g} W are outside the solver's range")
        mismatch = float(np.max(np.abs(current / previous - 1.0)))
        previous = current
        _logger.debug("raman sweep %d: boundary change %.3e (relax %.2f)", it, mismatch, relax)
        # The sweeps contract roughly geometrically with ratio q, so the distance
        # from the previous iterate to the fixed point is about change / (1 - q).
        # Half the tolerance is kept in reserve for the re-integration check.
        q = mismatch / last_change if np.isfinite(last_change) and last_change > 0 else 1.0
        distance = mismatch / (1.0 - q) if q < 1.0 else np.inf
        if mismatch < cfg.bvp_tolerance and (distance < 0.5 * cfg.bvp_tolerance
                                             or mismatch < 0.01 * cfg.bvp_tolerance):
            return PowerProfileSet(z, freq, kind, direction, power, iterations=it,
                                   mismatch=mismatch)
        if mismatch > last_change and relax > 0.125:
            relax *= 0.5
        last_change = mismatch
    raise RamanConvergenceError(
        f"Raman boundary-value iteration did not converge in {cfg.max_iterations} sweeps "
        f"(last boundary change {mismatch:.3e}, tolerance {cfg.bvp_tolerance:.1e})",
        mismatch, cfg.max_iterations)


def solve_power_evolution(fibre: FibreSpec, plan: ChannelPlan, pumps: PumpSet = PumpSet(),
                          cfg: RamanSolverConfig = RamanSolverConfig()) -> PowerProfileSet:
    """Signal and pump power profiles for one span.

    Pumps with zero power are left out of the returned profile set.
    """
    active = pumps.active()
    freq = np.concatenate([plan.frequencies, [p.frequency for p in active]])
    direction = [Direction.FORWARD] * len(plan) + [p.direction for p in active]
    kind = [WaveKind.SIGNAL] * len(plan) + [WaveKind.PUMP] * len(active)
    p_b = np.concatenate([plan.powers, [p.power for p in active]])
    prof = solve_waves(fibre, freq, direction, p_b, cfg, kind)
    return PowerProfileSet(prof.z, prof.frequency, prof.kind, prof.direction, prof.power,
                           prof.iterations, prof.mismatch, plan.symbol_rates)


def shooting_mismatch(fibre: FibreSpec, profiles: PowerProfileSet,
                      cfg: RamanSolverConfig = RamanSolverConfig()) -> float:
    """Re-integrate every wave forward from z = 0 and compare with the profile at z = L.

    Backward waves start from their solved z = 0 values; the returned number
    is the largest relative deviation at z = L, which for backward waves is
    the deviation from their launch boundary value.
    """
    freq = profiles.frequency
    alpha = np.atleast_1d(fibre.alpha(freq))
    m = _coupling_matrix(fibre, freq)
    is_pump = profiles.pump_index
    if not cfg.include_isrs:
        m[np.ix_(~is_pump, ~is_pump)] = 0.0
    if not cfg.include_pump_depletion:
        m[np.ix_(is_pump, ~is_pump)] = 0.0
    d = np.array([1.0 if x == Direction.FORWARD else -1.0 for x in profiles.direction])

    def rhs(_, p):
        return d * p * (m @ p - alpha)

    sol = integrate_on_grid(rhs, profiles.power[:, 0], profiles.z, rtol=cfg.rtol)
    return float(np.max(np.abs(sol[-1] / profiles.power[:, -1] - 1.0)))


# -- derived quantities ---------------------------------------------------------

def on_off_gain(with_pumps: PowerProfileSet, without_pumps: PowerProfileSet) -> np.ndarray:
    """Per-channel Raman on/off gain in dB, ``10 log10(P_on(L) / P_off(L))``."""
    f_on, f_off = with_pumps.signal_frequency, without_pumps.signal_frequency
    if f_on.shape != f_off.shape or not np.allclose(f_on, f_off, rtol=0, atol=1.0):
        raise ValueError("on/off gain: profiles were solved for different channel plans")
    if with_pumps.z.shape != without_pumps.z.shape or not np.allclose(with_pumps.z,
                                                                         without_pumps.z):
        raise ValueError("on/off gain: profiles use different z grids")
    return linear_to_db(with_pumps.output_power() / without_pumps.output_power())


def phonon_occupancy(separation_hz: np.ndarray, temperature: float) -> np.ndarray:
    """Bose-Einstein phonon number at frequency shift ``separation_hz``."""
    d = np.abs(np.asarray(separation_hz, dtype=float))
    if temperature <= 0:
        return np.zeros_like(d)
    with np.errstate(over="ignore", divide="ignore"):
        x = H_PLANCK * d / (K_BOLTZMANN * temperature)
        return np.where(d > 0, 1.0 / np.expm1(x), np.inf)


def distributed_ase(fibre: FibreSpec, profiles: PowerProfileSet, plan: ChannelPlan,
                    cfg: RamanSolverConfig = RamanSolverConfig(),
                    pumps: Optional[PumpSet] = None) -> np.ndarray:
    """Spontaneous Raman ASE (W, both polarisations, in each channel's symbol-rate bandwidth).

    Solves ``dP_A/dz = (d ln P_i / dz) P_A + sum_p g P_p 2 h f B (1 + n_th)``
    along the solved profiles, over pumps above the channel frequency. The
    ASE in a channel's band grows at the channel's own net rate, so it sees
    the same pump gain, loss and signal-signal ISRS as the signal. If
    ``pumps`` is given, every pump with non-zero power must be present in
    ``profiles``.
    """
    f_sig = plan.frequencies
    if f_sig.shape != profiles.signal_frequency.shape or not np.allclose(
            f_sig, profiles.signal_frequency, rtol=0, atol=1.0):
        raise ValueError("distributed ASE: profiles were solved for a different channel plan")
    f_pump = profiles.pump_frequency
    p_pump = profiles.pump_power
    if pumps is not None:
        for p in pumps.active():
            if not np.any(np.isclose(f_pump, p.frequency, rtol=0, atol=1.0)):
                raise ValueError(f"distributed ASE: no solved profile for pump at {p.wavelength} nm")
    n = f_sig.size
    if f_pump.size == 0:
        return np.zeros(n)

    z = profiles.z
    dz = np.diff(z)
    sep = f_pump[None, :] - f_sig[:, None]  # (n_ch, n_pump)
    g = np.where(sep > 0, fibre.gain(sep), 0.0)
    n_th = phonon_occupancy(sep, cfg.temperature)
    seed = 2 * H_PLANCK * f_sig[:, None] * plan.symbol_rates[:, None] * (1 + n_th)
    seed = np.where(g > 0, seed, 0.0)

    src_z = (g * seed) @ p_pump  # (n_ch, n_z)
    # P_A(L) = int_0^L src(z) P_i(L) / P_i(z) dz
    p_sig = profiles.signal_power
    integrand = src_z * (p_sig[:, -1:] / p_sig)
    return np.sum(0.5 * (integrand[:, 1:] + integrand[:, :-1]) * dz, axis=1)


def write_profiles_csv(path, profiles: PowerProfileSet) -> Path:
    """Wide CSV: ``z_km`` then one power column (W) per wave, labelled by kind and wavelength."""
    path = Path(path)
    wl = frequency_to_wavelength(profiles.frequency)
    names = [f"{k.value}_{w:.6g}nm" for k, w in zip(profiles.kind, wl)]
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["z_km"] + names)
        for n in range(profiles.z.size):
            wr.writerow([f"{profiles.z[n]:.6g}"] + [f"{v:.6g}" for v in profiles.power[:, n]])
    return path
