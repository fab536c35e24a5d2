"""Multi-exponential representation of normalised signal power profiles.

A channel's profile ``rho(z) = P(z)/P(0)`` is approximated as
``sum_k c_k exp(-2 a_k z)`` with ``sum_k c_k = 1``. Rates may be negative
(growth towards a backward pump) and amplitudes may be negative.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import least_squares

from .raman import PowerProfileSet

_logger = logging.getLogger(__name__)

__all__ = ["ExponentialFit", "normalize_profile", "fit_exponentials", "fit_profiles",
           "write_fits_csv", "MAX_TERMS"]

MAX_TERMS = 8
_DB = 10.0 / np.log(10.0)
_FIT_SAMPLES = 145


@dataclass(frozen=True, eq=False)
class ExponentialFit:
    """Fitted terms for one channel; ``length`` is the span the fit is valid over (km)."""

    amplitude: np.ndarray
    rate: np.ndarray  # 1/km, field-attenuation convention
    residual: float  # max |error| over the fitted grid, dB
    length: float

    @property
    def terms(self) -> int:
        return int(self.amplitude.size)

    def __call__(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.exp(-2.0 * np.multiply.outer(z, self.rate)) @ self.amplitude


def normalize_profile(profiles: PowerProfileSet, channel: int) -> np.ndarray:
    """``P(z)/P(0)`` for the signal with index ``channel``."""
    p = profiles.signal_power[channel]
    return p / p[0]


def _basis(z, rates):
    return np.exp(-2.0 * np.outer(z, rates))


def _amplitudes(rates, z, rho):
    """Constrained linear amplitudes minimising the relative error at fixed rates."""
    basis = _basis(z, rates)
    w = 1.0 / rho
    a = (basis[:, :-1] - basis[:, -1:]) * w[:, None]
    b = (rho - basis[:, -1]) * w
    head, *_ = np.linalg.lstsq(a, b, rcond=None)
    return np.append(head, 1.0 - head.sum()), basis


def _relative_residual(rates, z, rho):
    amps, basis = _amplitudes(rates, z, rho)
    return (basis @ amps) / rho - 1.0


def _db_residual(params, z, log_rho, k):
    amps = np.append(params[k:], 1.0 - np.sum(params[k:]))
    fit = _basis(z, params[:k]) @ amps
    return _DB * (np.log(np.maximum(fit, 1e-300)) - log_rho)


def _db_jacobian(params, z, log_rho, k):
    basis = _basis(z, params[:k])
    amps = np.append(params[k:], 1.0 - np.sum(params[k:]))
    fit = np.maximum(basis @ amps, 1e-300)
    jac = np.empty((z.size, params.size))
    jac[:, :k] = (-2.0 * z[:, None]) * basis * amps[None, :] / fit[:, None]
    jac[:, k:] = (basis[:, :-1] - basis[:, -1:]) / fit[:, None]
    return _DB * jac


def _max_db_error(rates, amps, z, log_rho) -> float:
    fit = _basis(z, rates) @ amps
    if np.any(fit <= 0):
        return np.inf
    return float(np.max(np.abs(_DB * (np.log(fit) - log_rho))))


def fit_exponentials(rho, z, terms: int = 4) -> ExponentialFit:
    """Fit ``rho(z)`` with up to ``terms`` exponentials, minimising the error in dB.

    Rates are optimised by variable projection (amplitudes solved linearly
    for each trial set of rates) and then polished jointly with the
    amplitudes on the log scale. Every term count from 1 to ``terms`` is
    tried, seeded with geometrically spaced rates, with one growing term, and
    with the previous optimum plus an extra rate. The lowest max-dB error
    wins; ties go to fewer terms, so adding terms never makes a fit worse.
    """
    rho = np.asarray(rho, dtype=float)
    z = np.asarray(z, dtype=float)
    if rho.shape != z.shape or rho.ndim != 1:
        raise ValueError("rho and z must be 1-D arrays of equal length")
    if not 1 <= terms <= MAX_TERMS:
        raise ValueError(f"number of terms must be between 1 and {MAX_TERMS}")
    if terms > z.size:
        raise ValueError(f"{terms} terms requested but only {z.size} samples")
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise ValueError("profile samples must be finite and > 0")
    if abs(rho[0] - 1.0) > 1e-9:
        raise ValueError("profile must be normalised to 1 at z = 0")

    length = float(z[-1] - z[0])
    log_rho = np.log(rho)
    a_ref = max(abs(0.5 * log_rho[-1] / length), 1e-4)
    bound = 150.0 / length  # keeps products of two terms, exp(4 a L), finite
    # optimise on a thinned grid (profiles are smooth); errors use every sample
    sub = np.unique(np.linspace(0, z.size - 1, min(z.size, _FIT_SAMPLES)).round().astype(int))
    zs, rs, ls = z[sub], rho[sub], log_rho[sub]

    best: ExponentialFit | None = None
    prev_rates: np.ndarray | None = None
    for k in range(1, terms + 1):
        starts = [a_ref * np.geomspace(0.25, 4.0, k) if k > 1 else np.array([a_ref])]
        if k > 1:
            grow = starts[0].copy()
            grow[0] = -a_ref
            starts.append(grow)
        if prev_rates is not None:
            extra = 4.0 * np.max(np.abs(prev_rates)) + a_ref
            starts.insert(0, np.append(prev_rates, extra))

        level = None
        for r0 in starts:
            sol = least_squares(_relative_residual, np.clip(r0, -0.99 * bound, 0.99 * bound),
                                args=(zs, rs), bounds=(-bound, bound), x_scale="jac",
                                xtol=1e-12, ftol=1e-14, max_nfev=200)
            amps, _ = _amplitudes(sol.x, zs, rs)
            err = _max_db_error(sol.x, amps, z, log_rho)
            if level is None or err < level[0]:
                level = (err, sol.x, amps)
        err, rates, amps = level
        prev_rates = rates

        # joint polish of rates and amplitudes on the dB scale
        x0 = np.concatenate([rates, amps[:-1]])
        lo = np.concatenate([np.full(k, -bound), np.full(k - 1, -np.inf)])
        hi = np.concatenate([np.full(k, bound), np.full(k - 1, np.inf)])
        try:
            pol = least_squares(_db_residual, x0, jac=_db_jacobian, bounds=(lo, hi),
                                args=(zs, ls, k), x_scale="jac", xtol=1e-12, ftol=1e-14,
                                max_nfev=50)
            p_amps = np.append(pol.x[k:], 1.0 - np.sum(pol.x[k:]))
            p_err = _max_db_error(pol.x[:k], p_amps, z, log_rho)
            if p_err < err:
                err, rates, amps = p_err, pol.x[:k], p_amps
        except ValueError:  # pragma: no cover - polish is optional
            pass

        if np.isfinite(err) and (best is None or err < best.residual - 1e-12):
            best = ExponentialFit(np.asarray(amps, float).copy(),
                                  np.asarray(rates, float).copy(), float(err), length)

    if best is None:
        raise ValueError("exponential fit failed to produce a positive profile")
    return best


def fit_profiles(profiles: PowerProfileSet, terms: int = 4,
                 channels=None) -> list[ExponentialFit]:
    """Fit every signal profile (or the listed channel indices)."""
    idx = range(profiles.signal_power.shape[0]) if channels is None else channels
    return [fit_exponentials(normalize_profile(profiles, i), profiles.z, terms) for i in idx]


def write_fits_csv(path, fits, channels=None) -> Path:
    """One row per (channel, term): ``channel, k, c_k, a_k, residual`` (6 significant digits)."""
    path = Path(path)
    idx = range(len(fits)) if channels is None else channels
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["channel", "k", "c_k", "a_k", "residual"])
        for ch, fit in zip(idx, fits):
            for k in range(fit.terms):
                wr.writerow([int(ch), k, f"{fit.amplitude[k]:.6g}", f"{fit.rate[k]:.6g}",
                             f"{fit.residual:.6g}"])
    return path
