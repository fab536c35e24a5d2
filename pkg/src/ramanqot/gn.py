"""Gaussian-noise model of nonlinear interference with frequency-dependent power profiles.

The NLI power spectral density at channel ``i`` is

    G(f_i) = 16/27 gamma^2 * iint G1 G2 G3 |mu(f1, f2, f_i)|^2 df1 df2,
    mu = int_0^L w(z) exp(j phi z) dz,
    phi = -4 pi^2 (f1 - f_i)(f2 - f_i) [beta2 + pi beta3 (f1 + f2)],

with ``f3 = f1 + f2 - f_i``, frequencies in ``phi`` taken relative to the
fibre's dispersion reference, and the profile weight
``w = sqrt(rho(f1) rho(f2) rho(f3) / rho(f_i))``. With a flat loss profile
``w`` reduces to ``exp(-alpha z)``, the standard GN kernel. Results are
referred to the span input.

Two evaluators are provided: :func:`nli_integral`, a direct quadrature
oracle, and :func:`nli_closed_form`, built on the multi-exponential fits of
:mod:`ramanqot.fitting`.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.special import spence

from .fitting import ExponentialFit
from .raman import PowerProfileSet
from .spectral import ChannelPlan, FibreSpec, frequency_to_wavelength

_logger = logging.getLogger(__name__)

__all__ = [
    "NliResult", "QuadratureConfig", "IslandScope", "nli_integral", "nli_closed_form",
    "AccumulationRule", "accumulate", "write_nli_csv", "KernelTable", "FitResidualError",
    "dispersion_si",
]

_PREFACTOR = 16.0 / 27.0
_TWO_PI = 2.0 * np.pi
_FOUR_PI2 = 4.0 * np.pi ** 2


class FitResidualError(ValueError):
    """A profile fit is too coarse for the closed-form evaluator."""

    def __init__(self, message: str, channels: Sequence[int]):
        super().__init__(message)
        self.channels = list(channels)


@dataclass(frozen=True, eq=False)
class NliResult:
    """Per-channel NLI power (W over each channel's symbol-rate bandwidth).

    ``index`` holds the plan indices of the channels evaluated.
    """

    index: np.ndarray
    frequency: np.ndarray
    nli: np.ndarray
    spm: np.ndarray
    xpm: np.ndarray
    method: str

    def __len__(self) -> int:
        return int(self.index.size)

    def scaled(self, factor: float) -> "NliResult":
        return NliResult(self.index, self.frequency, self.nli * factor, self.spm * factor,
                         self.xpm * factor, self.method)


def dispersion_si(fibre: FibreSpec) -> tuple[float, float, float]:
    """``(beta2 [s^2/km], beta3 [s^3/km], reference frequency [Hz])``."""
    from .spectral import beta_coefficients

    b = beta_coefficients(fibre)
    return b["beta2"] * 1e-24, b["beta3"] * 1e-36, fibre.reference_frequency


def _spectral_density(plan: ChannelPlan) -> np.ndarray:
    return plan.powers / plan.symbol_rates


# -- closed form ------------------------------------------------------------------

def _pair_terms(fits: Sequence[ExponentialFit], length: float):
    """Per-channel pair quantities of the multi-exponential kernel.

    Returns ``(amp, rate)`` of shape (n, K, K): ``amp = c_k c_k' 2 E(x_k + x_k')``
    and the effective Lorentzian rate ``2 E(x_k + x_k') / (E(x_k) E(x_k'))``,
    where ``x = 2 a`` and ``E(x) = (1 - exp(-x L)) / x``.
    """
    k_max = max(f.terms for f in fits)
    c = np.zeros((len(fits), k_max))
    x = np.zeros((len(fits), k_max))
    for n, f in enumerate(fits):
        c[n, : f.terms] = f.amplitude
        x[n, : f.terms] = 2.0 * f.rate

    def eff(y):
        small = np.abs(y * length) < 1e-8
        y_safe = np.where(small, 1.0, y)
        return np.where(small, length * (1 - 0.5 * y * length), -np.expm1(-y_safe * length) / y_safe)

    e1 = eff(x)
    e2 = eff(x[:, :, None] + x[:, None, :])
    amp = c[:, :, None] * c[:, None, :] * 2.0 * e2
    rate = 2.0 * e2 / (e1[:, :, None] * e1[:, None, :])
    return amp, rate


def _li2(z):
    return spence(1.0 - z)


def _atan_primitive(ta, tb, alpha, beta, c):
    """``int_ta^tb atan(c t (alpha t + beta)) / t dt`` for ``0 <= ta <= tb``.

    Writing ``atan(y) = Im log(1 + j y)`` and factoring the quadratic
    ``1 + j c t (alpha t + beta)`` over its (never real) roots gives a sum of
    dilogarithms. The quadratic has unit real part, so the principal
    logarithms of its factors never wrap along ``t >= 0``. Arrays broadcast;
    ``alpha`` must be 0 or +-1.
    """
    ta, tb, alpha, beta, c = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                                  for v in (ta, tb, alpha, beta, c)))
    out = np.zeros(ta.shape)
    lin = alpha == 0
    if np.any(lin):
        cb = c[lin] * beta[lin]
        out[lin] = np.imag(_li2(1j * cb * tb[lin]) - _li2(1j * cb * ta[lin]))
    quad = ~lin
    if np.any(quad):
        a2 = 1j * c[quad] * alpha[quad]
        b1 = 1j * c[quad] * beta[quad]
        disc = np.sqrt(b1 * b1 - 4.0 * a2)
        sgn = np.where(np.real(np.conj(b1) * disc) >= 0, 1.0, -1.0)
        q = -0.5 * (b1 + sgn * disc)
        r1, r2 = q / a2, 1.0 / q
        lo, hi = ta[quad], tb[quad]
        out[quad] = np.imag(_li2(lo / r1) + _li2(lo / r2) - _li2(hi / r1) - _li2(hi / r2))
    return out


def _polygon_lorentz(u0, u1, v0, v1, s0, s1, k, x):
    """``iint rate / (rate^2 + (k u v)^2) du dv`` over islands, exactly.

    Each island is ``u in [u0,u1]``, ``v in [v0,v1]``, ``u+v in [s0,s1]``.
    Geometry and ``k`` have shape (N,); ``x`` (the Lorentzian rates) has
    shape (N, M). Returns (N, M).
    """
    geo = [np.asarray(g, dtype=float)[:, None] for g in (u0, u1, v0, v1, s0, s1, k)]
    u0, u1, v0, v1, s0, s1, k = geo
    c = k / x
    cuts = np.concatenate([u0, u1, s0 - v0, s0 - v1, s1 - v0, s1 - v1,
                           np.zeros_like(u0)], axis=1)
    cuts = np.sort(np.clip(cuts, u0, u1), axis=1)
    total = np.zeros(x.shape)
    area = np.zeros(u0.shape)
    for p in range(cuts.shape[1] - 1):
        ua, ub = cuts[:, p:p + 1], cuts[:, p + 1:p + 2]
        um = 0.5 * (ua + ub)
        lo_const = v0 >= s0 - um
        hi_const = v1 <= s1 - um
        a_lo, b_lo = np.where(lo_const, 0.0, -1.0), np.where(lo_const, v0, s0)
        a_hi, b_hi = np.where(hi_const, 0.0, -1.0), np.where(hi_const, v1, s1)
        live = (ub > ua) & (a_hi * um + b_hi > a_lo * um + b_lo)
        # fold u < 0 onto t = -u >= 0
        neg = um < 0
        ta, tb = np.where(neg, -ub, ua), np.where(neg, -ua, ub)
        flip = np.where(neg, -1.0, 1.0)
        val = (_atan_primitive(ta, tb, flip * a_hi, b_hi, c)
               - _atan_primitive(ta, tb, flip * a_lo, b_lo, c))
        total += np.where(live, val, 0.0)
        # area for the dispersion-free limit
        da = 0.5 * (a_hi - a_lo) * (ub ** 2 - ua ** 2) + (b_hi - b_lo) * (ub - ua)
        area += np.where(live, da, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = total / k
    weak = (c * np.maximum(np.abs(u0), np.abs(u1)) * np.maximum(np.abs(v0), np.abs(v1))) < 1e-6
    return np.where(weak, area / x, exact)


def _strip_lorentz(u0, u1, v0, v1, s0, s1, k, x):
    """Far-island version of :func:`_polygon_lorentz`.

    The kernel is evaluated at a fixed ``|u|`` (the harmonic mean over the
    island's u extent), leaving the exact piecewise-linear u length of the
    island at each ``v`` integrated against the Lorentzian in closed form.
    """
    geo = [np.asarray(g, dtype=float)[:, None] for g in (u0, u1, v0, v1, s0, s1, k)]
    u0, u1, v0, v1, s0, s1, k = geo
    ua = np.maximum(u0, s0 - v1)
    ub = np.minimum(u1, s1 - v0)
    lo_abs, hi_abs = np.minimum(np.abs(ua), np.abs(ub)), np.maximum(np.abs(ua), np.abs(ub))
    with np.errstate(divide="ignore", invalid="ignore"):
        u_eff = np.where(hi_abs > lo_abs * (1 + 1e-9),
                         (hi_abs - lo_abs) / np.log(hi_abs / lo_abs), hi_abs)
    p = k * u_eff  # phi = p v

    def length(v):
        return np.maximum(np.minimum(u1, s1 - v) - np.maximum(u0, s0 - v), 0.0)

    cuts = np.concatenate([v0, v1, s0 - u0, s0 - u1, s1 - u0, s1 - u1, np.zeros_like(v0)], axis=1)
    cuts = np.sort(np.clip(cuts, v0, v1), axis=1)
    total = np.zeros(x.shape)
    for q in range(cuts.shape[1] - 1):
        va, vb = cuts[:, q:q + 1], cuts[:, q + 1:q + 2]
        width = vb - va
        la, lb = length(va), length(vb)
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(width > 0, (lb - la) / width, 0.0)
        inter = la - slope * va
        # int (inter + slope v) x / (x^2 + p^2 v^2) dv over [va, vb]
        small = p * np.maximum(np.abs(va), np.abs(vb)) < 1e-6 * x
        ps = np.where(small, 1.0, p)
        t1 = inter / ps * (np.arctan(ps * vb / x) - np.arctan(ps * va / x))
        t2 = slope * x / ps ** 2 * (np.log(np.hypot(x, ps * vb)) - np.log(np.hypot(x, ps * va)))
        t_small = (inter * width + 0.5 * slope * (vb ** 2 - va ** 2)) / x
        total += np.where(width > 0, np.where(small, t_small, t1 + t2), 0.0)
    return total


def _axis_islands(plan: ChannelPlan, i: int):
    """Channel triples (a, i, c) with the COI on the v axis, and their multiplicity."""
    f = plan.frequencies
    b = plan.symbol_rates
    lo_edge, hi_edge = f - 0.5 * b, f + 0.5 * b
    a_all = np.arange(len(plan))
    f3_lo = lo_edge + lo_edge[i] - f[i]
    f3_hi = hi_edge + hi_edge[i] - f[i]
    c_lo = np.searchsorted(hi_edge, f3_lo, side="right")
    c_hi = np.searchsorted(lo_edge, f3_hi, side="left")
    width = int(np.max(c_hi - c_lo)) if len(plan) else 0
    aa = np.repeat(a_all, width)
    cc = (c_lo[:, None] + np.arange(width)[None, :]).ravel()
    keep = cc < np.repeat(c_hi, width)
    aa, cc = aa[keep], cc[keep]
    mult = np.where(aa == i, 1.0, 2.0)
    return aa, cc, mult


def nli_closed_form(fibre: FibreSpec, plan: ChannelPlan, fits: Sequence[ExponentialFit],
                    gate_db: float = 0.5, channels: Optional[Sequence[int]] = None,
                    exact_neighbours: int = 4) -> NliResult:
    """Closed-form NLI from multi-exponential profile fits.

    Each pair of fit terms ``(k, k')`` turns ``|mu|^2`` into a Lorentzian in
    ``phi`` with the exact peak value and the exact area. Per island
    ``phi`` is taken as ``k u v`` with the dispersion slope frozen at the
    island centre, and the Lorentzian is integrated over the island polygon
    analytically: with dilogarithms for islands whose f1 channel lies within
    ``exact_neighbours`` channels of the COI (including the SPM hexagon),
    and with arctangent/logarithm terms beyond that. Islands with neither f1
    nor f2 in the COI are left out. Each island uses the fit of its f1
    channel.

    Raises
    ------
    FitResidualError
        if any fit's max residual exceeds ``gate_db``.
    """
    n = len(plan)
    if len(fits) != n:
        raise ValueError(f"{len(fits)} profile fits given for {n} channels")
    bad = [i for i, f in enumerate(fits) if f.residual > gate_db]
    if bad:
        raise FitResidualError(
            f"profile fit residual above {gate_db} dB for channel(s) {bad}", bad)
    length = fits[0].length
    if any(abs(f.length - length) > 1e-9 * length for f in fits):
        raise ValueError("all fits must cover the same span length")
    if abs(length - fibre.length) > 1e-6 * fibre.length:
        raise ValueError(f"fits cover {length} km but the fibre is {fibre.length} km")

    beta2, beta3, f_ref = dispersion_si(fibre)
    f = plan.frequencies
    b = plan.symbol_rates
    g = _spectral_density(plan)
    lo_edge, hi_edge = f - 0.5 * b, f + 0.5 * b
    amp, rate = _pair_terms(fits, length)
    kk = amp.shape[1] ** 2
    amp = amp.reshape(n, kk)
    rate = rate.reshape(n, kk)
    idx = np.arange(n) if channels is None else np.asarray(channels, dtype=int)

    spm = np.zeros(idx.size)
    xpm = np.zeros(idx.size)
    for out, i in enumerate(idx):
        aa, cc, mult = _axis_islands(plan, i)
        u0, u1 = lo_edge[aa] - f[i], hi_edge[aa] - f[i]
        v0 = np.full(aa.size, lo_edge[i] - f[i])
        v1 = np.full(aa.size, hi_edge[i] - f[i])
        s0, s1 = lo_edge[cc] - f[i], hi_edge[cc] - f[i]
        centre = 2 * (f[i] - f_ref) + 0.5 * (u0 + u1)
        k = _FOUR_PI2 * np.abs(beta2 + np.pi * beta3 * centre)
        near = np.abs(aa - i) <= exact_neighbours
        lor = np.empty((aa.size, kk))
        if np.any(near):
            sel = near
            lor[sel] = _polygon_lorentz(u0[sel], u1[sel], v0[sel], v1[sel], s0[sel], s1[sel],
                                        k[sel], rate[aa[sel]])
        if np.any(~near):
            sel = ~near
            lor[sel] = _strip_lorentz(u0[sel], u1[sel], v0[sel], v1[sel], s0[sel], s1[sel],
                                      k[sel], rate[aa[sel]])
        contrib = mult * g[aa] * g[i] * g[cc] * np.sum(amp[aa] * lor, axis=1)
        is_spm = (aa == i) & (cc == i)
        spm[out] = contrib[is_spm].sum()
        xpm[out] = contrib[~is_spm].sum()

    scale = _PREFACTOR * fibre.gamma ** 2 * b[idx]
    return NliResult(idx, f[idx], scale * (spm + xpm), scale * spm, scale * xpm,
                     "closed-form")


# -- quadrature oracle --------------------------------------------------------------

class KernelTable:
    """``mu(phi)`` for a weight sampled on a uniform z grid.

    ``w`` is taken as piecewise linear between samples, so ``mu`` is an exact
    Filon sum. The trigonometric sum inside it is tabulated once by an
    oversampled FFT and read back with 8-point Lagrange interpolation.
    """

    _OFFSETS = np.arange(-3, 5)
    # barycentric denominators prod_{k != m} (m - k) for the offsets above
    _DENOM = np.array([np.prod([m - k for k in range(-3, 5) if k != m]) for m in range(-3, 5)],
                      dtype=float)

    def __init__(self, w: np.ndarray, step: float, oversampling: int = 8):
        w = np.asarray(w, dtype=float)
        if w.ndim != 1 or w.size < 2:
            raise ValueError("kernel weight needs at least two samples")
        self.h = float(step)
        self.length = self.h * (w.size - 1)
        self.w0, self.wn = float(w[0]), float(w[-1])
        self.size = int(oversampling) * w.size
        table = np.fft.ifft(w, self.size) * self.size  # sum_n w_n e^{+j 2 pi m n / N}
        # pad periodically so interpolation stencils never wrap
        self.table = np.concatenate([table[-3:], table, table[:5]])

    def _trig_sum(self, theta):
        t = np.mod(theta * (self.size / _TWO_PI), self.size)
        i0 = np.floor(t).astype(np.int64)
        s = t - i0
        s = np.where(s == 0.0, 1e-14, s)  # keep the barycentric form finite at nodes
        full = np.ones_like(s)
        for k in self._OFFSETS:
            full *= s - k
        out = np.zeros(theta.shape, dtype=complex)
        for m, den in zip(self._OFFSETS, self._DENOM):
            out += (full / ((s - m) * den)) * self.table[i0 + (m + 3)]
        return out

    @staticmethod
    def _odd_edge(theta):
        """``(theta - sin theta) / theta^2`` with a series near zero."""
        small = np.abs(theta) < 0.05
        ts = np.where(small, 1.0, theta)
        full = (ts - np.sin(ts)) / (ts * ts)
        t2 = theta * theta
        ser = theta * (1.0 / 6 - t2 * (1.0 / 120 - t2 / 5040))
        return np.where(small, ser, full)

    def mu(self, phi) -> np.ndarray:
        # interior hats carry h sinc^2(theta/2) e^{j phi z_n}; the two half hats at the
        # ends carry h (1 -+ j theta - e^{-+j theta}) / theta^2, whose real part is
        # h sinc^2(theta/2) / 2
        phi = np.asarray(phi, dtype=float)
        theta = phi * self.h
        sinc2 = np.sinc(theta / _TWO_PI) ** 2
        e_l = np.exp(1j * phi * self.length)
        ends = self.w0 + self.wn * e_l
        odd = 1j * self._odd_edge(theta) * (self.w0 - self.wn * e_l)
        return self.h * (sinc2 * (self._trig_sum(theta) - 0.5 * ends) + odd)

    def power(self, phi) -> np.ndarray:
        m = self.mu(phi)
        return m.real ** 2 + m.imag ** 2


class IslandScope(str, enum.Enum):
    """``all`` integrates every channel triple; ``axes`` keeps islands with f1 or f2 in the COI."""

    ALL = "all"
    AXES = "axes"


@dataclass(frozen=True)
class QuadratureConfig:
    """Controls for :func:`nli_integral`.

    ``nodes`` Gauss-Legendre nodes are used on every panel in both
    dimensions. Panels are graded towards the singular lines ``f1 = f_i``
    and ``f2 = f_i`` and sized to resolve the first ``oscillation_periods``
    periods of the kernel. Islands away from both axes get uniform panels of
    one oscillation period, at most ``max_panels`` per dimension; their
    oscillating part is damped by the span loss, so a coarse cap suffices.
    """

    nodes: int = 16
    scope: IslandScope = IslandScope.ALL
    oversampling: int = 8
    oscillation_periods: int = 10
    max_panels: int = 16

    def __post_init__(self):
        if self.nodes < 4:
            raise ValueError(f"quadrature needs at least 4 nodes per panel, got {self.nodes}")
        object.__setattr__(self, "scope", IslandScope(self.scope))
        if self.oversampling < 4:
            raise ValueError("kernel oversampling must be >= 4")
        if self.oscillation_periods < 1 or self.max_panels < 1:
            raise ValueError("oscillation_periods and max_panels must be >= 1")


def _graded_breaks(lo, hi, scale, periods):
    """Breakpoints in (lo, hi) clustered around 0 on the length ``scale``."""
    ext = max(hi, -lo)
    if not np.isfinite(scale) or scale >= ext:
        return np.array([0.0]) if lo < 0 < hi else np.empty(0)
    d = []
    x = 0.25 * scale
    period = _TWO_PI * scale
    while x < min(period, ext):
        d.append(x)
        x *= 2.0
    x = period
    while x < periods * period and x < ext:
        d.append(x)
        x += period
    while x < ext:
        d.append(x)
        x *= 2.0
    d = np.asarray(d)
    pts = np.concatenate([-d[::-1], [0.0], d])
    return pts[(pts > lo) & (pts < hi)]


def _uniform_breaks(lo, hi, period, max_panels):
    if not np.isfinite(period) or period <= 0:
        return np.empty(0)
    count = int(min(max_panels, np.ceil((hi - lo) / period)))
    return np.linspace(lo, hi, count + 1)[1:-1] if count > 1 else np.empty(0)


def _panel_nodes(edges, x_gl, w_gl):
    """Gauss-Legendre nodes/weights on panels ``edges[..., k] .. edges[..., k+1]``."""
    half = 0.5 * (edges[..., 1:] - edges[..., :-1])
    mid = 0.5 * (edges[..., 1:] + edges[..., :-1])
    nodes = mid[..., None] + half[..., None] * x_gl
    weights = half[..., None] * w_gl
    return nodes, weights


class _Island:
    """Integration of ``|mu|^2`` over ``u in [u0,u1]``, ``v in [v0,v1]``, ``u+v in [s0,s1]``."""

    def __init__(self, u, v, s, sing_u, sing_v, beta, fcoi, length, cfg, x_gl, w_gl):
        self.u, self.v, self.s = u, v, s
        beta2, beta3 = beta
        corners_b = [abs(beta2 + np.pi * beta3 * (2 * fcoi + uu + vv)) for uu in u for vv in v]
        b_max = max(corners_b)
        u_max = max(abs(u[0]), abs(u[1]))
        v_max = max(abs(v[0]), abs(v[1]))
        rate = _FOUR_PI2 * b_max * length  # phi L per Hz^2

        def scale(extent):
            return 1.0 / (rate * extent) if rate * extent > 0 else np.inf

        s_v = scale(u_max)  # oscillation length in v (over 2 pi)
        s_u = scale(v_max)
        periods = cfg.oscillation_periods

        if sing_v:
            self.v_breaks = _graded_breaks(v[0], v[1], s_v, periods)
            v_sig = min(v_max, periods * _TWO_PI * s_v)  # where the v integrand matters
        else:
            self.v_breaks = _uniform_breaks(v[0], v[1], _TWO_PI * s_v, cfg.max_panels)
            v_sig = v_max
        kinks = [s[0] - v[0], s[0] - v[1], s[1] - v[0], s[1] - v[1]]
        if sing_u:
            extra = _graded_breaks(u[0], u[1], s_u, periods)
        else:
            extra = _uniform_breaks(u[0], u[1], _TWO_PI * scale(v_sig), cfg.max_panels)
        pts = np.concatenate([[u[0]], [k for k in kinks if u[0] < k < u[1]], extra, [u[1]]])
        self.u_edges = np.unique(pts)
        self.x_gl, self.w_gl = x_gl, w_gl
        self.beta = beta
        self.fcoi = fcoi

    def integrate(self, kernel: KernelTable) -> float:
        uu, wu = _panel_nodes(self.u_edges, self.x_gl, self.w_gl)
        uu, wu = uu.ravel(), wu.ravel()
        lo = np.maximum(self.v[0], self.s[0] - uu)
        hi = np.maximum(np.minimum(self.v[1], self.s[1] - uu), lo)
        inner = np.clip(self.v_breaks[None, :], lo[:, None], hi[:, None])
        edges = np.concatenate([lo[:, None], inner, hi[:, None]], axis=1)
        vv, wv = _panel_nodes(edges, self.x_gl, self.w_gl)
        beta2, beta3 = self.beta
        u3 = uu[:, None, None]
        phi = -_FOUR_PI2 * u3 * vv * (beta2 + np.pi * beta3 * (2 * self.fcoi + u3 + vv))
        val = kernel.power(phi)
        return float(np.sum(wu * np.sum(val * wv, axis=(1, 2))))


def _channel_rho(profiles: PowerProfileSet) -> np.ndarray:
    p = profiles.signal_power
    return p / p[:, :1]


def nli_integral(fibre: FibreSpec, profiles: PowerProfileSet, plan: ChannelPlan,
                 config: QuadratureConfig = QuadratureConfig(),
                 channels: Optional[Sequence[int]] = None) -> NliResult:
    """Direct quadrature of the GN integral with per-channel power profiles.

    The (f1, f2) plane is split into islands, one per channel triple
    (channel of f1, channel of f2, channel of f3); within an island the
    weight ``w(z)`` is fixed, so ``|mu|^2`` is read from one kernel table.
    Islands are symmetric under swapping f1 and f2, so only one of each
    mirror pair is integrated.
    """
    n = len(plan)
    f_prof = profiles.signal_frequency
    if f_prof.shape != (n,) or not np.allclose(f_prof, plan.frequencies, rtol=0, atol=1.0):
        raise ValueError("power profiles were solved for a different channel plan")
    dz = np.diff(profiles.z)
    if not np.allclose(dz, dz[0], rtol=1e-9, atol=0):
        raise ValueError("the quadrature oracle needs a uniform z grid")
    length = float(profiles.z[-1] - profiles.z[0])
    if abs(length - fibre.length) > 1e-6 * fibre.length:
        raise ValueError(f"profiles cover {length} km but the fibre is {fibre.length} km")

    beta2, beta3, f_ref = dispersion_si(fibre)
    f = plan.frequencies
    b = plan.symbol_rates
    g = _spectral_density(plan)
    lo_edge, hi_edge = f - 0.5 * b, f + 0.5 * b
    rho = _channel_rho(profiles)
    log_rho = np.log(rho)
    x_gl, w_gl = np.polynomial.legendre.leggauss(config.nodes)
    step = float(dz[0])

    @lru_cache(maxsize=256)
    def table(key: tuple) -> KernelTable:
        num, den = key
        w = np.exp(0.5 * (sum(log_rho[c] for c in num) - sum(log_rho[c] for c in den)))
        return KernelTable(w, step, config.oversampling)

    def kernel_key(a, bb, c, i):
        num = [a, bb, c]
        if i in num:
            num.remove(i)
            return tuple(sorted(num)), ()
        return tuple(sorted(num)), (i,)

    idx = np.arange(n) if channels is None else np.asarray(channels, dtype=int)
    spm = np.zeros(idx.size)
    xpm = np.zeros(idx.size)
    for out, i in enumerate(idx):
        fcoi = f[i] - f_ref
        if config.scope == IslandScope.AXES:
            pairs = [(a, i) for a in range(n)]
        else:
            pairs = [(a, bb) for a in range(n) for bb in range(a, n)]
        for a, bb in pairs:
            if a == i and bb != i:
                a, bb = bb, a  # keep the COI on the inner (v) axis
            mult = 1.0 if a == bb else 2.0
            f3_lo = lo_edge[a] + lo_edge[bb] - f[i]
            f3_hi = hi_edge[a] + hi_edge[bb] - f[i]
            c_lo = np.searchsorted(hi_edge, f3_lo, side="right")
            c_hi = np.searchsorted(lo_edge, f3_hi, side="left")
            for c in range(c_lo, c_hi):
                s0 = max(lo_edge[c], f3_lo) - f[i]
                s1 = min(hi_edge[c], f3_hi) - f[i]
                if s1 <= s0:
                    continue
                isl = _Island((lo_edge[a] - f[i], hi_edge[a] - f[i]),
                              (lo_edge[bb] - f[i], hi_edge[bb] - f[i]),
                              (lo_edge[c] - f[i], hi_edge[c] - f[i]),
                              a == i, bb == i, (beta2, beta3), fcoi, length, config,
                              x_gl, w_gl)
                val = mult * g[a] * g[bb] * g[c] * isl.integrate(table(kernel_key(a, bb, c, i)))
                if a == bb == c == i:
                    spm[out] += val
                else:
                    xpm[out] += val
        _logger.debug("nli_integral: channel %d done", i)

    scale = _PREFACTOR * fibre.gamma ** 2 * b[idx]
    return NliResult(idx, f[idx], scale * (spm + xpm), scale * spm, scale * xpm, "integral")


# -- accumulation and export ----------------------------------------------------------

class AccumulationRule(str, enum.Enum):
    """``incoherent``: N times one span; ``per_span``: sum of individual span results."""

    INCOHERENT = "incoherent"
    PER_SPAN = "per_span"


def accumulate(results, rule: AccumulationRule = AccumulationRule.INCOHERENT,
               span_count: int = 1) -> NliResult:
    """Combine span NLI results at the link output.

    ``results`` is one :class:`NliResult` for the incoherent rule (scaled by
    ``span_count``) or a sequence of per-span results, each already referred
    to the same reference point, for the per-span rule.
    """
    rule = AccumulationRule(rule)
    if rule == AccumulationRule.INCOHERENT:
        if not isinstance(results, NliResult):
            raise TypeError("incoherent accumulation takes a single span result")
        if span_count < 1:
            raise ValueError("span_count must be >= 1")
        return results.scaled(float(span_count))
    results = list(results)
    if not results:
        raise ValueError("per-span accumulation needs at least one span result")
    first = results[0]
    for r in results[1:]:
        if not np.array_equal(r.index, first.index):
            raise ValueError("per-span results cover different channels")
    return NliResult(first.index, first.frequency, sum(r.nli for r in results),
                     sum(r.spm for r in results), sum(r.xpm for r in results), first.method)


def write_nli_csv(path, result: NliResult) -> Path:
    """Write one row per channel; floats carry six significant digits."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["channel", "frequency_hz", "wavelength_nm", "spm_w", "xpm_w", "nli_w",
                     "method"])
        for k in range(len(result)):
            wr.writerow([int(result.index[k]), f"{result.frequency[k]:.6g}",
                         f"{frequency_to_wavelength(result.frequency[k]):.6g}",
                         f"{result.spm[k]:.6g}", f"{result.xpm[k]:.6g}", f"{result.nli[k]:.6g}",
                         result.method])
    return path
