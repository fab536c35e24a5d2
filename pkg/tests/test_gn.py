import math

import numpy as np
import pytest

from conftest import flat_fibre
from ramanqot.fitting import fit_profiles
from ramanqot.gn import (AccumulationRule, FitResidualError, IslandScope, NliResult,
                         QuadratureConfig, accumulate, dispersion_si, nli_closed_form,
                         nli_integral, write_nli_csv)
from ramanqot.raman import RamanSolverConfig, solve_power_evolution
from ramanqot.spectral import Channel, ChannelPlan, linear_to_db, uniform_plan

C_NM_PS = 299792.458
NO_ISRS = RamanSolverConfig(include_isrs=False)


def _d_for_beta2(beta2_ps2_km, lam=1550.0):
    """Dispersion parameter (ps/nm/km) giving ``beta2`` at ``lam``."""
    return -beta2_ps2_km * 2 * math.pi * C_NM_PS / lam ** 2


def _flat_case(plan, **fibre_kw):
    fibre = flat_fibre(**fibre_kw)
    prof = solve_power_evolution(fibre, plan, cfg=NO_ISRS)
    return fibre, prof


def _riemann_single_channel(fibre, power, baud, f_centre, n):
    """Brute-force midpoint sum of the GN double integral for one channel.

    Uses the analytic flat-loss kernel, independent of the package's
    kernel tables and panel quadrature.
    """
    beta2, beta3, f_ref = dispersion_si(fibre)
    alpha = fibre.alpha(f_centre)
    length = fibre.length
    h = baud / n
    x = -0.5 * baud + h * (np.arange(n) + 0.5)
    f1, f2 = np.meshgrid(x, x, indexing="ij")
    inside = np.abs(f1 + f2) <= 0.5 * baud
    phi = -4 * np.pi ** 2 * f1 * f2 * (beta2 + np.pi * beta3 * (f1 + f2 + 2 * (f_centre - f_ref)))
    s = -alpha + 1j * phi
    mu = np.expm1(s * length) / s
    g = power / baud
    psd = 16 / 27 * fibre.gamma ** 2 * g ** 3 * np.sum(np.abs(mu) ** 2 * inside) * h * h
    return psd * baud


# -- integral oracle ----------------------------------------------------------------------

def test_single_channel_matches_brute_force():
    plan = uniform_plan(193.4e12, 1, 50e9, 32e9, 1e-3)
    fibre, prof = _flat_case(plan, dispersion=16.5, dispersion_slope=0.09)
    got = nli_integral(fibre, prof, plan).nli[0]
    coarse = _riemann_single_channel(fibre, 1e-3, 32e9, 193.4e12, 600)
    fine = _riemann_single_channel(fibre, 1e-3, 32e9, 193.4e12, 1200)
    assert abs(fine / coarse - 1) < 0.02  # the brute force itself has converged
    assert got == pytest.approx(fine, rel=0.02)


def test_gamma_zero_gives_zero(plan3):
    fibre, prof = _flat_case(plan3, gamma=0.0)
    assert np.all(nli_integral(fibre, prof, plan3).nli == 0.0)
    assert np.all(nli_closed_form(fibre, plan3, fit_profiles(prof, 1)).nli == 0.0)


def test_cubic_power_scaling(plan3):
    fibre, prof = _flat_case(plan3)
    fits = fit_profiles(prof, 1)
    doubled = plan3.with_powers(2 * plan3.powers)
    a = nli_integral(fibre, prof, plan3).nli
    b = nli_integral(fibre, prof, doubled).nli
    np.testing.assert_allclose(b / a, 8.0, rtol=1e-3)
    a = nli_closed_form(fibre, plan3, fits).nli
    b = nli_closed_form(fibre, doubled, fits).nli
    np.testing.assert_allclose(b / a, 8.0, rtol=1e-3)


def test_cubic_scaling_with_solved_profiles(plan3):
    # without ISRS the solved profiles do not depend on power, so the whole chain is cubic
    fibre = flat_fibre()
    doubled = plan3.with_powers(2 * plan3.powers)
    a = nli_integral(fibre, solve_power_evolution(fibre, plan3, cfg=NO_ISRS), plan3).nli
    b = nli_integral(fibre, solve_power_evolution(fibre, doubled, cfg=NO_ISRS), doubled).nli
    np.testing.assert_allclose(b / a, 8.0, rtol=1e-3)


def test_mirror_symmetry():
    offsets = np.array([0.0, 40e9, 75e9, 110e9, 150e9])
    powers = np.array([1.0, 2.0, 0.5, 1.5, 0.8]) * 1e-3
    rates = np.array([32e9, 32e9, 28e9, 32e9, 30e9])
    fc = 193.4e12
    plan_a = ChannelPlan(tuple(Channel(fc - 75e9 + o, r, p)
                               for o, r, p in zip(offsets, rates, powers)))
    mirrored = fc + 75e9 - offsets  # reflection about the plan centre fc
    plan_b = ChannelPlan(tuple(Channel(f, r, p) for f, r, p in
                               zip(mirrored[::-1], rates[::-1], powers[::-1])))
    # beta3 vanishes for S = -2 D / lambda
    fibre = flat_fibre(dispersion=16.5, dispersion_slope=-2 * 16.5 / 1550.0,
                       reference_wavelength=1550.0)
    assert abs(dispersion_si(fibre)[1]) < 1e-60
    a = nli_integral(fibre, solve_power_evolution(fibre, plan_a, cfg=NO_ISRS), plan_a).nli
    b = nli_integral(fibre, solve_power_evolution(fibre, plan_b, cfg=NO_ISRS), plan_b).nli
    np.testing.assert_allclose(b[::-1], a, rtol=1e-6)


@pytest.mark.parametrize("method", ["integral", "closed-form"])
def test_nli_non_increasing_in_dispersion(plan3, method):
    out = []
    for beta2 in (-5.0, -10.0, -21.0):
        fibre, prof = _flat_case(plan3, dispersion=_d_for_beta2(beta2), dispersion_slope=0.0)
        if method == "integral":
            out.append(nli_integral(fibre, prof, plan3).nli)
        else:
            out.append(nli_closed_form(fibre, plan3, fit_profiles(prof, 1)).nli)
    assert np.all(out[1] <= out[0]) and np.all(out[2] <= out[1])


def test_d_for_beta2_round_trip():
    from ramanqot.spectral import beta_coefficients

    fibre = flat_fibre(dispersion=_d_for_beta2(-10.0), reference_wavelength=1550.0)
    assert beta_coefficients(fibre)["beta2"] == pytest.approx(-10.0, rel=1e-12)


def test_quadrature_refuses_fewer_than_four_nodes():
    with pytest.raises(ValueError, match="at least 4"):
        QuadratureConfig(nodes=3)


def test_integral_decomposition_adds_up(plan3):
    fibre, prof = _flat_case(plan3)
    res = nli_integral(fibre, prof, plan3)
    np.testing.assert_allclose(res.spm + res.xpm, res.nli, rtol=1e-12)
    assert np.all(res.xpm > 0) and np.all(res.spm > 0)
    assert res.method == "integral"


def test_axes_scope_is_a_close_subset(plan3):
    fibre, prof = _flat_case(plan3)
    full = nli_integral(fibre, prof, plan3).nli
    axes = nli_integral(fibre, prof, plan3, QuadratureConfig(scope=IslandScope.AXES)).nli
    assert np.all(axes <= full * (1 + 1e-12))
    assert np.all(axes > 0.9 * full)


# -- closed form ----------------------------------------------------------------------------

def _agreement_db(n, quadrature=QuadratureConfig()):
    plan = uniform_plan(193.4e12 - 32.5e9 * (n // 2), n, 32.5e9, 32e9, 1e-3)
    fibre, prof = _flat_case(plan)
    fits = fit_profiles(prof, 1)
    assert all(f.terms == 1 and f.residual < 1e-8 for f in fits)
    ref = nli_integral(fibre, prof, plan, quadrature).nli
    cf = nli_closed_form(fibre, plan, fits).nli
    return linear_to_db(cf / ref)


@pytest.mark.parametrize("n", [3, 7])
def test_closed_form_matches_oracle_flat_loss(n):
    assert np.max(np.abs(_agreement_db(n))) < 0.5


def test_coarse_panel_cap_is_converged():
    plan = uniform_plan(193.4e12 - 32.5e9 * 10, 21, 32.5e9, 32e9, 1e-3)
    fibre, prof = _flat_case(plan)
    ref = nli_integral(fibre, prof, plan, channels=[10]).nli
    coarse = nli_integral(fibre, prof, plan, QuadratureConfig(max_panels=8), channels=[10]).nli
    assert coarse[0] == pytest.approx(ref[0], rel=1e-6)


@pytest.mark.slow
def test_closed_form_matches_oracle_flat_loss_21_channels():
    # panel cap of 8 is checked against the default by test_coarse_panel_cap_is_converged
    assert np.max(np.abs(_agreement_db(21, QuadratureConfig(max_panels=8)))) < 0.5


def test_closed_form_decomposition_adds_up(plan3):
    fibre, prof = _flat_case(plan3)
    res = nli_closed_form(fibre, plan3, fit_profiles(prof, 1))
    np.testing.assert_allclose(res.spm + res.xpm, res.nli, rtol=1e-9)
    assert res.method == "closed-form"
    assert np.all(res.nli >= 0)


def test_closed_form_gate_names_channels(plan3):
    fibre, prof = _flat_case(plan3)
    fits = fit_profiles(prof, 1)
    with pytest.raises(FitResidualError) as info:
        nli_closed_form(fibre, plan3, fits, gate_db=-1.0)
    assert info.value.channels == [0, 1, 2]


def test_closed_form_rejects_wrong_span_length(plan3):
    fibre, prof = _flat_case(plan3)
    with pytest.raises(ValueError, match="km"):
        nli_closed_form(flat_fibre(length=80.0), plan3, fit_profiles(prof, 1))


def test_channel_subset_matches_full_run(plan3):
    fibre, prof = _flat_case(plan3)
    fits = fit_profiles(prof, 1)
    full = nli_closed_form(fibre, plan3, fits)
    part = nli_closed_form(fibre, plan3, fits, channels=[2])
    assert part.index.tolist() == [2]
    assert part.nli[0] == pytest.approx(full.nli[2], rel=1e-12)


def test_shipped_nli_snr_minimum_near_1505(shipped_span, shipped_closed_form):
    plan = shipped_span["plan"]
    snr_nli = linear_to_db(plan.powers / shipped_closed_form.nli)
    s_band = np.flatnonzero(plan.wavelengths < 1525.0)
    k = s_band[np.argmin(snr_nli[s_band])]
    assert k == int(np.argmin(np.abs(plan.wavelengths - 1505.0)))


# -- accumulation and export ------------------------------------------------------------------

def _result(values):
    v = np.asarray(values, dtype=float)
    idx = np.arange(v.size)
    return NliResult(idx, 193e12 + 50e9 * idx, v, 0.25 * v, 0.75 * v, "closed-form")


def test_accumulate_identity_and_fifteen_spans():
    r = _result([1e-6, 2e-6, 3e-6])
    assert np.array_equal(accumulate(r, span_count=1).nli, r.nli)
    r15 = accumulate(r, AccumulationRule.INCOHERENT, 15)
    assert np.array_equal(r15.nli, 15 * r.nli)
    np.testing.assert_allclose(linear_to_db(r15.nli / r.nli), 11.7609, atol=1e-4)


def test_accumulate_snr_ratio_law():
    r = _result([1e-6, 2e-6])
    signal = np.array([1e-3, 1e-3])
    snr5 = linear_to_db(signal / accumulate(r, span_count=5).nli)
    snr15 = linear_to_db(signal / accumulate(r, span_count=15).nli)
    np.testing.assert_allclose(snr5 - snr15, 10 * np.log10(3), atol=1e-12)


def test_accumulate_per_span_sum():
    a, b = _result([1.0, 2.0]), _result([3.0, 5.0])
    s = accumulate([a, b], "per_span")
    assert s.nli.tolist() == [4.0, 7.0]
    with pytest.raises(ValueError):
        accumulate([], "per_span")
    with pytest.raises(ValueError):
        accumulate(a, span_count=0)


def test_nli_csv(tmp_path):
    path = write_nli_csv(tmp_path / "nli.csv", _result([1.234567e-7, 2e-7]))
    lines = path.read_text().splitlines()
    assert lines[0] == "channel,frequency_hz,wavelength_nm,spm_w,xpm_w,nli_w,method"
    assert lines[1].split(",")[5] == "1.23457e-07"
    assert lines[1].endswith("closed-form")
