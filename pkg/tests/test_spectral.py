import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chaincert.errors import FitDomainError, InputError
from chaincert.matrix_core import gauged_svd
from chaincert.spectral import (cartan_tv_bound, effective_rank, fit_layer, fit_power_law, harmonic_sum,
                                interface_budget, model_effective_rank, model_rank_bounds, orbit_deviation,
                                radial_coordinate, rank_margins, rank_transfer_check, slope, slope_min,
                                spectrum_effective_rank, tail_lipschitz_constant, tail_mass, tail_profile)
from chaincert.synth import SynthChainSpec, exhaustive_effective_rank, gen_power_law_chain, power_law_values


def test_harmonic_sums():
    assert harmonic_sum(1, 3.7) == 1.0
    assert harmonic_sum(9, 0) == 9.0
    exact = sum(Fraction(1, i * i) for i in range(1, 5))
    assert exact == Fraction(205, 144)
    assert math.isclose(harmonic_sum(4, 2), 205 / 144, rel_tol=1e-15)
    with pytest.raises(InputError):
        harmonic_sum(0, 1)


def test_radial_coordinate_and_slope():
    assert radial_coordinate(7, 0) == 0.0
    # direct evaluation of 0.5 log(4 / H_{4,2}) with H_{4,2} = 205/144
    assert math.isclose(radial_coordinate(4, 1), 0.5 * math.log(4 * 144 / 205), rel_tol=1e-14)
    assert math.isclose(radial_coordinate(4, 1), 0.5165488, abs_tol=1e-7)
    direct = sum(math.log(i) * i ** -2 for i in range(1, 5)) / (205 / 144)
    assert math.isclose(slope(4, 1), direct, rel_tol=1e-14)
    assert math.isclose(slope(4, 1), 0.268330, abs_tol=1e-6)


def test_slope_min_sits_at_upper_end():
    assert math.isclose(slope_min(32, (0.5, 1.5)), slope(32, 1.5), rel_tol=1e-14)
    with pytest.raises(InputError):
        slope_min(8, (1.0, 0.5))


def test_exact_power_law_fit():
    sigma = 2.0 * np.arange(1, 65) ** -1.3
    f = fit_power_law(sigma)
    assert abs(f.alpha - 1.3) <= 1e-9 and f.delta_pl <= 1e-9 and f.tail_error <= 1e-9
    assert math.isclose(f.scale, 2.0, rel_tol=1e-9)


def test_constant_spectrum_is_flat_orbit():
    f = fit_power_law(np.full(10, 3.0))
    assert abs(f.alpha) < 1e-15 and f.chart_error < 1e-14


def test_alternating_perturbation_chart_bound():
    base = power_law_values(64, 1.1)
    wiggle = np.where(np.arange(64) % 2 == 0, 1.05, 0.95)
    sigma = base * wiggle
    f = fit_power_law(sigma)
    # deviation from the generating orbit point is exactly 5 percent
    C = base[0]
    assert math.isclose(orbit_deviation(sigma, C, 1.1), 0.05, rel_tol=1e-12)
    assert f.chart_error <= math.log(1.05 / 0.95) + 1e-12
    assert math.isclose(math.log(1.05 / 0.95), 0.10008, abs_tol=1e-5)


def test_fit_domain_errors():
    with pytest.raises(FitDomainError):
        fit_power_law([1.0, -0.5, 0.2], spectral_length=3)
    with pytest.raises(FitDomainError):
        fit_power_law([0.0, 0.0])
    with pytest.raises(InputError):
        fit_power_law([1.0, 0.5], fit_range=(0, 2))


def test_effective_rank_examples():
    assert model_effective_rank(4, 1, 0.5) == 1
    assert model_effective_rank(4, 1, 0.1) == 3
    assert math.isclose(1 - tail_mass(4, 1, 1), 144 / 205, rel_tol=1e-14)
    mg = rank_margins(4, 1, 0.5)
    assert math.isclose(mg.tau_at_R, 1 - 144 / 205, rel_tol=1e-12)
    # 61/205 = 0.297561; the quoted 0.29755 is a rounding of the same value
    assert math.isclose(mg.tau_at_R, 0.29755, abs_tol=2e-5)
    assert math.isclose(mg.margin, 0.5 - (1 - 144 / 205), rel_tol=1e-12)
    assert math.isclose(mg.margin, 0.20245, abs_tol=2e-5)
    with pytest.raises(InputError):
        effective_rank([1.0, 1.0], 1.0)


def test_tail_profile_endpoints():
    prof = tail_profile(10, 0.9)
    assert prof[0] == 1.0 and prof[-1] == 0.0
    assert np.all(np.diff(prof) <= 0)


def test_model_rank_bounds_need_alpha_above_half():
    with pytest.raises(InputError):
        model_rank_bounds(16, 0.5, 0.1)


def test_interface_budget_examples():
    b = interface_budget(np.eye(2), np.eye(2))
    assert b.lam == 1.0 and b.non_backtracking
    b = interface_budget(np.diag([3.0, 1.0]), np.diag([2.0, 1.0]))
    assert math.isclose(b.lam, 6 / math.sqrt(6), rel_tol=1e-14)
    assert math.isclose(b.lam, 2.44949, abs_tol=1e-5)
    b = interface_budget(np.diag([0.1, 1.0]), np.diag([1.0, 0.1]))
    assert not b.non_backtracking and math.isclose(b.product_norm, 0.1, rel_tol=1e-12)
    with pytest.raises(InputError):
        interface_budget(np.zeros((2, 2)), np.eye(2))


def test_interface_budget_square_embeds_mismatched_shapes(rng):
    b = interface_budget(rng.standard_normal((3, 4)), rng.standard_normal((5, 2)))
    assert b.lam > 0


def _chain_fits(alphas, d=64, seed=0, top=None):
    spec = SynthChainSpec(d=d, L=len(alphas), alphas=tuple(alphas), seed=seed, frames="aligned",
                          normalize=top is None, top_value=top)
    layers = gen_power_law_chain(spec)
    fits = [fit_layer(gauged_svd(W)) for W in layers]
    budgets = [interface_budget(layers[k], layers[k + 1]) for k in range(len(layers) - 1)]
    return fits, budgets


def test_total_variation_examples():
    fits, budgets = _chain_fits([1.2, 1.2, 1.2])
    tv = cartan_tv_bound(fits, budgets)
    assert tv.measured < 1e-12
    fits, budgets = _chain_fits([1.0, 1.1, 1.0])
    tv = cartan_tv_bound(fits, budgets)
    assert math.isclose(tv.measured, 0.2, abs_tol=1e-9)
    assert tv.applicable and tv.robust_holds
    assert math.isclose(tv.robust_bound, tv.exact_bound, rel_tol=1e-6, abs_tol=1e-9)


def test_total_variation_reports_backtracking():
    fits = [fit_power_law(power_law_values(8, a)) for a in (1.0, 1.0)]
    tv = cartan_tv_bound(fits, [interface_budget(np.diag([0.1, 1.0]), np.diag([1.0, 0.1]))])
    assert not tv.applicable and "backtracking" in tv.reason and not tv.robust_holds


def test_rank_transfer_example():
    f0 = fit_power_law(power_law_values(64, 1.2))
    f1 = fit_power_law(power_law_values(64, 1.2005))
    v = rank_transfer_check(f0, f1, 64, 0.1)
    assert math.isclose(v.displacement, 0.0005, rel_tol=1e-6)
    assert math.isclose(v.lhs, 2 * math.log(64) * 0.0005, rel_tol=1e-5, abs_tol=1e-10)
    assert math.isclose(v.lhs, 0.00416, abs_tol=1e-5)
    assert v.margin == rank_margins(64, 1.2, 0.1).margin


def test_rank_transfer_reports_agreement_separately():
    f0 = fit_power_law(power_law_values(64, 1.2))
    v = rank_transfer_check(f0, f0, 64, 0.1, B=1.0)
    assert not v.certified and v.empirical_agree


@given(st.integers(2, 128), st.floats(0.05, 3.0), st.floats(0.05, 3.0), st.data())
def test_property_tail_lipschitz(d, a, b, data):
    r = data.draw(st.integers(0, d))
    diff = abs(tail_mass(d, a, r) - tail_mass(d, b, r))
    assert diff <= tail_lipschitz_constant(d) * abs(a - b) + 1e-13


@given(st.integers(2, 64), st.floats(0.05, 2.5), st.floats(0.01, 0.5))
def test_property_tail_monotone_in_alpha(d, a, step):
    assert np.all(tail_profile(d, a + step) <= tail_profile(d, a) + 1e-13)
    assert model_effective_rank(d, a + step, 0.2) <= model_effective_rank(d, a, 0.2)


@given(st.integers(1, 64), st.floats(0.55, 3.0), st.sampled_from([0.5, 0.25, 0.1]))
def test_property_rank_oracle_and_sandwich(d, a, eps):
    sigma = power_law_values(d, a)
    R = spectrum_effective_rank(sigma, eps)
    assert R == exhaustive_effective_rank(sigma, eps)
    lo, hi = model_rank_bounds(d, a, eps)
    assert lo <= R <= hi


@given(st.integers(2, 128), st.floats(0.1, 2.0))
def test_property_orbit_membership(d, a):
    sigma = power_law_values(d, a)
    assert abs(math.log(sigma[0]) - radial_coordinate(d, a)) <= 1e-9
