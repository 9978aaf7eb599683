import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from chaincert.capacity import (WIDTH_CONDITION, TabulatedDerivative, activation_moments, coherent_iteration,
                                scale_bounds, simulate_energy_recursion, width_bounds)
from chaincert.errors import InputError


def test_identity_and_relu_moments():
    m = activation_moments("identity")
    assert math.isclose(m.kappa, 1.0, abs_tol=1e-14) and math.isclose(m.chi, 1.0, abs_tol=1e-14)
    m = activation_moments("relu", order=128)
    assert abs(m.kappa - 0.5) <= 1e-8 and abs(m.chi - 0.5) <= 1e-8


def test_gelu_permeability_is_one_half():
    assert abs(activation_moments("gelu", order=128).kappa - 0.5) <= 1e-10


def test_tanh_refinement_gap():
    m = activation_moments("tanh", order=128)
    assert m.refinement_gap <= 1e-8
    assert 0.6 < m.kappa < 0.61


def test_tabulated_and_callable_descriptors():
    x = np.linspace(-10, 10, 2001)
    tab = activation_moments((x, (x > 0).astype(float)), order=128)
    assert abs(tab.kappa - 0.5) < 1e-3 and tab.activation == "tabulated"
    m = activation_moments(lambda z: np.full_like(z, 2.0))
    assert math.isclose(m.kappa, 2.0, rel_tol=1e-12) and math.isclose(m.chi, 4.0, rel_tol=1e-12)


def test_descriptor_errors():
    with pytest.raises(InputError):
        activation_moments("softsign")
    with pytest.raises(InputError):
        activation_moments("relu", order=8)
    with pytest.raises(InputError):
        TabulatedDerivative((1.0, 0.0), (1.0, 1.0))
    with pytest.raises(InputError):
        activation_moments(lambda z: z[:3])


def test_typical_scale_example():
    ident = activation_moments("identity")
    b = scale_bounds(1.0, 1.0, 4, 3.0, 1.0, ident)
    assert math.isclose(b.C_typical, math.sqrt(2.0), rel_tol=1e-14)
    e = simulate_energy_recursion(1.0, 1.0, 4, 1.0, 1.0, b.C_typical)
    assert abs(e[-1] - 9.0) <= 1e-8


def test_coherent_scale_boundary():
    relu = activation_moments("relu", order=128)
    b = scale_bounds(1.0, 1.0, 6, 3.0, 1.0, relu)
    x = coherent_iteration(1.0, 6, relu.chi, b.C_coherent)
    assert abs(x[-1] - 3.0) <= 1e-8
    assert abs(b.asymptotic_relative_error) <= b.expansion_parameter


def test_scale_bound_errors():
    m = activation_moments("identity")
    for args in ((1.0, 1.0, 4, 1.0, 1.0), (1.0, 1.0, 0, 3.0, 1.0), (1.0, 1.0, 4, 3.0, 0.0), (0.0, 1.0, 4, 3.0, 1.0)):
        with pytest.raises(InputError):
            scale_bounds(*args, m)


def test_width_bounds():
    w = width_bounds(8, activation_moments("relu", order=128))
    assert (w.W_min_coherent, w.W_min_typical) == (16, 32)
    assert w.condition == WIDTH_CONDITION
    with pytest.raises(InputError):
        width_bounds(0, activation_moments("relu"))


@given(st.floats(0.1, 4), st.floats(0.1, 4), st.integers(1, 30), st.floats(1.05, 10), st.floats(0.1, 1),
       st.floats(0.2, 1.8))
def test_property_energy_crossover(e0, s, L, M, eta, factor):
    ident = activation_moments("identity")
    C = scale_bounds(e0, s, L, M, eta, ident).C_typical
    e = simulate_energy_recursion(e0, s, L, eta, 1.0, factor * C)
    assert (e[-1] <= M * M * e0 * (1 + 1e-12)) == (factor <= 1.0)
