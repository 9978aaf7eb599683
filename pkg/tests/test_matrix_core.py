import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from chaincert.errors import InputError, WindowError
from chaincert.matrix_core import (LayerMatrix, as_array, RankWindow, gauged_svd, orthonormality_defect, square_embed,
                                   tail_energy, truncate)

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def test_square_embed_pads_with_zero_singular_value():
    E = as_array(square_embed([[3.0, 0.0]]))
    assert E.shape == (2, 2)
    assert np.allclose(np.linalg.svd(E, compute_uv=False), [3.0, 0.0])


def test_square_embed_matches_gram_eigenvalues(rng):
    W = rng.standard_normal((3, 5))
    E = as_array(square_embed(W))
    assert E.shape == (5, 5)
    eig = np.sort(np.linalg.eigvalsh(W.T @ W))[::-1]
    sv = np.linalg.svd(E, compute_uv=False)
    assert np.allclose(sv[:3] ** 2, eig[:3], rtol=1e-10)
    assert np.all(sv[3:] < 1e-12)


def test_identity_has_identity_frames():
    s = gauged_svd(np.eye(3))
    assert np.array_equal(s.U, np.eye(3)) and np.array_equal(s.V, np.eye(3))
    assert s.spectral_length == 3


def test_diagonal_sorted_and_reconstructed():
    s = gauged_svd(np.diag([1.0, 2.0]))
    assert np.allclose(s.sigma, [2.0, 1.0])
    assert np.linalg.norm((s.U * s.sigma) @ s.V.T - np.diag([1.0, 2.0])) < 1e-12


def test_gauge_is_bitwise_deterministic(rng):
    W = rng.standard_normal((6, 4))
    a, b = gauged_svd(W), gauged_svd(W.copy())
    assert a.U.tobytes() == b.U.tobytes() and a.V.tobytes() == b.V.tobytes()
    assert a.sigma.tobytes() == b.sigma.tobytes()


def test_sign_rule_largest_entry_positive(rng):
    s = gauged_svd(rng.standard_normal((5, 5)))
    for j in range(5):
        col = s.U[:, j]
        assert col[np.argmax(np.abs(col))] > 0


def test_gauge_invariant_under_sign_flip_of_input_frames(rng):
    W = rng.standard_normal((4, 4))
    D = np.diag([1.0, -1.0, 1.0, -1.0])
    a = gauged_svd(W)
    b = gauged_svd(D @ W @ D)
    assert np.allclose(np.abs(D @ a.U), np.abs(b.U))


def test_tail_energy_and_truncation():
    s = gauged_svd(np.diag([1.0, 0.1]))
    assert math.isclose(tail_energy(s, 1), 0.01, rel_tol=1e-12)
    assert np.allclose(as_array(truncate(gauged_svd(np.diag([2.0, 1.0])), 1)), np.diag([2.0, 0.0]))


def test_truncation_is_eckart_young(rng):
    W = rng.standard_normal((5, 5))
    s = gauged_svd(W)
    err = np.linalg.norm(W - as_array(truncate(s, 2))) ** 2
    assert math.isclose(err, tail_energy(s, 2), rel_tol=1e-10)


def test_spectral_length_counts_numerical_rank():
    assert gauged_svd(np.diag([1.0, 1e-14, 0.0])).spectral_length == 1


def test_rejects_bad_inputs():
    with pytest.raises(InputError):
        LayerMatrix(np.array([1.0, 2.0]))
    with pytest.raises(InputError):
        LayerMatrix(np.array([[np.nan]]))
    with pytest.raises(WindowError):
        RankWindow(0)
    with pytest.raises(WindowError):
        RankWindow(3).check(gauged_svd(np.eye(2)))


def test_layer_matrix_is_read_only():
    W = LayerMatrix(np.eye(2), "a")
    with pytest.raises(ValueError):
        W.entries[0, 0] = 2.0


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=finite))
def test_property_reconstruction_and_orthonormality(W):
    s = gauged_svd(W)
    scale = max(1.0, float(np.abs(W).max()))
    assert np.linalg.norm((s.U * s.sigma) @ s.V.T - W) <= 1e-10 * scale
    assert orthonormality_defect(s.U) < 1e-10 and orthonormality_defect(s.V) < 1e-10
    assert np.all(np.diff(s.sigma) <= 1e-12 * scale)
