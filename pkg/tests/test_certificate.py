import dataclasses
import math

import numpy as np
import pytest

from chaincert import alignment as al
from chaincert.certificate import (NOT_MEASURED, InterfaceMeasurement, alignment_residual, bridge_check,
                                   domain_membership, family_check, gsa_residual)
from chaincert.errors import InputError, StructureError
from chaincert.matrix_core import gauged_svd
from chaincert.spectral import fit_layer, fit_power_law, interface_budget, spectrum_effective_rank
from chaincert.synth import SynthChainSpec, SynthStructureSpec, gen_power_law_chain, gen_structured_transport


def _planted(overlap, noise=0.0, seed=0):
    p = gen_structured_transport(SynthStructureSpec((2, 2), (2, 2), shared=((0, 1),), margin=1.0,
                                                    overlap=overlap, noise=noise, residual_rows=1, seed=seed))
    return p, al.active_columns(p.matrix, p.row_groups, sizes=p.support_sizes)


def _flat_fits(n, alpha=1.0, d=16):
    sigma = np.arange(1, d + 1) ** -alpha
    return [fit_power_law(sigma) for _ in range(n)]


def test_clean_constant_chain_has_zero_spectral_and_pair_residual():
    p, st = _planted(0.1)
    pm = al.pairwise_margins(p.matrix, st)
    r = gsa_residual(_flat_fits(3), [0.0, 0.0], [pm, pm])
    assert r.D_spec == 0.0 and r.D_pair == 0.0 and r.total == 0.0


def test_one_violating_pair_contributes_point_two():
    p, st = _planted(0.4)
    pm = al.pairwise_margins(p.matrix, st)
    pair = pm.pairs[(1, 2)]
    assert math.isclose(pair.m, 1.0, rel_tol=1e-12) and math.isclose(pair.o, 0.4, rel_tol=1e-12)
    r = gsa_residual(_flat_fits(2), [0.0], [pm])
    assert math.isclose(r.D_pair, 0.2, rel_tol=1e-10)


def test_residual_bound_with_budgets():
    layers = gen_power_law_chain(SynthChainSpec(d=16, L=3, alphas=(1.0, 1.05, 1.0), frames="aligned"))
    fits = [fit_layer(gauged_svd(W)) for W in layers]
    budgets = [interface_budget(layers[k], layers[k + 1]) for k in range(2)]
    p, st = _planted(0.1)
    pm = al.pairwise_margins(p.matrix, st)
    r = gsa_residual(fits, [0.0, 0.0], [pm, pm], budgets=budgets, eps_noise=0.0)
    assert r.bound_applicable and r.bound_holds
    assert r.D_pair == 0.0


def test_residual_input_checks():
    with pytest.raises(InputError):
        gsa_residual(_flat_fits(3), [0.0], [None])
    with pytest.raises(InputError):
        gsa_residual(_flat_fits(2), [None], [None])


def test_alignment_residual_zero_with_slack():
    p, st = _planted(0.1)
    r = alignment_residual(p.matrix, st, zeta=0.5, gamma0=0.0)
    assert r.J == 0.0 and r.implies_membership and r.direct_check
    assert math.isclose(r.c_overlap, (1 - 0.5) / 3)


def test_alignment_residual_c_overlap_algebra():
    zeta = 0.2
    p, st = _planted(0.25, noise=0.5 * zeta * 1.0, seed=3)
    assert st.active_sets == p.active_sets
    r = alignment_residual(p.matrix, st, zeta=zeta, gamma0=0.0)
    assert math.isclose(r.m_star, 1.0, rel_tol=1e-12)
    assert math.isclose(r.eps_phys, 0.5 * zeta, rel_tol=1e-12)
    assert math.isclose(r.c_overlap, (1 - 0.5 * zeta) / 3, rel_tol=1e-12)
    assert r.c_overlap < 1 / 3 and r.direct_check


def test_alignment_residual_gap_deficit():
    p, st = _planted(0.1)
    g = min(st.gaps)
    r = alignment_residual(p.matrix, st, zeta=0.5, gamma0=g + 0.1)
    assert math.isclose(r.gap_term, sum(max(g + 0.1 - x, 0) ** 2 for x in st.gaps))
    assert r.gap_term >= 0.01 - 1e-12
    with pytest.raises(InputError):
        alignment_residual(p.matrix, st, zeta=0.0, gamma0=0.0)


def _domain_inputs(overlap):
    p, st = _planted(overlap)
    pm = al.pairwise_margins(p.matrix, st)
    fits = _flat_fits(2)
    rec = InterfaceMeasurement(R_source=4, R_target=4, noise_norm=0.0, margins=pm)
    return fits, rec


def test_domain_membership_verdicts():
    fits, rec = _domain_inputs(0.1)
    v = domain_membership(fits, [4, 4], [16, 16], [rec], eps=0.1, rho=1.0, eps_alpha=0.0, eps_C=0.0,
                          eps_noise=0.0, c_overlap=0.3)
    assert v.spectral and v.compressibility and v.physical and v.full
    # the cap is ceil(rho d_sp); rho = 0.15 gives 3 < R = 4
    v = domain_membership(fits, [4, 4], [16, 16], [rec], eps=0.1, rho=0.15, eps_alpha=0.0, eps_C=0.0,
                          eps_noise=0.0, c_overlap=0.3)
    assert not v.compressibility and not v.full


def test_domain_boundary_pair_is_not_physical():
    fits, rec = _domain_inputs(1.0 / 3.0)
    v = domain_membership(fits, [4, 4], [16, 16], [rec], eps=0.1, rho=1.0, eps_alpha=0.0, eps_C=0.0,
                          eps_noise=0.0, c_overlap=0.3)
    assert not v.physical


def test_domain_unmeasured_interface_blocks_membership():
    fits, _ = _domain_inputs(0.1)
    v = domain_membership(fits, [4, 4], [16, 16], [None], eps=0.1, rho=1.0, eps_alpha=0.0, eps_C=0.0,
                          eps_noise=0.0, c_overlap=0.3)
    assert v.details["physical.interface0"] == NOT_MEASURED and not v.full
    with pytest.raises(InputError):
        domain_membership(fits, [4, 4], [16, 16], [None], 0.1, 1.0, 0.0, 0.0, 0.0, 1 / 3)


def _gapped_pair(ratio, d=8):
    """Diagonal layers ``diag(3, 2, 1, t, ..., t)`` with ``E_tr(3, 3) = ratio * r_cert``."""
    head = np.array([3.0, 2.0, 1.0])
    rows = ((tuple(range(3, d))), (0,), (1,), (2,))

    def layers(t):
        W = np.diag(np.concatenate([head, np.full(d - 3, t)]))
        return gauged_svd(W), gauged_svd(W)

    a, b = layers(1e-3)
    T = np.zeros((d, d))
    T[:3, :3] = np.diag(head ** 2)
    r = al.certificate_radius(T, al.active_columns(T, rows, sizes=1)).r_cert
    t = ratio * r / (2 * 3.0 * math.sqrt(d - 3))
    return layers(t), rows


def test_bridge_exact_rank_equality():
    (a, b), rows = _gapped_pair(0.0)
    v = bridge_check(a, b, fit_layer(a), fit_layer(b), rows, 1, 3, 0.05)
    assert v.truncation_error == 0.0 and v.bridge_lhs == v.noise_norm == 0.0
    assert v.radius_condition and v.incidence_identical


def test_bridge_half_radius_reextraction():
    (a, b), rows = _gapped_pair(0.5)
    v = bridge_check(a, b, fit_layer(a), fit_layer(b), rows, 1, 3, 0.05)
    assert math.isclose(v.truncation_error, 0.5 * v.r_cert, rel_tol=1e-9)
    assert v.radius_condition and v.incidence_identical and v.bridge_holds


def test_bridge_eps_window_specialisation():
    layers = gen_power_law_chain(SynthChainSpec(d=16, L=2, alphas=1.2, seed=2, frames="permutation"))
    a, b = gauged_svd(layers[0]), gauged_svd(layers[1])
    eps = 0.1
    R = spectrum_effective_rank(a.sigma, eps)
    rows = [int(np.argmax(np.abs(b.U[:, j]))) for j in range(R)]
    groups = (tuple(sorted(set(range(16)) - set(rows))),) + tuple((r,) for r in rows)
    v = bridge_check(a, b, fit_layer(a), fit_layer(b), groups, 1, R, eps, trace_normalised=True)
    assert v.bridge_holds and v.eps_bound_holds


def test_family_of_one_is_persistent():
    p, st = _planted(0.1)
    f = family_check(p.matrix, [], st)
    assert f.all_persistent and f.views == ()


def test_family_views_below_and_beyond_gaps(rng):
    p, st = _planted(0.1, noise=0.01)
    r = al.certificate_radius(p.matrix, st).r_cert
    small = []
    for _ in range(5):
        E = rng.standard_normal(p.matrix.shape)
        small.append(p.matrix + 0.5 * r * E / np.linalg.norm(E))
    bad = p.matrix.copy()
    shared = sorted(set(st.active_sets[0]) & set(st.active_sets[1]))[0]
    bad[list(st.row_groups[1]), shared] *= 4.0
    f = family_check(p.matrix, small + [bad], st)
    assert f.persistent == (0, 1, 2, 3, 4) and f.flagged == (5,)
    assert all(v.incidence_identical for v in f.views[:5])
    assert all(v.energy_measured <= v.energy_bound for v in f.views)


def test_family_grid_mismatch_and_coarse_views():
    p, st = _planted(0.1)
    with pytest.raises(StructureError):
        family_check(p.matrix, [np.zeros((2, 2))], st)
    A = np.abs(p.matrix) + 0.01
    f = family_check(p.matrix, [], st, coarse_views=[(A, [[0, 1], [2, 3]], [[0, 1], [2, 3]], [0, 0], [0, 0])])
    c = f.coarse_views[0]
    assert c.formula_matches and c.energy_descends and c.zero_descends
