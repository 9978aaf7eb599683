"""Chain-level residuals, domain membership, bridge and family-wise checks."""

from dataclasses import dataclass, field
import math

import numpy as np

from . import alignment as al
from .block_energy import block_energy, coarse_direct, coarsen, perturb_bound
from .errors import InputError, StructureError
from .spectral import displacement_budget, rank_transfer_check, slope_min
from .transport import full_transport, truncated_transport, truncation_bound, truncation_bound_eps

NOT_MEASURED = "not measured"


# ----------------------------------------------------------------------------
# certificate residual


@dataclass(frozen=True)
class GsaResidual:
    """``D_spec + D_noise + D_pair`` with the budget bound it is compared against."""

    D_spec: float
    D_noise: float
    D_pair: float
    per_interface: tuple
    bound: float | None
    bound_applicable: bool
    reason: str

    @property
    def total(self):
        return self.D_spec + self.D_noise + self.D_pair

    @property
    def bound_holds(self):
        return self.bound_applicable and self.bound is not None and self.total <= self.bound * (1 + 1e-12)


def pair_violation(margins):
    """``sum (3 o - m)_+`` over nondegenerate pairs."""
    return math.fsum(max(3.0 * p.o - p.m, 0.0) for p in margins.nondegenerate())


def gsa_residual(fits, noise_norms, pair_margins, budgets=None, interval=None, eps_noise=None):
    """Sum spectral variation, noise norms and one-third violations over a chain.

    Parameters
    ----------
    fits : sequence of CartanFit
        One per layer.
    noise_norms, pair_margins : sequence
        ``||M_noise||_F`` and :class:`PairwiseMargins` per interface.
    budgets : sequence of InterfaceBudget, optional
        Enables the bound
        ``(2/m_d(I)) sum log lambda + 2 (L-1) e_chart / m_d(I) + (L-1) eps_noise``.
    """
    fits = list(fits)
    L = len(fits)
    noise_norms, pair_margins = list(noise_norms), list(pair_margins)
    if len(noise_norms) != L - 1 or len(pair_margins) != L - 1:
        raise InputError(f"{L} layers need {L - 1} interface records")
    if any(x is None for x in noise_norms) or any(x is None for x in pair_margins):
        raise InputError("missing interface data")
    alphas = [f.alpha for f in fits]
    spec = [abs(alphas[k + 1] - alphas[k]) for k in range(L - 1)]
    pair = [pair_violation(pm) for pm in pair_margins]
    per = tuple({"interface": k, "spec": spec[k], "noise": float(noise_norms[k]), "pair": pair[k]}
                for k in range(L - 1))
    bound, applicable, reasons = None, False, []
    if budgets is not None:
        budgets = list(budgets)
        if len(budgets) != L - 1:
            raise InputError("one budget per interface is required")
        lo, hi = interval if interval is not None else (min(alphas), max(alphas))
        d = min(f.spectral_length for f in fits)
        m = slope_min(d, (lo, hi))
        e_chart = max(f.chart_error for f in fits)
        eps_n = max(noise_norms) if eps_noise is None else float(eps_noise)
        bound = (2.0 / m) * math.fsum(b.log_budget for b in budgets) + 2.0 * (L - 1) * e_chart / m \
            + (L - 1) * eps_n
        if any(not b.non_backtracking for b in budgets):
            reasons.append("backtracking interface")
        if any(a < lo or a > hi for a in alphas):
            reasons.append("exponent outside interval")
        if any(x > eps_n for x in noise_norms):
            reasons.append("noise above eps_noise")
        if any(not pm.all_one_third() for pm in pair_margins):
            reasons.append("one-third test fails")
        applicable = not reasons
    else:
        reasons.append("no budgets supplied")
    return GsaResidual(D_spec=math.fsum(spec), D_noise=math.fsum(float(x) for x in noise_norms),
                       D_pair=math.fsum(pair), per_interface=per, bound=bound, bound_applicable=applicable,
                       reason="; ".join(reasons) or "ok")


@dataclass(frozen=True)
class AlignmentResidual:
    zeta: float
    gamma0: float
    J: float
    noise_term: float
    pair_term: float
    gap_term: float
    m_star: float | None
    eps_phys: float
    c_overlap: float | None
    implies_membership: bool
    direct_check: bool | None


def alignment_residual(M, structure, zeta, gamma0, margins=None, con=None):
    """``J = ||noise||_F^2 + sum (3 o - (1 - zeta) m)_+^2 + sum (Gamma_0 - Gamma_i)_+^2``.

    With ``eps_phys = sqrt(J)`` and ``m_*`` the smallest nondegenerate margin,
    ``eps_phys < zeta m_*`` yields ``c_overlap = (1 - zeta + eps_phys / m_*) / 3``;
    the implied bound ``o <= c_overlap m`` is then checked directly.
    """
    if not 0 < zeta <= 1:
        raise InputError("zeta must lie in (0, 1]")
    margins = margins or al.pairwise_margins(M, structure)
    con = con or al.decompose(M, structure)
    noise = con.noise_norm ** 2
    pair = math.fsum(max(3.0 * p.o - (1.0 - zeta) * p.m, 0.0) ** 2 for p in margins.pairs.values())
    gap = math.fsum(max(gamma0 - g, 0.0) ** 2 for g in structure.gaps)
    J = noise + pair + gap
    eps = math.sqrt(J)
    nd = margins.nondegenerate()
    m_star = min((p.m for p in nd), default=None)
    c = None
    direct = None
    ok = False
    if m_star is not None and eps < zeta * m_star:
        c = (1.0 - zeta + eps / m_star) / 3.0
        direct = all(p.o <= c * p.m * (1 + 1e-12) for p in nd)
        ok = c < 1.0 / 3.0
    return AlignmentResidual(zeta=float(zeta), gamma0=float(gamma0), J=J, noise_term=noise, pair_term=pair,
                             gap_term=gap, m_star=m_star, eps_phys=eps, c_overlap=c, implies_membership=ok,
                             direct_check=direct)


# ----------------------------------------------------------------------------
# domain membership


@dataclass(frozen=True)
class InterfaceMeasurement:
    """Measured quantities of one interface used by the domain tests.

    Any field left as ``None`` counts as not measured and blocks membership.
    """

    R_source: int | None = None
    R_target: int | None = None
    noise_norm: float | None = None
    margins: object = None
    rank_condition: tuple | None = None
    active_gap: tuple | None = None
    screen: object = None


@dataclass(frozen=True)
class DomainVerdict:
    spectral: bool
    compressibility: bool
    physical: bool
    details: dict = field(default_factory=dict)
    jacobian: str = "externally supplied"

    @property
    def full(self):
        return self.spectral and self.compressibility and self.physical


def _row(value, threshold, holds):
    return {"value": value, "threshold": threshold, "holds": bool(holds)}


def domain_measured(entries):
    return all(v != NOT_MEASURED for v in entries.values())


def domain_membership(fits, ranks, d_sp, interfaces, eps, rho, eps_alpha, eps_C, eps_noise, c_overlap,
                      jacobian_bound=None):
    """Evaluate the spectral, compressibility and physical domain inequalities.

    Parameters
    ----------
    fits : sequence of CartanFit
    ranks, d_sp : sequence of int
        ``R_eps(W_k)`` and spectral lengths per layer.
    interfaces : sequence of InterfaceMeasurement or None
    eps, rho : float
        Energy threshold and compressibility ratio.
    eps_alpha, eps_C, eps_noise, c_overlap : float
        Domain tolerances; ``c_overlap`` must lie in ``(0, 1/3)``.
    jacobian_bound : bool, optional
        Externally established ``||J||_{2, mu} <= M``; ``None`` records the
        row as externally supplied without gating the verdict.
    """
    if not 0 < c_overlap < 1.0 / 3.0:
        raise InputError("c_overlap must lie in (0, 1/3)")
    if not 0 < rho <= 1:
        raise InputError("rho must lie in (0, 1]")
    fits = list(fits)
    det = {}
    alphas = [f.alpha for f in fits]
    steps = [abs(alphas[k + 1] - alphas[k]) for k in range(len(fits) - 1)]
    logc = [abs(math.log(fits[k + 1].scale / fits[k].scale)) for k in range(len(fits) - 1)]
    da, dc = max(steps, default=0.0), max(logc, default=0.0)
    det["spectral.alpha_step"] = _row(da, eps_alpha, da <= eps_alpha)
    det["spectral.log_scale_ratio"] = _row(dc, eps_C, dc <= eps_C)
    spectral = da <= eps_alpha and dc <= eps_C
    if jacobian_bound is not None:
        det["spectral.jacobian"] = _row(None, None, jacobian_bound)
        spectral = spectral and bool(jacobian_bound)

    caps = [math.ceil(rho * d) for d in d_sp]
    comp = all(r <= c for r, c in zip(ranks, caps))
    for k, (r, c) in enumerate(zip(ranks, caps)):
        det[f"compressibility.layer{k}"] = _row(r, c, r <= c)

    physical = True
    for k, rec in enumerate(interfaces):
        key = f"physical.interface{k}"
        if rec is None or rec.margins is None or rec.noise_norm is None or rec.R_source is None:
            det[key] = NOT_MEASURED
            physical = False
            continue
        rt = rec.R_target if rec.R_target is not None else rec.R_source
        rank_ok = rec.R_source <= caps[k] and rt <= caps[k + 1]
        noise_ok = rec.noise_norm <= eps_noise
        nd = rec.margins.nondegenerate()
        worst = max((p.o / p.m for p in nd), default=0.0)
        over_ok = all(p.o <= c_overlap * p.m for p in nd)
        det[key + ".rank"] = _row(max(rec.R_source, rt), min(caps[k], caps[k + 1]), rank_ok)
        det[key + ".noise"] = _row(rec.noise_norm, eps_noise, noise_ok)
        det[key + ".overlap_ratio"] = _row(worst, c_overlap, over_ok)
        physical = physical and rank_ok and noise_ok and over_ok
        if rec.rank_condition is not None:
            lhs, mg = rec.rank_condition
            det[key + ".rank_stability"] = _row(lhs, mg, lhs < mg)
        if rec.active_gap is not None:
            gaps, omega = rec.active_gap
            g = min(gaps)
            det[key + ".active_gap"] = _row(g, 2.0 * omega, g > 2.0 * omega)
        if rec.screen is not None and rec.screen.scores:
            det[key + ".heatmap_screen"] = _row(rec.screen.H_max, 1.0, rec.screen.certified)
    return DomainVerdict(spectral=bool(spectral), compressibility=bool(comp), physical=bool(physical),
                         details=det, jacobian="supplied" if jacobian_bound is not None else "externally supplied")


# ----------------------------------------------------------------------------
# bridge


@dataclass(frozen=True)
class BridgeVerdict:
    R: int
    rank_condition_lhs: float
    rank_margin: float
    rank_condition: bool
    truncation_error: float
    noise_norm: float
    bridge_lhs: float
    bridge_holds: bool
    eps_bound: float | None
    eps_bound_holds: bool | None
    r_cert: float
    radius_condition: bool
    incidence_identical: bool | None


def bridge_check(svd_prev, svd_next, fit_prev, fit_next, row_groups, support_sizes, R, eps,
                 mode="source-mode", budget=None, interval=None, trace_normalised=False, column_tag=None):
    """Compare full and truncated output transports at a common window ``R``.

    Checks the rank-separation condition (with the budget displacement when
    ``budget`` is given, else the measured exponent change), the bound
    ``||T - (core + overlap)||_F <= E_tr(R, R) + ||noise||_F``, and, when
    ``E_tr < r_cert``, that re-extraction from the full transport gives the
    same incidence objects.
    """
    d = min(svd_prev.spectral_length, svd_next.spectral_length)
    B = None
    if budget is not None:
        lo, hi = interval if interval is not None else sorted((fit_prev.alpha, fit_next.alpha))
        B = displacement_budget(budget, fit_prev, fit_next, slope_min(d, (lo, hi)))
    rank = rank_transfer_check(fit_prev, fit_next, d, eps, B)
    tag = column_tag or ("channel" if mode == "physical" else "mode")
    A = truncated_transport(svd_prev, svd_next, R, R, mode)
    T = full_transport(svd_prev, svd_next, mode)
    st = al.active_columns(A, row_groups, sizes=support_sizes, column_tag=tag)
    con = al.decompose(A, st)
    lhs = float(np.linalg.norm(T - con.core - con.overlap))
    etr = truncation_bound(svd_prev, svd_next, R, R)
    holds = lhs <= (etr + con.noise_norm) * (1 + 1e-12) + 1e-14
    eb, eb_ok = None, None
    if trace_normalised:
        eb = truncation_bound_eps(eps, d, svd_prev.operator_norm, svd_next.operator_norm) + con.noise_norm
        eb_ok = lhs <= eb * (1 + 1e-12)
    radius = al.certificate_radius(A, st)
    cond = etr < radius.r_cert
    same = None
    if cond:
        same = al.incidence_signature(al.re_extract(T, st)) == al.incidence_signature(st)
    return BridgeVerdict(R=int(R), rank_condition_lhs=rank.lhs, rank_margin=rank.margin,
                         rank_condition=rank.certified, truncation_error=etr, noise_norm=con.noise_norm,
                         bridge_lhs=lhs, bridge_holds=bool(holds), eps_bound=eb, eps_bound_holds=eb_ok,
                         r_cert=radius.r_cert, radius_condition=bool(cond), incidence_identical=same)


# ----------------------------------------------------------------------------
# family-wise persistence


@dataclass(frozen=True)
class ViewVerdict:
    index: int
    eta: float
    active_ok: bool
    pair_ok: bool
    certified: bool
    incidence_identical: bool
    energy_bound: float | None
    energy_measured: float | None


@dataclass(frozen=True)
class CoarseViewVerdict:
    index: int
    formula_matches: bool
    zero_descends: bool
    energy_descends: bool
    normalized_descends: bool


@dataclass(frozen=True)
class FamilyVerdict:
    views: tuple
    coarse_views: tuple
    persistent: tuple
    flagged: tuple

    @property
    def all_persistent(self):
        return not self.flagged


def family_check(reference, views, structure, coarse_views=()):
    """Family-wise persistence of the reference structure across same-grid views.

    ``coarse_views`` holds ``(A, row_groups, col_bins, pi_r, pi_c)`` tuples;
    for those only the coarsening formula and its descent properties are
    checked.
    """
    M0 = np.asarray(reference, dtype=np.float64)
    margins = al.pairwise_margins(M0, structure)
    ref_sig = al.incidence_signature(structure)
    views = [np.asarray(V, dtype=np.float64) for V in views]
    for q, V in enumerate(views):
        if V.shape != M0.shape:
            raise StructureError(f"view {q} has shape {V.shape}, reference {M0.shape}; declare a coarsening map")
    groups, sets = structure.row_groups[1:], structure.active_sets
    family = [M0] + views
    S = max(float(np.linalg.norm(V)) for V in family)
    e_min = min(float(block_energy(V, groups, sets).row_energies.min()) for V in family)
    out, persistent, flagged = [], [], []
    for q, V in enumerate(views):
        eta = float(np.linalg.norm(V - M0))
        chk = al.stability_check(M0, structure, eta, margins=margins)
        same = al.incidence_signature(al.re_extract(V, structure)) == ref_sig
        eb = em = None
        if e_min > 0:
            pc = perturb_bound(M0, V, groups, sets, e_min=e_min, S=S, delta=eta)
            eb, em = pc.bound, pc.measured
        ok_a, ok_p = all(chk.active_ok), all(chk.pair_ok.values())
        out.append(ViewVerdict(index=q, eta=eta, active_ok=ok_a, pair_ok=ok_p, certified=chk.certified,
                               incidence_identical=same, energy_bound=eb, energy_measured=em))
        (persistent if chk.certified else flagged).append(q)
    coarse = []
    for q, (A, rg, bins, pr, pc_) in enumerate(coarse_views):
        be = block_energy(A, rg, bins)
        c = coarsen(be.E, be.row_energies, pr, pc_)
        direct = coarse_direct(A, rg, bins, pr, pc_)
        coarse.append(CoarseViewVerdict(index=q, formula_matches=bool(np.allclose(c.E, direct, rtol=0, atol=1e-12)),
                                        zero_descends=c.zero_descends, energy_descends=c.energy_descends,
                                        normalized_descends=c.normalized_descends))
    return FamilyVerdict(views=tuple(out), coarse_views=tuple(coarse), persistent=tuple(persistent),
                         flagged=tuple(flagged))
