"""End-to-end chain analysis under a declared extraction protocol, and report assembly."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
import math

import numpy as np

from . import alignment as al
from .block_energy import bad_mass, from_structure, margin_screen
from .certificate import (NOT_MEASURED, InterfaceMeasurement, alignment_residual, bridge_check,
                          domain_membership, gsa_residual)
from .errors import DimensionError, InputError, StructureError
from .icm import icm_extract
from .matrix_core import gauged_svd
from .spectral import (cartan_tv_bound, fit_layer, interface_budget, rank_margins, rank_transfer_check,
                       spectrum_effective_rank)
from .transport import FULL_ROW_CAPABLE, VARIANTS, build_transport, truncation_bound

SCHEMA_VERSION = "chaincert-report/1"


@dataclass(frozen=True)
class ExtractionProtocol:
    """Every choice that shapes the extracted structures, fixed before margins are read.

    Row grouping uses the output-mode profile rule with ``theta`` and ``mu``
    unless ``row_labels`` imports a partition (one label list per
    interface, or a single list applied to every interface).
    """

    variant: str = "out_total"
    eps: float = 0.1
    rank: int | None = None
    theta: float = 0.0
    mu: float = 0.0
    row_labels: tuple | None = None
    sizes: tuple | int | None = 1
    fractions: tuple | float | None = None
    q: int = 1
    tau_st: float = 1e-3
    tau_sa: float = 0.9
    zeta: float = 0.5
    gamma0: float = 0.0
    accepted: dict | None = None
    rho: float = 1.0
    eps_noise: float = 0.1
    c_overlap: float = 0.3
    eps_alpha: float | None = None
    eps_C: float | None = None
    noise_threshold: float | None = None
    interval: tuple | None = None
    fit_range: tuple | None = None
    seed: int = 0
    baselines: tuple = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InputError(f"unknown transport variant {self.variant!r}")
        if (self.sizes is None) == (self.fractions is None):
            raise InputError("protocol needs exactly one of sizes or fractions")
        if not 0 < self.eps < 1:
            raise InputError("eps must lie in (0, 1)")

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            if f.name == "accepted" and v is not None:
                v = {str(k): sorted(int(j) for j in vals) for k, vals in sorted(v.items())}
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise InputError(f"unknown protocol keys: {sorted(extra)}")
        kw = {}
        for k, v in data.items():
            if isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            if k == "accepted" and v is not None:
                v = {int(i): frozenset(int(j) for j in vals) for i, vals in v.items()}
            kw[k] = v
        if "fractions" in kw and kw["fractions"] is not None and "sizes" not in kw:
            kw["sizes"] = None
        return cls(**kw)


@dataclass(eq=False)
class LayerAnalysis:
    svd: object
    fit: object
    R_eps: int


@dataclass(eq=False)
class InterfaceAnalysis:
    index: int
    R_source: int
    R_target: int
    budget: object
    transport: object = None
    structure: object = None
    margins: object = None
    decomposition: object = None
    radius: object = None
    truncation_error: float | None = None
    stability: object = None
    energies: object = None
    bad: object = None
    screen: object = None
    icm: object = None
    rank_check: object = None
    bridge: object = None
    residual: object = None
    reason: str = "ok"

    def measurement(self):
        if self.structure is None:
            return None
        return InterfaceMeasurement(
            R_source=self.R_source, R_target=self.R_target, noise_norm=self.decomposition.noise_norm,
            margins=self.margins, rank_condition=(self.rank_check.lhs, self.rank_check.margin),
            active_gap=(self.structure.gaps, self.stability.omega), screen=self.screen)


@dataclass(eq=False)
class ChainAnalysis:
    protocol: ExtractionProtocol
    labels: tuple
    layers: tuple
    interfaces: tuple
    total_variation: object
    residual: object
    domain: object


def _window(svd, protocol):
    if protocol.rank is not None:
        return min(int(protocol.rank), svd.spectral_length)
    return spectrum_effective_rank(svd.sigma[: svd.spectral_length], protocol.eps)


def _row_groups(k, svd_next, T, R_t, protocol):
    if protocol.row_labels is not None:
        labels = protocol.row_labels
        if labels and isinstance(labels[0], (tuple, list)):
            if k >= len(labels):
                raise StructureError(f"no imported partition for interface {k}")
            labels = labels[k]
        if len(labels) != T.entries.shape[0]:
            raise DimensionError(f"imported partition has {len(labels)} rows, transport has {T.entries.shape[0]}")
        return al.groups_from_labels(labels)
    if T.row_coords == "latent":
        Y = np.diag(svd_next.sigma[:R_t])
    else:
        U, s, _ = svd_next.window(R_t)
        Y = U * s
    return al.mode_profile_partition(Y, protocol.theta, protocol.mu).groups


def _sizes(protocol):
    if protocol.sizes is not None:
        return protocol.sizes, None
    return None, protocol.fractions


def analyse_interface(k, prev, nxt, protocol, align=True):
    """Run extraction and every per-interface check for ``layer k -> layer k+1``.

    With ``align`` false only the spectral and truncation entries are filled
    and every alignment entry stays unmeasured.
    """
    R_s, R_t = prev.R_eps, nxt.R_eps
    budget = interface_budget(prev.svd.matrix, nxt.svd.matrix)
    rec = InterfaceAnalysis(index=k, R_source=R_s, R_target=R_t, budget=budget)
    d = min(prev.svd.spectral_length, nxt.svd.spectral_length)
    rec.rank_check = rank_transfer_check(prev.fit, nxt.fit, d, protocol.eps)
    embed = prev.svd.matrix.shape[0] != nxt.svd.matrix.shape[1]
    T = build_transport(prev.svd, nxt.svd, protocol.variant, R_s, R_t, embed=embed, interface_index=k)
    rec.transport = T
    rec.truncation_error = truncation_bound(prev.svd, nxt.svd, R_s, R_t)
    if not align:
        rec.reason = "alignment not run"
        return rec
    groups = _row_groups(k, nxt.svd, T, R_t, protocol)
    sizes, fractions = _sizes(protocol)
    if len(groups) < 2 or all(len(g) == 0 for g in groups[1:]):
        rec.reason = "no signal row group"
        return rec
    if sizes is not None and not np.isscalar(sizes) and len(sizes) != len(groups) - 1:
        rec.reason = f"protocol lists {len(sizes)} support sizes for {len(groups) - 1} groups"
        return rec
    if sizes is not None and np.isscalar(sizes):
        sizes = min(int(sizes), T.entries.shape[1])
    M = np.asarray(T.entries)
    st = al.with_ordering(al.active_columns(M, groups, sizes=sizes, fractions=fractions, column_tag=T.column_tag))
    rec.structure = st
    rec.margins = al.pairwise_margins(M, st)
    rec.decomposition = al.decompose(M, st, protocol.noise_threshold)
    rec.radius = al.certificate_radius(M, st, rec.margins)
    rec.stability = al.stability_check(M, st, rec.truncation_error, margins=rec.margins)
    rec.energies = from_structure(M, st)
    rec.bad = bad_mass(M, st.row_groups[1:], st.active_sets, protocol.accepted)
    nd = {(p.i - 1, p.j - 1): p.m for p in rec.margins.nondegenerate()}
    rec.screen = margin_screen(rec.energies.E, rec.energies.row_energies, nd)
    try:
        rec.icm = icm_extract(rec.decomposition, st, [min(protocol.q, len(g)) or 1 for g in st.row_groups[1:]],
                              protocol.tau_st, protocol.tau_sa)
    except StructureError:
        rec.icm = None
    rec.residual = alignment_residual(M, st, protocol.zeta, protocol.gamma0, rec.margins, rec.decomposition)
    if protocol.variant in FULL_ROW_CAPABLE and protocol.variant != "out" and not embed and R_s == R_t:
        mode = "physical" if protocol.variant == "phys" else "source-mode"
        rec.bridge = bridge_check(prev.svd, nxt.svd, prev.fit, nxt.fit, st.row_groups, st.support_sizes, R_s,
                                  protocol.eps, mode=mode, column_tag=T.column_tag)
    return rec


def analyse_chain(layers, protocol, labels=None, align=True, threads=1):
    """Factor, fit and analyse every layer and interface of a chain.

    Interfaces are independent, so with ``threads > 1`` they run on a thread
    pool; results keep chain order.
    """
    layers = list(layers)
    if len(layers) < 2:
        raise InputError("a chain needs at least two layers")
    la = []
    for W in layers:
        svd = gauged_svd(W)
        fit = fit_layer(svd, protocol.fit_range)
        la.append(LayerAnalysis(svd=svd, fit=fit, R_eps=_window(svd, protocol)))
    run = lambda k: analyse_interface(k, la[k], la[k + 1], protocol, align)  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            inter = tuple(pool.map(run, range(len(la) - 1)))
    else:
        inter = tuple(map(run, range(len(la) - 1)))
    fits = [x.fit for x in la]
    budgets = [r.budget for r in inter]
    tv = cartan_tv_bound(fits, budgets, protocol.interval)
    residual = None
    if all(r.structure is not None for r in inter):
        residual = gsa_residual(fits, [r.decomposition.noise_norm for r in inter], [r.margins for r in inter],
                                budgets, protocol.interval, protocol.eps_noise)
    eps_alpha = protocol.eps_alpha if protocol.eps_alpha is not None else max(tv.local_robust, default=0.0)
    eps_C = protocol.eps_C
    if eps_C is None:
        eps_C = max((abs(math.log(fits[k + 1].scale / fits[k].scale)) for k in range(len(fits) - 1)), default=0.0)
    domain = domain_membership(fits, [x.R_eps for x in la], [x.svd.spectral_length for x in la],
                               [r.measurement() for r in inter], protocol.eps, protocol.rho, eps_alpha, eps_C,
                               protocol.eps_noise, protocol.c_overlap)
    names = tuple(labels) if labels is not None else tuple(getattr(W, "label", "") or f"layer{k}"
                                                           for k, W in enumerate(layers))
    return ChainAnalysis(protocol=protocol, labels=names, layers=tuple(la), interfaces=inter,
                         total_variation=tv, residual=residual, domain=domain)


# ----------------------------------------------------------------------------
# report


def _interface_record(chain, r):
    k = r.index
    a, b = chain.layers[k], chain.layers[k + 1]
    nm = NOT_MEASURED
    rec = {
        "interface": k,
        "layers": [chain.labels[k], chain.labels[k + 1]],
        "coordinates": {"rows": r.transport.row_coords if r.transport else nm,
                        "columns": r.transport.col_coords if r.transport else nm,
                        "support_tag": r.transport.column_tag if r.transport else nm},
        "rank_window": {"R_source": r.R_source, "R_target": r.R_target},
        "alpha_hat": [a.fit.alpha, b.fit.alpha],
        "tail_error": [a.fit.tail_error, b.fit.tail_error],
        "rank_stability": {"lhs": r.rank_check.lhs, "margin": r.rank_check.margin,
                           "holds": r.rank_check.certified},
        "budget": {"lambda": r.budget.lam, "non_backtracking": r.budget.non_backtracking},
        "truncation_error": r.truncation_error,
        "reason": r.reason,
    }
    if r.structure is None:
        for key in ("r_cert", "min_gap", "overlap_ratio_max", "H_max", "noise_ratio", "block_energy", "icm",
                    "bridge", "alignment_residual", "structure"):
            rec[key] = nm
        rec["verdicts"] = {"radius": nm, "active_gap": nm, "one_third": nm, "screen": nm, "noise": nm}
        return rec
    st = r.structure
    rec["structure"] = {"row_groups": [list(g) for g in st.row_groups],
                        "active_sets": [list(c) for c in st.active_sets],
                        "support_sizes": list(st.support_sizes), "row_perm": list(st.row_perm),
                        "col_perm": list(st.col_perm)}
    rec["r_cert"] = r.radius.r_cert
    rec["min_gap"] = min(st.gaps)
    rec["omega"] = r.stability.omega
    rec["overlap_ratio_max"] = r.margins.max_ratio
    rec["H_max"] = r.screen.H_max
    rec["noise_norm"] = r.decomposition.noise_norm
    rec["noise_ratio"] = r.decomposition.noise_ratio
    rec["pairs"] = [{"i": p.i, "j": p.j, "m": p.m, "o": p.o, "nondegenerate": p.nondegenerate,
                     "one_third": p.one_third_holds} for p in r.margins.pairs.values()]
    rec["block_energy"] = {"E": r.energies.E.tolist(), "row_energies": r.energies.row_energies.tolist(),
                           "off_mass": r.energies.off_mass, "diag_mass": r.energies.diag_mass,
                           "bad_normalized": r.bad.normalized, "bad_energy": r.bad.unnormalized}
    if r.icm is None:
        rec["icm"] = nm
    else:
        rec["icm"] = {"column_tag": r.icm.column_tag, "hubs": list(r.icm.hubs),
                      "groups": [{"SC": list(g.salient_core), "ST": list(g.structural), "SA": list(g.auxiliary),
                                  "SRS": list(g.receptive_support), "gap_SC": g.gap_core,
                                  "gap_ST": g.gap_structural, "gap_SA": g.gap_auxiliary,
                                  "profile_gap": g.profile_gap} for g in r.icm.groups],
                      "column_auxiliary": "reserved"}
    rec["alignment_residual"] = {"J": r.residual.J, "c_overlap": r.residual.c_overlap,
                                 "implies_membership": r.residual.implies_membership}
    if r.bridge is None:
        rec["bridge"] = nm
    else:
        bv = r.bridge
        rec["bridge"] = {"lhs": bv.bridge_lhs, "rhs": bv.truncation_error + bv.noise_norm, "holds": bv.bridge_holds,
                         "radius_condition": bv.radius_condition, "incidence_identical": bv.incidence_identical}
    rec["verdicts"] = {
        "radius": r.truncation_error < r.radius.r_cert,
        "active_gap": all(r.stability.active_ok),
        "one_third": r.margins.all_one_third(),
        "screen": r.screen.certified,
        "noise": r.decomposition.noise_norm <= chain.protocol.eps_noise,
    }
    return rec


def _baseline_summary(chain):
    rows = []
    for r in chain.interfaces:
        if r.structure is None:
            rows.append({"interface": r.index, "r_cert": NOT_MEASURED, "min_gap": NOT_MEASURED,
                         "overlap_ratio_max": NOT_MEASURED, "noise_ratio": NOT_MEASURED})
        else:
            rows.append({"interface": r.index, "r_cert": r.radius.r_cert, "min_gap": min(r.structure.gaps),
                         "overlap_ratio_max": r.margins.max_ratio, "noise_ratio": r.decomposition.noise_ratio})
    return {"interfaces": rows, "physical": chain.domain.physical, "full": chain.domain.full}


def emit_report(chain, baselines=None):
    """Certificate report as a plain nested dictionary.

    Entries that could not be computed are the string ``"not measured"``
    and force the corresponding membership verdicts to false.
    """
    ifaces = [_interface_record(chain, r) for r in chain.interfaces]
    res = chain.residual
    dom = chain.domain
    tv = chain.total_variation
    report = {
        "schema": SCHEMA_VERSION,
        "protocol": chain.protocol.to_dict(),
        "layers": [{"label": chain.labels[k], "d_sp": x.svd.spectral_length, "R_eps": x.R_eps, "alpha_hat": x.fit.alpha,
                    "scale": x.fit.scale, "chart_error": x.fit.chart_error, "tail_error": x.fit.tail_error,
                    "delta_pl": x.fit.delta_pl} for k, x in enumerate(chain.layers)],
        "interfaces": ifaces,
        "total_variation": {"measured": tv.measured, "exact_bound": tv.exact_bound, "robust_bound": tv.robust_bound,
                            "applicable": tv.applicable, "robust_holds": tv.robust_holds, "reason": tv.reason},
        "residual": NOT_MEASURED if res is None else {
            "D_spec": res.D_spec, "D_noise": res.D_noise, "D_pair": res.D_pair, "total": res.total,
            "bound": res.bound, "bound_holds": res.bound_holds, "reason": res.reason},
        "domain": {"spectral": dom.spectral, "compressibility": dom.compressibility, "physical": dom.physical,
                   "full": dom.full, "jacobian": dom.jacobian, "details": dom.details},
        "baselines": {name: _baseline_summary(b) for name, b in sorted((baselines or {}).items())},
    }
    report["complete"] = report_complete(report)
    return report


def report_complete(report):
    """True when no required entry of any interface is ``"not measured"``."""
    required = ("alpha_hat", "tail_error", "truncation_error", "r_cert", "min_gap", "overlap_ratio_max",
                "H_max", "noise_ratio")
    for rec in report["interfaces"]:
        if any(rec.get(k, NOT_MEASURED) == NOT_MEASURED for k in required):
            return False
    return report["residual"] != NOT_MEASURED


def all_verdicts_true(report):
    """Every interface verdict, the residual bound and the full domain verdict hold."""
    for rec in report["interfaces"]:
        v = rec["verdicts"]
        if any(x is not True for x in v.values()) or rec["rank_stability"]["holds"] is not True:
            return False
    return report["domain"]["full"] is True and report["complete"]
