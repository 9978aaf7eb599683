"""Channel-level anatomy of an alignment structure and its label-stability test.

For each signal group the anatomy names salient core rows (SC), rows above
a structural energy threshold (ST), rows whose core profile correlates with
the group's leading profile (SA), and the group's receptive support set
(SRS). Hub columns and the noise descriptor are shared across groups.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .alignment import decompose
from .errors import InputError, StructureError
from .matrix_core import gauged_svd


@dataclass(frozen=True, eq=False)
class GroupAnatomy:
    """Labels and margins of one signal group (1-based ``group``)."""

    group: int
    salient_core: tuple
    structural: tuple
    auxiliary: tuple
    receptive_support: tuple
    row_energies: dict
    correlations: dict
    leading_profile: np.ndarray | None
    gap_core: float
    gap_structural: float
    gap_auxiliary: float
    profile_gap: float


@dataclass(frozen=True, eq=False)
class IcmAnatomy:
    """Full anatomy; ``column_tag`` says whether supports are source modes or channels."""

    groups: tuple
    hubs: tuple
    residual_rows: tuple
    noise_mask: np.ndarray
    noise_support: tuple | None
    column_tag: str
    tau_structural: float
    tau_auxiliary: float

    def signature(self):
        """Hashable label summary used for equality of anatomies."""
        return (tuple((g.salient_core, g.structural, g.auxiliary, g.receptive_support) for g in self.groups),
                self.hubs, self.residual_rows, self.column_tag)


def _leading_profile(block):
    if not np.any(block):
        return None, 0.0
    svd = gauged_svd(block)
    s = svd.sigma
    second = float(s[1]) if s.size > 1 else 0.0
    return np.array(svd.V[:, 0]), float(s[0]) - second


def icm_extract(con, structure, q, tau_st, tau_sa):
    """Extract the anatomy from a core/overlap/noise split.

    Parameters
    ----------
    con : CoreOverlapNoise
        Output of :func:`chaincert.alignment.decompose` for ``structure``.
    structure : AlignmentStructure
    q : int or sequence of int
        Number of salient core rows per group.
    tau_st : float
        Positive core-row energy threshold for the structural label.
    tau_sa : float
        Correlation threshold in ``[0, 1]`` for the auxiliary label.

    Notes
    -----
    Every row of the group with a nonzero core row is tested for the
    auxiliary label, so a row may be both salient and auxiliary.
    """
    K = structure.K
    qs = [int(q)] * K if np.isscalar(q) else [int(x) for x in q]
    if len(qs) != K:
        raise StructureError(f"expected {K} salient-row counts, got {len(qs)}")
    if tau_st <= 0:
        raise InputError("structural threshold must be positive")
    if not 0.0 <= tau_sa <= 1.0:
        raise InputError("auxiliary threshold must lie in [0, 1]")
    core = con.core
    anat = []
    for i in range(1, K + 1):
        rows = list(structure.row_groups[i])
        qi = qs[i - 1]
        if not 1 <= qi <= len(rows):
            raise StructureError(f"salient-row count {qi} outside [1, {len(rows)}] for group {i}")
        block = core[rows, :]
        energy = np.einsum("ij,ij->i", block, block)
        pos, gap_sc = kernels.top_select(energy, qi)
        sc = tuple(rows[p] for p in pos)
        rest = [k for k in range(len(rows)) if rows[k] not in sc]
        st = tuple(rows[k] for k in rest if energy[k] >= tau_st)
        gap_st = min((float(abs(energy[k] - tau_st)) for k in rest), default=math.inf)

        u, prof_gap = _leading_profile(block)
        corr = {}
        if u is not None:
            for k, r in enumerate(rows):
                nrm = math.sqrt(energy[k])
                if nrm > 0:
                    corr[r] = abs(float(block[k] @ u)) / nrm
        sa = tuple(r for r in rows if r in corr and corr[r] >= tau_sa)
        gap_sa = min((abs(c - tau_sa) for c in corr.values()), default=math.inf)
        anat.append(GroupAnatomy(group=i, salient_core=tuple(sorted(sc)), structural=st, auxiliary=sa,
                                 receptive_support=tuple(structure.active_sets[i - 1]),
                                 row_energies={r: float(energy[k]) for k, r in enumerate(rows)},
                                 correlations=corr, leading_profile=u, gap_core=gap_sc,
                                 gap_structural=gap_st, gap_auxiliary=gap_sa, profile_gap=prof_gap))
    deg = structure.degrees()
    hubs = tuple(int(c) for c in np.flatnonzero(deg >= 2))
    return IcmAnatomy(groups=tuple(anat), hubs=hubs, residual_rows=tuple(structure.row_groups[0]),
                      noise_mask=con.noise_mask, noise_support=con.noise_support,
                      column_tag=structure.column_tag, tau_structural=float(tau_st),
                      tau_auxiliary=float(tau_sa))


def icm_from_matrix(M, structure, q, tau_st, tau_sa, noise_threshold=None):
    """Decompose ``M`` under ``structure`` and extract the anatomy in one call."""
    return icm_extract(decompose(M, structure, noise_threshold), structure, q, tau_st, tau_sa)


@dataclass(frozen=True)
class IcmStabilityVerdict:
    """Per-group label stability under row-energy and correlation perturbations."""

    salient_core: tuple
    structural: tuple
    auxiliary: tuple

    @property
    def all_stable(self):
        return all(self.salient_core) and all(self.structural) and all(self.auxiliary)


def icm_stability(anatomy, delta_row, delta_corr=None):
    """Test ``2 delta_row < Gamma_SC``, ``delta_row < Gamma_ST`` and ``delta_corr < Gamma_SA`` per group.

    Scalars apply to every group. With ``delta_corr`` omitted the auxiliary
    labels are reported as not verified.
    """
    K = len(anatomy.groups)
    dr = [float(delta_row)] * K if np.isscalar(delta_row) else [float(x) for x in delta_row]
    if delta_corr is None:
        dc = [math.inf] * K
    else:
        dc = [float(delta_corr)] * K if np.isscalar(delta_corr) else [float(x) for x in delta_corr]
    if len(dr) != K or len(dc) != K:
        raise InputError("one perturbation size per group is required")
    g = anatomy.groups
    return IcmStabilityVerdict(salient_core=tuple(bool(2 * dr[k] < g[k].gap_core) for k in range(K)),
                               structural=tuple(bool(dr[k] < g[k].gap_structural) for k in range(K)),
                               auxiliary=tuple(bool(dc[k] < g[k].gap_auxiliary) for k in range(K)))


def row_energy_shift(con_a, con_b, structure):
    """Largest change of any core row energy per group between two splits."""
    out = []
    for rows in structure.row_groups[1:]:
        ea = np.einsum("ij,ij->i", con_a.core[list(rows)], con_a.core[list(rows)])
        eb = np.einsum("ij,ij->i", con_b.core[list(rows)], con_b.core[list(rows)])
        out.append(float(np.max(np.abs(ea - eb))) if len(rows) else 0.0)
    return tuple(out)
