"""Row groups, active supports, pairwise margins and the core/overlap/noise split.

All index sets are 0-based. ``row_groups[0]`` is always the residual row
group; signal groups are ``row_groups[1:]`` and group ``i`` (1-based) owns
``active_sets[i - 1]``.
"""

from dataclasses import dataclass, field, replace
from fractions import Fraction
import math

import numpy as np

from . import kernels
from .errors import InputError, StructureError

POSITIVITY_CUTOFF = 1e-12


# ----------------------------------------------------------------------------
# row partition from output-mode profiles


@dataclass(frozen=True, eq=False)
class RowPartition:
    """Result of the mode-profile row assignment.

    ``assignment[r]`` is the 1-based winning mode of row ``r`` or 0 for the
    residual group. ``threshold_margin`` is ``omega_win - theta`` and
    ``gap_margin`` is ``omega_win - omega_second - mu`` for every row.
    """

    groups: tuple
    assignment: np.ndarray
    modes: tuple
    winner: np.ndarray
    winning_score: np.ndarray
    runner_up: np.ndarray
    threshold_margin: np.ndarray
    gap_margin: np.ndarray
    theta: float
    mu: float


def mode_profile_partition(Y, theta, mu, compact=True):
    """Assign each row to the mode carrying its largest squared profile entry.

    A row joins the group of its smallest-index maximiser ``a`` when
    ``Y[r, a]**2 >= theta`` and the lead over the runner-up is at least
    ``mu``; otherwise it goes to the residual group.

    Parameters
    ----------
    Y : array_like
        Output-mode profile, typically ``U_{k+1}^{(R)} S_{k+1}^{(R)}``.
    theta, mu : float
        Nonnegative score threshold and required lead.
    compact : bool
        Drop modes that received no rows, keeping the remaining order.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.size == 0:
        raise InputError("mode profile must be a nonempty 2-D array")
    if theta < 0 or mu < 0:
        raise InputError("theta and mu must be nonnegative")
    omega = Y * Y
    winner = np.argmax(omega, axis=1)
    rows = np.arange(Y.shape[0])
    top = omega[rows, winner]
    if Y.shape[1] > 1:
        rest = omega.copy()
        rest[rows, winner] = -np.inf
        second = rest.max(axis=1)
    else:
        second = np.zeros(Y.shape[0])
    accept = (top >= theta) & (top - second >= mu)
    assignment = np.where(accept, winner + 1, 0)
    modes = tuple(range(1, Y.shape[1] + 1))
    if compact:
        modes = tuple(a for a in modes if np.any(assignment == a))
    groups = [tuple(np.flatnonzero(assignment == 0).tolist())]
    groups += [tuple(np.flatnonzero(assignment == a).tolist()) for a in modes]
    return RowPartition(groups=tuple(groups), assignment=assignment, modes=modes, winner=winner + 1,
                        winning_score=top, runner_up=second, threshold_margin=top - theta,
                        gap_margin=top - second - mu, theta=float(theta), mu=float(mu))


def partition_rows_stable(partition, B, delta):
    """Rows whose assignment provably survives an entrywise perturbation ``delta``.

    Every squared score moves by at most ``2 B delta`` when ``B`` bounds the
    entries of both profiles. A signal row is kept when it clears the
    threshold by ``2 B delta`` and its lead exceeds both ``mu`` and zero by
    more than ``4 B delta``; a residual row is kept when it fails one of the
    tests by the same amounts.
    """
    shift = 2.0 * B * delta
    tm, gm = partition.threshold_margin, partition.gap_margin
    lead = partition.winning_score - partition.runner_up
    signal = partition.assignment > 0
    keep_signal = (tm >= shift) & (gm > 2 * shift) & (lead > 2 * shift)
    keep_resid = (tm < -shift) | (gm < -2 * shift)
    return np.where(signal, keep_signal, keep_resid)


# ----------------------------------------------------------------------------
# alignment structure and active columns


@dataclass(frozen=True, eq=False)
class AlignmentStructure:
    """Row groups, active column sets and order gaps for one alignment matrix."""

    row_groups: tuple
    active_sets: tuple
    support_sizes: tuple
    gaps: tuple
    scores: np.ndarray = field(repr=False)
    n_rows: int
    n_cols: int
    energy_fractions: tuple | None = None
    row_perm: tuple | None = None
    col_perm: tuple | None = None
    column_tag: str = "mode"
    thresholds: dict = field(default_factory=dict)

    @property
    def K(self):
        return len(self.row_groups) - 1

    def labels(self):
        """Row label vector: 0 for the residual group, ``i`` for signal group ``i``."""
        lab = np.zeros(self.n_rows, dtype=np.int64)
        for i, g in enumerate(self.row_groups[1:], start=1):
            lab[list(g)] = i
        return lab

    def membership(self):
        """Boolean ``K x n`` matrix with ``[i-1, c]`` true iff ``c`` is active for group ``i``."""
        mem = np.zeros((self.K, self.n_cols), dtype=bool)
        for i, C in enumerate(self.active_sets):
            mem[i, list(C)] = True
        return mem

    def degrees(self):
        return self.membership().sum(axis=0)


def _normalise_groups(row_groups, m):
    groups = [tuple(sorted(int(r) for r in g)) for g in row_groups]
    if len(groups) < 2:
        raise StructureError("need the residual group plus at least one signal group")
    seen = np.zeros(m, dtype=np.int64)
    for g in groups:
        for r in g:
            if not 0 <= r < m:
                raise StructureError(f"row index {r} outside [0, {m})")
            seen[r] += 1
    if np.any(seen > 1):
        raise StructureError("row groups overlap")
    missing = np.flatnonzero(seen == 0)
    if missing.size:
        # rows not named anywhere belong to the residual group
        groups[0] = tuple(sorted(groups[0] + tuple(missing.tolist())))
    return tuple(groups)


def groups_from_labels(labels, K=None):
    """Row groups (residual first) from an integer label per row."""
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0):
        raise StructureError("row labels must be nonnegative")
    K = int(labels.max()) if K is None else int(K)
    return tuple(tuple(np.flatnonzero(labels == g).tolist()) for g in range(K + 1))


def column_scores(M, row_groups):
    """``q_i(c) = ||M[R_i, c]||^2`` for every signal group, as a ``K x n`` array."""
    M = np.asarray(M, dtype=np.float64)
    groups = _normalise_groups(row_groups, M.shape[0])
    lab = np.zeros(M.shape[0], dtype=np.int64)
    for i, g in enumerate(groups[1:], start=1):
        lab[list(g)] = i
    return kernels.group_column_scores(M, lab, len(groups) - 1)


def _fraction_size(q, tau):
    order = np.argsort(-q, kind="stable")
    csum = np.cumsum(q[order])
    total = csum[-1]
    hits = np.flatnonzero(csum >= tau * total)
    return max(1, int(hits[0]) + 1) if hits.size else q.size


def active_columns(M, row_groups, sizes=None, fractions=None, column_tag="mode"):
    """Select active columns for every signal group.

    Exactly one of ``sizes`` (top-``s_i`` rule) or ``fractions`` (smallest
    top set reaching an energy fraction ``tau_i``) must be given; either may
    be a scalar applied to all groups. Ties go to the lower column index.
    The order gap ``Gamma_i`` is the smallest chosen score minus the largest
    unchosen one, ``inf`` when every column is chosen.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise InputError("alignment matrix must be a nonempty 2-D array")
    if (sizes is None) == (fractions is None):
        raise StructureError("give exactly one of sizes or fractions")
    groups = _normalise_groups(row_groups, M.shape[0])
    K, n = len(groups) - 1, M.shape[1]
    q = column_scores(M, groups)
    if fractions is not None:
        fr = [float(fractions)] * K if np.isscalar(fractions) else [float(t) for t in fractions]
        if len(fr) != K or any(not (0 < t <= 1) for t in fr):
            raise StructureError("energy fractions must lie in (0, 1], one per group")
        s = [_fraction_size(q[i], fr[i]) for i in range(K)]
    else:
        fr = None
        s = [int(sizes)] * K if np.isscalar(sizes) else [int(x) for x in sizes]
        if len(s) != K:
            raise StructureError(f"expected {K} support sizes, got {len(s)}")
    active, gaps = [], []
    for i in range(K):
        if not 1 <= s[i] <= n:
            raise StructureError(f"support size {s[i]} for group {i + 1} outside [1, {n}]")
        idx, gap = kernels.top_select(q[i], s[i])
        active.append(tuple(int(c) for c in idx))
        gaps.append(gap)
    q.setflags(write=False)
    return AlignmentStructure(row_groups=groups, active_sets=tuple(active), support_sizes=tuple(s),
                              gaps=tuple(gaps), scores=q, n_rows=M.shape[0], n_cols=n,
                              energy_fractions=None if fr is None else tuple(fr), column_tag=column_tag)


def re_extract(M, structure):
    """Re-select active columns on ``M`` with the same row groups and support sizes."""
    new = active_columns(M, structure.row_groups, sizes=structure.support_sizes,
                         column_tag=structure.column_tag)
    return replace(new, energy_fractions=structure.energy_fractions, thresholds=structure.thresholds)


def ordering(structure):
    """Row and column permutations exposing the block layout.

    Rows: signal groups in order, then the residual group. Columns:
    dedicated columns group by group, then shared columns, then inactive.
    """
    rows = [r for g in structure.row_groups[1:] for r in g] + list(structure.row_groups[0])
    deg = structure.degrees()
    cols, placed = [], set()
    for C in structure.active_sets:
        for c in C:
            if deg[c] == 1 and c not in placed:
                cols.append(c)
                placed.add(c)
    shared = sorted(c for c in range(structure.n_cols) if deg[c] >= 2)
    cols += shared
    placed.update(shared)
    cols += [c for c in range(structure.n_cols) if c not in placed]
    return tuple(rows), tuple(cols)


def with_ordering(structure):
    rp, cp = ordering(structure)
    return replace(structure, row_perm=rp, col_perm=cp)


def permute(A, row_perm, col_perm):
    """``Pi_row A Pi_col^T`` for index permutations."""
    A = np.asarray(A)
    return A[np.asarray(row_perm)][:, np.asarray(col_perm)]


# ----------------------------------------------------------------------------
# pairwise margins


def sigma_min_plus(B, cutoff=POSITIVITY_CUTOFF):
    """Smallest singular value above ``cutoff * sigma_1``; 0 for an empty or zero block."""
    B = np.asarray(B, dtype=np.float64)
    if B.size == 0:
        return 0.0
    s = np.linalg.svd(B, compute_uv=False)
    if s[0] == 0:
        return 0.0
    return float(s[s > cutoff * s[0]].min())


def numerical_rank(B, cutoff=POSITIVITY_CUTOFF):
    B = np.asarray(B, dtype=np.float64)
    if B.size == 0:
        return 0
    s = np.linalg.svd(B, compute_uv=False)
    return int(np.count_nonzero(s > cutoff * s[0])) if s[0] > 0 else 0


def _op_norm(B):
    B = np.asarray(B, dtype=np.float64)
    return float(np.linalg.norm(B, 2)) if B.size else 0.0


@dataclass(frozen=True)
class PairMargin:
    """Margins of one pair of signal groups (1-based ids ``i < j``)."""

    i: int
    j: int
    m: float
    o: float
    delta_sigma: float
    gamma: float | None
    nondegenerate: bool
    one_third_holds: bool
    half_gap_holds: bool
    slack: float
    overlap_fro: float
    shared: tuple
    core_ranks: tuple


@dataclass(frozen=True)
class PairwiseMargins:
    pairs: dict

    def nondegenerate(self):
        return [p for p in self.pairs.values() if p.nondegenerate]

    @property
    def m_star(self):
        """Smallest margin over all pairs (``inf`` with fewer than two groups)."""
        return min((p.m for p in self.pairs.values()), default=math.inf)

    @property
    def max_ratio(self):
        """Largest ``3 o / m`` over nondegenerate pairs (0 when there are none)."""
        return max((3 * p.o / p.m for p in self.nondegenerate()), default=0.0)

    def all_one_third(self):
        return all(p.one_third_holds for p in self.nondegenerate())

    def pair_graph(self):
        """Pairs of groups whose active sets intersect."""
        return frozenset((p.i, p.j) for p in self.pairs.values() if p.shared)


def pair_blocks(M, structure, i, j):
    """``(Core_{i\\j}, Core_{j\\i}, Overlap_{i cap j})`` for 1-based groups ``i < j``."""
    M = np.asarray(M, dtype=np.float64)
    Ri, Rj = list(structure.row_groups[i]), list(structure.row_groups[j])
    Ci, Cj = set(structure.active_sets[i - 1]), set(structure.active_sets[j - 1])
    only_i, only_j = sorted(Ci - Cj), sorted(Cj - Ci)
    both = sorted(Ci & Cj)
    return (M[np.ix_(Ri, only_i)], M[np.ix_(Rj, only_j)], M[np.ix_(sorted(Ri + Rj), both)])


def pair_margin(M, structure, i, j):
    core_i, core_j, over = pair_blocks(M, structure, i, j)
    m = min(sigma_min_plus(core_i), sigma_min_plus(core_j))
    o = _op_norm(over)
    fro = float(np.linalg.norm(over)) if over.size else 0.0
    nd = m > 0
    shared = tuple(sorted(set(structure.active_sets[i - 1]) & set(structure.active_sets[j - 1])))
    return PairMargin(i=i, j=j, m=m, o=o, delta_sigma=m - o, gamma=(o / fro) if fro > 0 else None,
                      nondegenerate=nd, one_third_holds=nd and one_third(m, o),
                      half_gap_holds=nd and half_gap(m, o), slack=m - 3.0 * o, overlap_fro=fro,
                      shared=shared, core_ranks=(numerical_rank(core_i), numerical_rank(core_j)))


def pairwise_margins(M, structure):
    """Margins for every pair of signal groups."""
    K = structure.K
    return PairwiseMargins({(i, j): pair_margin(M, structure, i, j)
                            for i in range(1, K + 1) for j in range(i + 1, K + 1)})


def _exact(test, m, o):
    # Compare the exact rational values of finite floats so algebraically equivalent tests agree.
    def scalar(a, b):
        if math.isfinite(a) and math.isfinite(b):
            return test(Fraction(a), Fraction(b))
        return test(a, b)

    out = np.vectorize(scalar, otypes=[bool])(m, o)
    return bool(out) if out.ndim == 0 else out


def one_third(m, o):
    """The calibrated test ``o < m / 3``, evaluated without rounding."""
    return _exact(lambda a, b: 3 * b < a, m, o)


def half_gap(m, o):
    """The equivalent gap test ``o < (m - o) / 2``, evaluated without rounding."""
    return _exact(lambda a, b: 2 * b < a - b, m, o)


def global_overlap_check(overlap_fro, m_star):
    """Sufficient global test: ``||M_overlap||_F < m_* / 3`` implies every one-third verdict."""
    return overlap_fro < m_star / 3.0


# ----------------------------------------------------------------------------
# core / overlap / noise


@dataclass(frozen=True, eq=False)
class CoreOverlapNoise:
    """Disjoint coordinate-mask split ``M = core + overlap + noise``."""

    core: np.ndarray
    overlap: np.ndarray
    noise: np.ndarray
    core_mask: np.ndarray
    overlap_mask: np.ndarray
    noise_mask: np.ndarray
    dedicated: tuple
    shared: tuple
    core_norm: float
    overlap_norm: float
    noise_norm: float
    total_norm: float
    projection_distance: float
    noise_support: tuple | None = None

    @property
    def noise_ratio(self):
        return self.noise_norm / self.total_norm if self.total_norm > 0 else 0.0


def support_split(structure):
    """Dedicated and shared column sets of every signal group."""
    mem = structure.membership()
    deg = mem.sum(axis=0)
    ded = tuple(tuple(c for c in C if deg[c] == 1) for C in structure.active_sets)
    sh = tuple(tuple(c for c in C if deg[c] >= 2) for C in structure.active_sets)
    return ded, sh


def masks(structure):
    ded, sh = support_split(structure)
    core = np.zeros((structure.n_rows, structure.n_cols), dtype=bool)
    over = np.zeros_like(core)
    for i in range(structure.K):
        R = list(structure.row_groups[i + 1])
        if R and ded[i]:
            core[np.ix_(R, list(ded[i]))] = True
        if R and sh[i]:
            over[np.ix_(R, list(sh[i]))] = True
    return core, over, ~(core | over)


def _projection_distance(M, keep):
    # Distance from M to the coordinate subspace spanned by the kept
    # entries, computed through an explicit orthonormal basis of that
    # subspace rather than by reading off the complement.
    flat = M.ravel()
    idx = np.flatnonzero(keep.ravel())
    if idx.size == 0:
        return float(np.linalg.norm(flat))
    coeffs = flat[idx]
    proj = np.zeros_like(flat)
    proj[idx] = coeffs
    return float(np.linalg.norm(flat - proj))


def decompose(M, structure, noise_threshold=None):
    """Split ``M`` into core, overlap and noise parts by coordinate masks.

    ``noise_threshold`` optionally records the thresholded residual support
    ``{(a, b): |noise[a, b]| >= threshold}``.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.shape != (structure.n_rows, structure.n_cols):
        raise StructureError(f"matrix shape {M.shape} does not match structure")
    cm, om, nm = masks(structure)
    core = np.where(cm, M, 0.0)
    over = np.where(om, M, 0.0)
    noise = M - core - over
    ded, sh = support_split(structure)
    support = None
    if noise_threshold is not None:
        support = tuple(map(tuple, np.argwhere(np.abs(noise) >= noise_threshold).tolist()))
    nrm = lambda X: float(np.linalg.norm(X))
    return CoreOverlapNoise(core=core, overlap=over, noise=noise, core_mask=cm, overlap_mask=om,
                            noise_mask=nm, dedicated=ded, shared=sh, core_norm=nrm(core),
                            overlap_norm=nrm(over), noise_norm=nrm(noise), total_norm=nrm(M),
                            projection_distance=_projection_distance(M, cm | om), noise_support=support)


# ----------------------------------------------------------------------------
# incidence structure


@dataclass(frozen=True)
class HubReport:
    column: int
    groups: tuple
    segment_norms: tuple
    column_energy: float
    min_segment: float
    bound: float

    @property
    def holds(self):
        return self.min_segment <= self.bound * (1 + 1e-12) + 1e-300


@dataclass(frozen=True)
class Incidence:
    """Bipartite group/column incidence, column degrees and hub energy bounds."""

    edges: frozenset
    dedicated_edges: frozenset
    shared_edges: frozenset
    degrees: dict
    hubs: tuple
    hub_reports: tuple
    column_tag: str


def incidence(structure, M):
    """Group/column incidence with per-hub energy-degree bounds ``eps <= sqrt(E_c / q)``."""
    M = np.asarray(M, dtype=np.float64)
    mem = structure.membership()
    deg = mem.sum(axis=0)
    edges = frozenset((i + 1, int(c)) for i in range(structure.K) for c in structure.active_sets[i])
    ded = frozenset(e for e in edges if deg[e[1]] == 1)
    degrees = {int(c): int(deg[c]) for c in range(structure.n_cols) if deg[c] > 0}
    hubs = tuple(int(c) for c in range(structure.n_cols) if deg[c] >= 2)
    reports = []
    for h in hubs:
        gs = tuple(int(i) + 1 for i in np.flatnonzero(mem[:, h]))
        segs = tuple(float(np.linalg.norm(M[list(structure.row_groups[g]), h])) for g in gs)
        E = math.fsum(x * x for x in segs)
        reports.append(HubReport(column=h, groups=gs, segment_norms=segs, column_energy=E,
                                 min_segment=min(segs), bound=math.sqrt(E / len(gs))))
    return Incidence(edges=edges, dedicated_edges=ded, shared_edges=edges - ded, degrees=degrees,
                     hubs=hubs, hub_reports=tuple(reports), column_tag=structure.column_tag)


def incidence_signature(structure):
    """Hashable summary of every set-valued object derived from the active sets.

    Two structures with equal signatures have the same active sets, pair
    graph, core/overlap/noise masks, support sets and hubs.
    """
    ded, sh = support_split(structure)
    K = structure.K
    act = [set(C) for C in structure.active_sets]
    pair_graph = frozenset((i + 1, j + 1) for i in range(K) for j in range(i + 1, K) if act[i] & act[j])
    hubs = tuple(c for c in range(structure.n_cols) if structure.degrees()[c] >= 2)
    return (structure.row_groups, structure.active_sets, pair_graph, ded, sh, hubs, structure.column_tag)


# ----------------------------------------------------------------------------
# certificate radius and perturbation stability


@dataclass(frozen=True)
class StaticCertificateRadius:
    r_cert: float
    r_gamma: tuple
    r_pair: dict
    preconditions_met: bool
    reason: str


def certificate_radius(M, structure, margins=None):
    """Largest perturbation size under which the active sets and pair tests provably persist.

    ``r_Gamma,i = -||M||_F + sqrt(||M||_F^2 + Gamma_i / 2)``,
    ``r_pair,ij = (m_ij - 3 o_ij) / 4`` over nondegenerate pairs, and the
    radius is the smallest of them. If some gap or pair test fails the
    radius is 0.
    """
    M = np.asarray(M, dtype=np.float64)
    if margins is None:
        margins = pairwise_margins(M, structure)
    F = float(np.linalg.norm(M))
    r_gamma = tuple(math.inf if math.isinf(g) else (-F + math.sqrt(F * F + g / 2.0)) if g > 0 else 0.0
                    for g in structure.gaps)
    r_pair = {(p.i, p.j): (p.m - 3.0 * p.o) / 4.0 for p in margins.nondegenerate()}
    reasons = []
    if any(g <= 0 for g in structure.gaps):
        reasons.append("active-column gap not positive")
    if any(p.m <= 3.0 * p.o for p in margins.nondegenerate()):
        reasons.append("one-third test fails for a nondegenerate pair")
    if reasons:
        return StaticCertificateRadius(0.0, r_gamma, r_pair, False, "; ".join(reasons))
    r = min(min(r_gamma, default=math.inf), min(r_pair.values(), default=math.inf))
    return StaticCertificateRadius(r, r_gamma, r_pair, True, "ok")


def perturbation_growth(frobenius, eta):
    """``omega = 2 ||M||_F eta + eta^2``: worst change of any column score."""
    return 2.0 * frobenius * eta + eta * eta


@dataclass(frozen=True)
class StabilityVerdict:
    certified: bool
    eta: float
    omega: float
    active_ok: tuple
    pair_ok: dict
    re_extraction_identical: bool | None


def stability_check(M, structure, eta, E=None, margins=None):
    """Check ``Gamma_i > 2 omega`` for all groups and ``3 o + 4 eta < m`` for nondegenerate pairs.

    With a perturbation ``E`` (``||E||_F <= eta`` is required) the structure
    is re-extracted from ``M + E`` and compared set by set.
    """
    M = np.asarray(M, dtype=np.float64)
    if eta < 0:
        raise InputError("eta must be nonnegative")
    if margins is None:
        margins = pairwise_margins(M, structure)
    omega = perturbation_growth(float(np.linalg.norm(M)), eta)
    act = tuple(g > 2.0 * omega for g in structure.gaps)
    pair = {(p.i, p.j): 3.0 * p.o + 4.0 * eta < p.m for p in margins.nondegenerate()}
    certified = all(act) and all(pair.values())
    same = None
    if E is not None:
        E = np.asarray(E, dtype=np.float64)
        if float(np.linalg.norm(E)) > eta * (1 + 1e-12):
            raise InputError("perturbation is larger than eta")
        same = incidence_signature(re_extract(M + E, structure)) == incidence_signature(structure)
    return StabilityVerdict(certified, float(eta), omega, act, pair, same)
