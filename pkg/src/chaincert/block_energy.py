"""Row-normalised block-overlap energies and the checks built on them.

Row groups here are the signal groups only (a list of ``K`` disjoint
nonempty row sets) and column sets are ``K`` nonempty, possibly
overlapping, column sets. Accepted-overlap graphs map a 0-based group
index to the set of other groups whose blocks count as structured.
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .errors import InputError, StructureError
from .transport import truncated_transport, truncation_bound


@dataclass(frozen=True, eq=False)
class BlockEnergyMatrix:
    """``E[i, j] = ||A[R_i, C_j]||_F^2 / e_i`` with zero rows where ``e_i = 0``."""

    E: np.ndarray
    row_energies: np.ndarray
    block_energies: np.ndarray
    off_mass: float
    diag_mass: float
    zero_rows: tuple

    @property
    def K(self):
        return self.E.shape[0]


def _groups(row_groups, m):
    groups = [np.asarray(sorted(int(r) for r in g), dtype=np.int64) for g in row_groups]
    if not groups:
        raise StructureError("at least one row group is required")
    seen = np.zeros(m, dtype=bool)
    for g in groups:
        if g.size == 0:
            raise StructureError("row groups must be nonempty")
        if g.min() < 0 or g.max() >= m:
            raise StructureError("row index out of range")
        if np.any(seen[g]):
            raise StructureError("row groups must be disjoint")
        seen[g] = True
    return groups


def _membership(col_sets, n, K):
    if len(col_sets) != K:
        raise StructureError(f"expected {K} column sets, got {len(col_sets)}")
    mem = np.zeros((K, n), dtype=np.uint8)
    for j, C in enumerate(col_sets):
        C = [int(c) for c in C]
        if not C:
            raise StructureError("column sets must be nonempty")
        if min(C) < 0 or max(C) >= n:
            raise StructureError("column index out of range")
        mem[j, C] = 1
    return mem


def _labels(groups, m):
    lab = np.zeros(m, dtype=np.int64)
    for i, g in enumerate(groups, start=1):
        lab[g] = i
    return lab


def block_energy(A, row_groups, col_sets):
    """Block-overlap energy matrix of ``A`` for the given groups and column sets."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.size == 0:
        raise InputError("expected a nonempty 2-D matrix")
    groups = _groups(row_groups, A.shape[0])
    K = len(groups)
    scores = kernels.group_column_scores(A, _labels(groups, A.shape[0]), K)
    blocks = kernels.block_energy_sums(scores, _membership(col_sets, A.shape[1], K))
    e = scores.sum(axis=1)
    E = np.zeros((K, K))
    pos = e > 0
    E[pos] = blocks[pos] / e[pos, None]
    diag = float(np.trace(E)) / K
    off = float(E.sum() - np.trace(E)) / K
    return BlockEnergyMatrix(E=E, row_energies=e, block_energies=blocks, off_mass=off, diag_mass=diag,
                             zero_rows=tuple(int(i) for i in np.flatnonzero(~pos)))


def from_structure(A, structure):
    """Block energies using the signal groups and active sets of an alignment structure."""
    return block_energy(A, structure.row_groups[1:], structure.active_sets)


def _bad_pairs(K, accepted):
    accepted = accepted or {}
    for i in accepted:
        if not 0 <= i < K or any(not 0 <= j < K for j in accepted[i]):
            raise StructureError("accepted-overlap graph refers to an unknown group")
    return [(i, j) for i in range(K) for j in range(K) if j != i and j not in accepted.get(i, ())]


@dataclass(frozen=True)
class BadMassReport:
    """Bad off-block mass in normalised and energy form plus the visible-noise bound chain."""

    accepted: dict
    bad_pairs: tuple
    normalized: float
    unnormalized: float
    visible_noise_sq: float
    e_max: float
    energy_bound: float

    @property
    def chain_holds(self):
        tol = 1e-12 * max(1.0, self.energy_bound)
        return self.visible_noise_sq <= self.unnormalized + tol and self.unnormalized <= self.energy_bound + tol


def bad_mass(A, row_groups, col_sets, accepted=None):
    """Measured bad block energy for an accepted-overlap graph (default: diagonal only).

    ``visible_noise_sq`` is ``||A||_F^2`` restricted to the union of bad
    block coordinates; it is bounded by the unnormalised bad energy, which
    in turn is at most ``K e_max`` times the normalised bad mass.
    """
    A = np.asarray(A, dtype=np.float64)
    bem = block_energy(A, row_groups, col_sets)
    K = bem.K
    accepted = {int(i): frozenset(int(j) for j in v) for i, v in (accepted or {}).items()}
    bad = _bad_pairs(K, accepted)
    groups = _groups(row_groups, A.shape[0])
    mask = np.zeros(A.shape, dtype=bool)
    for i, j in bad:
        mask[np.ix_(groups[i], sorted(int(c) for c in col_sets[j]))] = True
    norm = math.fsum(bem.E[i, j] for i, j in bad) / K
    unnorm = math.fsum(bem.block_energies[i, j] for i, j in bad)
    e_max = float(bem.row_energies.max())
    return BadMassReport(accepted=accepted, bad_pairs=tuple(bad), normalized=norm, unnormalized=unnorm,
                         visible_noise_sq=float(np.sum(A[mask] ** 2)), e_max=e_max,
                         energy_bound=K * e_max * norm)


def bad_mass_normalized(E, accepted=None):
    """``(1/K) sum_{bad (i, j)} E[i, j]`` directly from an energy matrix."""
    E = np.asarray(E, dtype=np.float64)
    K = E.shape[0]
    return math.fsum(E[i, j] for i, j in _bad_pairs(K, accepted)) / K


# ----------------------------------------------------------------------------
# heatmap margin screen


@dataclass(frozen=True)
class HeatmapScreen:
    """``H_ij = 3 sqrt(e_i E_ij + e_j E_ji) / m_ij`` for screened pairs (0-based)."""

    scores: dict
    numerators: dict
    perturbation_slack: dict
    H_max: float
    slack: float

    @property
    def certified(self):
        return self.H_max < 1.0


def margin_screen(E, e, margins):
    """Screen pairwise one-third verdicts from block energies.

    Parameters
    ----------
    E : array_like
        ``K x K`` block-energy matrix built on the active column sets.
    e : array_like
        Row energies ``e_i``.
    margins : dict
        ``{(i, j): m_ij}`` with 0-based ``i < j``; every margin must be positive.
    """
    E = np.asarray(E, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    scores, nums, slack = {}, {}, {}
    for (i, j), m in margins.items():
        if not m > 0:
            raise StructureError(f"pair {(i, j)} is degenerate (margin {m}) and cannot be screened")
        a = e[i] * E[i, j] + e[j] * E[j, i]
        nums[(i, j)] = float(a)
        scores[(i, j)] = 3.0 * math.sqrt(a) / m
        slack[(i, j)] = float(m * m / 9.0 - a)
    H = max(scores.values(), default=0.0)
    return HeatmapScreen(scores=scores, numerators=nums, perturbation_slack=slack, H_max=H, slack=1.0 - H)


def screen_persists(a, delta, m):
    """``delta < m^2/9 - a``: the screen survives a numerator increase of ``delta``."""
    return delta < m * m / 9.0 - a


# ----------------------------------------------------------------------------
# perturbation and window robustness


def energy_perturbation_bound(delta, S, e_min):
    """``(2S + delta) delta / e_min + S^2 (2S + delta) delta / e_min^2``."""
    if e_min <= 0:
        raise InputError("e_min must be positive")
    core = (2.0 * S + delta) * delta
    return core / e_min + S * S * core / (e_min * e_min)


@dataclass(frozen=True)
class PerturbationCheck:
    delta: float
    S: float
    e_min: float
    bound: float
    measured: float

    @property
    def holds(self):
        return self.measured <= self.bound * (1 + 1e-12) + 1e-15


def perturb_bound(A, B, row_groups, col_sets, e_min=None, S=None, delta=None):
    """Compare the largest entrywise change of the energy matrices with its bound.

    Missing constants are measured: ``delta = ||A - B||_F``, ``S`` the larger
    Frobenius norm and ``e_min`` the smallest row energy of either matrix.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape != B.shape:
        raise InputError("matrices must have the same shape")
    ea, eb = block_energy(A, row_groups, col_sets), block_energy(B, row_groups, col_sets)
    lowest = float(min(ea.row_energies.min(), eb.row_energies.min()))
    if e_min is None:
        e_min = lowest
    elif lowest < e_min:
        raise InputError(f"row energy {lowest} falls below the declared e_min {e_min}")
    if e_min <= 0:
        raise InputError("a row group has zero energy; the perturbation bound needs e_min > 0")
    diff = float(np.linalg.norm(A - B))
    delta = diff if delta is None else float(delta)
    if diff > delta * (1 + 1e-12):
        raise InputError("||A - B||_F exceeds the declared delta")
    S = max(float(np.linalg.norm(A)), float(np.linalg.norm(B))) if S is None else float(S)
    return PerturbationCheck(delta=delta, S=S, e_min=float(e_min),
                             bound=energy_perturbation_bound(delta, S, e_min),
                             measured=float(np.max(np.abs(ea.E - eb.E))))


@dataclass(frozen=True)
class WindowRobustness:
    windows: tuple
    delta: float
    measured_difference: float
    energy_check: PerturbationCheck | None

    @property
    def holds(self):
        ok = self.measured_difference <= self.delta * (1 + 1e-12) + 1e-15
        return ok and (self.energy_check is None or self.energy_check.holds)


def window_robustness(svd_prev, svd_next, R, R2, row_groups=None, col_sets=None, mode="physical"):
    """Two truncated transports at windows ``R`` and ``R2`` against the summed truncation bounds.

    With row groups and column sets, the energy matrices of both truncations
    are also compared using that sum as ``delta``.
    """
    A1 = truncated_transport(svd_prev, svd_next, R, R, mode)
    A2 = truncated_transport(svd_prev, svd_next, R2, R2, mode)
    delta = truncation_bound(svd_prev, svd_next, R, R) + truncation_bound(svd_prev, svd_next, R2, R2)
    check = None
    if row_groups is not None:
        check = perturb_bound(A1, A2, row_groups, col_sets, delta=delta)
    return WindowRobustness(windows=(int(R), int(R2)), delta=delta,
                            measured_difference=float(np.linalg.norm(A1 - A2)), energy_check=check)


# ----------------------------------------------------------------------------
# scale and leakage transfer


@dataclass(frozen=True, eq=False)
class ScaleTransfer:
    theta: float
    E_scale_free: np.ndarray
    E_weighted: np.ndarray
    entrywise_holds: bool
    bad_scale_free: float
    bad_weighted: float
    bad_transfer_holds: bool
    support_preserved: bool


def scale_transfer(A, row_weights, col_weights, row_groups, col_sets, accepted=None, bounds=None):
    """Check ``Theta^{-1} E(A) <= E(D_r A D_c) <= Theta E(A)`` with ``Theta = (a+ b+ / a- b-)^2``.

    ``bounds`` optionally declares ``(a_minus, a_plus, b_minus, b_plus)``;
    by default the extreme weights are used.
    """
    A = np.asarray(A, dtype=np.float64)
    a = np.asarray(row_weights, dtype=np.float64).ravel()
    b = np.asarray(col_weights, dtype=np.float64).ravel()
    if a.size != A.shape[0] or b.size != A.shape[1]:
        raise InputError("weight vectors must match the matrix shape")
    if np.any(a <= 0) or np.any(b <= 0):
        raise InputError("diagonal weights must be positive")
    if bounds is None:
        bounds = (a.min(), a.max(), b.min(), b.max())
    am, ap, bm, bp = map(float, bounds)
    if a.min() < am or a.max() > ap or b.min() < bm or b.max() > bp:
        raise InputError("weights fall outside the declared bounds")
    theta = ((ap * bp) / (am * bm)) ** 2
    B = (a[:, None] * A) * b[None, :]
    EA, EB = block_energy(A, row_groups, col_sets), block_energy(B, row_groups, col_sets)
    tol = 1e-12
    upper = np.all(EB.E <= theta * EA.E * (1 + tol) + tol * 1e-3)
    lower = np.all(EA.E / theta <= EB.E * (1 + tol) + tol * 1e-3)
    badA = bad_mass_normalized(EA.E, accepted)
    badB = bad_mass_normalized(EB.E, accepted)
    return ScaleTransfer(theta=theta, E_scale_free=EA.E, E_weighted=EB.E, entrywise_holds=bool(upper and lower),
                         bad_scale_free=badA, bad_weighted=badB,
                         bad_transfer_holds=badB <= theta * badA * (1 + tol) + tol * 1e-3,
                         support_preserved=bool(np.array_equal(EA.block_energies == 0, EB.block_energies == 0)))


@dataclass(frozen=True)
class LeakageGroup:
    group: int
    ell_diag: float
    ell_off: float
    multiplicity: int
    bad_scale_free: float
    bad_realized: float
    bound: float

    @property
    def holds(self):
        return math.sqrt(self.bad_realized) <= self.bound * (1 + 1e-12) + 1e-15


def row_leakage(A, L, row_groups, col_bins, accepted=None):
    """Bound the bad energy of ``L A`` by row-block leakage of ``L`` and the bad energy of ``A``.

    ``sqrt(Bad_i(LA)) <= l_ii sqrt(Bad_i(A)) + sqrt(mu_i) l_i^off ||A||_F``
    where ``l_i^off`` sums operator norms of ``P_i L P_a`` over the other
    groups and the block of rows outside every group.
    """
    A = np.asarray(A, dtype=np.float64)
    L = np.asarray(L, dtype=np.float64)
    m = A.shape[0]
    if L.shape != (m, m):
        raise InputError("L must be square with the row count of A")
    groups = _groups(row_groups, m)
    K = len(groups)
    covered = np.concatenate(groups)
    rest = np.setdiff1d(np.arange(m), covered)
    blocks = groups + ([rest] if rest.size else [])
    bins = [sorted(int(c) for c in C) for C in col_bins]
    if len(bins) != K:
        raise StructureError(f"expected {K} column bins")
    fro = float(np.linalg.norm(A))
    B = L @ A
    bad = _bad_pairs(K, accepted)
    op = lambda X: float(np.linalg.norm(X, 2)) if X.size else 0.0
    out = []
    for i in range(K):
        bad_j = [j for (ii, j) in bad if ii == i]
        P = groups[i]
        ell_ii = op(L[np.ix_(P, P)])
        ell_off = math.fsum(op(L[np.ix_(P, blk)]) for a, blk in enumerate(blocks) if a != i)
        mult = np.zeros(A.shape[1], dtype=np.int64)
        for j in bad_j:
            mult[bins[j]] += 1
        mu = int(mult.max()) if bad_j else 0
        badA = math.fsum(float(np.sum(A[np.ix_(P, bins[j])] ** 2)) for j in bad_j)
        badB = math.fsum(float(np.sum(B[np.ix_(P, bins[j])] ** 2)) for j in bad_j)
        out.append(LeakageGroup(group=i, ell_diag=ell_ii, ell_off=ell_off, multiplicity=mu, bad_scale_free=badA,
                                bad_realized=badB,
                                bound=ell_ii * math.sqrt(badA) + math.sqrt(mu) * ell_off * fro))
    return tuple(out)


# ----------------------------------------------------------------------------
# coarsening


@dataclass(frozen=True, eq=False)
class Coarsening:
    """Coarse energies from fine ones plus the three descent checks."""

    E: np.ndarray
    row_energies: np.ndarray
    accepted_pairs: frozenset
    fine_bad: float
    coarse_bad: float
    fine_bad_normalized: float
    zero_descends: bool
    energy_descends: bool
    normalized_descends: bool


def _check_map(pi, K, name):
    pi = np.asarray(pi, dtype=np.int64)
    if pi.shape != (K,):
        raise StructureError(f"{name} must map each of the {K} fine groups")
    k = int(pi.max()) + 1
    if pi.min() < 0 or set(pi.tolist()) != set(range(k)):
        raise StructureError(f"{name} is not surjective onto 0..{k - 1}")
    return pi, k


def coarsen(E, e, pi_r, pi_c, accepted=None):
    """Row-energy weighted aggregation of a fine block-energy matrix.

    ``Ebar[a, b] = sum_{pi_r(i)=a} e_i sum_{pi_c(j)=b} E_ij / sum_{pi_r(i)=a} e_i``.
    A coarse block is accepted when some accepted fine block (diagonal or in
    ``accepted``) maps into it; the remaining blocks are coarse bad.
    """
    E = np.asarray(E, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    K = E.shape[0]
    if E.shape != (K, K) or e.shape != (K,):
        raise InputError("E must be K x K and e of length K")
    if np.any(e <= 0):
        raise InputError("coarsening needs positive fine row energies")
    pr, Kr = _check_map(pi_r, K, "row map")
    pc, Kc = _check_map(pi_c, K, "column map")
    fine_blocks = e[:, None] * E
    coarse_blocks = np.zeros((Kr, Kc))
    np.add.at(coarse_blocks, (pr[:, None], pc[None, :]), fine_blocks)
    ebar = np.zeros(Kr)
    np.add.at(ebar, pr, e)
    Ebar = coarse_blocks / ebar[:, None]

    bad = _bad_pairs(K, accepted)
    bad_set = set(bad)
    acc = frozenset((int(pr[i]), int(pc[j])) for i in range(K) for j in range(K) if (i, j) not in bad_set)
    coarse_bad_pairs = [(a, b) for a in range(Kr) for b in range(Kc) if (a, b) not in acc]
    fine_bad = math.fsum(fine_blocks[i, j] for i, j in bad)
    coarse_bad = math.fsum(coarse_blocks[a, b] for a, b in coarse_bad_pairs)
    fine_norm = math.fsum(E[i, j] for i, j in bad) / K
    tol = 1e-12 * max(1.0, fine_bad)
    zero_ok = fine_bad > 0 or coarse_bad == 0
    return Coarsening(E=Ebar, row_energies=ebar, accepted_pairs=acc, fine_bad=fine_bad, coarse_bad=coarse_bad,
                      fine_bad_normalized=fine_norm, zero_descends=zero_ok,
                      energy_descends=coarse_bad <= fine_bad + tol,
                      normalized_descends=coarse_bad <= K * float(e.max()) * fine_norm + tol)


def coarse_direct(A, row_groups, col_bins, pi_r, pi_c):
    """Block energies recomputed on the merged row groups and column bins."""
    A = np.asarray(A, dtype=np.float64)
    K = len(row_groups)
    bins = [set(int(c) for c in C) for C in col_bins]
    for x in range(K):
        for y in range(x + 1, K):
            if bins[x] & bins[y]:
                raise StructureError("fine column bins must be disjoint for coarsening")
    pr, Kr = _check_map(pi_r, K, "row map")
    pc, Kc = _check_map(pi_c, K, "column map")
    rows = [sorted(r for i in range(K) if pr[i] == a for r in row_groups[i]) for a in range(Kr)]
    cols = [sorted(c for j in range(K) if pc[j] == b for c in bins[j]) for b in range(Kc)]
    e = np.array([float(np.sum(A[R] ** 2)) for R in rows])
    E = np.zeros((Kr, Kc))
    for a in range(Kr):
        if e[a] > 0:
            for b in range(Kc):
                E[a, b] = float(np.sum(A[np.ix_(rows[a], cols[b])] ** 2)) / e[a]
    return E
