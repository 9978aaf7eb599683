"""Seeded fixture generators, null-baseline chains and brute-force oracles."""

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
import math

import numpy as np

from .errors import InfeasibleSpecError, InputError, OracleLimitError
from .matrix_core import LayerMatrix, as_array, gauged_svd

ENUMERATION_LIMIT = 12
FRAME_MODES = ("aligned", "random", "identity", "permutation")
NULL_KINDS = ("gaussian", "spectrum-preserving", "permuted")


def random_orthogonal(n, rng):
    """Orthogonal ``n x n`` matrix from the QR factorisation of a Gaussian draw.

    Columns are flipped so the triangular factor has a positive diagonal,
    which makes the result a deterministic function of the draw.
    """
    Z = rng.standard_normal((n, n))
    Q, R = np.linalg.qr(Z)
    s = np.sign(np.diag(R))
    s[s == 0] = 1.0
    return Q * s


def random_signed_permutation(n, rng):
    """Permutation matrix with random column signs."""
    P = np.eye(n)[:, rng.permutation(n)]
    return P * rng.choice([-1.0, 1.0], size=n)


# ----------------------------------------------------------------------------
# power-law chains


@dataclass(frozen=True)
class SynthChainSpec:
    """Chain of ``L`` square ``d x d`` layers with exact power-law spectra.

    ``alphas`` is one exponent per layer (a scalar repeats). With
    ``normalize`` every layer has ``||W||_F^2 = d``; with ``top_value`` the
    leading singular value is fixed instead, which pins the interface budget
    of aligned chains at ``top_value``.
    """

    d: int
    L: int
    alphas: tuple
    seed: int = 0
    normalize: bool = True
    frames: str = "aligned"
    top_value: float | None = None

    def exponents(self):
        a = (float(self.alphas),) * self.L if np.isscalar(self.alphas) else tuple(float(x) for x in self.alphas)
        if len(a) != self.L:
            raise InputError(f"expected {self.L} exponents, got {len(a)}")
        return a


def power_law_values(d, alpha, normalize=True, top_value=None):
    """``C i^{-alpha}`` for ``i = 1..d`` scaled by ``||.||^2 = d`` or by the top value."""
    base = np.arange(1, d + 1, dtype=np.float64) ** (-float(alpha))
    if top_value is not None:
        return float(top_value) * base
    if normalize:
        return base * math.sqrt(d / math.fsum(base**2))
    return base


def gen_power_law_chain(spec):
    """Layers ``W_k = Q_k diag(sigma_k) P_k^T`` with seeded orthogonal frames.

    ``aligned`` frames set ``P_{k+1} = Q_k`` so every interface composes
    the dominant directions in order; ``permutation`` does the same with
    signed permutation frames, so each mode lives on one physical channel;
    ``random`` draws every frame independently; ``identity`` gives diagonal
    layers.
    """
    if spec.frames not in FRAME_MODES:
        raise InputError(f"unknown frame mode {spec.frames!r}")
    if spec.d < 1 or spec.L < 1:
        raise InputError("d and L must be positive")
    if spec.normalize and spec.top_value is not None:
        raise InfeasibleSpecError("Frobenius normalisation and a fixed top value cannot both hold")
    alphas = spec.exponents()
    if any(a <= 0 for a in alphas):
        raise InputError("exponents must be positive")
    rng = np.random.default_rng(spec.seed)
    d = spec.d
    layers = []
    draw = {"identity": lambda: np.eye(d), "permutation": lambda: random_signed_permutation(d, rng)}.get(
        spec.frames, lambda: random_orthogonal(d, rng))
    P = draw()
    for k, a in enumerate(alphas):
        s = power_law_values(d, a, spec.normalize, spec.top_value)
        Q = draw()
        layers.append(LayerMatrix((Q * s) @ P.T, f"layer{k}"))
        if spec.frames in ("aligned", "permutation"):
            P = Q
        elif spec.frames == "random":
            P = random_orthogonal(d, rng)
    return layers


def null_chain(layers, kind, rng):
    """Null-control chain matched to ``layers``.

    ``gaussian``: i.i.d. entries with the layer's Frobenius norm.
    ``spectrum-preserving``: the same singular values in fresh random frames.
    ``permuted``: independent random row and column permutations per layer.
    """
    if kind not in NULL_KINDS:
        raise InputError(f"unknown baseline {kind!r}")
    out = []
    for W in layers:
        A = as_array(W)
        label = getattr(W, "label", "")
        if kind == "gaussian":
            G = rng.standard_normal(A.shape)
            G *= np.linalg.norm(A) / np.linalg.norm(G)
        elif kind == "spectrum-preserving":
            s = np.linalg.svd(A, compute_uv=False)
            U = random_orthogonal(A.shape[0], rng)[:, : s.size]
            V = random_orthogonal(A.shape[1], rng)[:, : s.size]
            G = (U * s) @ V.T
        else:
            G = A[rng.permutation(A.shape[0])][:, rng.permutation(A.shape[1])]
        out.append(LayerMatrix(G, f"{label}-{kind}"))
    return out


# ----------------------------------------------------------------------------
# planted alignment structures


@dataclass(frozen=True)
class SynthStructureSpec:
    """Planted block structure.

    Group ``i`` owns ``row_sizes[i]`` rows and ``dedicated[i]`` dedicated
    columns carrying a core block whose singular values all equal ``margin``.
    Each entry of ``shared`` is a tuple of 0-based groups sharing one column;
    every shared column carries a rank-one overlap of operator norm
    ``overlap``. ``noise`` is the exact Frobenius norm placed on the noise
    mask (residual rows and off-structure coordinates). The planted margin
    is exact for a pair ``(i, j)`` when every shared column of either group
    also involves the other; columns shared with third groups enter the
    exclusive blocks and lower the realised margin.
    """

    row_sizes: tuple
    dedicated: tuple
    shared: tuple = ()
    margin: float = 1.0
    overlap: float = 0.0
    noise: float = 0.0
    residual_rows: int = 0
    inactive_cols: int = 0
    seed: int = 0
    shuffle: bool = False
    require_one_third: bool = False


@dataclass(frozen=True, eq=False)
class PlantedStructure:
    matrix: np.ndarray
    row_groups: tuple
    active_sets: tuple
    support_sizes: tuple
    noise_matrix: np.ndarray = field(repr=False)


def gen_structured_transport(spec):
    """Plant a core/overlap/noise structure and return it with its ground truth."""
    K = len(spec.row_sizes)
    if K < 1 or len(spec.dedicated) != K:
        raise InputError("row_sizes and dedicated must list the same positive number of groups")
    if spec.margin <= 0 or spec.overlap < 0 or spec.noise < 0:
        raise InputError("margin must be positive, overlap and noise nonnegative")
    if spec.require_one_third and not spec.overlap < spec.margin / 3.0:
        raise InfeasibleSpecError(f"overlap {spec.overlap} cannot satisfy the one-third test with margin {spec.margin}")
    for i in range(K):
        if not 1 <= spec.dedicated[i] <= spec.row_sizes[i]:
            raise InfeasibleSpecError("each group needs 1 <= dedicated columns <= rows for a flat core spectrum")
    for tup in spec.shared:
        if len(set(tup)) < 2 or any(not 0 <= g < K for g in tup):
            raise InfeasibleSpecError("a shared column needs at least two distinct valid groups")
    rng = np.random.default_rng(spec.seed)
    m = sum(spec.row_sizes) + spec.residual_rows
    n = sum(spec.dedicated) + len(spec.shared) + spec.inactive_cols
    M = np.zeros((m, n))

    rows, r0 = [], 0
    for sz in spec.row_sizes:
        rows.append(list(range(r0, r0 + sz)))
        r0 += sz
    residual = list(range(r0, m))
    active, c0 = [[] for _ in range(K)], 0
    for i in range(K):
        cols = list(range(c0, c0 + spec.dedicated[i]))
        c0 += spec.dedicated[i]
        Q = random_orthogonal(len(rows[i]), rng)[:, : len(cols)]
        M[np.ix_(rows[i], cols)] = spec.margin * Q
        active[i] += cols
    for tup in spec.shared:
        c = c0
        c0 += 1
        span = [r for g in sorted(tup) for r in rows[g]]
        u = np.abs(rng.standard_normal(len(span))) + 0.5
        M[span, c] = spec.overlap * u / np.linalg.norm(u)
        for g in tup:
            active[g].append(c)

    cm = np.zeros((m, n), dtype=bool)
    for i in range(K):
        cm[np.ix_(rows[i], active[i])] = True
    N = np.zeros((m, n))
    if spec.noise > 0:
        free = ~cm
        if not free.any():
            raise InfeasibleSpecError("no noise coordinates available")
        G = rng.standard_normal(int(free.sum()))
        N[free] = spec.noise * G / np.linalg.norm(G)
    M = M + N

    groups = [tuple(residual)] + [tuple(r) for r in rows]
    sets = [tuple(sorted(a)) for a in active]
    if spec.shuffle:
        rp, cp = rng.permutation(m), rng.permutation(n)
        inv_r, inv_c = np.argsort(rp), np.argsort(cp)
        M, N = M[rp][:, cp], N[rp][:, cp]
        groups = [tuple(sorted(int(inv_r[r]) for r in g)) for g in groups]
        sets = [tuple(sorted(int(inv_c[c]) for c in s)) for s in sets]
    return PlantedStructure(matrix=M, row_groups=tuple(groups), active_sets=tuple(sets),
                            support_sizes=tuple(len(s) for s in sets), noise_matrix=N)


# ----------------------------------------------------------------------------
# brute-force oracles


def exhaustive_active_columns(scores, s):
    """Best size-``s`` subset by exact score sum, lexicographically first among ties, and its gap."""
    q = [Fraction(float(x)) for x in scores]
    n = len(q)
    if n > ENUMERATION_LIMIT:
        raise OracleLimitError(f"{n} columns exceed the enumeration limit {ENUMERATION_LIMIT}")
    best, best_sum = None, None
    for sub in combinations(range(n), s):
        tot = sum((q[c] for c in sub), Fraction(0))
        if best_sum is None or tot > best_sum:
            best, best_sum = sub, tot
    out = [c for c in range(n) if c not in best]
    gap = math.inf if not out else float(min(q[c] for c in best) - max(q[c] for c in out))
    return best, gap


def exhaustive_effective_rank(sigma, eps):
    """First ``r >= 1`` whose exact tail fraction is at most ``eps``.

    Squared floats are dyadic rationals, so every energy is held as an
    integer over a shared power-of-two denominator and the scan is exact.
    """
    ratios = [abs(float(x)).as_integer_ratio() for x in sigma]
    shift = max((den.bit_length() - 1 for _, den in ratios), default=0)
    w = [(num * num) << (2 * (shift - den.bit_length() + 1)) for num, den in ratios]
    total = sum(w)
    e_num, e_den = float(eps).as_integer_ratio()
    tail = total
    for r in range(1, len(w) + 1):
        tail -= w[r - 1]
        if tail * e_den <= e_num * total:
            return r
    return len(w)


def two_by_two_singular_values(B):
    """Closed-form singular values of a 2 x 2 matrix."""
    (a, b), (c, d) = np.asarray(B, dtype=np.float64)
    s = a * a + b * b + c * c + d * d
    det = abs(a * d - b * c)
    root = math.sqrt(max(s * s / 4.0 - det * det, 0.0))
    big = math.sqrt(s / 2.0 + root)
    small = det / big if big > 0 else 0.0
    return big, small


def direct_pair_margin(M, row_groups, active_sets, i, j):
    """``(m_ij, o_ij)`` for 1-based groups by explicit block slicing and full SVDs."""
    M = np.asarray(M, dtype=np.float64)
    Ci, Cj = set(active_sets[i - 1]), set(active_sets[j - 1])

    def smin(rows, cols):
        if not rows or not cols:
            return 0.0
        s = np.linalg.svd(M[np.ix_(rows, cols)], compute_uv=False)
        s = s[s > 1e-12 * s[0]] if s[0] > 0 else s[:0]
        return float(s.min()) if s.size else 0.0

    m = min(smin(list(row_groups[i]), sorted(Ci - Cj)), smin(list(row_groups[j]), sorted(Cj - Ci)))
    both = sorted(Ci & Cj)
    rows = sorted(list(row_groups[i]) + list(row_groups[j]))
    o = float(np.linalg.svd(M[np.ix_(rows, both)], compute_uv=False)[0]) if both else 0.0
    return m, o


def direct_coarse_energies(A, row_groups, col_bins, pi_r, pi_c):
    """Coarse block energies by explicit loops over coordinates."""
    A = np.asarray(A, dtype=np.float64)
    Kr, Kc = max(pi_r) + 1, max(pi_c) + 1
    num = [[0.0] * Kc for _ in range(Kr)]
    den = [0.0] * Kr
    for i, R in enumerate(row_groups):
        a = pi_r[i]
        for r in R:
            den[a] += float(np.dot(A[r], A[r]))
            for j, C in enumerate(col_bins):
                for c in C:
                    num[a][pi_c[j]] += float(A[r, c]) ** 2
    return np.array([[num[a][b] / den[a] if den[a] > 0 else 0.0 for b in range(Kc)] for a in range(Kr)])


def spectrum(W):
    """Gauge-fixed singular values of a layer."""
    return np.array(gauged_svd(W).sigma)
