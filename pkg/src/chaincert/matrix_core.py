"""Deterministic SVD gauge, square embedding, tail energies and truncation.

Everything downstream (fits, transports, alignment structures) starts from
a :class:`GaugedSvd`, so the factorisation here is made reproducible: same
input bits give the same factor bits, with a fixed ordering and sign rule
for the singular vectors.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InputError, WindowError

#: Relative cutoff below which singular values are excluded from ``d_sp``.
DEFAULT_RANK_CUTOFF = 1e-12
#: Relative gap below which neighbouring singular values form one cluster.
CLUSTER_GAP = 1e-12
#: Rounding quantum for the in-cluster lexicographic ordering.
ORDER_QUANTUM = 1e-9


@dataclass(frozen=True)
class LayerMatrix:
    """A real layer matrix with an identifying label."""

    entries: np.ndarray
    label: str = ""

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InputError(f"layer {self.label!r}: expected a nonempty 2-D array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InputError(f"layer {self.label!r}: matrix contains non-finite entries")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def rows(self):
        return self.entries.shape[0]

    @property
    def cols(self):
        return self.entries.shape[1]


def as_array(W):
    """Return ``W`` as a float64 array, accepting :class:`LayerMatrix` or array-likes."""
    if isinstance(W, LayerMatrix):
        return W.entries
    arr = np.asarray(W, dtype=np.float64)
    if arr.ndim != 2 or arr.size == 0:
        raise InputError(f"expected a nonempty 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class RankWindow:
    """A retained rank ``R`` chosen on the source or target side of an interface."""

    R: int
    energy_threshold: float | None = None
    side: str = "source"

    def __post_init__(self):
        if self.side not in ("source", "target"):
            raise WindowError(f"window side must be 'source' or 'target', got {self.side!r}")
        if int(self.R) < 1:
            raise WindowError(f"window rank must be at least 1, got {self.R}")

    def check(self, svd):
        if self.R > svd.spectral_length:
            raise WindowError(f"window rank {self.R} exceeds spectral length {svd.spectral_length}")
        return self


@dataclass(frozen=True, eq=False)
class GaugedSvd:
    """Gauge-fixed thin SVD ``W = U diag(sigma) V^T``.

    Attributes
    ----------
    U, sigma, V : ndarray
        Thin factors; ``U`` is ``m x p`` and ``V`` is ``n x p`` with
        ``p = min(m, n)``.
    spectral_length : int
        Number of singular values at or above ``rank_cutoff * sigma[0]``.
    rank_cutoff : float
        Relative numerical-rank threshold used for ``spectral_length``.
    matrix : ndarray
        The factorised matrix, kept for residual computations.
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    spectral_length: int
    rank_cutoff: float
    matrix: np.ndarray = field(repr=False)
    label: str = ""

    @property
    def d_sp(self):
        return self.spectral_length

    @property
    def operator_norm(self):
        return float(self.sigma[0]) if self.sigma.size else 0.0

    @property
    def frobenius_norm(self):
        return math.sqrt(math.fsum(self.sigma**2))

    def window(self, R):
        """Leading ``R`` factors ``(U_R, sigma_R, V_R)``."""
        _check_rank(self, R, allow_zero=True)
        return self.U[:, :R], self.sigma[:R], self.V[:, :R]


def square_embed(W):
    """Zero-pad ``W`` to a ``max(m, n)`` square matrix in the leading block.

    The singular values are those of ``W`` plus ``|m - n|`` zeros, so the
    operator and Frobenius norms are unchanged.
    """
    label = W.label if isinstance(W, LayerMatrix) else ""
    A = as_array(W)
    m, n = A.shape
    k = max(m, n)
    out = np.zeros((k, k))
    out[:m, :n] = A
    return LayerMatrix(out, label)


def _fix_signs(U, V):
    # Largest-magnitude entry of each left vector positive; np.argmax picks
    # the first maximal index on ties.
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs, V * signs


def _cluster_bounds(sigma):
    p = sigma.size
    if p == 0:
        return []
    scale = sigma[0] if sigma[0] > 0 else 1.0
    bounds, start = [], 0
    for i in range(1, p):
        if sigma[i - 1] - sigma[i] >= CLUSTER_GAP * scale:
            bounds.append((start, i))
            start = i
    bounds.append((start, p))
    return bounds


def gauged_svd(W, rank_cutoff=DEFAULT_RANK_CUTOFF):
    """Factor ``W`` under the deterministic gauge.

    Singular values come out nonincreasing. Inside a cluster of equal values
    (relative gap below ``1e-12``) the vectors are ordered by descending
    lexicographic order of their entries rounded to ``1e-9``. Each left vector
    has its largest-magnitude entry positive and the right vector is flipped
    with it.

    Parameters
    ----------
    W : LayerMatrix or array_like
        Real matrix with finite entries.
    rank_cutoff : float
        Values below ``rank_cutoff * sigma_1`` are kept in the factors but
        excluded from ``spectral_length``.
    """
    label = W.label if isinstance(W, LayerMatrix) else ""
    A = as_array(W)
    if not np.all(np.isfinite(A)):
        raise InputError("matrix contains non-finite entries")
    if not (0.0 <= rank_cutoff < 1.0):
        raise InputError(f"rank cutoff must lie in [0, 1), got {rank_cutoff}")
    A = np.array(A, dtype=np.float64, order="C", copy=True)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    V = Vt.T.copy()
    U, V = _fix_signs(U, V)

    order = np.arange(s.size)
    for lo, hi in _cluster_bounds(s):
        if hi - lo < 2:
            continue
        keys = []
        for j in range(lo, hi):
            ku = tuple(np.round(U[:, j] / ORDER_QUANTUM).astype(np.int64).tolist())
            kv = tuple(np.round(V[:, j] / ORDER_QUANTUM).astype(np.int64).tolist())
            keys.append((ku, kv, j))
        keys.sort(reverse=True)
        order[lo:hi] = [k[2] for k in keys]
    U = np.ascontiguousarray(U[:, order])
    V = np.ascontiguousarray(V[:, order])
    s = s[order]

    if s.size and s[0] > 0:
        d_sp = int(np.count_nonzero(s >= rank_cutoff * s[0]))
    else:
        d_sp = 0
    for arr in (U, s, V, A):
        arr.setflags(write=False)
    return GaugedSvd(U=U, sigma=s, V=V, spectral_length=d_sp, rank_cutoff=rank_cutoff, matrix=A, label=label)


def _check_rank(svd, R, allow_zero=True):
    lo = 0 if allow_zero else 1
    if not isinstance(R, (int, np.integer)) or R < lo or R > svd.spectral_length:
        raise WindowError(f"rank {R} outside [{lo}, {svd.spectral_length}] for layer {svd.label!r}")


def tail_energy(svd, R):
    """Discarded energy ``sum_{i > R} sigma_i^2``, equal to ``||W - W^[R]||_F^2``."""
    _check_rank(svd, R)
    return math.fsum(float(x) ** 2 for x in svd.sigma[R:])


def truncate(svd, R):
    """Rank-``R`` truncation ``U_R diag(sigma_R) V_R^T`` as a :class:`LayerMatrix`."""
    _check_rank(svd, R)
    U, s, V = svd.window(R)
    return LayerMatrix((U * s) @ V.T, svd.label)


def orthonormality_defect(F):
    """``max |F^T F - I|`` for a matrix with (nominally) orthonormal columns."""
    F = np.asarray(F)
    return float(np.max(np.abs(F.T @ F - np.eye(F.shape[1])))) if F.size else 0.0
