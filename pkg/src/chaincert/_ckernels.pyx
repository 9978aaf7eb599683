# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops shared by the extraction and spectral routines.

The functions here mirror :mod:`chaincert._pykernels` one for one. Sums are
accumulated in ascending index order so both backends agree to rounding.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND_NAME = "cython"
#: Above this many picks a stable sort beats repeated linear scans.
SCAN_LIMIT = 32


def group_column_scores(const double[:, ::1] A, const long long[::1] labels, Py_ssize_t K):
    """Per-group column energies ``S[g, c] = sum_{labels[r] == g + 1} A[r, c]**2``."""
    cdef Py_ssize_t m = A.shape[0]
    cdef Py_ssize_t n = A.shape[1]
    cdef Py_ssize_t r, c
    cdef long long g
    cdef double v
    out = np.zeros((K, n), dtype=np.float64)
    cdef double[:, ::1] S = out
    for r in range(m):
        g = labels[r]
        if g < 1 or g > K:
            continue
        for c in range(n):
            v = A[r, c]
            S[g - 1, c] += v * v
    return out


def block_energy_sums(const double[:, ::1] scores, const unsigned char[:, ::1] member):
    """Block energies ``B[i, j] = sum_c scores[i, c] * member[j, c]``."""
    cdef Py_ssize_t K = scores.shape[0]
    cdef Py_ssize_t n = scores.shape[1]
    cdef Py_ssize_t J = member.shape[0]
    cdef Py_ssize_t i, j, c
    cdef double acc
    out = np.zeros((K, J), dtype=np.float64)
    cdef double[:, ::1] B = out
    for i in range(K):
        for j in range(J):
            acc = 0.0
            for c in range(n):
                if member[j, c]:
                    acc += scores[i, c]
            B[i, j] = acc
    return out


def suffix_sums(const double[::1] w):
    """Tail sums ``out[r] = sum_{i >= r} w[i]`` with ``out[len(w)] = 0``."""
    cdef Py_ssize_t n = w.shape[0]
    cdef Py_ssize_t r
    out = np.zeros(n + 1, dtype=np.float64)
    cdef double[::1] o = out
    for r in range(n - 1, -1, -1):
        o[r] = o[r + 1] + w[r]
    return out


def top_select(const double[::1] scores, Py_ssize_t s):
    """Top-``s`` indices by score, ties to the lower index.

    Returns the chosen indices in ascending order and the order gap
    ``min(chosen) - max(rest)`` (``inf`` when every index is chosen).
    """
    cdef Py_ssize_t n = scores.shape[0]
    cdef Py_ssize_t k, c, best
    cdef double bv, lo_in, hi_out
    if s > SCAN_LIMIT:
        arr = np.asarray(scores)
        order = np.argsort(-arr, kind="stable")
        idx = np.sort(order[:s]).astype(np.int64)
        if s >= n:
            return idx, np.inf
        return idx, float(arr[order[:s]].min() - arr[order[s:]].max())
    taken_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] taken = taken_arr
    lo_in = np.inf
    for k in range(s):
        best = -1
        bv = 0.0
        for c in range(n):
            if taken[c]:
                continue
            if best < 0 or scores[c] > bv:
                best = c
                bv = scores[c]
        taken[best] = 1
        if bv < lo_in:
            lo_in = bv
    hi_out = -np.inf
    for c in range(n):
        if not taken[c] and scores[c] > hi_out:
            hi_out = scores[c]
    idx = np.flatnonzero(taken_arr).astype(np.int64)
    if s >= n:
        return idx, np.inf
    return idx, lo_in - hi_out
