"""NumPy implementations of the inner loops in :mod:`chaincert._ckernels`."""

import numpy as np

BACKEND_NAME = "python"


def group_column_scores(A, labels, K):
    A = np.asarray(A, dtype=np.float64)
    labels = np.asarray(labels)
    out = np.zeros((K, A.shape[1]))
    for g in range(1, K + 1):
        rows = np.flatnonzero(labels == g)
        if rows.size:
            out[g - 1] = np.square(A[rows]).sum(axis=0)
    return out


def block_energy_sums(scores, member):
    scores = np.asarray(scores, dtype=np.float64)
    member = np.asarray(member, dtype=bool)
    out = np.zeros((scores.shape[0], member.shape[0]))
    for j in range(member.shape[0]):
        cols = np.flatnonzero(member[j])
        if cols.size:
            out[:, j] = scores[:, cols].sum(axis=1)
    return out


def suffix_sums(w):
    w = np.asarray(w, dtype=np.float64)
    out = np.zeros(w.size + 1)
    if w.size:
        out[:-1] = np.cumsum(w[::-1])[::-1]
    return out


def top_select(scores, s):
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    order = np.argsort(-scores, kind="stable")
    chosen = np.sort(order[:s]).astype(np.int64)
    if s >= n:
        return chosen, np.inf
    return chosen, float(scores[order[:s]].min() - scores[order[s:]].max())
