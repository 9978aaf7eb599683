"""Backend selection for the numeric inner loops.

The compiled extension is used when it was built; otherwise the NumPy
versions take over. Setting ``CHAINCERT_PURE_PYTHON=1`` forces the fallback,
which is how the test-suite exercises both paths.
"""

import importlib
import os

import numpy as np

_NAMES = {"cython": "chaincert._ckernels", "python": "chaincert._pykernels"}


def load_backend(name):
    """Import one backend module explicitly (``"cython"`` or ``"python"``)."""
    return importlib.import_module(_NAMES[name])


def available_backends():
    found = []
    for name in _NAMES:
        try:
            load_backend(name)
        except ImportError:
            continue
        found.append(name)
    return found


if os.environ.get("CHAINCERT_PURE_PYTHON", "") not in ("", "0"):
    _impl = load_backend("python")
else:
    try:
        _impl = load_backend("cython")
    except ImportError:
        _impl = load_backend("python")

BACKEND = _impl.BACKEND_NAME


def group_column_scores(A, labels, K):
    """Column energies of every signal row group; ``labels`` uses 0 for the residual group."""
    A = np.ascontiguousarray(A, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    return _impl.group_column_scores(A, labels, int(K))


def block_energy_sums(scores, member):
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    member = np.ascontiguousarray(member, dtype=np.uint8)
    return _impl.block_energy_sums(scores, member)


def suffix_sums(w):
    return _impl.suffix_sums(np.ascontiguousarray(w, dtype=np.float64))


def top_select(scores, s):
    idx, gap = _impl.top_select(np.ascontiguousarray(scores, dtype=np.float64), int(s))
    return idx, float(gap)
