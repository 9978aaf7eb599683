"""Interface transport matrices and their truncation-error bounds.

For adjacent layers ``W_k = U_k S_k V_k^T`` and ``W_{k+1}``, the transports
measure how the dominant output frame of layer ``k`` is read by the input
frame of layer ``k+1``. Eight variants are built; each carries the
coordinate meaning of its rows and columns so downstream support sets are
reported as source modes or physical channels correctly.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import DimensionError, InputError, WindowError
from .matrix_core import tail_energy

VARIANTS = ("ang", "src", "tgt", "total", "out_ang", "out", "out_total", "phys")

#: (row coordinates, column coordinates) of each variant.
COORDINATES = {
    "ang": ("latent", "source-mode"),
    "src": ("latent", "source-mode"),
    "tgt": ("latent", "source-mode"),
    "total": ("latent", "source-mode"),
    "out_ang": ("physical-output", "source-mode"),
    "out": ("physical-output", "source-mode"),
    "out_total": ("physical-output", "source-mode"),
    "phys": ("physical-output", "physical-input"),
}

#: Variants whose rows are physical outputs of the next layer, where a
#: full-row (untruncated target) version exists.
FULL_ROW_CAPABLE = ("out", "out_total", "phys")


@dataclass(frozen=True, eq=False)
class TransportMatrix:
    """One interface transport with its coordinate metadata.

    ``full_row`` is true when the target layer was used untruncated; then
    ``target_tail_bound`` holds ``E_{>R_t}(W_{k+1})^{1/2}``, the Frobenius
    bound on the difference from the target-truncated version.
    """

    entries: np.ndarray
    variant: str
    row_coords: str
    col_coords: str
    R_s: int
    R_t: int
    full_row: bool = False
    target_tail_bound: float = 0.0
    interface_index: int | None = None

    @property
    def column_tag(self):
        """``"mode"`` for source-mode columns, ``"channel"`` for physical input columns."""
        return "channel" if self.col_coords == "physical-input" else "mode"


def _aligned_frames(U_prev, V_next, embed):
    # V_{k+1}^T U_k needs the input dimension of k+1 to equal the output of k.
    a, b = U_prev.shape[0], V_next.shape[0]
    if a == b:
        return U_prev, V_next
    if not embed:
        raise DimensionError(f"layer output dimension {a} does not match next input dimension {b}; "
                             "pass embed=True to square-embed")
    k = max(a, b)
    pad = lambda X: np.vstack([X, np.zeros((k - X.shape[0], X.shape[1]))])
    return pad(U_prev), pad(V_next)


def _check_window(svd, R, name):
    if not isinstance(R, (int, np.integer)) or not 1 <= R <= svd.spectral_length:
        raise WindowError(f"{name}={R} outside [1, {svd.spectral_length}] for layer {svd.label!r}")


def build_transport(svd_prev, svd_next, variant, R_s, R_t=None, full_row=False, embed=False,
                    interface_index=None):
    """Build one transport variant for the interface ``k -> k+1``.

    Parameters
    ----------
    svd_prev, svd_next : GaugedSvd
        Factors of ``W_k`` and ``W_{k+1}``.
    variant : str
        One of ``ang, src, tgt, total, out_ang, out, out_total, phys``.
    R_s, R_t : int
        Source and target windows; ``R_t`` defaults to ``R_s``.
    full_row : bool
        For ``out``, ``out_total`` and ``phys``: use the full ``W_{k+1}``
        instead of its rank-``R_t`` truncation.
    embed : bool
        Zero-pad frames when the inner dimensions differ.
    """
    if variant not in VARIANTS:
        raise InputError(f"unknown transport variant {variant!r}")
    if R_t is None:
        R_t = R_s
    _check_window(svd_prev, R_s, "R_s")
    _check_window(svd_next, R_t, "R_t")
    if full_row and variant not in FULL_ROW_CAPABLE:
        raise InputError(f"full-row option does not apply to variant {variant!r}")

    Uk, Sk, Vk = svd_prev.window(R_s)
    U1, S1, V1 = svd_next.window(R_t)
    Uk_e, V1_e = _aligned_frames(Uk, V1, embed)
    overlap = V1_e.T @ Uk_e                     # R_t x R_s principal-angle cosines

    if variant == "ang":
        X = overlap
    elif variant == "src":
        X = overlap * Sk
    elif variant == "tgt":
        X = S1[:, None] * overlap
    elif variant == "total":
        X = S1[:, None] * overlap * Sk
    elif variant == "out_ang":
        X = U1 @ overlap
    else:
        if full_row:
            Wn = svd_next.matrix
            k = max(Wn.shape[1], Uk.shape[0])
            if Wn.shape[1] != Uk.shape[0] and not embed:
                raise DimensionError("inner dimensions differ; pass embed=True to square-embed")
            Wn = np.hstack([Wn, np.zeros((Wn.shape[0], k - Wn.shape[1]))])
            left = Wn @ np.vstack([Uk, np.zeros((k - Uk.shape[0], Uk.shape[1]))])
        else:
            left = (U1 * S1) @ overlap          # W_{k+1}^{[R_t]} U_k^{(R_s)}
        if variant == "out":
            X = left
        elif variant == "out_total":
            X = left * Sk
        else:
            X = (left * Sk) @ Vk.T
    rows, cols = COORDINATES[variant]
    tail = math.sqrt(tail_energy(svd_next, R_t)) if full_row else 0.0
    X = np.ascontiguousarray(X)
    X.setflags(write=False)
    return TransportMatrix(entries=X, variant=variant, row_coords=rows, col_coords=cols, R_s=int(R_s),
                           R_t=int(R_t), full_row=bool(full_row), target_tail_bound=tail,
                           interface_index=interface_index)


@dataclass(frozen=True)
class TruncationError:
    """Frobenius distance between full and truncated output-total transports."""

    bound: float
    measured: float
    R_s: int
    R_t: int
    mode: str

    @property
    def holds(self):
        scale = max(1.0, self.bound)
        return self.measured <= self.bound + 1e-9 * scale


def full_transport(svd_prev, svd_next, mode="source-mode"):
    """Full output-total transport ``W_{k+1} U_k S_k`` (source mode) or ``W_{k+1} W_k`` (physical)."""
    Wn = svd_next.matrix
    if Wn.shape[1] != svd_prev.U.shape[0]:
        raise DimensionError("inner dimensions differ; square-embed the layers first")
    T = Wn @ (svd_prev.U * svd_prev.sigma)
    if mode == "physical":
        T = T @ svd_prev.V.T
    elif mode != "source-mode":
        raise InputError(f"unknown truncation mode {mode!r}")
    return T


def truncated_transport(svd_prev, svd_next, R_s, R_t, mode="source-mode"):
    """``W_{k+1}^{[R_t]} U_k^{(R_s)} S_k^{(R_s)}`` zero-padded to the full column count.

    Physical mode right-multiplies by ``V_k^T``.
    """
    _check_window(svd_prev, R_s, "R_s")
    _check_window(svd_next, R_t, "R_t")
    Wn = svd_next.matrix
    if Wn.shape[1] != svd_prev.U.shape[0]:
        raise DimensionError("inner dimensions differ; square-embed the layers first")
    U1, S1, V1 = svd_next.window(R_t)
    Uk, Sk, _ = svd_prev.window(R_s)
    T = np.zeros((Wn.shape[0], svd_prev.sigma.size))
    T[:, :R_s] = (U1 * S1) @ (V1.T @ Uk) * Sk
    if mode == "physical":
        T = T @ svd_prev.V.T
    elif mode != "source-mode":
        raise InputError(f"unknown truncation mode {mode!r}")
    return T


def truncation_bound(svd_prev, svd_next, R_s, R_t):
    """``||W_{k+1}||_2 E_{>R_s}(W_k)^{1/2} + ||W_k||_2 E_{>R_t}(W_{k+1})^{1/2}``."""
    return (svd_next.operator_norm * math.sqrt(tail_energy(svd_prev, R_s))
            + svd_prev.operator_norm * math.sqrt(tail_energy(svd_next, R_t)))


def truncation_error(svd_prev, svd_next, R_s, R_t, mode="source-mode"):
    """Measured truncation residual next to its bound."""
    diff = full_transport(svd_prev, svd_next, mode) - truncated_transport(svd_prev, svd_next, R_s, R_t, mode)
    return TruncationError(bound=truncation_bound(svd_prev, svd_next, R_s, R_t),
                           measured=float(np.linalg.norm(diff)), R_s=int(R_s), R_t=int(R_t), mode=mode)


def truncation_bound_eps(eps, d, norm_prev, norm_next):
    """Energy-window form ``sqrt(eps d) (||W_{k+1}||_2 + ||W_k||_2)`` for trace-normalised layers."""
    return math.sqrt(eps * d) * (norm_next + norm_prev)
