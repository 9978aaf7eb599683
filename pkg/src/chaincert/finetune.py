"""Displacement costs of a base-to-post layer update in scale and singular-frame coordinates."""

from dataclasses import dataclass
import math

import numpy as np

from .errors import InputError
from .matrix_core import as_array, gauged_svd

ORTHOGONALITY_TOL = 1e-10
#: Largest orthonormality defect repaired by polar projection during frame recovery.
RECOVERY_TOL = 1e-6


@dataclass(frozen=True)
class ScaleDisruption:
    """Disruption of per-layer scale factors ``s_i = C_post_i / C_base_i``.

    Attributes
    ----------
    D_log, D_ratio : float
        Complete-graph log-ratio and relative-ratio disruptions.
    variance_form : float
        ``N * sum (l_i - mean l)^2``, which equals ``D_log`` exactly.
    max_log_ratio : float
        Largest ``|log(s_i / s_j)|`` over pairs.
    log_ratio_bound : float
        ``sqrt(2 D_log / N)``, an upper bound on ``max_log_ratio``.
    """

    D_log: float
    D_ratio: float
    variance_form: float
    max_log_ratio: float
    log_ratio_bound: float

    @property
    def identity_holds(self):
        return math.isclose(self.D_log, self.variance_form, rel_tol=1e-10, abs_tol=1e-14)

    @property
    def bound_holds(self):
        return self.max_log_ratio <= self.log_ratio_bound * (1 + 1e-12) + 1e-15

    @property
    def ratio_envelope(self):
        """Interval ``[exp(-b), exp(b)]`` containing every ratio ``s_i / s_j``."""
        return math.exp(-self.log_ratio_bound), math.exp(self.log_ratio_bound)


def scale_disruption(s, C_base):
    """Scale disruption of the factors ``s`` against base scales ``C_base``."""
    s = np.asarray(s, dtype=np.float64).ravel()
    c = np.asarray(C_base, dtype=np.float64).ravel()
    if s.shape != c.shape or s.size < 2:
        raise InputError("need at least two scale factors, one per base scale")
    if not (np.all(s > 0) and np.all(c > 0) and np.all(np.isfinite(s)) and np.all(np.isfinite(c))):
        raise InputError("scale factors and base scales must be positive and finite")
    n = s.size
    ell = np.log(s)
    iu = np.triu_indices(n, 1)
    diff = (ell[:, None] - ell[None, :])[iu]
    d_log = float(np.sum(diff * diff))
    ratio = ((s[:, None] / s[None, :] - 1.0) * (c[:, None] / c[None, :]))[iu]
    d_ratio = float(np.sum(ratio * ratio))
    var = float(n * np.sum((ell - ell.mean()) ** 2))
    return ScaleDisruption(D_log=d_log, D_ratio=d_ratio, variance_form=var,
                           max_log_ratio=float(np.max(np.abs(diff))),
                           log_ratio_bound=math.sqrt(2.0 * d_log / n))


@dataclass(frozen=True)
class FrameRotationCost:
    """Frobenius displacement of a frame-rotated update and the relative-rotation control.

    ``coherent_cost`` and ``relative_rotation_bound`` are ``None`` when the
    post spectrum is not a uniform rescaling of the base spectrum. The
    double sum is only filled in for a common rotation.
    """

    delta_W: float
    coherent_cost: float | None
    double_sum_cost: float | None
    relative_rotation_norm: float
    relative_rotation_bound: float | None
    scale: float | None

    @property
    def bound_holds(self):
        if self.relative_rotation_bound is None:
            return None
        return self.relative_rotation_norm <= self.relative_rotation_bound * (1 + 1e-10) + 1e-12


def _check_orthogonal(Q, name, n):
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (n, n):
        raise InputError(f"{name} must be {n}x{n}, got {Q.shape}")
    defect = np.linalg.norm(Q.T @ Q - np.eye(n))
    if defect > ORTHOGONALITY_TOL * max(1, n):
        raise InputError(f"{name} is not orthogonal (defect {defect:.3g})")
    return Q


def _uniform_scale(sigma, sigma_post):
    pos = sigma > 0
    if not np.any(pos):
        return None
    s = float(np.median(sigma_post[pos] / sigma[pos]))
    if s > 0 and np.allclose(sigma_post, s * sigma, rtol=1e-12, atol=1e-14 * float(sigma.max())):
        return s
    return None


def rotation_double_sum(Q, sigma, s):
    """``sqrt(sum_ab q_ab^2 (s sigma_b - sigma_a)^2)`` for a common rotation ``Q``."""
    sigma = np.asarray(sigma, dtype=np.float64)
    gap = s * sigma[None, :] - sigma[:, None]
    return math.sqrt(float(np.sum(np.asarray(Q) ** 2 * gap * gap)))


def frame_rotation_cost(base, Q_U, Q_V, sigma_post):
    """Costs of the update ``U Q_U diag(sigma_post) Q_V^T V^T`` relative to the base layer.

    Parameters
    ----------
    base : GaugedSvd or array-like
        Base layer (or its gauged SVD). Only its singular values enter the
        costs, by orthogonal invariance.
    Q_U, Q_V : ndarray
        Square orthogonal frame rotations of size ``min(rows, cols)``.
    sigma_post : array-like
        Nonnegative post singular values in base order.
    """
    svd = base if hasattr(base, "sigma") else gauged_svd(base)
    sigma = np.asarray(svd.sigma, dtype=np.float64)
    n = sigma.size
    Q_U = _check_orthogonal(Q_U, "Q_U", n)
    Q_V = _check_orthogonal(Q_V, "Q_V", n)
    sp = np.asarray(sigma_post, dtype=np.float64).ravel()
    if sp.size != n or np.any(sp < 0) or not np.all(np.isfinite(sp)):
        raise InputError(f"post singular values must be {n} nonnegative finite numbers")
    Sig = np.diag(sigma)
    delta = float(np.linalg.norm(Q_U @ np.diag(sp) @ Q_V.T - Sig))
    R = Q_U.T @ Q_V
    rel = float(np.linalg.norm(R - np.eye(n)))
    s = _uniform_scale(sigma, sp)
    coherent = bound = dsum = None
    if s is not None:
        coherent = float(np.linalg.norm(Q_U @ (s * Sig) @ Q_U.T - Sig))
        if np.allclose(Q_U, Q_V, rtol=0, atol=1e-14):
            dsum = rotation_double_sum(Q_U, sigma, s)
        if sigma[-1] > 0:
            bound = float((delta + coherent) / (s * sigma[-1]))
    return FrameRotationCost(delta_W=delta, coherent_cost=coherent, double_sum_cost=dsum,
                             relative_rotation_norm=rel, relative_rotation_bound=bound, scale=s)


def polar_orthonormalise(Q):
    """Nearest orthogonal matrix to ``Q`` in Frobenius norm."""
    u, _, vt = np.linalg.svd(np.asarray(Q, dtype=np.float64))
    return u @ vt


def recover_frames(W_base, W_post, tol=RECOVERY_TOL):
    """Express ``W_post`` in the base SVD gauge.

    Returns ``(Q_U, Q_V, sigma_post)`` with ``Q_U = U^T U_post`` and
    ``Q_V = V^T V_post`` restricted to the leading ``min(rows, cols)``
    directions, each snapped to the nearest orthogonal matrix when its
    defect is below ``tol``.
    """
    A, B = as_array(W_base), as_array(W_post)
    if A.shape != B.shape:
        raise InputError(f"base {A.shape} and post {B.shape} layers differ in shape")
    base, post = gauged_svd(A), gauged_svd(B)
    n = base.sigma.size
    frames = []
    for name, Q in (("Q_U", base.U[:, :n].T @ post.U[:, :n]), ("Q_V", base.V[:, :n].T @ post.V[:, :n])):
        defect = float(np.linalg.norm(Q.T @ Q - np.eye(n)))
        if defect > tol:
            raise InputError(f"recovered {name} is not near-orthogonal (defect {defect:.3g}); "
                             "the post frames leave the base span")
        frames.append(polar_orthonormalise(Q))
    return frames[0], frames[1], np.array(post.sigma)
