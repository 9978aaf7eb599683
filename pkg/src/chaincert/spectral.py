"""Power-law fits, radial coordinates, interface budgets and tail measures.

A layer whose singular values follow ``C * i**(-alpha)`` and whose squared
Frobenius norm equals its spectral length ``d`` has top singular value
``exp(g_d(alpha))`` with ``g_d(alpha) = log sqrt(d / H_{d, 2 alpha})``.
This module fits ``alpha`` to measured spectra, measures how far a spectrum
is from that curve, and evaluates the inequalities that bound how much the
exponent can move across an interface and whether the effective-rank
window survives that motion.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from . import kernels
from .errors import FitDomainError, InputError
from .matrix_core import DEFAULT_RANK_CUTOFF, as_array, gauged_svd

GRID_POINTS = 64


def harmonic_sum(d, s):
    """Generalised harmonic number ``H_{d,s} = sum_{i=1}^d i^{-s}`` (compensated sum)."""
    d = int(d)
    if d < 1:
        raise InputError(f"harmonic sum needs d >= 1, got {d}")
    return math.fsum(float(i) ** (-s) for i in range(1, d + 1))


def _powers(d, s):
    return np.arange(1, d + 1, dtype=np.float64) ** (-float(s))


def radial_coordinate(d, alpha):
    """``g_d(alpha) = 0.5 * log(d / H_{d, 2 alpha})``: log top singular value on the normalised orbit."""
    return 0.5 * math.log(d / harmonic_sum(d, 2.0 * alpha))


def slope(d, alpha):
    """Derivative ``g_d'(alpha)``, the Gibbs mean of ``log i`` under weights ``i^{-2 alpha}``."""
    d = int(d)
    if d < 1:
        raise InputError(f"slope needs d >= 1, got {d}")
    w = _powers(d, 2.0 * alpha)
    logs = np.log(np.arange(1, d + 1, dtype=np.float64))
    return math.fsum((logs * w).tolist()) / math.fsum(w.tolist())


def _check_interval(interval):
    lo, hi = (float(interval[0]), float(interval[1]))
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or lo > hi:
        raise InputError(f"degenerate exponent interval {interval!r}")
    return lo, hi


def slope_min(d, interval):
    """Minimum of ``g_d'`` over ``[lo, hi]``.

    The Gibbs mean decreases in ``alpha`` so the minimum sits at ``hi``; a
    64-point grid is evaluated as a guard and the smaller value is returned.
    """
    lo, hi = _check_interval(interval)
    at_end = slope(d, hi)
    grid = min(slope(d, a) for a in np.linspace(lo, hi, GRID_POINTS))
    return min(at_end, grid)


# ----------------------------------------------------------------------------
# tails and effective ranks


def _tail_fractions(weights):
    w = np.asarray(weights, dtype=np.float64)
    tails = kernels.suffix_sums(w)
    total = math.fsum(w.tolist())
    if total <= 0:
        raise InputError("energy measure has zero total mass")
    return tails / total


def tail_profile(d, alpha):
    """Array ``tau_alpha(r)`` for ``r = 0..d`` (``tau(0) = 1``, ``tau(d) = 0``)."""
    prof = _tail_fractions(_powers(int(d), 2.0 * alpha))
    prof[0] = 1.0
    return prof


def tail_mass(d, alpha, r):
    """Gibbs tail mass ``tau_alpha(r) = (H_{d,2a} - H_{r,2a}) / H_{d,2a}``."""
    d, r = int(d), int(r)
    if not 0 <= r <= d:
        raise InputError(f"tail index {r} outside [0, {d}]")
    return float(tail_profile(d, alpha)[r])


def empirical_tail_profile(sigma):
    """Empirical tail ``mu_W({r+1..d})`` for ``r = 0..d`` from singular values."""
    s = np.asarray(sigma, dtype=np.float64)
    prof = _tail_fractions(s * s)
    prof[0] = 1.0
    return prof


def _check_eps(eps):
    if not (0.0 < eps < 1.0):
        raise InputError(f"energy threshold must lie in (0, 1), got {eps}")


def _rank_from_tail(prof, eps):
    hits = np.flatnonzero(prof[1:] <= eps)
    return int(hits[0]) + 1


def effective_rank(measure, eps):
    """Smallest ``r >= 1`` whose retained mass is at least ``1 - eps``.

    ``measure`` holds nonnegative weights on ranks ``1..d`` (probabilities or
    raw energies; only ratios matter).
    """
    _check_eps(eps)
    prof = _tail_fractions(measure)
    prof[0] = 1.0
    return _rank_from_tail(prof, eps)


def spectrum_effective_rank(sigma, eps):
    """Effective rank of a singular-value list (energies are ``sigma**2``)."""
    s = np.asarray(sigma, dtype=np.float64)
    return effective_rank(s * s, eps)


def model_effective_rank(d, alpha, eps):
    """Effective rank of the Gibbs tail measure ``i^{-2 alpha} / H_{d, 2 alpha}``."""
    _check_eps(eps)
    return _rank_from_tail(tail_profile(d, alpha), eps)


@dataclass(frozen=True)
class RankMargins:
    """Rank window and the distance of ``eps`` from the flanking tail masses."""

    R_emp: int
    R_model: int
    margin: float
    tau_at_R: float
    tau_before_R: float
    eps: float


def rank_margins(d, alpha, eps, sigma=None):
    """Rank-separation margin ``min(eps - tau(R), tau(R-1) - eps)`` at the model rank.

    When ``sigma`` is supplied the empirical rank of that spectrum is
    reported as ``R_emp``; otherwise it equals the model rank.
    """
    _check_eps(eps)
    prof = tail_profile(d, alpha)
    R = _rank_from_tail(prof, eps)
    R_emp = R if sigma is None else spectrum_effective_rank(sigma, eps)
    at, before = float(prof[R]), float(prof[R - 1])
    return RankMargins(R_emp=R_emp, R_model=R, margin=min(eps - at, before - eps),
                       tau_at_R=at, tau_before_R=before, eps=eps)


def model_rank_bounds(d, alpha, eps):
    """Integral-test bounds ``(lower, upper)`` on the Gibbs effective rank (``alpha > 1/2``).

    ``upper = min(d, ceil((1 / ((2a-1) eps H))^(1/(2a-1))))``. ``lower`` is one
    more than the largest ``r < d`` with
    ``((r+1)^(1-2a) - (d+1)^(1-2a)) / (2a-1) >= eps H``, or 1 if none.
    """
    _check_eps(eps)
    d = int(d)
    if alpha <= 0.5:
        raise InputError(f"model rank bounds need alpha > 1/2, got {alpha}")
    p = 2.0 * alpha - 1.0
    H = harmonic_sum(d, 2.0 * alpha)
    log_x = -(math.log(p) + math.log(eps) + math.log(H)) / p
    upper = d if log_x >= math.log(d) else min(d, max(1, math.ceil(math.exp(log_x))))
    lower_r = 0
    base = (d + 1.0) ** (-p)
    for r in range(1, d):
        if ((r + 1.0) ** (-p) - base) / p >= eps * H:
            lower_r = r
        else:
            break
    return lower_r + 1, upper


def tail_lipschitz_constant(d):
    """Uniform Lipschitz constant ``2 log d`` of ``alpha -> tau_alpha(r)``."""
    return 2.0 * math.log(d)


# ----------------------------------------------------------------------------
# power-law fits


@dataclass(frozen=True)
class CartanFit:
    """Power-law fit ``sigma_i ~ C i^{-alpha}`` for one layer.

    ``chart_error`` compares the Frobenius-normalised top singular value with
    the orbit prediction ``g_d(alpha)``; ``tail_error`` is the sup distance
    between the empirical energy tail and the fitted Gibbs tail.
    """

    alpha: float
    scale: float
    delta_pl: float
    chart_error: float
    tail_error: float
    fit_range: tuple
    regression_residual: float
    spectral_length: int
    sigma: np.ndarray = field(repr=False, compare=False)
    label: str = ""

    @property
    def chart_error_bound(self):
        """``log((1 + delta) / (1 - delta))`` when ``delta_pl < 1``, else ``inf``."""
        if self.delta_pl >= 1:
            return math.inf
        return math.log((1 + self.delta_pl) / (1 - self.delta_pl))


def _spectral_list(sigma, spectral_length):
    s = np.asarray(sigma, dtype=np.float64).ravel()
    if s.size == 0 or not np.all(np.isfinite(s)):
        raise InputError("spectrum must be a nonempty finite list")
    top = float(np.max(s))
    if top <= 0:
        raise FitDomainError("spectrum has no positive value")
    if spectral_length is None:
        # trailing values below the numerical-rank cutoff are not part of the list
        keep = np.flatnonzero(s >= DEFAULT_RANK_CUTOFF * top)
        spectral_length = int(keep[-1]) + 1
    return s[:spectral_length]


def fit_power_law(sigma, fit_range=None, spectral_length=None, label=""):
    """Least-squares line through ``(log i, log sigma_i)``.

    Parameters
    ----------
    sigma : array_like
        Singular values in rank order. Ordering is not enforced, so
        perturbed model spectra can be fitted as given.
    fit_range : (int, int), optional
        Inclusive 1-based index range; defaults to the full spectral list.
    spectral_length : int, optional
        Length ``d`` of the spectral list; by default values below
        ``1e-12 * sigma_1`` are dropped.
    """
    s = _spectral_list(sigma, spectral_length)
    d = s.size
    lo, hi = (1, d) if fit_range is None else (int(fit_range[0]), int(fit_range[1]))
    if not 1 <= lo <= hi <= d:
        raise InputError(f"fit range {(lo, hi)} outside [1, {d}]")
    seg = s[lo - 1:hi]
    if np.any(seg <= 0):
        raise FitDomainError("nonpositive singular value inside the fit range")
    x = np.log(np.arange(lo, hi + 1, dtype=np.float64))
    y = np.log(seg)
    if hi == lo:
        slope_hat, intercept = 0.0, float(y[0])
    else:
        xm, ym = x.mean(), y.mean()
        slope_hat = float(np.dot(x - xm, y - ym) / np.dot(x - xm, x - xm))
        intercept = float(ym - slope_hat * xm)
    alpha = -slope_hat + 0.0
    C = math.exp(intercept)
    model = C * np.arange(lo, hi + 1, dtype=np.float64) ** (-alpha)
    delta = float(np.max(np.abs(seg / model - 1.0)))
    resid = y - (intercept + slope_hat * x)
    rms = float(math.sqrt(np.mean(resid * resid)))

    norm_sq = math.fsum((s * s).tolist())
    top_normalised = math.log(s[0]) - 0.5 * math.log(norm_sq / d)
    chart = abs(top_normalised - radial_coordinate(d, alpha))
    tail_err = float(np.max(np.abs(empirical_tail_profile(s) - tail_profile(d, alpha))))
    s_ro = s.copy()
    s_ro.setflags(write=False)
    return CartanFit(alpha=alpha, scale=C, delta_pl=delta, chart_error=chart, tail_error=tail_err,
                     fit_range=(lo, hi), regression_residual=rms, spectral_length=d,
                     sigma=s_ro, label=label)


def orbit_deviation(sigma, scale, alpha, fit_range=None):
    """Relative deviation ``max |sigma_i / (C i^{-alpha}) - 1|`` from a given orbit point."""
    s = np.asarray(sigma, dtype=np.float64).ravel()
    lo, hi = (1, s.size) if fit_range is None else fit_range
    model = scale * np.arange(lo, hi + 1, dtype=np.float64) ** (-alpha)
    return float(np.max(np.abs(s[lo - 1:hi] / model - 1.0)))


def fit_layer(svd, fit_range=None):
    """Fit a :class:`~chaincert.matrix_core.GaugedSvd` over its spectral list."""
    return fit_power_law(svd.sigma, fit_range=fit_range, spectral_length=svd.spectral_length,
                         label=svd.label)


def frobenius_normalise(W, target=None):
    """Rescale ``W`` so that ``||W||_F^2`` equals ``target`` (default: its spectral length)."""
    A = as_array(W)
    if target is None:
        target = gauged_svd(A).spectral_length
    nrm = float(np.linalg.norm(A))
    if nrm == 0:
        raise InputError("cannot normalise a zero matrix")
    return A * math.sqrt(target) / nrm


# ----------------------------------------------------------------------------
# interface budgets and the exponent total-variation bound


@dataclass(frozen=True)
class InterfaceBudget:
    """Interface amplification ``Lambda = ||AB||_2 / sqrt(||A||_2 ||B||_2)`` with ``A = W_{k+1}``, ``B = W_k``."""

    lam: float
    log_budget: float
    non_backtracking: bool
    product_norm: float
    norm_next: float
    norm_prev: float


def _compose(W_prev, W_next):
    A, B = as_array(W_next), as_array(W_prev)
    if A.shape[1] != B.shape[0]:
        k = max(A.shape + B.shape)
        A = _pad_to(A, k)
        B = _pad_to(B, k)
    return A, B


def _pad_to(X, k):
    out = np.zeros((k, k))
    out[:X.shape[0], :X.shape[1]] = X
    return out


def interface_budget(W_prev, W_next):
    """Budget of the interface ``W_prev -> W_next``.

    Mismatched inner dimensions are handled by square-embedding both
    matrices into a common size.
    """
    A, B = _compose(W_prev, W_next)
    nA = float(np.linalg.norm(A, 2))
    nB = float(np.linalg.norm(B, 2))
    if nA == 0 or nB == 0:
        raise InputError("interface budget undefined for a zero matrix")
    nAB = float(np.linalg.norm(A @ B, 2))
    lam = nAB / math.sqrt(nA * nB)
    return InterfaceBudget(lam=lam, log_budget=math.log(lam) if lam > 0 else -math.inf,
                           non_backtracking=nAB >= max(nA, nB), product_norm=nAB,
                           norm_next=nA, norm_prev=nB)


@dataclass(frozen=True)
class TotalVariationReport:
    """Measured exponent total variation against the exact and chart-corrected bounds."""

    measured: float
    exact_bound: float
    robust_bound: float
    exact_holds: bool
    robust_holds: bool
    applicable: bool
    reason: str
    slope_min: float
    interval: tuple
    steps: tuple
    local_exact: tuple
    local_robust: tuple


def cartan_tv_bound(fits, budgets, interval=None):
    """Compare ``sum |alpha_{k+1} - alpha_k|`` with the budget bounds.

    exact: ``(2 / m_d(I)) sum log lambda_k``;
    robust: ``(1 / m_d(I)) sum (2 log lambda_k + e_k + e_{k+1})``.
    A backtracking interface or an exponent outside ``I`` makes the bounds
    inapplicable; this is reported, not raised.
    """
    fits = list(fits)
    budgets = list(budgets)
    if len(budgets) != max(len(fits) - 1, 0):
        raise InputError(f"{len(fits)} fits need {max(len(fits) - 1, 0)} budgets, got {len(budgets)}")
    alphas = [f.alpha for f in fits]
    d = min(f.spectral_length for f in fits)
    if interval is None:
        interval = (min(alphas), max(alphas))
    lo, hi = _check_interval(interval)
    m = slope_min(d, (lo, hi))
    steps = tuple(abs(alphas[k + 1] - alphas[k]) for k in range(len(budgets)))
    measured = math.fsum(steps)
    loc_exact = tuple(2.0 * b.log_budget / m for b in budgets)
    loc_rob = tuple((2.0 * b.log_budget + fits[k].chart_error + fits[k + 1].chart_error) / m
                    for k, b in enumerate(budgets))
    reasons = []
    if any(not b.non_backtracking for b in budgets):
        reasons.append("backtracking interface")
    if any(a < lo - 1e-15 or a > hi + 1e-15 for a in alphas):
        reasons.append("exponent outside interval")
    if any(f.spectral_length != d for f in fits):
        reasons.append("unequal spectral lengths")
    applicable = not reasons
    exact_b = math.fsum(loc_exact)
    robust_b = math.fsum(loc_rob)
    return TotalVariationReport(
        measured=measured, exact_bound=exact_b, robust_bound=robust_b,
        exact_holds=applicable and measured <= exact_b,
        robust_holds=applicable and measured <= robust_b,
        applicable=applicable, reason="; ".join(reasons) or "ok", slope_min=m,
        interval=(lo, hi), steps=steps, local_exact=loc_exact, local_robust=loc_rob)


def uniform_step_bound(M, L, m):
    """Per-step exponent bound ``4 log M / (L m_d)`` under a uniform chain budget ``M``."""
    return 4.0 * math.log(M) / (L * m)


def displacement_budget(budget, fit_prev, fit_next, m):
    """``B_k = (2 log lambda_k + e_k + e_{k+1}) / m_d(I)``."""
    return (2.0 * budget.log_budget + fit_prev.chart_error + fit_next.chart_error) / m


@dataclass(frozen=True)
class RankTransferVerdict:
    lhs: float
    margin: float
    certified: bool
    R_model: int
    R_emp_prev: int
    R_emp_next: int
    empirical_agree: bool
    displacement: float


def rank_transfer_check(fit_prev, fit_next, d, eps, B=None):
    """Test ``2 (log d) B + Delta_k + Delta_{k+1} < m_eps(alpha_k)``.

    ``B`` bounds the exponent displacement; by default the measured
    ``|alpha_{k+1} - alpha_k|`` is used. Whether the two empirical ranks
    actually coincide is reported separately from the verdict.
    """
    if B is None:
        B = abs(fit_next.alpha - fit_prev.alpha)
    mg = rank_margins(d, fit_prev.alpha, eps)
    lhs = 2.0 * math.log(d) * B + fit_prev.tail_error + fit_next.tail_error
    r0 = spectrum_effective_rank(fit_prev.sigma, eps)
    r1 = spectrum_effective_rank(fit_next.sigma, eps)
    return RankTransferVerdict(lhs=lhs, margin=mg.margin, certified=lhs < mg.margin,
                               R_model=mg.R_model, R_emp_prev=r0, R_emp_next=r1,
                               empirical_agree=r0 == r1, displacement=B)
