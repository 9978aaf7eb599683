"""Activation moments under a standard normal input and the residual-scale and width bounds built on them.

Everything here is advisory: the bounds rest on accounting assumptions that
have no measurement procedure, so nothing in this module gates a
certificate verdict.
"""

from dataclasses import dataclass
import math

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .errors import InputError

DEFAULT_ORDER = 64
MIN_ORDER = 16
#: Label attached to the width bounds, whose accounting assumptions are not measured.
WIDTH_CONDITION = "conditional on (B1)-(B3)"

_SQRT2 = math.sqrt(2.0)


def _gelu_prime(x):
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(x / _SQRT2))
    pdf = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return cdf + x * pdf


def _swish_prime(x):
    sig = 1.0 / (1.0 + np.exp(-x))
    return sig * (1.0 + x * (1.0 - sig))


BUILTIN_DERIVATIVES = {
    "identity": lambda x: np.ones_like(x),
    "relu": lambda x: (x > 0).astype(np.float64),
    "gelu": _gelu_prime,
    "tanh": lambda x: 1.0 / np.cosh(x) ** 2,
    "swish": _swish_prime,
}

#: Closed-form (kappa, chi) where one is known.
CLOSED_FORM = {"identity": (1.0, 1.0), "relu": (0.5, 0.5), "gelu": (0.5, None)}


@dataclass(frozen=True)
class TabulatedDerivative:
    """A derivative given on a sorted grid, interpolated piecewise-linearly and held constant outside it."""

    x: tuple
    y: tuple

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise InputError("tabulated derivative needs two equal-length 1-D arrays with at least two points")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InputError("tabulated derivative contains non-finite values")
        if np.any(np.diff(x) <= 0):
            raise InputError("tabulated derivative grid must be strictly increasing")
        object.__setattr__(self, "x", tuple(x.tolist()))
        object.__setattr__(self, "y", tuple(y.tolist()))

    def __call__(self, z):
        return np.interp(z, self.x, self.y)


@dataclass(frozen=True)
class ActivationMoments:
    """Gradient permeability ``kappa = E[phi'(Z)]`` and critical capacity ``chi = E[phi'(Z)^2]``.

    ``refinement_gap`` is the larger of the two moment changes when the
    quadrature order is doubled; it serves as the accuracy estimate.
    """

    kappa: float
    chi: float
    order: int
    activation: str
    refinement_gap: float


def _resolve(descriptor):
    if isinstance(descriptor, str):
        key = descriptor.lower()
        if key not in BUILTIN_DERIVATIVES:
            raise InputError(f"unknown activation {descriptor!r}; built-ins are {sorted(BUILTIN_DERIVATIVES)}")
        return key, BUILTIN_DERIVATIVES[key]
    if isinstance(descriptor, TabulatedDerivative):
        return "tabulated", descriptor
    if isinstance(descriptor, tuple) and len(descriptor) == 2:
        return "tabulated", TabulatedDerivative(*descriptor)
    if callable(descriptor):
        return getattr(descriptor, "__name__", "custom"), descriptor
    raise InputError("activation must be a built-in name, a callable derivative or an (x, y) table")


def _gauss_moments(fn, order):
    nodes, weights = hermegauss(order)
    weights = weights / math.sqrt(2.0 * math.pi)
    try:
        vals = np.asarray(fn(nodes), dtype=np.float64)
    except Exception as exc:  # the derivative is user supplied
        raise InputError(f"activation derivative could not be evaluated: {exc}") from exc
    if vals.shape != nodes.shape or not np.all(np.isfinite(vals)):
        raise InputError("activation derivative must return one finite value per node")
    return float(weights @ vals), float(weights @ (vals * vals))


def activation_moments(descriptor, order=DEFAULT_ORDER):
    """Gauss-Hermite estimate of ``E[phi'(Z)]`` and ``E[phi'(Z)^2]`` for ``Z ~ N(0, 1)``.

    Parameters
    ----------
    descriptor : str, callable, TabulatedDerivative or (x, y) tuple
        Built-in names are ``identity``, ``relu``, ``gelu``, ``tanh`` and
        ``swish``. A callable must map an array of nodes to derivative
        values.
    order : int
        Number of quadrature nodes, at least 16.
    """
    order = int(order)
    if order < MIN_ORDER:
        raise InputError(f"quadrature order must be at least {MIN_ORDER}, got {order}")
    name, fn = _resolve(descriptor)
    kappa, chi = _gauss_moments(fn, order)
    k2, c2 = _gauss_moments(fn, 2 * order)
    return ActivationMoments(kappa=kappa, chi=chi, order=order, activation=name,
                             refinement_gap=max(abs(kappa - k2), abs(chi - c2)))


def _check_depth_and_growth(L, M):
    if int(L) != L or L < 1:
        raise InputError(f"depth must be a positive integer, got {L}")
    if not M > 1:
        raise InputError(f"growth factor must exceed 1, got {M}")


@dataclass(frozen=True)
class ScaleBounds:
    """Largest residual scales keeping the output energy (typical) or norm (coherent) within ``M``."""

    C_typical: float
    C_coherent: float
    C_coherent_asymptotic: float
    asymptotic_relative_error: float
    expansion_parameter: float


def scale_bounds(e0, s, L, M, eta, moments):
    """Typical and coherent residual-scale bounds.

    ``C_typical = sqrt((M^2 - 1) e0 / (L s)) / (eta kappa)`` and
    ``C_coherent = (M^(1/L) - 1) / chi``. The first-order expansion
    ``log M / (L chi)`` is reported alongside with its relative error, which
    is of order ``log M / L``.
    """
    _check_depth_and_growth(L, M)
    if not (e0 > 0 and s > 0):
        raise InputError("initial energy and injection scale must be positive")
    if not 0 < eta <= 1:
        raise InputError(f"eta must lie in (0, 1], got {eta}")
    kappa, chi = moments.kappa, moments.chi
    c_typ = math.inf if kappa == 0 else math.sqrt((M * M - 1.0) / L * e0 / s) / (eta * abs(kappa))
    if chi > 0:
        c_coh = math.expm1(math.log(M) / L) / chi
        c_asym = math.log(M) / (L * chi)
        rel = c_coh / c_asym - 1.0
    else:
        c_coh = c_asym = math.inf
        rel = 0.0
    return ScaleBounds(C_typical=c_typ, C_coherent=c_coh, C_coherent_asymptotic=c_asym,
                       asymptotic_relative_error=rel, expansion_parameter=math.log(M) / L)


@dataclass(frozen=True)
class WidthBounds:
    """Minimal channel counts implied by the capacity accounting; advisory only."""

    W_min_coherent: int | None
    W_min_typical: int | None
    condition: str = WIDTH_CONDITION


def width_bounds(r_out, moments):
    """``ceil(r_out / chi)`` and ``ceil(r_out / kappa^2)``; ``None`` where the moment vanishes."""
    if not r_out > 0:
        raise InputError("effective output rank must be positive")
    chi, k2 = moments.chi, moments.kappa ** 2
    return WidthBounds(W_min_coherent=math.ceil(r_out / chi) if chi > 0 else None,
                       W_min_typical=math.ceil(r_out / k2) if k2 > 0 else None)


def simulate_energy_recursion(e0, s, L, eta, kappa, C, dim=64, saturation=1.0, seed=0):
    """Run the residual recursion on an explicit vector and return the mean-square energies.

    Each update is drawn orthogonal to the current state and rescaled so that
    its mean-square energy is ``saturation * (eta kappa C)^2 s``. With
    ``saturation = 1`` the injection bound is attained at every step.
    """
    if int(L) != L or L < 1:
        raise InputError(f"depth must be a positive integer, got {L}")
    if not 0 <= saturation <= 1:
        raise InputError("saturation must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(dim)
    x *= math.sqrt(e0 * dim) / np.linalg.norm(x)
    inject = saturation * (eta * kappa * C) ** 2 * s
    energies = [float(x @ x) / dim]
    for _ in range(int(L)):
        g = rng.standard_normal(dim)
        g -= (g @ x) / (x @ x) * x
        g *= math.sqrt(inject * dim) / np.linalg.norm(g)
        x = x + g
        energies.append(float(x @ x) / dim)
    return np.array(energies)


def coherent_iteration(x0_norm, L, chi, C):
    """Norms ``(1 + chi C)^k ||x0||`` of the saturated coherent recursion for ``k = 0..L``."""
    growth = 1.0 + chi * C
    out = [float(x0_norm)]
    for _ in range(int(L)):
        out.append(out[-1] * growth)
    return np.array(out)
