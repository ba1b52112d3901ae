"""Scalar beta-divergence kernel.

All functions broadcast over numpy arrays, so the same code evaluates a
single pair ``(x, y)`` or a whole data matrix against its approximation.

The convex-concave-constant split follows the usual convention::

    beta < 1, beta != 0 :  -x y^(b-1)/(b-1)  |  y^b/b              |  x^b/(b(b-1))
    beta == 0           :  x/y               |  log y              |  x(log x - 1)
    1 <= beta <= 2      :  d_beta(x|y)       |  0                  |  0
    beta > 2            :  y^b/b             |  -x y^(b-1)/(b-1)   |  x^b/(b(b-1))
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.special import xlogy

DEFAULT_EPS_FLOOR = 1e-12
EPS_FLOOR_ENV = "BETA_NMF_EPS_FLOOR"


class DomainError(ValueError):
    """Argument outside the domain where the divergence is defined."""


def eps_floor() -> float:
    """Library-wide positivity floor, overridable through ``BETA_NMF_EPS_FLOOR``."""
    raw = os.environ.get(EPS_FLOOR_ENV)
    if raw is None or raw.strip() == "":
        return DEFAULT_EPS_FLOOR
    value = float(raw)
    if value < 0 or not np.isfinite(value):
        raise ValueError(f"{EPS_FLOOR_ENV} must be a finite nonnegative number, got {raw!r}")
    return value


class Regime(enum.Enum):
    BELOW_ZERO = "below_zero"
    ZERO_TO_ONE = "zero_to_one"
    ONE_TO_TWO = "one_to_two"
    ABOVE_TWO = "above_two"


def mm_exponent(beta: float) -> float:
    """Exponent of the MM multiplicative update; never exceeds 1."""
    if beta < 1:
        return 1.0 / (2.0 - beta)
    if beta <= 2:
        return 1.0
    return 1.0 / (beta - 1.0)


@dataclass(frozen=True)
class BetaParams:
    """The shape parameter beta with its regime and MM exponent."""

    beta: float
    regime: Regime = field(init=False)
    gamma: float = field(init=False)

    def __post_init__(self):
        beta = float(self.beta)
        if not np.isfinite(beta):
            raise ValueError(f"beta must be finite, got {self.beta!r}")
        object.__setattr__(self, "beta", beta)
        if beta < 0:
            regime = Regime.BELOW_ZERO
        elif beta < 1:
            regime = Regime.ZERO_TO_ONE
        elif beta <= 2:
            regime = Regime.ONE_TO_TWO
        else:
            regime = Regime.ABOVE_TWO
        object.__setattr__(self, "regime", regime)
        object.__setattr__(self, "gamma", mm_exponent(beta))


BetaLike = Union[BetaParams, float, int]


def as_params(p: BetaLike) -> BetaParams:
    return p if isinstance(p, BetaParams) else BetaParams(p)


@dataclass(frozen=True)
class DecompositionParts:
    convex_val: np.ndarray
    convex_deriv: np.ndarray
    concave_val: np.ndarray
    concave_deriv: np.ndarray
    constant_val: np.ndarray

    @property
    def total(self):
        return self.convex_val + self.concave_val + self.constant_val


def _check(x, y, beta: float):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.isnan(x)) or np.any(np.isnan(y)):
        raise DomainError("NaN argument")
    if np.any(y <= 0):
        raise DomainError("y must be strictly positive")
    if np.any(x < 0):
        raise DomainError("x must be nonnegative")
    if beta <= 0 and np.any(x <= 0):
        raise DomainError(f"x must be strictly positive for beta={beta:g} <= 0")
    return x, y


def _out(a):
    return a if np.ndim(a) else float(a)


def beta_divergence(x, y, p: BetaLike):
    """Beta-divergence ``d_beta(x | y)``, entrywise.

    Parameters
    ----------
    x : array_like
        Data value(s), nonnegative (strictly positive when ``beta <= 0``).
    y : array_like
        Approximation value(s), strictly positive.
    p : BetaParams or float

    Returns
    -------
    float or ndarray
        Nonnegative divergence, zero exactly where ``x == y``.
    """
    b = as_params(p).beta
    x, y = _check(x, y, b)
    if b == 0:
        r = x / y
        d = r - np.log(r) - 1.0
    elif b == 1:
        d = xlogy(x, x / y) - x + y
    elif b == 2:
        d = 0.5 * (x - y) ** 2
    else:
        d = (x**b + (b - 1.0) * y**b - b * x * y ** (b - 1.0)) / (b * (b - 1.0))
    if b != 2:
        d = _near_diagonal(x, y, b, d)
    d = np.where(x == y, 0.0, np.maximum(d, 0.0))
    return _out(d)


_SERIES_RADIUS = 0.1
_SERIES_TERMS = 20


def _near_diagonal(x, y, b, d):
    """Replace ``d`` by its power series in ``delta = (x - y) / y`` where ``|delta|`` is small.

    The closed forms lose all relative accuracy as ``x -> y`` because the
    divergence is second order in ``delta`` while its terms are order one.
    ``d = y^b * sum_{n>=2} c_n delta^n`` with ``c_2 = 1/2`` and
    ``c_{n+1} = c_n (b - n) / (n + 1)``, valid for every ``b`` including 0 and 1.
    """
    x, y = np.broadcast_arrays(x, y)
    delta = (x - y) / y
    near = np.abs(delta) < _SERIES_RADIUS
    if not near.any():
        return d
    dn = delta[near]
    c = np.empty(_SERIES_TERMS - 1)
    c[0] = 0.5
    for n in range(2, _SERIES_TERMS):
        c[n - 1] = c[n - 2] * (b - n) / (n + 1)
    acc = np.zeros_like(dn)
    for cn in c[::-1]:
        acc = (acc + cn) * dn
    d = np.array(d, dtype=float, copy=True)
    d[near] = y[near] ** b * acc * dn
    return d


def beta_divergence_deriv(x, y, p: BetaLike):
    """First and second derivatives of ``d_beta(x | y)`` with respect to ``y``."""
    b = as_params(p).beta
    x, y = _check(x, y, b)
    d1 = y ** (b - 2.0) * (y - x)
    d2 = y ** (b - 3.0) * ((b - 1.0) * y - (b - 2.0) * x)
    return _out(d1), _out(d2)


def decompose(x, y, p: BetaLike) -> DecompositionParts:
    """Convex, concave and constant parts of the divergence and their derivatives."""
    b = as_params(p).beta
    x, y = _check(x, y, b)
    zero = np.zeros(np.broadcast(x, y).shape)
    if b == 0:
        # the constant part is -(log x + 1); the x (log x - 1) variant does not sum to d_IS
        parts = (x / y, -x / y**2, np.log(y), 1.0 / y, -np.log(x) - 1.0)
    elif b < 1:
        parts = (
            -x * y ** (b - 1.0) / (b - 1.0),
            -x * y ** (b - 2.0),
            y**b / b,
            y ** (b - 1.0),
            x**b / (b * (b - 1.0)),
        )
    elif b <= 2:
        d1, _ = beta_divergence_deriv(x, y, b)
        parts = (beta_divergence(x, y, b), d1, zero, zero, zero)
    else:
        parts = (
            y**b / b,
            y ** (b - 1.0),
            -x * y ** (b - 1.0) / (b - 1.0),
            -x * y ** (b - 2.0),
            x**b / (b * (b - 1.0)),
        )
    shape = np.broadcast(x, y).shape
    return DecompositionParts(*(_out(np.broadcast_to(q + zero, shape).copy()) for q in parts))


def scalar_aux(y, y_tilde, x, p: BetaLike):
    """Scalar auxiliary function ``g(y | y_tilde; x)``.

    Convex part evaluated at ``y``, concave part replaced by its tangent at
    ``y_tilde``. Majorizes ``d_beta(x | y)`` and is tight at ``y == y_tilde``.
    """
    p = as_params(p)
    y_tilde = np.asarray(y_tilde, dtype=float)
    if np.any(y_tilde <= 0):
        raise DomainError("y_tilde must be strictly positive")
    at_y = decompose(x, y, p)
    at_tilde = decompose(x, y_tilde, p)
    g = (
        at_y.convex_val
        + at_tilde.concave_val
        + (np.asarray(y, dtype=float) - y_tilde) * at_tilde.concave_deriv
        + at_y.constant_val
    )
    return _out(g)


def scale_check(x, y, lam, p: BetaLike):
    """Both sides of ``d(lam x | lam y) = lam^beta d(x | y)``."""
    p = as_params(p)
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise DomainError("lambda must be strictly positive")
    lhs = beta_divergence(lam * np.asarray(x, dtype=float), lam * np.asarray(y, dtype=float), p)
    rhs = lam**p.beta * beta_divergence(x, y, p)
    return _out(lhs), _out(rhs)
