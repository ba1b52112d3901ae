"""Per-coefficient update kernels and the ratio statistics that feed them.

Every rule is a function of the current coefficient ``h_tilde`` and the
split gradient ``grad = pos - neg`` with ``neg, pos >= 0``. The kernels are
entrywise and broadcast, so they are applied to whole factor matrices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .divergence import BetaLike, DomainError, as_params, eps_floor, scalar_aux

ME_BETAS = (0.0, 0.5, 1.5, 2.0)


class UnsupportedBetaError(ValueError):
    pass


class FloorViolationError(ValueError):
    pass


class RuleKind(str, enum.Enum):
    MM = "mm"
    HEURISTIC = "heur"
    ME = "me"


@dataclass(frozen=True)
class UpdateRule:
    """Update rule selector.

    ``theta`` is the weight of the prolonged ME step in the ME/MM mixture and
    is ignored by the other rules. When ``theta_end`` is set the weight
    moves linearly from ``theta`` to ``theta_end`` over the run.
    """

    kind: RuleKind = RuleKind.MM
    theta: float = 0.95
    theta_end: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", RuleKind(self.kind))
        for t in (self.theta, self.theta_end):
            if t is not None and not 0.0 <= t < 1.0:
                raise ValueError(f"theta must lie in [0, 1), got {t}")

    @property
    def name(self) -> str:
        return self.kind.value

    def check_beta(self, beta: float) -> None:
        if self.kind is RuleKind.ME and beta not in ME_BETAS:
            raise UnsupportedBetaError(
                f"closed-form ME updates are implemented for beta in {ME_BETAS}, got {beta:g}"
            )

    def theta_at(self, i: int, n: int) -> float:
        if self.theta_end is None or n <= 1:
            return self.theta
        return self.theta + (self.theta_end - self.theta) * i / (n - 1)


@dataclass
class RatioStats:
    """Nonnegative split ``grad = pos - neg`` of the criterion gradient."""

    neg: np.ndarray
    pos: np.ndarray

    @property
    def gradient(self):
        return self.pos - self.neg

    @property
    def ratio(self):
        return self.neg / self.pos


def _unpack(stats):
    if isinstance(stats, RatioStats):
        neg, pos = stats.neg, stats.pos
    else:
        neg, pos = stats
    neg = np.asarray(neg, dtype=float)
    pos = np.asarray(pos, dtype=float)
    if (pos <= 0).any():
        raise DomainError("denominator statistics must be strictly positive; floor before updating")
    if (neg < 0).any():
        raise DomainError("numerator statistics must be nonnegative")
    return neg, pos


def _check_h(h, name="h_tilde"):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0) or np.any(np.isnan(h)):
        raise DomainError(f"{name} must be nonnegative")
    return h


def _out(a):
    return a if np.ndim(a) else float(a)


def _mm(h, ratio, gamma):
    # gamma == 1 shares the heuristic code path bit for bit
    if gamma == 1.0:
        return h * ratio
    return h * ratio**gamma


def _me(h, h_mm, h_heur, b, theta):
    if b == 0.0:
        return h_heur
    if b == 0.5:
        # (h/4)(sqrt(1 + 8r) - 1)^2 with r = h_heur/h, rewritten without cancellation
        r = _safe_div(h_heur, h)
        denom = np.sqrt(1.0 + 8.0 * r) + 1.0
        return 4.0 * h * (2.0 * r / denom) ** 2
    m = _safe_div(h_mm, h)
    if b == 1.5:
        exists = (h < 3.0 * h_mm) & (h > 0)
        root = np.sqrt(np.maximum(12.0 * m - 3.0, 1.0)) + 1.0
        pme = np.where(exists, 4.0 * h * ((3.0 * m - 1.0) / root) ** 2, 0.0)
    else:
        pme = np.where(h < 2.0 * h_mm, 2.0 * h_mm - h, 0.0)
    return theta * pme + (1.0 - theta) * h_mm


def _safe_div(a, b):
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    return np.divide(a, b, out=np.zeros(a.shape), where=b > 0)


def mm_update(h_tilde, stats, p: BetaLike):
    """MM step ``h_tilde * (neg / pos) ** gamma(beta)``."""
    p = as_params(p)
    h = _check_h(h_tilde)
    neg, pos = _unpack(stats)
    return _out(_mm(h, neg / pos, p.gamma))


def heuristic_update(h_tilde, stats, p: BetaLike):
    """Heuristic multiplicative step ``h_tilde * neg / pos`` (exponent 1 for every beta)."""
    as_params(p)
    h = _check_h(h_tilde)
    neg, pos = _unpack(stats)
    return _out(h * (neg / pos))


def me_update(h_tilde, h_mm, h_heur, p: BetaLike, theta: float = 0.95):
    """Majorization-equalization step, mixed with MM where it is prolonged.

    Parameters
    ----------
    h_tilde : array_like
        Current coefficients.
    h_mm, h_heur : array_like
        MM and heuristic candidates computed from the same statistics.
    p : BetaParams or float
        Must be one of 0, 0.5, 1.5, 2.
    theta : float
        Mixture weight in [0, 1]. ``theta = 1`` gives the pure (prolonged) ME
        step; strict positivity of the result needs ``theta < 1``. Only used
        for beta in {1.5, 2}, where the ME root may not exist.

    Returns
    -------
    float or ndarray
    """
    b = as_params(p).beta
    if b not in ME_BETAS:
        raise UnsupportedBetaError(
            f"closed-form ME updates are implemented for beta in {ME_BETAS}, got {b:g}"
        )
    if not 0.0 <= theta <= 1.0:
        raise ValueError(f"theta must lie in [0, 1], got {theta}")
    h = _check_h(h_tilde)
    h_mm = _check_h(h_mm, "h_mm")
    h_heur = _check_h(h_heur, "h_heur")
    shape = np.broadcast(h, h_mm, h_heur).shape
    return _out(np.broadcast_to(_me(h, h_mm, h_heur, b, theta), shape).copy())


def apply_rule(h_tilde, stats, p: BetaLike, rule: UpdateRule, theta: Optional[float] = None):
    """Dispatch one entrywise update according to ``rule``.

    Unlike the public kernels this does not validate its inputs; ``stats``
    must come from the ``compute_ratio_stats_*`` helpers, which floor ``pos``.
    """
    p = as_params(p)
    ratio = stats.neg / stats.pos
    if rule.kind is RuleKind.MM:
        return _mm(h_tilde, ratio, p.gamma)
    h_heur = h_tilde * ratio
    if rule.kind is RuleKind.HEURISTIC:
        return h_heur
    rule.check_beta(p.beta)
    h_mm = _mm(h_tilde, ratio, p.gamma)
    return _me(h_tilde, h_mm, h_heur, p.beta, rule.theta if theta is None else theta)


def _approx(W, H, eps):
    V_hat = W @ H
    if eps > 0:
        return np.maximum(V_hat, eps)
    if np.any(V_hat <= 0):
        raise FloorViolationError("W @ H has nonpositive entries and flooring is disabled")
    return V_hat


def _conform(V, W, H, mask):
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    H = np.asarray(H, dtype=float)
    if V.ndim != 2 or W.ndim != 2 or H.ndim != 2:
        raise ValueError("V, W and H must be 2-D")
    F, N = V.shape
    if W.shape[0] != F or H.shape[1] != N or W.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: V {V.shape}, W {W.shape}, H {H.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if mask.shape != V.shape:
            raise ValueError(f"mask shape {mask.shape} does not match V {V.shape}")
    return V, W, H, mask


def weighted_terms(V, V_hat, p: BetaLike, mask=None):
    """Entrywise ``(V_hat^(b-2) * V, V_hat^(b-1))``, zeroed where unobserved."""
    b = as_params(p).beta
    if b == 1:
        num = V / V_hat
        den = np.ones_like(V_hat)
    elif b == 2:
        num = V
        den = V_hat
    else:
        num = V_hat ** (b - 2.0) * V
        den = V_hat ** (b - 1.0)
    if mask is not None:
        num = num * mask
        den = den * mask
    return num, den


def compute_ratio_stats_H(V, W, H_tilde, p: BetaLike, mask=None, eps: Optional[float] = None) -> RatioStats:
    """Numerator/denominator statistics for updating ``H`` with ``W`` fixed.

    ``neg = W.T @ [V_hat^(b-2) * V]`` and ``pos = W.T @ V_hat^(b-1)``, with
    ``V_hat = W @ H_tilde`` floored at ``eps``. For beta = 2 without a mask the
    denominator is regrouped as ``(W.T @ W) @ H``.
    """
    p = as_params(p)
    eps = eps_floor() if eps is None else eps
    V, W, H, mask = _conform(V, W, H_tilde, mask)
    if p.beta == 2 and mask is None:
        neg = W.T @ V
        pos = (W.T @ W) @ H
    else:
        num, den = weighted_terms(V, _approx(W, H, eps), p, mask)
        neg = W.T @ num
        pos = W.T @ den
    return RatioStats(neg, np.maximum(pos, eps) if eps > 0 else pos)


def compute_ratio_stats_W(V, W_tilde, H, p: BetaLike, mask=None, eps: Optional[float] = None) -> RatioStats:
    """Statistics for updating ``W`` with ``H`` fixed.

    Mirror image of :func:`compute_ratio_stats_H` (``V.T ~ H.T W.T``):
    ``neg = [V_hat^(b-2) * V] @ H.T``, ``pos = V_hat^(b-1) @ H.T``.
    """
    p = as_params(p)
    eps = eps_floor() if eps is None else eps
    V, W, H, mask = _conform(V, W_tilde, H, mask)
    if p.beta == 2 and mask is None:
        neg = V @ H.T
        pos = W @ (H @ H.T)
    else:
        num, den = weighted_terms(V, _approx(W, H, eps), p, mask)
        neg = num @ H.T
        pos = den @ H.T
    return RatioStats(neg, np.maximum(pos, eps) if eps > 0 else pos)


def auxiliary_value(v, W, h, h_tilde, p: BetaLike):
    """Separable auxiliary function ``G(h | h_tilde)`` for ``min_h D(v | W h)``.

    Written as a mixture of scalar auxiliary functions: for each row ``f``
    the weights ``w_fk h_tilde_k / v_tilde_f`` sum to one and the tangent
    terms of the concave part recombine into ``sum_k w_fk (h_k - h_tilde_k)``.
    Rows of ``W`` must be nonzero and ``h_tilde`` strictly positive.
    """
    p = as_params(p)
    v = np.asarray(v, dtype=float)
    W = np.asarray(W, dtype=float)
    h = np.asarray(h, dtype=float)
    h_tilde = np.asarray(h_tilde, dtype=float)
    v_tilde = W @ h_tilde
    lam = W * h_tilde[None, :] / v_tilde[:, None]
    y = v_tilde[:, None] * (h / h_tilde)[None, :]
    g = scalar_aux(y, v_tilde[:, None], v[:, None], p)
    # w_fk == 0 terms carry zero weight
    return float(np.sum(np.where(lam > 0, lam * g, 0.0)))
