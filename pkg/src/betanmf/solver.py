"""Alternating beta-NMF driver: plain, l1-penalized, convex and masked variants."""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .diagnostics import RunTrace, TraceRecord, cost, fill_fit_residuals, kkt_residuals
from .divergence import BetaLike, BetaParams, as_params, eps_floor
from .updates import (
    RatioStats,
    RuleKind,
    UnsupportedBetaError,
    UpdateRule,
    _approx,
    apply_rule,
    compute_ratio_stats_H,
    compute_ratio_stats_W,
    weighted_terms,
)

logger = logging.getLogger(__name__)

INIT_LOW, INIT_HIGH = 0.1, 1.1


class PositivityError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when the cost becomes NaN or infinite. Carries the partial run."""

    def __init__(self, message, state=None, trace=None):
        super().__init__(message)
        self.state = state
        self.trace = trace


class DegenerateWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FactorState:
    """Current factors. ``L`` is set for convex-NMF, where ``W = S @ L``."""

    W: np.ndarray
    H: np.ndarray
    iter: int = 0
    normalized: bool = False
    L: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ConvexState:
    L: np.ndarray
    H: np.ndarray
    S: np.ndarray

    @property
    def W(self):
        return self.S @ self.L


@dataclass
class ProblemSpec:
    """Everything that defines a run besides the initial factors.

    ``order`` lists the factors updated within one iteration, e.g. ``"WH"``
    (the default), ``"HW"``, or ``"H"`` to keep ``W`` fixed.
    """

    V: np.ndarray
    K: int
    beta: BetaParams
    rule: UpdateRule = field(default_factory=UpdateRule)
    l1_weight_H: float = 0.0
    S: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    max_iter: int = 1000
    seed: int = 0
    tol: Optional[float] = None
    order: str = "WH"
    normalize: bool = True
    checkpoint_every: int = 10
    track_kkt: bool = True
    timing: bool = True
    eps: Optional[float] = None

    def __post_init__(self):
        self.beta = as_params(self.beta)
        if isinstance(self.rule, (str, RuleKind)):
            self.rule = UpdateRule(self.rule)
        V = np.asarray(self.V, dtype=float)
        if V.ndim != 2:
            raise ValueError(f"V must be 2-D, got shape {V.shape}")
        if np.any(V < 0) or not np.all(np.isfinite(V)):
            raise ValueError("V must be finite and nonnegative")
        self.V = V
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K}")
        self.K = int(self.K)
        if self.l1_weight_H < 0:
            raise ValueError("l1 weight must be nonnegative")
        if self.mask is not None:
            mask = np.asarray(self.mask, dtype=float)
            if mask.shape != V.shape:
                raise ValueError(f"mask shape {mask.shape} does not match V {V.shape}")
            if not np.all((mask == 0) | (mask == 1)):
                raise ValueError("mask entries must be 0 or 1")
            self.mask = mask
            if not mask.any():
                warnings.warn("mask has no observed entries; the run is degenerate", DegenerateWarning)
        if self.S is not None:
            S = np.asarray(self.S, dtype=float)
            if S.ndim != 2 or S.shape[0] != V.shape[0]:
                raise ValueError(f"S must be F x M with F={V.shape[0]}, got {S.shape}")
            if np.any(S < 0):
                raise ValueError("S must be nonnegative")
            self.S = S
        if not self.order or set(self.order) - {"W", "H"}:
            raise ValueError(f"order must be a sequence over 'W'/'H', got {self.order!r}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be nonnegative")
        self.rule.check_beta(self.beta.beta)
        if self.l1_weight_H > 0:
            if self.rule.kind is not RuleKind.MM:
                raise UnsupportedBetaError("the l1-penalized update is implemented for the MM rule only")
            _check_l1_beta(self.beta.beta)

    @property
    def floor(self) -> float:
        return eps_floor() if self.eps is None else self.eps

    @property
    def data(self) -> np.ndarray:
        """V as seen by the updates: floored for beta <= 1 so every term stays finite."""
        if self.beta.beta <= 1 and self.floor > 0:
            return np.maximum(self.V, self.floor)
        return self.V


def _check_l1_beta(beta: float) -> None:
    if 1 < beta < 2:
        raise UnsupportedBetaError(
            f"no closed-form MM update for the l1-penalized problem with beta={beta:g} in (1, 2)"
        )


def init_factors(F: int, N: int, K: int, seed: int, M: Optional[int] = None):
    """Positive random initialization, uniform on (0.1, 1.1).

    Returns ``(W, H)``; when ``M`` is given the first factor is ``L`` (M x K).
    """
    rng = np.random.default_rng(seed)
    rows = F if M is None else M
    W = rng.uniform(INIT_LOW, INIT_HIGH, size=(rows, K))
    H = rng.uniform(INIT_LOW, INIT_HIGH, size=(K, N))
    return W, H


# -- array-level steps -------------------------------------------------------


def h_step(V, W, H, p: BetaLike, rule: UpdateRule, mask=None, l1: float = 0.0, theta=None, eps=None):
    p = as_params(p)
    eps = eps_floor() if eps is None else eps
    if l1 > 0:
        return l1_step(V, W, H, p, l1, mask, eps)
    stats = compute_ratio_stats_H(V, W, H, p, mask, eps)
    return apply_rule(H, stats, p, rule, theta)


def w_step(V, W, H, p: BetaLike, rule: UpdateRule, mask=None, theta=None, eps=None):
    p = as_params(p)
    eps = eps_floor() if eps is None else eps
    stats = compute_ratio_stats_W(V, W, H, p, mask, eps)
    return apply_rule(W, stats, p, rule, theta)


def l1_step(V, W, H, p: BetaLike, lam: float, mask=None, eps=None):
    """MM step for ``D(V | W H) + lam * sum(H)``.

    For beta <= 1 the penalty adds to the denominator. For beta >= 2 it is
    subtracted from the numerator, and entries whose numerator turns
    negative are set to zero (active constraint).
    """
    p = as_params(p)
    b = p.beta
    _check_l1_beta(b)
    eps = eps_floor() if eps is None else eps
    stats = compute_ratio_stats_H(V, W, H, p, mask, eps)
    if lam == 0:
        return apply_rule(H, stats, p, UpdateRule(RuleKind.MM))
    if b <= 1:
        ratio = stats.neg / (stats.pos + lam)
    else:
        ratio = np.maximum(stats.neg - lam, 0.0) / stats.pos
    return H * ratio if p.gamma == 1.0 else H * ratio**p.gamma


def l_step(V, S, L, H, p: BetaLike, rule: UpdateRule, mask=None, theta=None, eps=None):
    """Convex-NMF dictionary step for ``V ~ S L H`` with ``S`` fixed."""
    p = as_params(p)
    eps = eps_floor() if eps is None else eps
    stats = convex_ratio_stats(V, S, L, H, p, mask, eps)
    return apply_rule(L, stats, p, rule, theta)


def convex_ratio_stats(V, S, L, H, p: BetaLike, mask=None, eps=None) -> RatioStats:
    p = as_params(p)
    eps = eps_floor() if eps is None else eps
    S = np.asarray(S, dtype=float)
    L = np.asarray(L, dtype=float)
    H = np.asarray(H, dtype=float)
    if S.shape[1] != L.shape[0] or L.shape[1] != H.shape[0]:
        raise ValueError(f"shape mismatch: S {S.shape}, L {L.shape}, H {H.shape}")
    W = S @ L
    if W.shape != (V.shape[0], H.shape[0]) or H.shape[1] != V.shape[1]:
        raise ValueError(f"shape mismatch: V {V.shape}, S L {W.shape}, H {H.shape}")
    if p.beta == 2 and mask is None:
        neg = S.T @ (V @ H.T)
        pos = (S.T @ S) @ L @ (H @ H.T)
    else:
        num, den = weighted_terms(V, _approx(W, H, eps), p, mask)
        neg = S.T @ (num @ H.T)
        pos = S.T @ (den @ H.T)
    return RatioStats(neg, np.maximum(pos, eps) if eps > 0 else pos)


# -- state-level operations ----------------------------------------------------


def update_H(state: FactorState, spec: ProblemSpec, theta=None) -> np.ndarray:
    return h_step(spec.data, state.W, state.H, spec.beta, spec.rule, spec.mask, spec.l1_weight_H, theta, spec.floor)


def update_H_l1(state: FactorState, spec: ProblemSpec) -> np.ndarray:
    return l1_step(spec.data, state.W, state.H, spec.beta, spec.l1_weight_H, spec.mask, spec.floor)


def update_W(state: FactorState, spec: ProblemSpec, theta=None) -> np.ndarray:
    return w_step(spec.data, state.W, state.H, spec.beta, spec.rule, spec.mask, theta, spec.floor)


def update_L_convex(conv: ConvexState, V, spec: ProblemSpec, theta=None) -> np.ndarray:
    V = np.asarray(V, dtype=float)
    if spec.beta.beta <= 1 and spec.floor > 0:
        V = np.maximum(V, spec.floor)
    return l_step(V, conv.S, conv.L, conv.H, spec.beta, spec.rule, spec.mask, theta, spec.floor)


def normalize(state: FactorState, S=None) -> FactorState:
    """Rescale columns of ``W`` to unit l1 norm and rows of ``H`` inversely.

    For convex states pass ``S``; the scaling is then applied to ``L``.
    Zero columns are left untouched and the state is flagged unnormalized.
    """
    W = np.asarray(state.W, dtype=float)
    scale = W.sum(axis=0)
    zero = scale <= 0
    if zero.any():
        warnings.warn(f"cannot normalize zero column(s) {np.flatnonzero(zero).tolist()} of W", DegenerateWarning)
    safe = np.where(zero, 1.0, scale)
    H = state.H * safe[:, None]
    if state.L is not None:
        L = state.L / safe[None, :]
        W_new = (S @ L) if S is not None else W / safe[None, :]
        return replace(state, W=W_new, H=H, L=L, normalized=not zero.any())
    return replace(state, W=W / safe[None, :], H=H, normalized=not zero.any())


def _record(spec: ProblemSpec, V, W, H, i: int, wall_ms: float) -> TraceRecord:
    c = cost(V, W, H, spec.beta, spec.mask, normalized=True, eps=spec.floor)
    if spec.track_kkt:
        kw, kh = kkt_residuals(V, W, H, spec.beta, spec.mask, eps=spec.floor)
    else:
        kw = kh = float("nan")
    return TraceRecord(iter=i, cost=c, kkt_w=kw, kkt_h=kh, wall_ms=wall_ms)


def run(spec: ProblemSpec, init: Optional[FactorState] = None):
    """Run the alternating updates.

    Parameters
    ----------
    spec : ProblemSpec
    init : FactorState, optional
        Strictly positive starting factors. For convex runs ``init.L`` must
        be set. Drawn from ``spec.seed`` when omitted.

    Returns
    -------
    state : FactorState
    trace : RunTrace
        One record for the initial state plus one per iteration.
    """
    V = spec.data
    F, N = V.shape
    K = spec.K
    convex = spec.S is not None
    if init is None:
        A, H0 = init_factors(F, N, K, spec.seed, M=spec.S.shape[1] if convex else None)
        init = FactorState(W=spec.S @ A, H=H0, L=A) if convex else FactorState(W=A, H=H0)
    _validate_init(init, spec)
    W = np.array(init.W if not convex else spec.S @ init.L, dtype=float)
    H = np.array(init.H, dtype=float)
    L = None if not convex else np.array(init.L, dtype=float)

    trace = RunTrace(seed=spec.seed, beta=spec.beta.beta, rule=spec.rule.name)
    trace.records.append(_record(spec, V, W, H, 0, 0.0))
    checkpoints = []
    if spec.checkpoint_every > 0:
        checkpoints.append((0, W.copy(), H.copy()))
    state = replace(init, W=W, H=H, L=L, iter=0)

    n = spec.max_iter
    for i in range(1, n + 1):
        theta = spec.rule.theta_at(i - 1, n)
        t0 = time.perf_counter()
        for factor in spec.order:
            if factor == "W":
                if convex:
                    L = l_step(V, spec.S, L, H, spec.beta, spec.rule, spec.mask, theta, spec.floor)
                    W = spec.S @ L
                else:
                    W = w_step(V, W, H, spec.beta, spec.rule, spec.mask, theta, spec.floor)
            else:
                H = h_step(V, W, H, spec.beta, spec.rule, spec.mask, spec.l1_weight_H, theta, spec.floor)
        state = FactorState(W=W, H=H, iter=i, L=L)
        if spec.normalize:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", DegenerateWarning)
                state = normalize(state, spec.S)
            W, H, L = state.W, state.H, state.L
        wall = (time.perf_counter() - t0) * 1e3 if spec.timing else 0.0
        rec = _record(spec, V, W, H, i, wall)
        trace.records.append(rec)
        if spec.checkpoint_every > 0 and i % spec.checkpoint_every == 0:
            checkpoints.append((i, W.copy(), H.copy()))
        if not np.isfinite(rec.cost):
            fill_fit_residuals(trace, checkpoints, W, H)
            raise NonFiniteError(f"cost became {rec.cost} at iteration {i}", state, trace)
        if spec.tol is not None:
            prev = trace.records[-2].cost
            if prev > 0 and abs(prev - rec.cost) / prev < spec.tol:
                logger.info("relative cost change below %g at iteration %d", spec.tol, i)
                break

    if spec.checkpoint_every > 0:
        if checkpoints[-1][0] != state.iter:
            checkpoints.append((state.iter, W.copy(), H.copy()))
        fill_fit_residuals(trace, checkpoints, W, H)
    return state, trace


def _validate_init(init: FactorState, spec: ProblemSpec) -> None:
    F, N = spec.V.shape
    K = spec.K
    H = np.asarray(init.H)
    if H.shape != (K, N):
        raise ValueError(f"H must be {K} x {N}, got {H.shape}")
    if spec.S is not None:
        if init.L is None:
            raise ValueError("convex runs need init.L")
        L = np.asarray(init.L)
        if L.shape != (spec.S.shape[1], K):
            raise ValueError(f"L must be {spec.S.shape[1]} x {K}, got {L.shape}")
        factors = (L, H)
    else:
        W = np.asarray(init.W)
        if W.shape != (F, K):
            raise ValueError(f"W must be {F} x {K}, got {W.shape}")
        factors = (W, H)
    for a in factors:
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise PositivityError("initial factors must be finite and strictly positive")


def run_many(spec: ProblemSpec, rules: Sequence[UpdateRule], init: Optional[FactorState] = None):
    """Run several rules from one shared initialization."""
    if init is None:
        F, N = spec.V.shape
        M = spec.S.shape[1] if spec.S is not None else None
        A, H0 = init_factors(F, N, spec.K, spec.seed, M=M)
        init = FactorState(W=spec.S @ A, H=H0, L=A) if M is not None else FactorState(W=A, H=H0)
    out = {}
    for rule in rules:
        out[rule.name] = run(replace(spec, rule=rule), init)
    return out
