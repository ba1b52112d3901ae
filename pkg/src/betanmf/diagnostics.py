"""Convergence instrumentation: cost, KKT and fit residuals, PSNR, monotonicity audit."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .divergence import BetaLike, as_params, beta_divergence, eps_floor

TRACE_HEADER = ("iter", "cost", "kkt_w", "kkt_h", "fit_w", "fit_h", "wall_ms")
MONOTONE_SLACK = 1e-9


@dataclass
class TraceRecord:
    iter: int
    cost: float
    kkt_w: float
    kkt_h: float
    fit_w: Optional[float] = None
    fit_h: Optional[float] = None
    wall_ms: float = 0.0


@dataclass
class RunTrace:
    """Per-iteration records of a run; record 0 is the initial state."""

    records: List[TraceRecord] = field(default_factory=list)
    seed: Optional[int] = None
    beta: Optional[float] = None
    rule: Optional[str] = None

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def costs(self) -> np.ndarray:
        return np.array([r.cost for r in self.records])

    @property
    def kkt(self) -> np.ndarray:
        return np.array([(r.kkt_w, r.kkt_h) for r in self.records])

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    @property
    def wall_s(self) -> float:
        return sum(r.wall_ms for r in self.records) / 1e3

    def iters_to_threshold(self, threshold: float) -> Optional[int]:
        for r in self.records:
            if r.cost < threshold:
                return r.iter
        return None

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in self.records:
            writer.writerow([r.iter] + [_fmt(getattr(r, k)) for k in TRACE_HEADER[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "RunTrace":
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                vals = {k: (float(row[k]) if row[k] != "" else None) for k in TRACE_HEADER[1:]}
                trace.records.append(TraceRecord(iter=int(row["iter"]), **vals))
        return trace


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.12g}"


def _observed(V, V_hat, mask):
    if mask is None:
        return V, V_hat
    keep = np.asarray(mask) > 0
    return V[keep], V_hat[keep]


def cost(V, W, H, p: BetaLike, mask=None, normalized: bool = False, eps: Optional[float] = None) -> float:
    """``D(V | W H)`` summed over observed entries.

    With ``normalized=True`` the sum is divided by the number of observed
    entries (``F * N`` without a mask).
    """
    eps = eps_floor() if eps is None else eps
    V = np.asarray(V, dtype=float)
    V_hat = np.asarray(W, dtype=float) @ np.asarray(H, dtype=float)
    if V_hat.shape != V.shape:
        raise ValueError(f"W @ H has shape {V_hat.shape}, V has {V.shape}")
    if eps > 0:
        V_hat = np.maximum(V_hat, eps)
    x, y = _observed(V, V_hat, mask)
    if x.size == 0:
        return 0.0
    total = float(np.sum(beta_divergence(x, y, p)))
    return total / x.size if normalized else total


def gradients(V, W, H, p: BetaLike, mask=None, eps: Optional[float] = None):
    """Gradients of ``D(V | W H)`` with respect to ``W`` and ``H``."""
    b = as_params(p).beta
    eps = eps_floor() if eps is None else eps
    V = np.asarray(V, dtype=float)
    W = np.asarray(W, dtype=float)
    H = np.asarray(H, dtype=float)
    V_hat = W @ H
    if eps > 0:
        V_hat = np.maximum(V_hat, eps)
    E = V_hat ** (b - 2.0) * (V_hat - V)
    if mask is not None:
        E = E * mask
    return E @ H.T, W.T @ E


def kkt_residuals(V, W, H, p: BetaLike, mask=None, eps: Optional[float] = None):
    """Size-normalized l1 norms of ``min(factor, gradient)`` for ``W`` and ``H``."""
    gW, gH = gradients(V, W, H, p, mask, eps)
    kw = float(np.abs(np.minimum(W, gW)).sum() / np.size(W))
    kh = float(np.abs(np.minimum(H, gH)).sum() / np.size(H))
    return kw, kh


def fit_residuals(state, reference):
    """Frobenius distances to reference factors, divided by the factor sizes."""
    W, H = np.asarray(state.W), np.asarray(state.H)
    Wr, Hr = np.asarray(reference.W), np.asarray(reference.H)
    if W.shape != Wr.shape or H.shape != Hr.shape:
        raise ValueError("state and reference factors differ in shape")
    return (
        float(np.linalg.norm(W - Wr) / W.size),
        float(np.linalg.norm(H - Hr) / H.size),
    )


def fill_fit_residuals(trace: RunTrace, checkpoints, W_end, H_end) -> None:
    """Fill ``fit_w``/``fit_h`` of checkpointed records against the end factors."""
    by_iter = {r.iter: r for r in trace.records}
    for i, W, H in checkpoints:
        rec = by_iter.get(i)
        if rec is None:
            continue
        rec.fit_w = float(np.linalg.norm(W - W_end) / W.size)
        rec.fit_h = float(np.linalg.norm(H - H_end) / H.size)


def psnr(original, reconstructed, peak: float = 255.0) -> float:
    """``20 log10(F * peak / ||v - v_hat||_2)`` in dB; ``inf`` for a perfect match.

    Note the numerator uses the pixel count ``F`` times the peak, not the
    more common ``sqrt(F) * peak``.
    """
    v = np.ravel(np.asarray(original, dtype=float))
    v_hat = np.ravel(np.asarray(reconstructed, dtype=float))
    if v.shape != v_hat.shape:
        raise ValueError(f"length mismatch: {v.size} vs {v_hat.size}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = float(np.linalg.norm(v - v_hat))
    if err == 0.0:
        return math.inf
    return 20.0 * math.log10(v.size * peak / err)


@dataclass
class AuditReport:
    violations: list

    @property
    def monotone(self) -> bool:
        return not self.violations


def monotonicity_audit(trace, slack: float = MONOTONE_SLACK) -> AuditReport:
    """Iterations whose cost rose by more than ``slack`` relative to the previous one."""
    if isinstance(trace, RunTrace):
        costs = trace.costs
        iters = [r.iter for r in trace.records]
    else:
        costs = np.asarray(trace, dtype=float)
        iters = list(range(costs.size))
    if costs.size == 0:
        raise ValueError("empty trace")
    delta = np.diff(costs)
    bad = np.flatnonzero(delta > slack * np.abs(costs[:-1]))
    return AuditReport([(iters[k + 1], float(delta[k])) for k in bad])
