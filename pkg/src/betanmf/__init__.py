"""Nonnegative matrix factorization under the beta-divergence.

MM, heuristic and majorization-equalization (ME) multiplicative updates,
with l1-penalized, convex and missing-data variants.
"""

from .diagnostics import RunTrace, TraceRecord, cost, kkt_residuals, monotonicity_audit, psnr
from .divergence import BetaParams, DomainError, beta_divergence, decompose, scalar_aux
from .solver import FactorState, ProblemSpec, normalize, run
from .updates import RuleKind, UpdateRule, heuristic_update, me_update, mm_update

__version__ = "0.1.0"

__all__ = [
    "BetaParams",
    "DomainError",
    "FactorState",
    "ProblemSpec",
    "RuleKind",
    "RunTrace",
    "TraceRecord",
    "UpdateRule",
    "beta_divergence",
    "cost",
    "decompose",
    "heuristic_update",
    "kkt_residuals",
    "me_update",
    "mm_update",
    "monotonicity_audit",
    "normalize",
    "psnr",
    "run",
    "scalar_aux",
]
