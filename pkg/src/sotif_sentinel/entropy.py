"""Perception entropy of fused ensemble outputs, the missed-detection penalty,
and the three-level warning scale. All entropies are in nats."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

from .fusion import FusedObject

CLAMP_EPS = 1e-12

LEVEL_NAMES = ("low, normal", "medium, caution", "high, warning")


@dataclass(frozen=True)
class EntropyConfig:
    T: int = 5
    C: int = 11
    f_p: float = 0.1
    theta_lm: float = 1.2
    theta_mh: float = 1.6

    def __post_init__(self):
        if self.T < 1 or self.C < 1:
            raise ValueError("T and C must be >= 1")
        if self.f_p < 0:
            raise ValueError("penalty factor must be non-negative")
        if not (0 < self.theta_lm < self.theta_mh):
            raise ValueError("thresholds must satisfy 0 < theta_lm < theta_mh")


@dataclass(frozen=True)
class EntropyReport:
    E_pe: float
    E_pe_star: float
    level: int
    winning_label: int
    confidence: float
    d: int

    def to_dict(self) -> dict:
        return {
            "E_pe": self.E_pe,
            "E_pe_star": self.E_pe_star,
            "level": self.level,
            "winning_label": self.winning_label,
            "confidence": self.confidence,
            "d": self.d,
        }


def _xlogx(p: float) -> float:
    return 0.0 if p == 0.0 else p * math.log(p)


def shannon_entropy(p: Sequence[float], tol: float = 1e-9) -> float:
    """Entropy of a categorical distribution, with 0 log 0 = 0."""
    if any(x < 0.0 or x > 1.0 for x in p):
        raise ValueError("probabilities must lie in [0, 1]")
    if abs(math.fsum(p) - 1.0) > tol:
        raise ValueError(f"probabilities sum to {math.fsum(p)}, expected 1")
    return -math.fsum(_xlogx(x) for x in p)


def binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        if p < 0.0 or p > 1.0:
            raise ValueError(f"probability {p} outside [0, 1]")
        return 0.0
    q = min(max(p, CLAMP_EPS), 1.0 - CLAMP_EPS)
    return -(q * math.log(q) + (1.0 - q) * math.log(1.0 - q))


def multi_label_entropy(mean_scores: Sequence[float], C: int | None = None) -> float:
    """Sum of per-category binary entropies of independent logistic scores.

    Bounded by ``0`` (every score at 0 or 1) and ``C * ln 2`` (every score 1/2).
    """
    if C is not None and len(mean_scores) != C:
        raise ValueError(f"expected {C} category scores, got {len(mean_scores)}")
    return math.fsum(binary_entropy(float(p)) for p in mean_scores)


def penalized_entropy(E_pe: float, d: int, cfg: EntropyConfig) -> float:
    if d > cfg.T or d < 0:
        raise ValueError(f"detector count d={d} outside [0, {cfg.T}]")
    if E_pe < 0:
        raise ValueError("entropy must be non-negative")
    return E_pe * (1.0 + cfg.f_p * (cfg.T - d))


def entropy_level(E_pe_star: float, cfg: EntropyConfig) -> int:
    if E_pe_star < cfg.theta_lm:
        return 0
    if E_pe_star < cfg.theta_mh:
        return 1
    return 2


def assess(obj: FusedObject, cfg: EntropyConfig) -> EntropyReport:
    e = multi_label_entropy(obj.mean_scores, cfg.C)
    e_star = penalized_entropy(e, obj.d, cfg)
    return EntropyReport(
        E_pe=e,
        E_pe_star=e_star,
        level=entropy_level(e_star, cfg),
        winning_label=obj.winning_label,
        confidence=obj.confidence,
        d=obj.d,
    )
