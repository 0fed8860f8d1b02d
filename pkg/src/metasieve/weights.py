"""Penalty-to-weight transform with an exponential decay and a baseline floor.

Each study's accumulated eligibility penalty ``p`` maps to a compatibility
value ``f`` in [0, 1], a score ``S`` in [B, 100], and a normalized weight::

    f = (exp(-gamma * p) - exp(-gamma * P_max)) / (1 - exp(-gamma * P_max))
    S = B + (100 - B) * f
    w = S / sum(S)

``P_max`` anchors the zero point of ``f``.  Two resolution modes exist:
*attainable* (the sum of all penalty-rule severities — the default, and the
mode under which the shipped reference figures reproduce) and *observed*
(the maximum penalty in the input).  An explicit value overrides either
mode.  Computation order is fixed (input order, left-to-right summation) so
results are bit-reproducible.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigurationError, InputError

logger = logging.getLogger(__name__)


class PmaxMode(Enum):
    ATTAINABLE = "attainable"
    OBSERVED = "observed"

    @classmethod
    def from_string(cls, value: str) -> "PmaxMode":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown pmax mode: {value!r}") from None


@dataclass(frozen=True)
class WeightParams:
    gamma: float = 0.5
    floor: float = 20.0
    pmax_mode: PmaxMode = PmaxMode.ATTAINABLE
    explicit_pmax: float | None = None

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise ConfigurationError(f"gamma must be positive and finite, got {self.gamma}")
        if not (0 < self.floor <= 100):
            raise ConfigurationError(f"floor must lie in (0, 100], got {self.floor}")
        if self.explicit_pmax is not None and not (
            self.explicit_pmax > 0 and math.isfinite(self.explicit_pmax)
        ):
            raise ConfigurationError(f"explicit pmax must be positive, got {self.explicit_pmax}")


@dataclass(frozen=True)
class StudyWeight:
    study_id: str
    penalty: float  # p
    compatibility: float  # f, in [0, 1]
    score: float  # S, in [floor, 100]
    weight: float  # w, normalized


@dataclass(frozen=True)
class WeightVector:
    studies: tuple[StudyWeight, ...]
    gamma: float
    floor: float
    pmax_mode: str
    pmax: float

    def weights(self) -> tuple[float, ...]:
        return tuple(s.weight for s in self.studies)

    def by_id(self) -> dict[str, float]:
        return {s.study_id: s.weight for s in self.studies}


def vector_to_jsonable(vector: WeightVector) -> dict:
    return {
        "gamma": vector.gamma,
        "floor": vector.floor,
        "pmax_mode": vector.pmax_mode,
        "pmax": vector.pmax,
        "studies": [
            {
                "study_id": s.study_id,
                "penalty": s.penalty,
                "compatibility": s.compatibility,
                "score": s.score,
                "weight": s.weight,
            }
            for s in vector.studies
        ],
    }


def resolve_pmax(
    penalties: list[float], params: WeightParams, rule_severity_total: float | None
) -> float:
    if params.explicit_pmax is not None:
        return params.explicit_pmax
    if params.pmax_mode is PmaxMode.OBSERVED:
        return max(penalties)
    if rule_severity_total is None:
        raise ConfigurationError(
            "attainable pmax mode needs the rule severity total (or an explicit pmax)"
        )
    return rule_severity_total


def compute_weights(
    penalties: list[tuple[str, float]],
    params: WeightParams = WeightParams(),
    rule_severity_total: float | None = None,
) -> WeightVector:
    """Map per-study penalties to normalized weights.

    ``penalties`` is an ordered list of (study_id, penalty).  For the
    attainable P_max mode, pass the active rule set's severity total.
    """
    if not penalties:
        raise InputError("at least one study is required")
    values = []
    for study_id, p in penalties:
        if not math.isfinite(p):
            raise InputError(f"penalty for {study_id} is not finite")
        if p < 0:
            raise InputError(f"penalty for {study_id} is negative: {p}")
        values.append(float(p))

    pmax = resolve_pmax(values, params, rule_severity_total)
    if pmax < 0:
        raise ConfigurationError(f"pmax must be non-negative, got {pmax}")
    if pmax == 0 and any(v > 0 for v in values):
        raise ConfigurationError("pmax resolved to 0 while some penalties are positive")

    # expm1 keeps the boundary cases exact (p=0 -> f=1, p=pmax -> f=0) and
    # stays accurate when gamma*pmax is tiny.
    denominator = -math.expm1(-params.gamma * pmax) if pmax > 0 else 0.0
    compatibilities = []
    for (study_id, _), p in zip(penalties, values):
        if denominator == 0.0:
            f = 1.0  # continuity limit: every penalty is effectively zero
        else:
            if p > pmax:
                logger.warning(
                    "penalty %.6g for %s exceeds pmax %.6g; compatibility clamped to 0",
                    p,
                    study_id,
                    pmax,
                )
                p = pmax
            f = (math.expm1(-params.gamma * p) - math.expm1(-params.gamma * pmax)) / denominator
        compatibilities.append(f)

    scores = [params.floor + (100.0 - params.floor) * f for f in compatibilities]
    total = 0.0
    for s in scores:
        total += s
    studies = tuple(
        StudyWeight(study_id=sid, penalty=p, compatibility=f, score=s, weight=s / total)
        for (sid, _), p, f, s in zip(penalties, values, compatibilities, scores)
    )
    return WeightVector(
        studies=studies,
        gamma=params.gamma,
        floor=params.floor,
        pmax_mode=params.pmax_mode.value,
        pmax=pmax,
    )
