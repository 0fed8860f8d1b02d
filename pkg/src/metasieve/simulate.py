"""Monte Carlo consistency harness for the pooled estimator.

Simulates k studies sharing one true risk ratio, runs the uniform-weight
pooled estimate on each replicate, and reports the mean absolute error per
arm size.  Consistency shows up as the error shrinking while arms grow.

Requires numpy (installed with the ``test`` extra) for binomial sampling;
the core estimation modules never import it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import ConfigurationError, InputError
from .meta import ContingencyTable, pool_ew_mh

logger = logging.getLogger(__name__)

DEFAULT_CONTROL_RISKS = (0.10, 0.15, 0.20, 0.25)


@dataclass(frozen=True)
class ConsistencyPoint:
    arm_size: int
    mean_abs_error: float
    replicates: int


def consistency_curve(
    theta: float = 2.0,
    arm_sizes: tuple[int, ...] = (100, 1000, 10000),
    replicates: int = 500,
    seed: int = 7,
    control_risks: tuple[float, ...] = DEFAULT_CONTROL_RISKS,
) -> list[ConsistencyPoint]:
    """Mean absolute estimation error per arm size, seeded and reproducible."""
    try:
        import numpy as np
    except ImportError:
        raise ConfigurationError(
            "the Monte Carlo harness needs numpy (install the 'test' extra)"
        ) from None

    if theta <= 0:
        raise InputError(f"true ratio must be positive, got {theta}")
    risks = list(control_risks)
    if not risks or any(not 0 < p < 1 for p in risks):
        raise InputError("control risks must lie in (0, 1)")
    if any(theta * p >= 1 for p in risks):
        raise InputError("theta times every control risk must stay below 1")
    if replicates < 1 or any(n < 1 for n in arm_sizes):
        raise InputError("replicates and arm sizes must be positive")

    rng = np.random.default_rng(seed)
    k = len(risks)
    p0 = np.array(risks)
    p1 = theta * p0

    points = []
    for n in arm_sizes:
        a = rng.binomial(n, p1, size=(replicates, k))
        c = rng.binomial(n, p0, size=(replicates, k))
        total_error = 0.0
        for rep in range(replicates):
            tables = [
                ContingencyTable.from_counts(f"s{i}", int(a[rep, i]), n, int(c[rep, i]), n)
                for i in range(k)
            ]
            estimate = pool_ew_mh(tables)
            total_error += abs(estimate.theta_hat - theta)
        points.append(
            ConsistencyPoint(arm_size=n, mean_abs_error=total_error / replicates, replicates=replicates)
        )
        logger.debug("arm size %d: mean |error| = %.6f", n, points[-1].mean_abs_error)
    return points


def is_strictly_decreasing(points: list[ConsistencyPoint]) -> bool:
    errors = [p.mean_abs_error for p in points]
    return all(earlier > later for earlier, later in zip(errors, errors[1:]))
