"""Pooled risk ratios with eligibility weighting.

Core quantities, for tables (a, b, c, d) with n1 = a+b, n0 = c+d, n = n1+n0
and per-study weights w::

    A_w   = sum_i w_i * a_i * n0_i / n_i
    C_w   = sum_i w_i * c_i * n1_i / n_i
    theta = A_w / C_w
    Var(ln theta) = [ sum_i w_i^2 * (a_i + d_i) * b_i * c_i / n_i^2 ]
                    / (2 * A_w * C_w)
    CI    = exp(ln theta +/- z * sqrt(Var))

Equal weights of any size reduce theta to the classical Mantel-Haenszel
estimator, and every output is invariant to rescaling all weights by a
common positive factor (the factor cancels in theta and in the
variance ratio).  Summation order is fixed to input order so repeated runs
are bit-identical.

Display weights summarize each study's contribution as a percentage:
classical display weight ~ c_i*n1_i/n_i, eligibility-aware display weight
~ w_i*c_i*n1_i/n_i, each vector normalized to sum to 100.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import EstimationError, InputError
from .weights import WeightParams, WeightVector, compute_weights

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContingencyTable:
    """One study's 2x2 outcome table (treatment/control x event/non-event)."""

    study_id: str
    a: int  # treatment events
    b: int  # treatment non-events
    c: int  # control events
    d: int  # control non-events

    def __post_init__(self):
        for name in ("a", "b", "c", "d"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 0:
                raise InputError(f"{self.study_id}: cell {name} must be a non-negative integer")
        if self.n1 < 1 or self.n0 < 1:
            raise InputError(f"{self.study_id}: both arms need at least one participant")

    @property
    def n1(self) -> int:
        return self.a + self.b

    @property
    def n0(self) -> int:
        return self.c + self.d

    @property
    def n(self) -> int:
        return self.n1 + self.n0

    @property
    def m(self) -> int:
        return self.a + self.c

    @classmethod
    def from_counts(
        cls, study_id: str, events_trt: int, total_trt: int, events_ctl: int, total_ctl: int
    ) -> "ContingencyTable":
        return cls(
            study_id=study_id,
            a=events_trt,
            b=total_trt - events_trt,
            c=events_ctl,
            d=total_ctl - events_ctl,
        )


@dataclass(frozen=True)
class StudyResult:
    study_id: str
    rr: float  # may be inf when the control arm has zero events
    rr_ci_low: float | None
    rr_ci_high: float | None
    display_weight_percent: float
    weight: float
    zero_cell: str = ""  # "", "treatment-zero", "control-zero", or "both-zero"


@dataclass(frozen=True)
class PooledEstimate:
    theta_hat: float
    log_theta: float
    variance: float
    ci_low: float
    ci_high: float
    level: float
    a_w: float
    c_w: float
    studies: tuple[StudyResult, ...]
    weights_used: tuple[float, ...]
    continuity_corrected: tuple[str, ...] = ()


# ---------------------------------------------------------------------------
# Normal quantile
# ---------------------------------------------------------------------------

# Coefficients of a standard rational approximation to the inverse normal
# CDF (relative error below 1.2e-9 across the domain), used verbatim so the
# value is identical on every platform.
_ICDF_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
           1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_ICDF_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
           6.680131188771972e+01, -1.328068155288572e+01)
_ICDF_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
           -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_ICDF_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
           3.754408661907416e+00)


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF via a fixed rational approximation."""
    if not 0.0 < p < 1.0:
        raise InputError(f"quantile argument must lie in (0, 1), got {p}")
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    p_low, p_high = 0.02425, 1 - 0.02425
    if p < p_low:
        q = math.sqrt(-2 * math.log(p))
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
        )
    if p > p_high:
        q = math.sqrt(-2 * math.log(1 - p))
        return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
        )
    q = p - 0.5
    r = q * q
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
        ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1
    )


def z_for_level(level: float) -> float:
    """Two-sided critical value; exactly 1.96 at the conventional 0.95 level."""
    if not 0.0 < level < 1.0:
        raise InputError(f"confidence level must lie in (0, 1), got {level}")
    if level == 0.95:
        return 1.96
    return normal_quantile(1 - (1 - level) / 2)


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


def _weight_map(tables, weights) -> dict[str, float]:
    ids = [t.study_id for t in tables]
    if len(set(ids)) != len(ids):
        raise InputError("duplicate study_id in tables")
    if weights is None:
        return {sid: 1.0 / len(ids) for sid in ids}
    mapping = weights.by_id() if isinstance(weights, WeightVector) else dict(weights)
    if set(mapping) != set(ids):
        missing = sorted(set(ids) - set(mapping))
        extra = sorted(set(mapping) - set(ids))
        raise InputError(f"weights do not align with tables (missing {missing}, extra {extra})")
    for sid, w in mapping.items():
        if not (w > 0 and math.isfinite(w)):
            raise InputError(f"weight for {sid} must be positive and finite")
    return mapping


def _apply_continuity(tables: list[ContingencyTable]) -> tuple[list, tuple[str, ...]]:
    """Add 0.5 to every cell of tables containing a zero cell; report which."""
    corrected_ids = []
    adjusted = []
    for t in tables:
        if 0 in (t.a, t.b, t.c, t.d):
            corrected_ids.append(t.study_id)
            adjusted.append((t.study_id, t.a + 0.5, t.b + 0.5, t.c + 0.5, t.d + 0.5))
        else:
            adjusted.append((t.study_id, float(t.a), float(t.b), float(t.c), float(t.d)))
    return adjusted, tuple(corrected_ids)


def per_study_rr(table: ContingencyTable, level: float = 0.95):
    """Per-study risk ratio with a log-scale confidence interval.

    Zero event counts yield a 0 or infinite point estimate with the interval
    left open on the degenerate side (returned as None bounds plus a marker).
    """
    z = z_for_level(level)
    if table.a == 0 and table.c == 0:
        return float("nan"), None, None, "both-zero"
    if table.a == 0:
        return 0.0, None, None, "treatment-zero"
    if table.c == 0:
        return float("inf"), None, None, "control-zero"
    rr = (table.a / table.n1) / (table.c / table.n0)
    se = math.sqrt(1 / table.a - 1 / table.n1 + 1 / table.c - 1 / table.n0)
    log_rr = math.log(rr)
    return rr, math.exp(log_rr - z * se), math.exp(log_rr + z * se), ""


def display_weights(tables: list[ContingencyTable], weights=None) -> list[float]:
    """Percentage contribution of each study, normalized to sum to 100.

    Without weights this is the classical contribution c_i*n1_i/n_i; with
    weights each term is additionally multiplied by w_i.
    """
    mapping = _weight_map(tables, weights)
    terms = [mapping[t.study_id] * t.c * t.n1 / t.n for t in tables]
    total = 0.0
    for term in terms:
        total += term
    if total == 0:
        raise EstimationError("every control arm has zero events; display weights undefined")
    return [100.0 * term / total for term in terms]


def pool_ew_mh(
    tables: list[ContingencyTable],
    weights: WeightVector | dict[str, float] | None = None,
    level: float = 0.95,
    continuity_correction: bool = False,
) -> PooledEstimate:
    """Pool the tables into a single risk ratio under the given weights.

    ``weights=None`` means uniform (the classical estimator).  Weights must
    align with the tables by study_id; any common scale factor is harmless.
    """
    if not tables:
        raise InputError("at least one table is required")
    mapping = _weight_map(tables, weights)
    cells, corrected = _apply_continuity(list(tables)) if continuity_correction else (
        [(t.study_id, float(t.a), float(t.b), float(t.c), float(t.d)) for t in tables],
        (),
    )

    a_w = 0.0
    c_w = 0.0
    var_numerator = 0.0
    for sid, a, b, c, d in cells:
        w = mapping[sid]
        n1, n0 = a + b, c + d
        n = n1 + n0
        a_w += w * a * n0 / n
        c_w += w * c * n1 / n
        var_numerator += w * w * (a + d) * b * c / (n * n)

    if a_w == 0 or c_w == 0:
        side = {
            (True, True): "both the treatment-side numerator and control-side denominator are",
            (True, False): "the treatment-side numerator is",
            (False, True): "the control-side denominator is",
        }[(a_w == 0, c_w == 0)]
        raise EstimationError(
            f"{side} zero; no pooled ratio exists (consider the continuity-correction flag)"
        )

    theta = a_w / c_w
    log_theta = math.log(theta)
    variance = var_numerator / (2 * a_w * c_w)
    z = z_for_level(level)
    half_width = z * math.sqrt(variance)
    ci_low, ci_high = math.exp(log_theta - half_width), math.exp(log_theta + half_width)

    percents = display_weights(tables, mapping)
    studies = []
    for t, percent in zip(tables, percents):
        rr, lo, hi, zero_cell = per_study_rr(t, level)
        studies.append(
            StudyResult(
                study_id=t.study_id,
                rr=rr,
                rr_ci_low=lo,
                rr_ci_high=hi,
                display_weight_percent=percent,
                weight=mapping[t.study_id],
                zero_cell=zero_cell,
            )
        )
    return PooledEstimate(
        theta_hat=theta,
        log_theta=log_theta,
        variance=variance,
        ci_low=ci_low,
        ci_high=ci_high,
        level=level,
        a_w=a_w,
        c_w=c_w,
        studies=tuple(studies),
        weights_used=tuple(mapping[t.study_id] for t in tables),
        continuity_corrected=corrected,
    )


# ---------------------------------------------------------------------------
# Sensitivity sweep and forest data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    params: WeightParams
    weight_vector: WeightVector
    estimate: PooledEstimate


def sensitivity_sweep(
    tables: list[ContingencyTable],
    penalties: list[tuple[str, float]],
    gammas: list[float],
    floors: list[float],
    modes: list = ("attainable",),
    rule_severity_total: float | None = None,
    level: float = 0.95,
) -> list[SweepRow]:
    """Re-estimate across a (gamma, floor, pmax-mode) grid, in grid order."""
    from .weights import PmaxMode

    rows = []
    for gamma in gammas:
        for floor in floors:
            for mode in modes:
                mode_enum = mode if isinstance(mode, PmaxMode) else PmaxMode.from_string(mode)
                params = WeightParams(gamma=gamma, floor=floor, pmax_mode=mode_enum)
                vector = compute_weights(penalties, params, rule_severity_total)
                estimate = pool_ew_mh(tables, vector, level=level)
                rows.append(SweepRow(params=params, weight_vector=vector, estimate=estimate))
    return rows


def sweep_to_jsonable(rows: list[SweepRow]) -> dict:
    return {
        "rows": [
            {
                "gamma": row.params.gamma,
                "floor": row.params.floor,
                "pmax_mode": row.params.pmax_mode.value,
                "pmax": row.weight_vector.pmax,
                "weights": list(row.weight_vector.weights()),
                "theta_hat": row.estimate.theta_hat,
                "ci_low": row.estimate.ci_low,
                "ci_high": row.estimate.ci_high,
            }
            for row in rows
        ]
    }


def forest_data(classical: PooledEstimate, weighted: PooledEstimate) -> dict:
    """Paired per-study rows and the two pooled rows a dual forest plot shows."""
    if [s.study_id for s in classical.studies] != [s.study_id for s in weighted.studies]:
        raise InputError("classical and weighted estimates cover different studies")
    studies = []
    for base, ew in zip(classical.studies, weighted.studies):
        studies.append(
            {
                "study_id": base.study_id,
                "rr": base.rr,
                "ci_low": base.rr_ci_low,
                "ci_high": base.rr_ci_high,
                "classical_weight_percent": base.display_weight_percent,
                "weighted_weight_percent": ew.display_weight_percent,
            }
        )
    return {
        "studies": studies,
        "pooled": [
            {
                "label": "classical",
                "theta": classical.theta_hat,
                "ci_low": classical.ci_low,
                "ci_high": classical.ci_high,
            },
            {
                "label": "eligibility-weighted",
                "theta": weighted.theta_hat,
                "ci_low": weighted.ci_low,
                "ci_high": weighted.ci_high,
            },
        ],
    }


# ---------------------------------------------------------------------------
# Table I/O
# ---------------------------------------------------------------------------

CSV_COLUMNS = ("study_id", "events_trt", "total_trt", "events_ctl", "total_ctl")


def load_tables_csv(source: str | Path) -> list[ContingencyTable]:
    """Read tables from CSV with columns study_id,events_trt,total_trt,events_ctl,total_ctl."""
    text = Path(source).read_text(encoding="utf-8")
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != list(CSV_COLUMNS):
        raise InputError(
            f"table CSV must have header {','.join(CSV_COLUMNS)}, got {reader.fieldnames}"
        )
    tables = []
    for row_number, row in enumerate(reader, start=2):
        try:
            tables.append(
                ContingencyTable.from_counts(
                    row["study_id"].strip(),
                    int(row["events_trt"]),
                    int(row["total_trt"]),
                    int(row["events_ctl"]),
                    int(row["total_ctl"]),
                )
            )
        except (TypeError, ValueError) as exc:
            raise InputError(f"table CSV line {row_number}: {exc}") from exc
    if not tables:
        raise InputError("table CSV contains no data rows")
    return tables


def tables_to_jsonable(tables: list[ContingencyTable]) -> list[dict]:
    return [
        {
            "study_id": t.study_id,
            "events_trt": t.a,
            "total_trt": t.n1,
            "events_ctl": t.c,
            "total_ctl": t.n0,
        }
        for t in tables
    ]


def tables_from_jsonable(rows: list[dict]) -> list[ContingencyTable]:
    try:
        return [
            ContingencyTable.from_counts(
                str(r["study_id"]),
                int(r["events_trt"]),
                int(r["total_trt"]),
                int(r["events_ctl"]),
                int(r["total_ctl"]),
            )
            for r in rows
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"bad table row: {exc}") from exc


def estimate_to_jsonable(estimate: PooledEstimate) -> dict:
    """Estimate as strict JSON: non-finite per-study ratios become null + marker."""
    studies = []
    for s in estimate.studies:
        studies.append(
            {
                "study_id": s.study_id,
                "rr": s.rr if math.isfinite(s.rr) else None,
                "rr_ci_low": s.rr_ci_low,
                "rr_ci_high": s.rr_ci_high,
                "display_weight_percent": s.display_weight_percent,
                "weight": s.weight,
                "zero_cell": s.zero_cell,
            }
        )
    return {
        "theta_hat": estimate.theta_hat,
        "log_theta": estimate.log_theta,
        "variance": estimate.variance,
        "ci_low": estimate.ci_low,
        "ci_high": estimate.ci_high,
        "level": estimate.level,
        "a_w": estimate.a_w,
        "c_w": estimate.c_w,
        "studies": studies,
        "weights_used": list(estimate.weights_used),
        "continuity_corrected": list(estimate.continuity_corrected),
    }
