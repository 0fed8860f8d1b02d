"""Function plans: the executable JSON form of trial selection rules.

A plan binds a snake_case ``filter_name`` to one or more conditions.  Each
condition names the trial fields to read, an extraction instruction, a
comparison operator, and a target.  Two operator modes exist:

* ``default`` — exactly one condition; the trial is kept iff it holds.
* ``sequential`` — conditions 1..k-1 are guards that establish whether the
  rule applies.  Any guard that does not hold keeps the trial immediately
  (the rule is not applicable); once all guards hold, the final condition
  decides.  This makes "exclude Phase III trials with fewer than 100
  patients" expressible as guard(phase == III) then final(enrollment > 100).

``and`` is accepted as an input alias of ``default``.

Extraction failures surface as *unknown* condition outcomes, never as
exceptions: an unknown in a default plan drops the trial with a flag, an
unknown guard keeps it with a flag, and an unknown final condition drops it
with a flag (all three configurable via :class:`EvaluationSettings`).
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from . import druglib
from .errors import ConfigurationError, SchemaError
from .extraction import (
    ExpectedKind,
    ExtractedValue,
    ExtractionFailure,
    ExtractionRequest,
    Parser,
    extract,
)
from .trials import FIELD_VOCABULARY, TrialRecord

logger = logging.getLogger(__name__)

_FILTER_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_CANONICAL_FIELDS = {name.casefold(): name for name in FIELD_VOCABULARY}

PLAN_FIELDS = {"filter_name", "logical_operator", "conditions"}
CONDITION_FIELDS = {
    "fields_to_attend",
    "llm_instruction",
    "comparison",
    "target_value",
    "membership_list_name",
}

# Control-arm labels that a membership check ignores: a comparator is not an
# investigational drug, so its absence from an approved-drug list must not
# veto the trial.
DEFAULT_COMPARATOR_EXEMPTIONS = frozenset(
    {"placebo", "best supportive care", "standard of care", "observation", "sham", "vehicle", "saline"}
)


class LogicalOperator(Enum):
    DEFAULT = "default"
    SEQUENTIAL = "sequential"

    @classmethod
    def from_string(cls, value: str) -> "LogicalOperator":
        lowered = value.strip().lower()
        if lowered == "and":  # accepted input alias
            return cls.DEFAULT
        try:
            return cls(lowered)
        except ValueError:
            raise ValueError(f"unknown logical_operator: {value!r}") from None


class Comparison(Enum):
    GREATER_THAN = "greater_than"
    LESS_THAN = "less_than"
    EQUAL_TO = "equal_to"
    NOT_EQUAL = "not_equal"
    PRESENCE_MATCH = "presence_match"
    IN_LIST = "in_list"

    @classmethod
    def from_string(cls, value: str) -> "Comparison":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown comparison: {value!r}") from None


class ConditionOutcome(Enum):
    SATISFIED = "satisfied"
    UNSATISFIED = "unsatisfied"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class Condition:
    fields_to_attend: tuple[str, ...]
    llm_instruction: str
    comparison: Comparison
    target_value: object = None
    membership_list_name: str = ""

    def expected_kind(self) -> ExpectedKind:
        if self.comparison in (Comparison.GREATER_THAN, Comparison.LESS_THAN):
            return ExpectedKind.NUMBER
        if self.comparison is Comparison.IN_LIST:
            return ExpectedKind.NAME_LIST
        if self.comparison in (Comparison.EQUAL_TO, Comparison.NOT_EQUAL) and _is_booleanish(
            self.target_value
        ):
            return ExpectedKind.BOOLEAN_YES_NO
        return ExpectedKind.PHRASE_OR_NONE


@dataclass(frozen=True)
class FunctionPlan:
    filter_name: str
    logical_operator: LogicalOperator
    conditions: tuple[Condition, ...]


@dataclass(frozen=True)
class ConditionTrace:
    condition_index: int
    outcome: ConditionOutcome
    short_circuited: bool
    extracted: ExtractedValue | ExtractionFailure | None


@dataclass(frozen=True)
class RuleVerdict:
    filter_name: str
    keep: bool
    condition_trace: tuple[ConditionTrace, ...]
    flagged: bool = False
    flag_reason: str = ""


@dataclass
class PlanSet:
    """Aggregated plans plus the parsed condition/treatment framing strings."""

    condition: str
    treatment: str
    plans: list[FunctionPlan]


def _is_booleanish(target) -> bool:
    if isinstance(target, bool):
        return True
    return isinstance(target, str) and target.strip().lower() in {"yes", "no", "true", "false"}


def _as_bool(target) -> bool:
    if isinstance(target, bool):
        return target
    return str(target).strip().lower() in {"yes", "true"}


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _fail(message: str, pointer: str):
    raise SchemaError(message, pointer=pointer)


def validate_plan(raw: dict) -> FunctionPlan:
    """Check a raw plan JSON object and build the typed plan.

    Violations raise :class:`SchemaError` with a JSON pointer to the
    offending location; unknown keys are rejected rather than ignored.
    """
    if not isinstance(raw, dict):
        _fail("plan must be a JSON object", "")
    unknown = set(raw) - PLAN_FIELDS
    if unknown:
        _fail(f"unknown plan field(s): {', '.join(sorted(unknown))}", f"/{sorted(unknown)[0]}")

    filter_name = raw.get("filter_name")
    if not isinstance(filter_name, str) or not _FILTER_NAME_RE.match(filter_name):
        _fail("filter_name must be a snake_case identifier", "/filter_name")

    operator_raw = raw.get("logical_operator", "default")
    if not isinstance(operator_raw, str):
        _fail("logical_operator must be a string", "/logical_operator")
    try:
        operator = LogicalOperator.from_string(operator_raw)
    except ValueError as exc:
        _fail(str(exc), "/logical_operator")

    conditions_raw = raw.get("conditions")
    if not isinstance(conditions_raw, list) or not conditions_raw:
        _fail("conditions must be a non-empty list", "/conditions")
    if operator is LogicalOperator.DEFAULT and len(conditions_raw) != 1:
        _fail("default operator requires exactly one condition", "/conditions")

    conditions = tuple(
        _validate_condition(cond, f"/conditions/{i}") for i, cond in enumerate(conditions_raw)
    )
    return FunctionPlan(filter_name=filter_name, logical_operator=operator, conditions=conditions)


def _validate_condition(raw: dict, pointer: str) -> Condition:
    if not isinstance(raw, dict):
        _fail("condition must be a JSON object", pointer)
    unknown = set(raw) - CONDITION_FIELDS
    if unknown:
        _fail(
            f"unknown condition field(s): {', '.join(sorted(unknown))}",
            f"{pointer}/{sorted(unknown)[0]}",
        )

    fields_raw = raw.get("fields_to_attend")
    if not isinstance(fields_raw, list) or not fields_raw:
        _fail("fields_to_attend must be a non-empty list", f"{pointer}/fields_to_attend")
    fields = []
    for i, name in enumerate(fields_raw):
        canonical = _CANONICAL_FIELDS.get(str(name).strip().casefold())
        if canonical is None:
            _fail(f"unknown attendable field {name!r}", f"{pointer}/fields_to_attend/{i}")
        fields.append(canonical)

    instruction = raw.get("llm_instruction")
    if not isinstance(instruction, str) or not instruction.strip():
        _fail("llm_instruction must be non-empty text", f"{pointer}/llm_instruction")

    comparison_raw = raw.get("comparison")
    if not isinstance(comparison_raw, str):
        _fail("comparison must be a string", f"{pointer}/comparison")
    try:
        comparison = Comparison.from_string(comparison_raw)
    except ValueError as exc:
        _fail(str(exc), f"{pointer}/comparison")

    target = raw.get("target_value")
    membership = raw.get("membership_list_name")

    if comparison in (Comparison.GREATER_THAN, Comparison.LESS_THAN):
        if isinstance(target, bool) or not isinstance(target, (int, float)):
            _fail(f"{comparison.value} requires a numeric target_value", f"{pointer}/target_value")
    elif comparison in (Comparison.EQUAL_TO, Comparison.NOT_EQUAL):
        if target is None or isinstance(target, (dict, list)):
            _fail(f"{comparison.value} requires a scalar target_value", f"{pointer}/target_value")
    elif comparison is Comparison.PRESENCE_MATCH:
        if target is not None and not isinstance(target, str):
            _fail("presence_match target_value must be text when present", f"{pointer}/target_value")
    if comparison is Comparison.IN_LIST:
        if not isinstance(membership, str) or not membership.strip():
            _fail("in_list requires membership_list_name", f"{pointer}/membership_list_name")
    elif membership is not None:
        _fail(
            "membership_list_name is only allowed with in_list",
            f"{pointer}/membership_list_name",
        )

    return Condition(
        fields_to_attend=tuple(fields),
        llm_instruction=instruction,
        comparison=comparison,
        target_value=target,
        membership_list_name=membership or "",
    )


def validate_plan_set(raw: dict) -> PlanSet:
    """Validate an aggregated plan-set document (plans plus framing strings)."""
    if not isinstance(raw, dict):
        _fail("plan set must be a JSON object", "")
    unknown = set(raw) - {"condition", "treatment", "plans"}
    if unknown:
        _fail(f"unknown plan-set field(s): {', '.join(sorted(unknown))}", f"/{sorted(unknown)[0]}")
    condition = raw.get("condition")
    treatment = raw.get("treatment")
    if not isinstance(condition, str) or not condition.strip():
        _fail("condition must be non-empty text", "/condition")
    if not isinstance(treatment, str) or not treatment.strip():
        _fail("treatment must be non-empty text", "/treatment")
    plans_raw = raw.get("plans")
    if not isinstance(plans_raw, list) or not plans_raw:
        _fail("plans must be a non-empty list", "/plans")
    plans, seen = [], set()
    for i, plan_raw in enumerate(plans_raw):
        try:
            plan = validate_plan(plan_raw)
        except SchemaError as exc:
            _fail(exc.detail, f"/plans/{i}{exc.pointer}")
        if plan.filter_name in seen:
            _fail(f"duplicate filter_name {plan.filter_name!r}", f"/plans/{i}/filter_name")
        seen.add(plan.filter_name)
        plans.append(plan)
    return PlanSet(condition=condition, treatment=treatment, plans=plans)


def load_plan_set(path: str | Path) -> PlanSet:
    return validate_plan_set(json.loads(Path(path).read_text(encoding="utf-8")))


def plan_to_jsonable(plan: FunctionPlan) -> dict:
    conditions = []
    for cond in plan.conditions:
        data = {
            "fields_to_attend": list(cond.fields_to_attend),
            "llm_instruction": cond.llm_instruction,
            "comparison": cond.comparison.value,
        }
        if cond.comparison is Comparison.IN_LIST:
            data["membership_list_name"] = cond.membership_list_name
        elif cond.target_value is not None:
            data["target_value"] = cond.target_value
        conditions.append(data)
    return {
        "filter_name": plan.filter_name,
        "logical_operator": plan.logical_operator.value,
        "conditions": conditions,
    }


def plan_set_to_jsonable(plan_set: PlanSet) -> dict:
    return {
        "condition": plan_set.condition,
        "treatment": plan_set.treatment,
        "plans": [plan_to_jsonable(p) for p in plan_set.plans],
    }


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


class MembershipLibrary:
    """Binds the membership_list_name identifiers plans use to drug lists."""

    def __init__(self):
        self._lists: dict[str, druglib.DrugList] = {}

    def register(self, name: str, drug_list: druglib.DrugList) -> None:
        self._lists[name] = drug_list

    def resolve(self, name: str) -> druglib.DrugList:
        try:
            return self._lists[name]
        except KeyError:
            raise ConfigurationError(f"membership list {name!r} is not registered") from None

    def names(self) -> list[str]:
        return sorted(self._lists)

    @classmethod
    def from_drug_library(
        cls, library: druglib.DrugLibrary, bindings: dict[str, str]
    ) -> "MembershipLibrary":
        """Bind list names to library disease keys, e.g. {"approved_x": "x cancer"}."""
        membership = cls()
        for name, disease_key in bindings.items():
            drug_list = library.lookup(disease_key)
            if drug_list is None:
                raise ConfigurationError(f"no drug list for disease key {disease_key!r}")
            membership.register(name, drug_list)
        return membership


@dataclass(frozen=True)
class EvaluationSettings:
    """Policy knobs for unknown outcomes and membership checks."""

    unknown_default_keep: bool = False
    unknown_guard_keep: bool = True
    unknown_final_keep: bool = False
    membership_policy: str = "all"  # "all" or "any" extracted names must match
    comparator_exemptions: frozenset[str] = DEFAULT_COMPARATOR_EXEMPTIONS


DEFAULT_SETTINGS = EvaluationSettings()


def evaluate_condition(
    condition: Condition,
    trial: TrialRecord,
    parser: Parser,
    lists: MembershipLibrary | None = None,
    settings: EvaluationSettings = DEFAULT_SETTINGS,
) -> tuple[ConditionOutcome, ExtractedValue | ExtractionFailure]:
    """Extract the condition's value from the trial and compare deterministically."""
    drug_list = None
    if condition.comparison is Comparison.IN_LIST:
        if lists is None:
            raise ConfigurationError("in_list condition evaluated without a membership library")
        drug_list = lists.resolve(condition.membership_list_name)

    request = ExtractionRequest(
        instruction=condition.llm_instruction,
        attended_text=trial.attended_text(condition.fields_to_attend),
        expected_kind=condition.expected_kind(),
    )
    extracted = extract(request, parser)
    if isinstance(extracted, ExtractionFailure):
        return ConditionOutcome.UNKNOWN, extracted

    satisfied = _compare(condition, extracted, drug_list, settings)
    return (ConditionOutcome.SATISFIED if satisfied else ConditionOutcome.UNSATISFIED), extracted


def _compare(
    condition: Condition,
    extracted: ExtractedValue,
    drug_list: druglib.DrugList | None,
    settings: EvaluationSettings,
) -> bool:
    comparison, value, target = condition.comparison, extracted.value, condition.target_value
    if comparison is Comparison.GREATER_THAN:
        return value > target
    if comparison is Comparison.LESS_THAN:
        return value < target
    if comparison in (Comparison.EQUAL_TO, Comparison.NOT_EQUAL):
        if isinstance(value, bool):
            equal = value is _as_bool(target)
        elif value is None:
            equal = False  # none-marker never equals a concrete target
        else:
            equal = str(value).strip().casefold() == str(target).strip().casefold()
        return equal if comparison is Comparison.EQUAL_TO else not equal
    if comparison is Comparison.PRESENCE_MATCH:
        if value is None:
            return False
        if isinstance(target, str) and target.strip():
            return target.strip().casefold() in value.casefold()
        return True
    if comparison is Comparison.IN_LIST:
        names = [
            name
            for name in value
            if " ".join(name.casefold().split()) not in settings.comparator_exemptions
        ]
        if settings.membership_policy == "any":
            return any(druglib.contains(drug_list, name) for name in names)
        return all(druglib.contains(drug_list, name) for name in names)
    raise ConfigurationError(f"unsupported comparison: {comparison}")


def evaluate_plan(
    plan: FunctionPlan,
    trial: TrialRecord,
    parser: Parser,
    lists: MembershipLibrary | None = None,
    settings: EvaluationSettings = DEFAULT_SETTINGS,
) -> RuleVerdict:
    """Evaluate one plan over one trial and return the keep verdict with trace."""
    trace: list[ConditionTrace] = []

    def entry(i, outcome, extracted, short):
        trace.append(ConditionTrace(i, outcome, short, extracted))

    def verdict(keep, flagged=False, reason=""):
        return RuleVerdict(plan.filter_name, keep, tuple(trace), flagged, reason)

    if plan.logical_operator is LogicalOperator.DEFAULT:
        outcome, extracted = evaluate_condition(plan.conditions[0], trial, parser, lists, settings)
        entry(0, outcome, extracted, False)
        if outcome is ConditionOutcome.UNKNOWN:
            return verdict(settings.unknown_default_keep, True, _unknown_reason(0, extracted))
        return verdict(outcome is ConditionOutcome.SATISFIED)

    last = len(plan.conditions) - 1
    for i, condition in enumerate(plan.conditions):
        outcome, extracted = evaluate_condition(condition, trial, parser, lists, settings)
        if i < last:  # guard: establishes whether the rule applies
            if outcome is ConditionOutcome.UNSATISFIED:
                entry(i, outcome, extracted, True)
                return verdict(True)
            if outcome is ConditionOutcome.UNKNOWN:
                entry(i, outcome, extracted, True)
                return verdict(settings.unknown_guard_keep, True, _unknown_reason(i, extracted))
            entry(i, outcome, extracted, False)
        else:  # final condition decides
            entry(i, outcome, extracted, False)
            if outcome is ConditionOutcome.UNKNOWN:
                return verdict(settings.unknown_final_keep, True, _unknown_reason(i, extracted))
            return verdict(outcome is ConditionOutcome.SATISFIED)
    raise AssertionError("unreachable: sequential plan has at least one condition")


def _unknown_reason(index: int, extracted) -> str:
    detail = extracted.reason.value if isinstance(extracted, ExtractionFailure) else "unknown"
    return f"condition {index} unresolved ({detail})"
