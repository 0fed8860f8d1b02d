"""Structured eligibility criteria and severity-scored penalty rules.

Free-text eligibility criteria are decomposed into sentence-level clauses
and mapped to comparable tuples::

    (kind, entity, attribute, value, condition, sentence)

``kind`` is inclusion or exclusion (taken from the section a clause sits in
unless the structuring reply overrides it — "not eligible" sentences inside
an inclusion section are real exclusions).  Entities follow an open
vocabulary with a recommended controlled list: demographics, disease,
biomarker, prior-treatment, response-status, timing, comorbidity.

Penalty rules are deterministic selector matchers over those tuples.  A
rule triggers when at least one criterion satisfies every selector, and it
contributes its severity at most once per trial.  Totals are accumulated in
exact decimal arithmetic so a sum like 0.9 + 0.7 + 0.6 + 0.6 is exactly 2.8.

A selector's ``target_value`` may be the token ``@target``: the criterion's
field is then compared against the same field of the target trial's
same-entity criteria (equal_to: matches some; not_equal: matches none).
Rules built this way can never fire on the target trial itself, because
each of its criteria finds itself among the target tuples.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .errors import ConfigurationError, SchemaError
from .extraction import (
    ExpectedKind,
    ExtractionFailure,
    ExtractionRequest,
    Parser,
    extract,
)
from .plans import Comparison
from .trials import TrialRecord

logger = logging.getLogger(__name__)

CRITERION_FIELDS = ("kind", "entity", "attribute", "value", "condition", "sentence")
SELECTOR_COMPARISONS = (Comparison.EQUAL_TO, Comparison.NOT_EQUAL, Comparison.PRESENCE_MATCH)
TARGET_TOKEN = "@target"

RECOMMENDED_ENTITIES = (
    "demographics",
    "disease",
    "biomarker",
    "prior-treatment",
    "response-status",
    "timing",
    "comorbidity",
)


@dataclass(frozen=True)
class StructuredCriterion:
    kind: str  # "inclusion" or "exclusion"
    entity: str
    attribute: str
    value: str
    condition: str
    sentence: str

    def is_mapped(self) -> bool:
        return bool(self.entity and self.attribute)


@dataclass(frozen=True)
class Selector:
    field: str
    comparison: Comparison
    target_value: str


@dataclass(frozen=True)
class PenaltyRule:
    rule_id: str
    description: str
    severity: float
    selectors: tuple[Selector, ...]


@dataclass(frozen=True)
class TriggeredRule:
    rule_id: str
    severity: float
    matched_criteria: tuple[int, ...]


@dataclass(frozen=True)
class PenaltyScore:
    trial_id: str
    triggered: tuple[TriggeredRule, ...]
    total: float


# ---------------------------------------------------------------------------
# Penalty rule validation and evaluation
# ---------------------------------------------------------------------------


def _fail(message: str, pointer: str):
    raise SchemaError(message, pointer=pointer)


def validate_penalty_rule(raw: dict, pointer: str = "") -> PenaltyRule:
    if not isinstance(raw, dict):
        _fail("penalty rule must be a JSON object", pointer)
    unknown = set(raw) - {"rule_id", "description", "severity", "selectors"}
    if unknown:
        _fail(f"unknown rule field(s): {', '.join(sorted(unknown))}", f"{pointer}/{sorted(unknown)[0]}")
    rule_id = raw.get("rule_id")
    if not isinstance(rule_id, str) or not rule_id.strip():
        _fail("rule_id must be non-empty text", f"{pointer}/rule_id")
    severity = raw.get("severity")
    if isinstance(severity, bool) or not isinstance(severity, (int, float)) or not 0 <= severity <= 1:
        _fail("severity must be a number in [0, 1]", f"{pointer}/severity")
    selectors_raw = raw.get("selectors")
    if not isinstance(selectors_raw, list) or not selectors_raw:
        _fail("selectors must be a non-empty list", f"{pointer}/selectors")
    selectors = []
    for i, sel in enumerate(selectors_raw):
        sel_pointer = f"{pointer}/selectors/{i}"
        if not isinstance(sel, dict):
            _fail("selector must be a JSON object", sel_pointer)
        unknown = set(sel) - {"field", "comparison", "target_value"}
        if unknown:
            _fail(f"unknown selector field(s): {', '.join(sorted(unknown))}", f"{sel_pointer}/{sorted(unknown)[0]}")
        field = sel.get("field")
        if field not in CRITERION_FIELDS:
            _fail(f"selector field must be one of {', '.join(CRITERION_FIELDS)}", f"{sel_pointer}/field")
        try:
            comparison = Comparison.from_string(str(sel.get("comparison")))
        except ValueError as exc:
            _fail(str(exc), f"{sel_pointer}/comparison")
        if comparison not in SELECTOR_COMPARISONS:
            _fail(
                "selector comparison must be equal_to, not_equal or presence_match",
                f"{sel_pointer}/comparison",
            )
        target = sel.get("target_value")
        if not isinstance(target, str):
            _fail("selector target_value must be text", f"{sel_pointer}/target_value")
        selectors.append(Selector(field=field, comparison=comparison, target_value=target))
    return PenaltyRule(
        rule_id=rule_id.strip(),
        description=str(raw.get("description", "")),
        severity=float(severity),
        selectors=tuple(selectors),
    )


def validate_penalty_rules(document: dict) -> list[PenaltyRule]:
    """Validate a penalty-rule document: {"rules": [rule, ...]}."""
    if not isinstance(document, dict) or "rules" not in document:
        _fail("penalty-rule document must contain a 'rules' list", "")
    raw_rules = document["rules"]
    if not isinstance(raw_rules, list):
        _fail("rules must be a list", "/rules")
    rules, seen = [], set()
    for i, raw in enumerate(raw_rules):
        rule = validate_penalty_rule(raw, f"/rules/{i}")
        if rule.rule_id in seen:
            _fail(f"duplicate rule_id {rule.rule_id!r}", f"/rules/{i}/rule_id")
        seen.add(rule.rule_id)
        rules.append(rule)
    return rules


def load_penalty_rules(path: str | Path) -> list[PenaltyRule]:
    return validate_penalty_rules(json.loads(Path(path).read_text(encoding="utf-8")))


def penalty_rules_to_jsonable(rules: list[PenaltyRule]) -> dict:
    return {
        "rules": [
            {
                "rule_id": r.rule_id,
                "description": r.description,
                "severity": r.severity,
                "selectors": [
                    {"field": s.field, "comparison": s.comparison.value, "target_value": s.target_value}
                    for s in r.selectors
                ],
            }
            for r in rules
        ]
    }


def severity_total(rules: list[PenaltyRule]) -> float:
    """Sum of rule severities, exact over decimal literals."""
    return float(sum(Fraction(str(r.severity)) for r in rules))


def _normalize(text: str) -> str:
    return " ".join(text.casefold().split())


def _selector_satisfied(
    selector: Selector,
    criterion: StructuredCriterion,
    target_criteria: tuple[StructuredCriterion, ...],
) -> bool:
    try:
        value = _normalize(getattr(criterion, selector.field))
    except AttributeError:
        raise ConfigurationError(f"selector references unknown field {selector.field!r}") from None

    if selector.target_value == TARGET_TOKEN:
        counterparts = [
            _normalize(getattr(t, selector.field))
            for t in target_criteria
            if _normalize(t.entity) == _normalize(criterion.entity)
        ]
        matches_some = value in counterparts
        if selector.comparison is Comparison.EQUAL_TO:
            return matches_some
        if selector.comparison is Comparison.NOT_EQUAL:
            return not matches_some
        raise ConfigurationError("@target supports only equal_to and not_equal selectors")

    target = _normalize(selector.target_value)
    if selector.comparison is Comparison.EQUAL_TO:
        return value == target
    if selector.comparison is Comparison.NOT_EQUAL:
        return value != target
    if selector.comparison is Comparison.PRESENCE_MATCH:
        return target in value if target else bool(value)
    raise ConfigurationError(f"unsupported selector comparison: {selector.comparison}")


def evaluate_penalties(
    rules: list[PenaltyRule],
    criteria: list[StructuredCriterion],
    trial_id: str = "",
    target_criteria: tuple[StructuredCriterion, ...] = (),
) -> PenaltyScore:
    """Score one trial's structured criteria against the penalty rules.

    A rule triggers when at least one criterion satisfies all of its
    selectors; each triggered rule contributes its severity exactly once.
    """
    triggered = []
    total = Fraction(0)
    for rule in rules:
        matched = tuple(
            i
            for i, criterion in enumerate(criteria)
            if all(_selector_satisfied(s, criterion, target_criteria) for s in rule.selectors)
        )
        if matched:
            triggered.append(
                TriggeredRule(rule_id=rule.rule_id, severity=rule.severity, matched_criteria=matched)
            )
            total += Fraction(str(rule.severity))
    return PenaltyScore(trial_id=trial_id, triggered=tuple(triggered), total=float(total))


# ---------------------------------------------------------------------------
# Criteria structuring
# ---------------------------------------------------------------------------

STRUCTURE_INSTRUCTION = (
    "Map this {kind} eligibility clause to 'kind | entity | attribute | value | condition'. "
    "Use short clinical category labels and '-' for an empty part or to keep the section kind."
)

_HEADER_RE = re.compile(r"^\s*(?:key\s+)?(inclusion|exclusion)\b[^:]*:?\s*$", re.IGNORECASE)
_BULLET_RE = re.compile(r"^\s*(?:[-*•·]+|\(?\d+[.)]|[a-z][.)])\s+")


def split_eligibility_clauses(text: str) -> list[tuple[str, str]]:
    """Break eligibility text into (section kind, clause sentence) pairs.

    Section headers ("Inclusion Criteria:", "Exclusion criteria") switch the
    kind; bullets and enumeration markers are stripped.  A single-line text
    is split at sentence boundaries instead.
    """
    lines = text.splitlines()
    if len([ln for ln in lines if ln.strip()]) == 1:
        only = next(ln for ln in lines if ln.strip())
        lines = [part.strip() for part in re.split(r"(?<=[.;])\s+", only) if part.strip()]
    clauses = []
    kind = "inclusion"
    for line in lines:
        if not line.strip():
            continue
        header = _HEADER_RE.match(line)
        if header:
            kind = header.group(1).lower()
            continue
        clause = _BULLET_RE.sub("", line).strip()
        if clause:
            clauses.append((kind, clause))
    return clauses


@dataclass
class StructuringResult:
    trial_id: str
    criteria: list[StructuredCriterion]
    flags: list[str]


def _parse_tuple_reply(reply: str | None, section_kind: str, sentence: str):
    if reply is None:
        return None
    parts = [p.strip() for p in reply.split("|")]
    if len(parts) != 5:
        return None
    kind_part = parts[0].lower()
    if kind_part in ("", "-"):
        kind = section_kind
    elif kind_part in ("inclusion", "exclusion"):
        kind = kind_part
    else:
        return None
    cleaned = ["" if p in ("-", "") else p for p in parts[1:]]
    return StructuredCriterion(
        kind=kind,
        entity=cleaned[0],
        attribute=cleaned[1],
        value=cleaned[2],
        condition=cleaned[3],
        sentence=sentence,
    )


def structure_criteria(trial: TrialRecord, parser: Parser) -> StructuringResult:
    """Map a trial's eligibility text to structured tuples via the parser.

    Clauses the parser cannot map become tuples with an empty entity and a
    review flag; they never satisfy a penalty-rule selector on entity.
    """
    result = StructuringResult(trial_id=trial.nct_id, criteria=[], flags=[])
    if not trial.eligibility_text.strip():
        result.flags.append("eligibility text empty")
        return result
    for index, (section_kind, sentence) in enumerate(
        split_eligibility_clauses(trial.eligibility_text)
    ):
        request = ExtractionRequest(
            instruction=STRUCTURE_INSTRUCTION.format(kind=section_kind),
            attended_text=sentence,
            expected_kind=ExpectedKind.PHRASE_OR_NONE,
        )
        extracted = extract(request, parser)
        if isinstance(extracted, ExtractionFailure):
            result.criteria.append(
                StructuredCriterion(section_kind, "", "", "", "", sentence)
            )
            result.flags.append(f"clause {index} unmapped ({extracted.reason.value})")
            continue
        criterion = _parse_tuple_reply(extracted.value, section_kind, sentence)
        if criterion is None or not criterion.is_mapped():
            result.criteria.append(
                StructuredCriterion(section_kind, "", "", "", "", sentence)
            )
            result.flags.append(f"clause {index} unmapped (reply not a criterion tuple)")
            continue
        result.criteria.append(criterion)
    return result


class ReferenceCriteriaParser:
    """Keyword heuristics that map clearly-topical clauses to tuples.

    First matching row wins; clauses outside the table return the
    none-marker and surface as unmapped tuples for review.
    """

    parser_id = "reference-criteria"

    TABLE = (
        (r"\bg?brca|mutation|her2|pd-?l1|claudin|msi\b", "biomarker", "mutation"),
        (r"within\s+\d+\s+(weeks?|days?|months?)", "timing", "window"),
        (r"\bresponse\b", "response-status", "response"),
        (r"\bprior\b|\bprevious(ly)?\b|chemotherapy|platinum", "prior-treatment", "regimen"),
        (r"cancer|carcinoma|tumou?r|neoplasm|malignan", "disease", "diagnosis"),
        (r"\bage[d]?\b|\byears?\s+old\b", "demographics", "age"),
        (r"ecog|performance\s+status", "comorbidity", "performance-status"),
    )

    def parse(self, request: ExtractionRequest) -> str:
        clause = request.attended_text.strip()
        lowered = clause.casefold()
        for pattern, entity, attribute in self.TABLE:
            if re.search(pattern, lowered):
                value = clause.replace("|", "/")
                return f"- | {entity} | {attribute} | {value} | -"
        return "None"


# ---------------------------------------------------------------------------
# Criteria document I/O
# ---------------------------------------------------------------------------


def criteria_to_jsonable(criteria: list[StructuredCriterion]) -> list[dict]:
    return [
        {
            "kind": c.kind,
            "entity": c.entity,
            "attribute": c.attribute,
            "value": c.value,
            "condition": c.condition,
            "sentence": c.sentence,
        }
        for c in criteria
    ]


def criteria_from_jsonable(rows: list[dict]) -> list[StructuredCriterion]:
    criteria = []
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            _fail("criterion must be a JSON object", f"/{i}")
        unknown = set(row) - set(CRITERION_FIELDS)
        if unknown:
            _fail(f"unknown criterion field(s): {', '.join(sorted(unknown))}", f"/{i}/{sorted(unknown)[0]}")
        kind = str(row.get("kind", ""))
        if kind not in ("inclusion", "exclusion"):
            _fail("kind must be inclusion or exclusion", f"/{i}/kind")
        sentence = str(row.get("sentence", ""))
        if not sentence.strip():
            _fail("sentence must be non-empty", f"/{i}/sentence")
        criteria.append(
            StructuredCriterion(
                kind=kind,
                entity=str(row.get("entity", "")),
                attribute=str(row.get("attribute", "")),
                value=str(row.get("value", "")),
                condition=str(row.get("condition", "")),
                sentence=sentence,
            )
        )
    return criteria


def load_criteria_file(path: str | Path) -> dict[str, list[StructuredCriterion]]:
    """Load a multi-trial criteria document: {"trials": {trial_id: [criterion, ...]}}."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "trials" not in data:
        _fail("criteria file must contain a 'trials' map", "")
    return {
        trial_id: criteria_from_jsonable(rows) for trial_id, rows in data["trials"].items()
    }
