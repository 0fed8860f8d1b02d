"""Staged corpus filtering with flow counts, audit logging and rule drafting.

The pipeline applies the generic pre-filter first, then each function plan in
list order to the survivors of the previous stage.  Every extraction and
verdict is recorded as an audit event, flow counts follow the conservation
identity remaining[i] = remaining[i-1] - excluded[i], and the selected set is
recomputable from the verdict events alone.

Rule sets hold the prose selection rules that plans operationalize.  They are
drafted (optionally via a generation adapter), reviewed, and must be approved
before execution; edits bump a monotone revision counter.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .errors import ConfigurationError, GenerationError
from .extraction import (
    ExpectedKind,
    ExtractionFailure,
    ExtractionRequest,
    Parser,
    ParserUnavailable,
    extract,
)
from .plans import (
    Comparison,
    DEFAULT_SETTINGS,
    EvaluationSettings,
    FunctionPlan,
    MembershipLibrary,
    evaluate_plan,
)
from .serialize import canonical_dumps
from .trials import (
    Corpus,
    DEFAULT_STATUS_ALLOWLIST,
    TrialRecord,
    _prefilter_bucket as prefilter_bucket,
)

logger = logging.getLogger(__name__)

AUDIT_KINDS = frozenset(
    {
        "rule-created",
        "rule-edited",
        "plan-validated",
        "extraction",
        "verdict",
        "stage-summary",
        "weights",
        "estimate",
    }
)

PREFILTER_STAGE_LABEL = "prefilter"

SUMMARY_CSV_COLUMNS = (
    "NCT Number",
    "Intervention(s)",
    "Biomarker",
    "Condition",
    "Study Phase",
    "Enrollment Size",
    "Status",
    "Endpoints: PFS",
    "Endpoints: OS",
)


# ---------------------------------------------------------------------------
# Rule sets
# ---------------------------------------------------------------------------


class RuleKind(Enum):
    INCLUDE = "include"
    EXCLUDE = "exclude"

    @classmethod
    def from_string(cls, value: str) -> "RuleKind":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown rule kind: {value!r}") from None


class RuleStatus(Enum):
    DRAFT = "draft"
    APPROVED = "approved"


@dataclass(frozen=True)
class Rule:
    rule_id: str
    text: str
    kind: RuleKind


@dataclass(frozen=True)
class RuleSet:
    rules: tuple[Rule, ...]
    status: RuleStatus = RuleStatus.DRAFT
    revision: int = 1


def _rules_payload(rule_set: RuleSet) -> dict:
    return {
        "revision": rule_set.revision,
        "status": rule_set.status.value,
        "rules": [
            {"rule_id": r.rule_id, "text": r.text, "kind": r.kind.value} for r in rule_set.rules
        ],
    }


def rule_set_to_jsonable(rule_set: RuleSet) -> dict:
    return _rules_payload(rule_set)


def rule_set_from_jsonable(data: dict) -> RuleSet:
    rules = tuple(
        Rule(rule_id=r["rule_id"], text=r["text"], kind=RuleKind.from_string(r["kind"]))
        for r in data["rules"]
    )
    return RuleSet(
        rules=rules,
        status=RuleStatus(data.get("status", "draft")),
        revision=int(data.get("revision", 1)),
    )


def _infer_kind(text: str) -> RuleKind:
    return RuleKind.EXCLUDE if text.strip().lower().startswith("exclude") else RuleKind.INCLUDE


def new_rule_set(texts: list[str], audit: "AuditLog | None" = None) -> RuleSet:
    """Create a draft rule set (revision 1) from prose rule texts."""
    rules = tuple(
        Rule(rule_id=f"r{i + 1}", text=text.strip(), kind=_infer_kind(text))
        for i, text in enumerate(texts)
        if text.strip()
    )
    if not rules:
        raise ConfigurationError("a rule set needs at least one non-empty rule")
    rule_set = RuleSet(rules=rules)
    if audit is not None:
        audit.record("rule-created", _rules_payload(rule_set))
    return rule_set


def edit_rule_set(rule_set: RuleSet, texts: list[str], audit: "AuditLog | None" = None) -> RuleSet:
    """Replace the rule texts; bumps the revision and returns to draft."""
    edited = new_rule_set(texts)
    edited = replace(edited, revision=rule_set.revision + 1)
    if audit is not None:
        audit.record("rule-edited", {"action": "edited", **_rules_payload(edited)})
    return edited


def approve_rule_set(rule_set: RuleSet, audit: "AuditLog | None" = None) -> RuleSet:
    approved = replace(rule_set, status=RuleStatus.APPROVED)
    if audit is not None:
        audit.record("rule-edited", {"action": "approved", **_rules_payload(approved)})
    return approved


# ---------------------------------------------------------------------------
# Audit log
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AuditEvent:
    run_id: str
    sequence: int
    kind: str
    payload: dict
    timestamp: str


class AuditLog:
    """Append-only event recorder with a strictly increasing sequence."""

    def __init__(self, run_id: str, start_sequence: int = 1):
        self.run_id = run_id
        self.events: list[AuditEvent] = []
        self._next = start_sequence

    def record(self, kind: str, payload: dict) -> AuditEvent:
        if kind not in AUDIT_KINDS:
            raise ConfigurationError(f"unknown audit event kind: {kind!r}")
        event = AuditEvent(
            run_id=self.run_id,
            sequence=self._next,
            kind=kind,
            payload=payload,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        self._next += 1
        self.events.append(event)
        return event


def event_to_jsonable(event: AuditEvent) -> dict:
    return {
        "run_id": event.run_id,
        "sequence": event.sequence,
        "kind": event.kind,
        "payload": event.payload,
        "timestamp": event.timestamp,
    }


def event_from_jsonable(data: dict) -> AuditEvent:
    return AuditEvent(
        run_id=data["run_id"],
        sequence=int(data["sequence"]),
        kind=data["kind"],
        payload=data["payload"],
        timestamp=data.get("timestamp", ""),
    )


def write_audit_log(events: list[AuditEvent], path: str | Path) -> None:
    """Write events as JSON lines, one event per line."""
    lines = [canonical_dumps(event_to_jsonable(e)) for e in events]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_audit_log(path: str | Path) -> list[AuditEvent]:
    events = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            events.append(event_from_jsonable(json.loads(line)))
    return events


def selected_from_audit(events: list[AuditEvent]) -> list[str]:
    """Recompute the selected trial ids from verdict events alone.

    A trial is selected when it was judged at least once and never received
    a keep=false verdict: survivors keep accruing verdicts stage by stage,
    and a trial only stops being judged once excluded.
    """
    keeps: dict[str, bool] = {}
    for event in events:
        if event.kind != "verdict":
            continue
        trial_id = event.payload["trial_id"]
        keeps[trial_id] = keeps.get(trial_id, True) and bool(event.payload["keep"])
    return sorted(trial_id for trial_id, kept in keeps.items() if kept)


# ---------------------------------------------------------------------------
# Flow counts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PrismaStage:
    label: str
    remaining: int
    excluded: int


@dataclass(frozen=True)
class PrismaFlow:
    initial_count: int
    stages: tuple[PrismaStage, ...]
    final_count: int


def build_flow(initial_count: int, stages: list[tuple[str, int]]) -> PrismaFlow:
    """Build a flow from (label, excluded) pairs, deriving remaining counts."""
    remaining = initial_count
    built = []
    for label, excluded in stages:
        remaining -= excluded
        if remaining < 0:
            raise ConfigurationError("flow excluded more trials than remained")
        built.append(PrismaStage(label=label, remaining=remaining, excluded=excluded))
    return PrismaFlow(initial_count=initial_count, stages=tuple(built), final_count=remaining)


def flow_to_jsonable(flow: PrismaFlow) -> dict:
    return {
        "initial_count": flow.initial_count,
        "stages": [
            {"label": s.label, "remaining": s.remaining, "excluded": s.excluded}
            for s in flow.stages
        ],
        "final_count": flow.final_count,
    }


def flow_from_jsonable(data: dict) -> PrismaFlow:
    return PrismaFlow(
        initial_count=int(data["initial_count"]),
        stages=tuple(
            PrismaStage(label=s["label"], remaining=int(s["remaining"]), excluded=int(s["excluded"]))
            for s in data["stages"]
        ),
        final_count=int(data["final_count"]),
    )


def render_flow_table(flow: PrismaFlow) -> str:
    """Plaintext table of stage-by-stage remaining and excluded counts."""
    rows = [("stage", "excluded", "remaining"), ("initial", "-", str(flow.initial_count))]
    for stage in flow.stages:
        rows.append((stage.label, str(stage.excluded), str(stage.remaining)))
    widths = [max(len(row[i]) for row in rows) for i in range(3)]
    lines = ["  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Pipeline execution
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    selected: Corpus
    flow: PrismaFlow
    audit: list[AuditEvent]


def _extraction_payload(trial_id: str, plan_name: str, trace_entry) -> dict | None:
    extracted = trace_entry.extracted
    if extracted is None:
        return None
    payload = {
        "trial_id": trial_id,
        "plan": plan_name,
        "condition_index": trace_entry.condition_index,
    }
    if isinstance(extracted, ExtractionFailure):
        payload.update(
            {
                "status": "failure",
                "reason": extracted.reason.value,
                "request_digest": extracted.request_digest,
            }
        )
    else:
        payload.update(
            {
                "status": "ok",
                "kind": extracted.kind.value,
                "value": list(extracted.value)
                if isinstance(extracted.value, tuple)
                else extracted.value,
                "request_digest": extracted.provenance.request_digest,
                "parser_id": extracted.provenance.parser_id,
            }
        )
    return payload


def run_pipeline(
    corpus: Corpus,
    plans: list[FunctionPlan],
    parser: Parser,
    lists: MembershipLibrary | None = None,
    settings: EvaluationSettings = DEFAULT_SETTINGS,
    rule_set: RuleSet | None = None,
    run_id: str = "run",
    status_allowlist=DEFAULT_STATUS_ALLOWLIST,
    audit: AuditLog | None = None,
) -> PipelineResult:
    """Pre-filter the corpus, then apply each plan in order to the survivors.

    Configuration problems (unapproved rules, duplicate plan names, missing
    membership lists) abort before any stage runs.  Extraction failures never
    abort: they surface as flagged verdicts under the unknown-outcome policy.
    """
    if rule_set is not None and rule_set.status is not RuleStatus.APPROVED:
        raise ConfigurationError("execution requires an approved rule set")
    names = [plan.filter_name for plan in plans]
    if len(set(names)) != len(names):
        raise ConfigurationError("plans must have unique filter names")
    for plan in plans:
        for condition in plan.conditions:
            if condition.comparison is Comparison.IN_LIST:
                if lists is None:
                    raise ConfigurationError(
                        f"plan {plan.filter_name!r} needs a membership library"
                    )
                lists.resolve(condition.membership_list_name)

    audit = audit or AuditLog(run_id)
    for plan in plans:
        audit.record(
            "plan-validated",
            {
                "plan": plan.filter_name,
                "logical_operator": plan.logical_operator.value,
                "conditions": len(plan.conditions),
            },
        )

    allowlist = frozenset(s.upper() for s in status_allowlist)
    survivors: list[TrialRecord] = []
    excluded_at_prefilter = 0
    for trial in corpus.trials:
        bucket = prefilter_bucket(trial, allowlist)
        keep = bucket is None
        audit.record(
            "verdict",
            {
                "stage": 0,
                "plan": PREFILTER_STAGE_LABEL,
                "trial_id": trial.nct_id,
                "keep": keep,
                "flagged": False,
                "flag_reason": "" if keep else bucket,
            },
        )
        if keep:
            survivors.append(trial)
        else:
            excluded_at_prefilter += 1
    stage_counts = [(PREFILTER_STAGE_LABEL, excluded_at_prefilter)]
    audit.record(
        "stage-summary",
        {
            "stage": 0,
            "label": PREFILTER_STAGE_LABEL,
            "remaining": len(survivors),
            "excluded": excluded_at_prefilter,
        },
    )

    for stage_index, plan in enumerate(plans, start=1):
        next_survivors = []
        excluded = 0
        for trial in survivors:
            verdict = evaluate_plan(plan, trial, parser, lists=lists, settings=settings)
            for entry in verdict.condition_trace:
                payload = _extraction_payload(trial.nct_id, plan.filter_name, entry)
                if payload is not None:
                    audit.record("extraction", payload)
            audit.record(
                "verdict",
                {
                    "stage": stage_index,
                    "plan": plan.filter_name,
                    "trial_id": trial.nct_id,
                    "keep": verdict.keep,
                    "flagged": verdict.flagged,
                    "flag_reason": verdict.flag_reason,
                },
            )
            if verdict.keep:
                next_survivors.append(trial)
            else:
                excluded += 1
        survivors = next_survivors
        stage_counts.append((plan.filter_name, excluded))
        audit.record(
            "stage-summary",
            {
                "stage": stage_index,
                "label": plan.filter_name,
                "remaining": len(survivors),
                "excluded": excluded,
            },
        )

    selected = Corpus(trials=survivors, source_tag=corpus.source_tag, ingested_at=corpus.ingested_at)
    flow = build_flow(len(corpus), stage_counts)
    return PipelineResult(selected=selected, flow=flow, audit=audit.events)


# ---------------------------------------------------------------------------
# Rule and plan drafting through a generation adapter
# ---------------------------------------------------------------------------

_PROMPT_DIR = Path(__file__).parent / "data" / "prompts"
_RULE_LINE_RE = re.compile(r"^\s*(?:\((?:[ivxl]+|\d+)\)|\d+[.)]|[-*•])\s*", re.IGNORECASE)


def load_prompt(name: str) -> str:
    path = _PROMPT_DIR / f"{name}.txt"
    if not path.exists():
        raise ConfigurationError(f"unknown prompt asset: {name!r}")
    return path.read_text(encoding="utf-8")


def _generate(instruction: str, input_text: str, generator: Parser) -> str:
    request = ExtractionRequest(
        instruction=instruction,
        attended_text=input_text,
        expected_kind=ExpectedKind.PHRASE_OR_NONE,
    )
    try:
        return generator.parse(request)
    except ParserUnavailable as exc:
        raise GenerationError(f"generation adapter unavailable: {exc}") from exc


def _rule_texts_from_reply(reply: str) -> list[str]:
    """Accept either a JSON list of rule strings or one rule per line."""
    stripped = reply.strip()
    if stripped.startswith("["):
        try:
            parsed = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise GenerationError(f"rule reply is not valid JSON: {exc}") from exc
        if not isinstance(parsed, list) or not all(isinstance(x, str) for x in parsed):
            raise GenerationError("rule reply must be a JSON list of strings")
        return parsed
    return [_RULE_LINE_RE.sub("", line).strip() for line in stripped.splitlines() if line.strip()]


def generate_rules(query: str, generator: Parser, audit: AuditLog | None = None) -> RuleSet:
    """Draft a rule set for a prose query through the generation adapter."""
    if not query.strip():
        raise GenerationError("query must be non-empty")
    reply = _generate(load_prompt("rule_generation"), query, generator)
    texts = [t for t in _rule_texts_from_reply(reply) if t]
    if not texts:
        raise GenerationError("generation adapter returned no rules")
    return new_rule_set(texts, audit=audit)


_FENCE_RE = re.compile(r"^```[a-z]*\s*|\s*```$", re.IGNORECASE)


def generate_plan(rule_text: str, generator: Parser) -> dict:
    """Draft a plan JSON object for one prose rule; validate before use."""
    if not rule_text.strip():
        raise GenerationError("rule text must be non-empty")
    reply = _generate(load_prompt("plan_generation"), rule_text, generator)
    body = _FENCE_RE.sub("", reply.strip())
    try:
        plan = json.loads(body)
    except json.JSONDecodeError as exc:
        raise GenerationError(f"plan reply is not valid JSON: {exc}") from exc
    if not isinstance(plan, dict):
        raise GenerationError("plan reply must be a JSON object")
    return plan


# ---------------------------------------------------------------------------
# Structured summaries of the selected trials
# ---------------------------------------------------------------------------

BIOMARKER_INSTRUCTION = (
    "Name the biomarker used to stratify enrollment (for example HER2, PD-L1, MSI-H"
    " or CLDN18.2). Return the exact phrase that indicates presence, or 'None' if"
    " not found. Do not explain your answer."
)
PFS_INSTRUCTION = (
    "Quote the outcome measure describing progression-free survival. Return the"
    " exact phrase that indicates presence, or 'None' if not found. Do not explain"
    " your answer."
)
OS_INSTRUCTION = (
    "Quote the outcome measure describing overall survival. Return the exact phrase"
    " that indicates presence, or 'None' if not found. Do not explain your answer."
)


@dataclass(frozen=True)
class TrialSummary:
    nct_id: str
    interventions: tuple[str, ...]
    biomarker: str
    condition: str
    phase: str
    enrollment: int | None
    status: str
    pfs_text: str
    os_text: str


def _summary_phrase(trial: TrialRecord, instruction: str, fields: tuple[str, ...], parser) -> str:
    request = ExtractionRequest(
        instruction=instruction,
        attended_text=trial.attended_text(fields),
        expected_kind=ExpectedKind.PHRASE_OR_NONE,
    )
    extracted = extract(request, parser)
    if isinstance(extracted, ExtractionFailure) or extracted.value is None:
        return ""
    return extracted.value


def summarize_trial(trial: TrialRecord, parser: Parser) -> TrialSummary:
    return TrialSummary(
        nct_id=trial.nct_id,
        interventions=tuple(i.name for i in trial.interventions),
        biomarker=_summary_phrase(
            trial, BIOMARKER_INSTRUCTION, ("Title", "Summary", "Eligibility"), parser
        ),
        condition="; ".join(trial.conditions),
        phase="/".join(trial.phases),
        enrollment=trial.enrollment,
        status=trial.status,
        pfs_text=_summary_phrase(
            trial, PFS_INSTRUCTION, ("Primary Outcome", "Secondary Outcome"), parser
        ),
        os_text=_summary_phrase(
            trial, OS_INSTRUCTION, ("Primary Outcome", "Secondary Outcome"), parser
        ),
    )


def summarize_selected(selected: Corpus, parser: Parser) -> list[TrialSummary]:
    """Structured summary rows for trials that passed every stage."""
    return [summarize_trial(trial, parser) for trial in selected.trials]


def summaries_to_jsonable(summaries: list[TrialSummary]) -> list[dict]:
    return [
        {
            "nct_id": s.nct_id,
            "interventions": list(s.interventions),
            "biomarker": s.biomarker,
            "condition": s.condition,
            "phase": s.phase,
            "enrollment": s.enrollment,
            "status": s.status,
            "pfs_text": s.pfs_text,
            "os_text": s.os_text,
        }
        for s in summaries
    ]


def summaries_to_csv(summaries: list[TrialSummary]) -> str:
    import csv
    import io

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(SUMMARY_CSV_COLUMNS)
    for s in summaries:
        writer.writerow(
            [
                s.nct_id,
                "; ".join(s.interventions),
                s.biomarker,
                s.condition,
                s.phase,
                "" if s.enrollment is None else s.enrollment,
                s.status,
                s.pfs_text,
                s.os_text,
            ]
        )
    return buffer.getvalue()
