"""Trial record model, registry-dump ingestion and generic pre-filtering.

The ingest path map targets the public registry v2 study schema:

    protocolSection.identificationModule.nctId          -> nct_id
    protocolSection.identificationModule.briefTitle     -> title
    protocolSection.descriptionModule.briefSummary      -> summary
    protocolSection.eligibilityModule.eligibilityCriteria -> eligibility_text
    protocolSection.conditionsModule.conditions         -> conditions
    protocolSection.armsInterventionsModule.interventions[].{type,name} -> interventions
    protocolSection.designModule.studyType              -> study_type
    protocolSection.designModule.designInfo.allocation  -> allocation
    protocolSection.designModule.phases                 -> phases
    protocolSection.outcomesModule.primaryOutcomes[]    -> primary_outcomes
    protocolSection.outcomesModule.secondaryOutcomes[]  -> secondary_outcomes
    resultsSection.adverseEventsModule.description      -> adverse_event_text
    protocolSection.referencesModule.references[].citation -> publications
    protocolSection.designModule.enrollmentInfo.count   -> enrollment
    protocolSection.statusModule.overallStatus          -> status
    hasResults (or presence of resultsSection)          -> has_results

Unknown paths are ignored; absent fields map to empty text / empty list /
absent integer so every attendable field is always addressable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Any, Iterable

from .errors import IngestError

# Attendable-field vocabulary, in canonical order.  Conditions that name
# several fields concatenate them in this order so extraction input is
# deterministic.
FIELD_VOCABULARY = (
    "Title",
    "Summary",
    "Eligibility",
    "Conditions",
    "Interventions",
    "Study Type",
    "Allocation",
    "Phase",
    "Primary Outcome",
    "Secondary Outcome",
    "Adverse Event",
    "Publications",
    "Enrollment",
)

DEFAULT_STATUS_ALLOWLIST = frozenset({"COMPLETED", "ACTIVE_NOT_RECRUITING"})


@dataclass
class Intervention:
    kind: str
    name: str


@dataclass
class Outcome:
    measure: str
    description: str
    time_frame: str


@dataclass
class TrialRecord:
    """One registry study, restricted to the attendable-field vocabulary."""

    nct_id: str
    title: str = ""
    summary: str = ""
    eligibility_text: str = ""
    conditions: list[str] = field(default_factory=list)
    interventions: list[Intervention] = field(default_factory=list)
    study_type: str = ""
    allocation: str = ""
    phases: list[str] = field(default_factory=list)
    primary_outcomes: list[Outcome] = field(default_factory=list)
    secondary_outcomes: list[Outcome] = field(default_factory=list)
    adverse_event_text: str = ""
    publications: list[str] = field(default_factory=list)
    enrollment: int | None = None
    status: str = ""
    has_results: bool = False

    def field_text(self, field_name: str) -> str:
        """Render one attendable field as text for extraction input."""
        if field_name == "Title":
            return self.title
        if field_name == "Summary":
            return self.summary
        if field_name == "Eligibility":
            return self.eligibility_text
        if field_name == "Conditions":
            return "; ".join(self.conditions)
        if field_name == "Interventions":
            return "; ".join(f"{iv.kind}: {iv.name}" for iv in self.interventions)
        if field_name == "Study Type":
            return self.study_type
        if field_name == "Allocation":
            return self.allocation
        if field_name == "Phase":
            return "; ".join(self.phases)
        if field_name == "Primary Outcome":
            return _render_outcomes(self.primary_outcomes)
        if field_name == "Secondary Outcome":
            return _render_outcomes(self.secondary_outcomes)
        if field_name == "Adverse Event":
            return self.adverse_event_text
        if field_name == "Publications":
            return "; ".join(self.publications)
        if field_name == "Enrollment":
            return "" if self.enrollment is None else str(self.enrollment)
        raise KeyError(f"unknown attendable field: {field_name!r}")

    def attended_text(self, fields: Iterable[str]) -> str:
        """Concatenate the requested fields in vocabulary order with section headers."""
        wanted = set(fields)
        sections = []
        for name in FIELD_VOCABULARY:
            if name in wanted:
                sections.append(f"{name}:\n{self.field_text(name)}")
        return "\n\n".join(sections)


def _render_outcomes(outcomes: list[Outcome]) -> str:
    lines = []
    for o in outcomes:
        part = o.measure
        if o.description:
            part += f" - {o.description}"
        if o.time_frame:
            part += f" [{o.time_frame}]"
        lines.append(part)
    return "\n".join(lines)


@dataclass
class Corpus:
    """Ordered trial collection; canonical order is ascending nct_id."""

    trials: list[TrialRecord]
    source_tag: str = ""
    ingested_at: str = ""

    def __post_init__(self):
        self.trials.sort(key=lambda t: t.nct_id)

    def __len__(self) -> int:
        return len(self.trials)

    def ids(self) -> list[str]:
        return [t.nct_id for t in self.trials]

    def get(self, nct_id: str) -> TrialRecord | None:
        for t in self.trials:
            if t.nct_id == nct_id:
                return t
        return None


@dataclass
class IngestReport:
    total_studies: int
    ingested: int
    rejected: list[dict]  # {"index": int, "reason": str}


def _dig(obj: Any, *path: str, default=None):
    for key in path:
        if not isinstance(obj, dict) or key not in obj:
            return default
        obj = obj[key]
    return obj


def _coerce_enrollment(value: Any) -> int | None:
    # Registry dumps vary: counts appear as ints, "738", or "1,234 ".
    if value is None:
        return None
    if isinstance(value, int):
        return value if value >= 0 else None
    if isinstance(value, float):
        return int(value) if value >= 0 and value == int(value) else None
    text = str(value).replace(",", "").strip()
    if text.isdigit():
        return int(text)
    return None


def _study_to_record(study: dict) -> TrialRecord | None:
    nct_id = _dig(study, "protocolSection", "identificationModule", "nctId")
    if not nct_id or not str(nct_id).strip():
        return None
    proto = study.get("protocolSection", {})
    interventions = [
        Intervention(kind=str(iv.get("type", "")), name=str(iv.get("name", "")))
        for iv in _dig(proto, "armsInterventionsModule", "interventions", default=[]) or []
    ]
    outcomes = {}
    for key, reg_key in (("primary", "primaryOutcomes"), ("secondary", "secondaryOutcomes")):
        outcomes[key] = [
            Outcome(
                measure=str(o.get("measure", "")),
                description=str(o.get("description", "")),
                time_frame=str(o.get("timeFrame", "")),
            )
            for o in _dig(proto, "outcomesModule", reg_key, default=[]) or []
        ]
    publications = [
        str(ref.get("citation", ""))
        for ref in _dig(proto, "referencesModule", "references", default=[]) or []
        if ref.get("citation")
    ]
    has_results = bool(study.get("hasResults", "resultsSection" in study))
    return TrialRecord(
        nct_id=str(nct_id).strip(),
        title=str(_dig(proto, "identificationModule", "briefTitle", default="") or ""),
        summary=str(_dig(proto, "descriptionModule", "briefSummary", default="") or ""),
        eligibility_text=str(_dig(proto, "eligibilityModule", "eligibilityCriteria", default="") or ""),
        conditions=[str(c) for c in _dig(proto, "conditionsModule", "conditions", default=[]) or []],
        interventions=interventions,
        study_type=str(_dig(proto, "designModule", "studyType", default="") or ""),
        allocation=str(_dig(proto, "designModule", "designInfo", "allocation", default="") or ""),
        phases=[str(p) for p in _dig(proto, "designModule", "phases", default=[]) or []],
        primary_outcomes=outcomes["primary"],
        secondary_outcomes=outcomes["secondary"],
        adverse_event_text=str(_dig(study, "resultsSection", "adverseEventsModule", "description", default="") or ""),
        publications=publications,
        enrollment=_coerce_enrollment(_dig(proto, "designModule", "enrollmentInfo", "count")),
        status=str(_dig(proto, "statusModule", "overallStatus", default="") or ""),
        has_results=has_results,
    )


def ingest_registry_dump(raw: str | bytes, source_tag: str = "") -> tuple[Corpus, IngestReport]:
    """Parse a registry dump (JSON array of study objects) into a canonical corpus.

    Malformed JSON raises :class:`IngestError` with the byte offset.  Studies
    missing an nct_id are skipped and listed in the report; ingestion continues.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8")
    try:
        studies = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise IngestError(f"malformed registry JSON: {exc.msg}", byte_offset=exc.pos) from exc
    if not isinstance(studies, list):
        raise IngestError("registry dump must be a JSON array of study objects")

    trials: list[TrialRecord] = []
    rejected: list[dict] = []
    for i, study in enumerate(studies):
        if not isinstance(study, dict):
            rejected.append({"index": i, "reason": "study is not an object"})
            continue
        record = _study_to_record(study)
        if record is None:
            rejected.append({"index": i, "reason": "missing nct_id"})
            continue
        trials.append(record)

    corpus = Corpus(
        trials=trials,
        source_tag=source_tag,
        ingested_at=datetime.now(timezone.utc).isoformat(),
    )
    report = IngestReport(total_studies=len(studies), ingested=len(trials), rejected=rejected)
    return corpus, report


# Pre-filter sub-rules, applied in this order; a trial is counted in the first
# bucket it fails so bucket counts + retained always sum to the input count.
PREFILTER_BUCKETS = (
    "not-interventional",
    "status-not-allowed",
    "missing-phase",
    "phase4",
    "no-results-or-publications",
)


@dataclass
class PrefilterReport:
    input_count: int
    retained: int
    removed: dict[str, int]

    def __post_init__(self):
        for bucket in PREFILTER_BUCKETS:
            self.removed.setdefault(bucket, 0)


def _prefilter_bucket(trial: TrialRecord, status_allowlist: frozenset[str]) -> str | None:
    """Return the first failing sub-rule bucket, or None when the trial passes."""
    if trial.study_type.upper() != "INTERVENTIONAL":
        return "not-interventional"
    if trial.status.upper() not in status_allowlist:
        return "status-not-allowed"
    if not trial.phases:
        return "missing-phase"
    if any(p.upper() == "PHASE4" for p in trial.phases):
        return "phase4"
    if not (trial.has_results or trial.publications):
        return "no-results-or-publications"
    return None


def prefilter(
    corpus: Corpus, status_allowlist: Iterable[str] = DEFAULT_STATUS_ALLOWLIST
) -> tuple[Corpus, PrefilterReport]:
    """Apply the generic pre-filtering conditions.

    Retains interventional trials with an allowed status, a non-empty phase
    list not containing PHASE4, and posted results or publications.  Pure and
    idempotent; output preserves input order.
    """
    allowlist = frozenset(s.upper() for s in status_allowlist)
    kept: list[TrialRecord] = []
    removed = {bucket: 0 for bucket in PREFILTER_BUCKETS}
    for trial in corpus.trials:
        bucket = _prefilter_bucket(trial, allowlist)
        if bucket is None:
            kept.append(trial)
        else:
            removed[bucket] += 1
    filtered = Corpus(trials=kept, source_tag=corpus.source_tag, ingested_at=corpus.ingested_at)
    report = PrefilterReport(input_count=len(corpus), retained=len(kept), removed=removed)
    return filtered, report


def corpus_to_jsonable(corpus: Corpus) -> dict:
    from .serialize import to_jsonable

    return to_jsonable(corpus)


def corpus_from_jsonable(data: dict) -> Corpus:
    trials = []
    for t in data.get("trials", []):
        trials.append(
            TrialRecord(
                nct_id=t["nct_id"],
                title=t.get("title", ""),
                summary=t.get("summary", ""),
                eligibility_text=t.get("eligibility_text", ""),
                conditions=list(t.get("conditions", [])),
                interventions=[Intervention(**iv) for iv in t.get("interventions", [])],
                study_type=t.get("study_type", ""),
                allocation=t.get("allocation", ""),
                phases=list(t.get("phases", [])),
                primary_outcomes=[Outcome(**o) for o in t.get("primary_outcomes", [])],
                secondary_outcomes=[Outcome(**o) for o in t.get("secondary_outcomes", [])],
                adverse_event_text=t.get("adverse_event_text", ""),
                publications=list(t.get("publications", [])),
                enrollment=t.get("enrollment"),
                status=t.get("status", ""),
                has_results=t.get("has_results", False),
            )
        )
    return Corpus(
        trials=trials,
        source_tag=data.get("source_tag", ""),
        ingested_at=data.get("ingested_at", ""),
    )
