"""Build the five-trial olaparib demo bundle.

Outputs under src/metasieve/data/olaparib/: the registry corpus, the two-plan
filter set, a replay map covering selection + criteria structuring + summary
extraction, the reference penalty rules, the structured criteria produced by
running the structuring step, and the 2x2 counts table.

The script re-runs the pipeline and the penalty scorer before writing and
aborts if the results drift from the hand-checked labels.

Run from the repository root: python3 tools/build_olaparib_fixtures.py
"""

import json
from fractions import Fraction

from common import DATA_DIR, study, outcome, write_json

from metasieve.eligibility import (
    STRUCTURE_INSTRUCTION,
    criteria_to_jsonable,
    evaluate_penalties,
    validate_penalty_rules,
    split_eligibility_clauses,
    structure_criteria,
)
from metasieve.extraction import ExpectedKind, ExtractionRequest, ReplayParser
from metasieve.pipeline import (
    BIOMARKER_INSTRUCTION,
    OS_INSTRUCTION,
    PFS_INSTRUCTION,
    run_pipeline,
    summarize_selected,
)
from metasieve.plans import validate_plan_set
from metasieve.trials import ingest_registry_dump

GOLAN = "NCT02184195"
MOORE = "NCT01844986"
LEDERMANN = "NCT00753545"
PUJADE = "NCT01874353"
SINGLE_ARM = "NCT90000001"


def build_corpus_records() -> list[dict]:
    return [
        study(
            GOLAN,
            title="Olaparib maintenance after first-line platinum chemotherapy in germline BRCA-mutated metastatic pancreatic cancer",
            summary=(
                "Randomized, double-blind trial of maintenance olaparib versus placebo"
                " in patients whose metastatic pancreatic cancer had not progressed on"
                " first-line platinum-based chemotherapy."
            ),
            eligibility=(
                "Inclusion Criteria:\n"
                "- Histologically confirmed metastatic pancreatic adenocarcinoma\n"
                "- Documented deleterious germline BRCA1 or BRCA2 mutation\n"
                "- On first-line platinum-based chemotherapy with no progression"
                " during at least 16 weeks of ongoing treatment\n"
                "- Age 18 years or older"
            ),
            conditions=["Metastatic Pancreatic Adenocarcinoma"],
            interventions=[("DRUG", "Olaparib"), ("OTHER", "Placebo")],
            phases=["PHASE3"],
            enrollment=154,
            primary_outcomes=[
                outcome(
                    "Progression-free survival",
                    "Time to progression by blinded independent central review",
                    "40 months",
                )
            ],
            secondary_outcomes=[
                outcome("Overall survival", "Time from randomization to death", "60 months")
            ],
            citations=[
                "Maintenance olaparib for germline BRCA-mutated metastatic pancreatic cancer."
            ],
        ),
        study(
            MOORE,
            title="Olaparib maintenance monotherapy in newly diagnosed advanced ovarian cancer with BRCA mutation",
            summary=(
                "Randomized, double-blind trial of maintenance olaparib versus placebo"
                " in newly diagnosed advanced ovarian cancer in response after"
                " first-line platinum-based chemotherapy."
            ),
            eligibility=(
                "Inclusion Criteria:\n"
                "- Newly diagnosed advanced high-grade serous ovarian cancer in"
                " female patients after cytoreductive surgery\n"
                "- Tumor with a BRCA1 or BRCA2 mutation\n"
                "- First-line platinum-based chemotherapy completed before"
                " randomisation with no prior bevacizumab\n"
                "- Clinical complete or partial response after chemotherapy\n"
                "- Randomised within 8 weeks of the last chemotherapy dose\n"
                "Exclusion Criteria:\n"
                "- Evidence of disease progression on imaging"
            ),
            conditions=["Ovarian Cancer"],
            interventions=[("DRUG", "Olaparib"), ("OTHER", "Placebo")],
            phases=["PHASE3"],
            enrollment=391,
            primary_outcomes=[
                outcome(
                    "Progression-free survival",
                    "Time from randomization to progression or death",
                    "36 months",
                )
            ],
            secondary_outcomes=[
                outcome("Overall survival", "Time from randomization to death", "60 months")
            ],
            citations=["Maintenance olaparib in newly diagnosed advanced ovarian cancer."],
        ),
        study(
            LEDERMANN,
            title="Olaparib maintenance in platinum-sensitive relapsed serous ovarian cancer",
            summary=(
                "Randomized, double-blind trial of maintenance olaparib versus placebo"
                " in platinum-sensitive relapsed high-grade serous ovarian cancer."
            ),
            eligibility=(
                "Inclusion Criteria:\n"
                "- Recurrent high-grade serous ovarian cancer in female patients"
                " with relapsed disease\n"
                "- Two or more courses of platinum-based chemotherapy and platinum"
                " sensitive to the penultimate regimen\n"
                "- Objective response to the most recent platinum regimen\n"
                "- Treated within 8 weeks of completing the final platinum dose\n"
                "- Patients whose best response to the last platinum regimen was"
                " stable disease are not eligible"
            ),
            conditions=["Ovarian Cancer"],
            interventions=[("DRUG", "Olaparib"), ("OTHER", "Placebo")],
            phases=["PHASE2"],
            enrollment=265,
            primary_outcomes=[
                outcome(
                    "Progression-free survival",
                    "Time from randomization to objective progression",
                    "24 months",
                )
            ],
            secondary_outcomes=[
                outcome("Overall survival", "Time from randomization to death", "48 months")
            ],
            citations=["Olaparib maintenance therapy in platinum-sensitive relapsed ovarian cancer."],
        ),
        study(
            PUJADE,
            title="Olaparib tablets as maintenance therapy in platinum-sensitive relapsed ovarian cancer with BRCA mutation",
            summary=(
                "Randomized, double-blind trial of maintenance olaparib tablets"
                " versus placebo in platinum-sensitive relapsed ovarian cancer"
                " carrying a germline BRCA mutation."
            ),
            eligibility=(
                "Inclusion Criteria:\n"
                "- Platinum-sensitive relapsed high-grade serous ovarian cancer in"
                " female patients with recurrent disease\n"
                "- Germline BRCA1 or BRCA2 mutation\n"
                "- Two or more lines of platinum-based chemotherapy with the most"
                " recent course completed before randomisation\n"
                "- Partial or complete response to the most recent platinum-based"
                " regimen\n"
                "- Randomised within 8 weeks of the last dose of platinum"
                " chemotherapy\n"
                "Exclusion Criteria:\n"
                "- Progression during prior maintenance treatment"
            ),
            conditions=["Ovarian Cancer"],
            interventions=[("DRUG", "Olaparib"), ("OTHER", "Placebo")],
            phases=["PHASE3"],
            enrollment=295,
            primary_outcomes=[
                outcome(
                    "Progression-free survival",
                    "Investigator-assessed time to progression or death",
                    "30 months",
                )
            ],
            secondary_outcomes=[
                outcome("Overall survival", "Time from randomization to death", "54 months")
            ],
            citations=["Olaparib tablets as maintenance therapy in relapsed ovarian cancer."],
        ),
        study(
            SINGLE_ARM,
            title="Single-arm study of olaparib maintenance in recurrent ovarian cancer",
            summary=(
                "Open-label, single-arm evaluation of maintenance olaparib after"
                " platinum-based chemotherapy; no comparator arm."
            ),
            eligibility=(
                "Inclusion Criteria:\n"
                "- Recurrent ovarian cancer after platinum-based chemotherapy"
            ),
            conditions=["Ovarian Cancer"],
            interventions=[("DRUG", "Olaparib")],
            allocation="NA",
            phases=["PHASE2"],
            enrollment=60,
            primary_outcomes=[
                outcome("Progression-free survival", "Investigator-assessed", "24 months")
            ],
            citations=["Single-arm olaparib maintenance in recurrent ovarian cancer."],
        ),
    ]


PLAN_SET = {
    "condition": "BRCA-associated ovarian or pancreatic cancer",
    "treatment": "olaparib maintenance therapy",
    "plans": [
        {
            "filter_name": "olaparib_maintenance_topic",
            "logical_operator": "default",
            "conditions": [
                {
                    "llm_instruction": (
                        "Does this trial evaluate maintenance olaparib after"
                        " platinum-based chemotherapy? Return 'Yes' or 'No' only."
                        " Do not explain your answer."
                    ),
                    "fields_to_attend": ["Title", "Summary"],
                    "comparison": "equal_to",
                    "target_value": "Yes",
                }
            ],
        },
        {
            "filter_name": "randomized_controlled",
            "logical_operator": "default",
            "conditions": [
                {
                    "llm_instruction": (
                        "Is the trial randomized with a comparator arm? Return"
                        " 'Yes' or 'No' only. Do not explain your answer."
                    ),
                    "fields_to_attend": ["Allocation"],
                    "comparison": "equal_to",
                    "target_value": "Yes",
                }
            ],
        },
    ],
}

# Per-trial replies for the structuring step, one per eligibility clause in
# document order.  The scorer's expectations (Golan 0.0, Moore 2.8,
# Ledermann 1.8, Pujade 2.8) depend on these exact tuples.
STRUCTURING_REPLIES = {
    GOLAN: [
        "- | disease | diagnosis | metastatic pancreatic adenocarcinoma | -",
        "- | biomarker | mutation | deleterious germline BRCA1 or BRCA2 mutation | -",
        "- | prior-treatment | regimen | first-line platinum-based chemotherapy | no progression during at least 16 weeks of ongoing treatment",
        "- | demographics | age | 18 years or older | -",
    ],
    MOORE: [
        "- | disease | diagnosis | newly diagnosed advanced high-grade serous ovarian cancer | female patients after cytoreductive surgery",
        "- | biomarker | mutation | BRCA1 or BRCA2 mutation | -",
        "- | prior-treatment | regimen | first-line platinum-based chemotherapy | completed before randomisation with no prior bevacizumab",
        "- | response-status | response | clinical complete or partial response after chemotherapy | -",
        "- | timing | window | randomised within 8 weeks of the last chemotherapy dose | -",
        "- | response-status | progression | evidence of disease progression on imaging | -",
    ],
    LEDERMANN: [
        "- | disease | diagnosis | recurrent high-grade serous ovarian cancer | female patients with relapsed disease",
        "- | prior-treatment | regimen | two or more courses of platinum-based chemotherapy | platinum sensitive to the penultimate regimen",
        "- | response-status | response | objective response to the most recent platinum regimen | -",
        "- | timing | window | treated within 8 weeks of completing the final platinum dose | -",
        "exclusion | response-status | stable-disease | best response was stable disease | -",
    ],
    PUJADE: [
        "- | disease | diagnosis | platinum-sensitive relapsed high-grade serous ovarian cancer | female patients with recurrent disease",
        "- | biomarker | mutation | germline BRCA1 or BRCA2 mutation | -",
        "- | prior-treatment | regimen | two or more lines of platinum-based chemotherapy | most recent course completed before randomisation",
        "- | response-status | response | partial or complete response to the most recent platinum-based regimen | -",
        "- | timing | window | randomised within 8 weeks of the last dose of platinum chemotherapy | -",
        "- | response-status | progression | progression during prior maintenance treatment | -",
    ],
}

EXPECTED_TOTALS = {GOLAN: 0.0, MOORE: 2.8, LEDERMANN: 1.8, PUJADE: 2.8}
EXPECTED_TRIGGERS = {
    GOLAN: [],
    MOORE: ["R1", "R2", "R3", "R4"],
    LEDERMANN: ["R2", "R3", "R5"],
    PUJADE: ["R1", "R2", "R3", "R4"],
}

PENALTY_RULES = {
    "rules": [
        {
            "rule_id": "R1",
            "description": (
                "Requires the qualifying chemotherapy course to be completed"
                " before randomisation rather than ongoing."
            ),
            "severity": 0.9,
            "selectors": [
                {"field": "kind", "comparison": "equal_to", "target_value": "inclusion"},
                {"field": "entity", "comparison": "equal_to", "target_value": "prior-treatment"},
                {
                    "field": "condition",
                    "comparison": "presence_match",
                    "target_value": "completed before randomisation",
                },
            ],
        },
        {
            "rule_id": "R2",
            "description": "Restricts enrollment to female patients with ovarian cancer.",
            "severity": 0.7,
            "selectors": [
                {"field": "kind", "comparison": "equal_to", "target_value": "inclusion"},
                {"field": "entity", "comparison": "equal_to", "target_value": "disease"},
                {"field": "value", "comparison": "presence_match", "target_value": "ovarian"},
                {"field": "condition", "comparison": "presence_match", "target_value": "female"},
            ],
        },
        {
            "rule_id": "R3",
            "description": "Requires an objective response to the preceding regimen.",
            "severity": 0.6,
            "selectors": [
                {"field": "kind", "comparison": "equal_to", "target_value": "inclusion"},
                {"field": "entity", "comparison": "equal_to", "target_value": "response-status"},
                {"field": "value", "comparison": "presence_match", "target_value": "response"},
            ],
        },
        {
            "rule_id": "R4",
            "description": "Anchors the enrollment window to randomisation.",
            "severity": 0.6,
            "selectors": [
                {"field": "kind", "comparison": "equal_to", "target_value": "inclusion"},
                {"field": "entity", "comparison": "equal_to", "target_value": "timing"},
                {"field": "value", "comparison": "presence_match", "target_value": "randomis"},
            ],
        },
        {
            "rule_id": "R5",
            "description": "Excludes patients whose best response was stable disease.",
            "severity": 0.5,
            "selectors": [
                {"field": "kind", "comparison": "equal_to", "target_value": "exclusion"},
                {"field": "entity", "comparison": "equal_to", "target_value": "response-status"},
                {"field": "attribute", "comparison": "equal_to", "target_value": "stable-disease"},
            ],
        },
    ]
}

# 2x2 counts (progression-or-death events) for the pooled estimate:
# study_id -> (events_trt, total_trt, events_ctl, total_ctl).
TABLE_COUNTS = {
    GOLAN: (18, 91, 9, 60),
    MOORE: (104, 260, 19, 130),
    LEDERMANN: (43, 136, 18, 128),
    PUJADE: (73, 195, 19, 99),
}

# Summary replies per (instruction, trial): biomarker over the text fields,
# endpoint quotes over the outcome fields.  Ledermann enrolled regardless of
# BRCA status, so its biomarker reply is the none-marker.
SUMMARY_REPLIES = {
    (GOLAN, "biomarker"): "deleterious germline BRCA1 or BRCA2 mutation",
    (MOORE, "biomarker"): "BRCA1 or BRCA2 mutation",
    (LEDERMANN, "biomarker"): "None",
    (PUJADE, "biomarker"): "germline BRCA1 or BRCA2 mutation",
    (GOLAN, "pfs"): "Progression-free survival",
    (MOORE, "pfs"): "Progression-free survival",
    (LEDERMANN, "pfs"): "Progression-free survival",
    (PUJADE, "pfs"): "Progression-free survival",
    (GOLAN, "os"): "Overall survival",
    (MOORE, "os"): "Overall survival",
    (LEDERMANN, "os"): "Overall survival",
    (PUJADE, "os"): "Overall survival",
}

SUMMARY_FIELDS = {
    "biomarker": (BIOMARKER_INSTRUCTION, ("Title", "Summary", "Eligibility")),
    "pfs": (PFS_INSTRUCTION, ("Primary Outcome", "Secondary Outcome")),
    "os": (OS_INSTRUCTION, ("Primary Outcome", "Secondary Outcome")),
}


def build_replay(corpus, plans) -> dict:
    responses = {}

    def add(
        instruction: str,
        attended_text: str,
        reply: str,
        kind: ExpectedKind = ExpectedKind.PHRASE_OR_NONE,
    ) -> None:
        request = ExtractionRequest(
            instruction=instruction,
            attended_text=attended_text,
            expected_kind=kind,
        )
        existing = responses.get(request.digest())
        assert existing in (None, reply), f"conflicting replies for one request: {reply!r}"
        responses[request.digest()] = reply

    # Selection stage: every trial is on-topic; only the randomized ones pass
    # the comparator check.
    topic, randomized = plans
    for trial in corpus.trials:
        add(
            topic.conditions[0].llm_instruction,
            trial.attended_text(topic.conditions[0].fields_to_attend),
            "Yes",
            topic.conditions[0].expected_kind(),
        )
        add(
            randomized.conditions[0].llm_instruction,
            trial.attended_text(randomized.conditions[0].fields_to_attend),
            "No" if trial.nct_id == SINGLE_ARM else "Yes",
            randomized.conditions[0].expected_kind(),
        )

    # Criteria structuring: one reply per clause.
    for nct_id, replies in STRUCTURING_REPLIES.items():
        clauses = split_eligibility_clauses(corpus.get(nct_id).eligibility_text)
        assert len(clauses) == len(replies), (nct_id, len(clauses), len(replies))
        for (section_kind, sentence), reply in zip(clauses, replies):
            add(STRUCTURE_INSTRUCTION.format(kind=section_kind), sentence, reply)

    # Summary extraction for the selected trials.
    for (nct_id, slot), reply in SUMMARY_REPLIES.items():
        instruction, fields = SUMMARY_FIELDS[slot]
        add(instruction, corpus.get(nct_id).attended_text(fields), reply)

    return {"version": 1, "responses": responses}


def main() -> None:
    records = build_corpus_records()
    corpus, report = ingest_registry_dump(json.dumps(records), source_tag="olaparib-demo")
    assert report.ingested == 5 and not report.rejected, report

    plan_set = validate_plan_set(PLAN_SET)
    replay = build_replay(corpus, plan_set.plans)
    parser = ReplayParser(replay["responses"])

    result = run_pipeline(corpus, plan_set.plans, parser, run_id="olaparib")
    assert result.selected.ids() == sorted([GOLAN, MOORE, LEDERMANN, PUJADE]), (
        result.selected.ids()
    )
    stages = [(s.label, s.excluded, s.remaining) for s in result.flow.stages]
    assert stages == [
        ("prefilter", 0, 5),
        ("olaparib_maintenance_topic", 0, 5),
        ("randomized_controlled", 1, 4),
    ], stages

    rules = validate_penalty_rules(PENALTY_RULES)
    criteria_by_trial = {}
    for nct_id in sorted(STRUCTURING_REPLIES):
        structured = structure_criteria(corpus.get(nct_id), parser)
        assert not structured.flags, (nct_id, structured.flags)
        criteria_by_trial[nct_id] = structured.criteria
        score = evaluate_penalties(rules, structured.criteria, trial_id=nct_id)
        assert score.total == EXPECTED_TOTALS[nct_id], (nct_id, score.total)
        assert [t.rule_id for t in score.triggered] == EXPECTED_TRIGGERS[nct_id], (
            nct_id,
            score.triggered,
        )
        assert score.total == float(
            sum(Fraction(str(t.severity)) for t in score.triggered)
        )

    summaries = summarize_selected(result.selected, parser)
    assert [s.biomarker for s in summaries if s.nct_id == LEDERMANN] == [""]
    assert all(s.pfs_text and s.os_text for s in summaries), summaries

    out = DATA_DIR / "olaparib"
    out.mkdir(parents=True, exist_ok=True)
    (out / "corpus.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'corpus.json'}")
    write_json(out / "plans.json", PLAN_SET)
    write_json(out / "replay.json", replay)
    write_json(out / "penalty_rules.json", PENALTY_RULES)
    write_json(
        out / "criteria.json",
        {
            "trials": {
                nct_id: criteria_to_jsonable(rows)
                for nct_id, rows in criteria_by_trial.items()
            }
        },
    )
    lines = [",".join(("study_id", "events_trt", "total_trt", "events_ctl", "total_ctl"))]
    for nct_id in sorted(TABLE_COUNTS):
        a, n1, c, n0 = TABLE_COUNTS[nct_id]
        lines.append(f"{nct_id},{a},{n1},{c},{n0}")
    (out / "tables.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'tables.csv'}")


if __name__ == "__main__":
    main()
