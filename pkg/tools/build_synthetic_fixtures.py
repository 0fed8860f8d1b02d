"""Build the 20-trial synthetic corpus, its hand-labeled outcomes, and replay map.

The corpus is designed so each pre-filter bucket and each of the six gastric
plans removes a known set of trials.  The label file is the hand enumeration;
this script verifies the pipeline reproduces it before writing anything.

Run from the repository root: python3 tools/build_synthetic_fixtures.py
"""

import json

from common import DATA_DIR, study, outcome, write_json

from metasieve.assets import data_path
from metasieve.druglib import DrugLibrary
from metasieve.extraction import ExtractionRequest, ReplayParser
from metasieve.pipeline import flow_to_jsonable, run_pipeline
from metasieve.plans import MembershipLibrary, validate_plan_set
from metasieve.trials import ingest_registry_dump

SURVIVAL = [outcome("Overall survival", "OS analysis", "36 months")]
SURVIVAL_PFS = [outcome("Progression-free survival", "PFS by RECIST", "24 months")]
RESPONSE_ONLY = [outcome("Objective response rate", "ORR by RECIST", "12 months")]


def build_corpus_records() -> list[dict]:
    gastric = ["Gastric Cancer"]
    gej = ["Gastroesophageal Junction Adenocarcinoma"]
    return [
        # --- pre-filter removals -------------------------------------------------
        study(
            "NCT80000001",
            title="Registry of dietary habits in gastric cancer survivors",
            summary="Observational cohort describing nutrition after gastrectomy.",
            conditions=gastric,
            study_type="OBSERVATIONAL",
            phases=["NA"],
        ),
        study(
            "NCT80000002",
            title="Expanded access to ramucirumab for advanced gastric cancer",
            summary="Expanded access program for patients without trial options.",
            conditions=gastric,
            study_type="EXPANDED_ACCESS",
            phases=["NA"],
        ),
        study(
            "NCT80000003",
            title="Ongoing enrollment study of chemoradiation in gastric cancer",
            summary="Currently recruiting participants.",
            conditions=gastric,
            status="RECRUITING",
            phases=["PHASE3"],
            enrollment=150,
        ),
        study(
            "NCT80000004",
            title="Early feasibility study of endoscopic resection",
            summary="Feasibility study with no registered phase.",
            conditions=gastric,
            phases=[],
            enrollment=40,
        ),
        study(
            "NCT80000005",
            title="Post-marketing surveillance of trastuzumab in gastric cancer",
            summary="Phase 4 safety surveillance.",
            conditions=gastric,
            phases=["PHASE4"],
            enrollment=900,
        ),
        study(
            "NCT80000006",
            title="Completed gastric cancer study without posted results",
            summary="No results or publications are available.",
            conditions=gastric,
            phases=["PHASE2"],
            enrollment=70,
            has_results=False,
        ),
        # --- removed by study_gastric_or_gej_cancer ------------------------------
        study(
            "NCT80000007",
            title="Trastuzumab plus chemotherapy in HER2-positive breast cancer",
            summary="Randomized phase 3 trial in metastatic breast cancer.",
            conditions=["Breast Cancer"],
            interventions=[("BIOLOGICAL", "Trastuzumab")],
            phases=["PHASE3"],
            enrollment=480,
            primary_outcomes=SURVIVAL_PFS,
        ),
        study(
            "NCT80000008",
            title="Pembrolizumab in PD-L1 positive non-small cell lung cancer",
            summary="Immunotherapy trial in advanced NSCLC.",
            conditions=["Non Small Cell Lung Cancer"],
            interventions=[("BIOLOGICAL", "Pembrolizumab")],
            phases=["PHASE3"],
            enrollment=1034,
            primary_outcomes=SURVIVAL,
        ),
        study(
            "NCT80000009",
            title="FOLFOX versus FOLFIRI in metastatic colorectal cancer",
            summary="Chemotherapy comparison in colorectal cancer.",
            conditions=["Colorectal Cancer"],
            interventions=[("DRUG", "Oxaliplatin"), ("DRUG", "Irinotecan")],
            phases=["PHASE3"],
            enrollment=620,
            primary_outcomes=SURVIVAL,
        ),
        # --- removed by targeted_or_immunotherapy --------------------------------
        study(
            "NCT80000010",
            title="Cisplatin plus fluorouracil in advanced gastric cancer",
            summary="Doublet chemotherapy without targeted agents.",
            conditions=gastric,
            interventions=[("DRUG", "Cisplatin"), ("DRUG", "Fluorouracil")],
            phases=["PHASE3"],
            enrollment=520,
            primary_outcomes=SURVIVAL,
        ),
        study(
            "NCT80000011",
            title="Perioperative FLOT chemotherapy for resectable gastric cancer",
            summary="Chemotherapy-only perioperative regimen.",
            conditions=gej,
            interventions=[("DRUG", "Docetaxel"), ("DRUG", "Oxaliplatin")],
            phases=["PHASE2"],
            enrollment=300,
            primary_outcomes=SURVIVAL,
        ),
        # --- removed by reports_survival_outcomes --------------------------------
        study(
            "NCT80000012",
            title="Trastuzumab response-rate study in HER2-positive gastric cancer",
            summary="Single-arm targeted therapy study reporting response only.",
            conditions=gastric,
            interventions=[("BIOLOGICAL", "Trastuzumab")],
            phases=["PHASE2"],
            enrollment=55,
            primary_outcomes=RESPONSE_ONLY,
        ),
        # --- removed by biomarker_stratified_population --------------------------
        study(
            "NCT80000013",
            title="Nivolumab in unselected advanced gastric cancer",
            summary="All-comer immunotherapy study without biomarker stratification.",
            conditions=gastric,
            interventions=[("BIOLOGICAL", "Nivolumab")],
            phases=["PHASE3"],
            enrollment=493,
            primary_outcomes=SURVIVAL,
        ),
        study(
            "NCT80000014",
            title="Ramucirumab monotherapy in previously treated gastric cancer",
            summary="Second-line anti-angiogenic therapy in an unselected population.",
            conditions=gej,
            interventions=[("BIOLOGICAL", "Ramucirumab")],
            phases=["PHASE3"],
            enrollment=355,
            primary_outcomes=SURVIVAL,
        ),
        # --- removed by exclude_phase_iii_fewer_than_100_enrollment --------------
        study(
            "NCT80000015",
            title="Trastuzumab in HER2-positive gastric cancer: small phase 3",
            summary="HER2-positive confirmatory study stopped after slow accrual.",
            conditions=gastric,
            eligibility="Inclusion Criteria:\n- HER2-positive advanced gastric cancer",
            interventions=[("BIOLOGICAL", "Trastuzumab")],
            phases=["PHASE3"],
            enrollment=84,
            primary_outcomes=SURVIVAL,
        ),
        # --- selected -------------------------------------------------------------
        study(
            "NCT80000016",
            title="Pembrolizumab versus placebo in PD-L1 positive gastric cancer",
            summary="Randomized immunotherapy trial in PD-L1 positive disease.",
            conditions=gastric,
            eligibility="Inclusion Criteria:\n- PD-L1 positive (CPS >= 1) advanced gastric cancer",
            interventions=[("BIOLOGICAL", "Pembrolizumab"), ("OTHER", "Placebo")],
            phases=["PHASE3"],
            enrollment=763,
            primary_outcomes=SURVIVAL,
            secondary_outcomes=SURVIVAL_PFS,
            citations=["Pembrolizumab in PD-L1 positive gastric cancer: primary analysis."],
        ),
        # --- removed by fda_approved_drugs_only ----------------------------------
        study(
            "NCT80000017",
            title="FLX475 in CCR4-expressing gastroesophageal junction cancer",
            summary="Investigational CCR4 antagonist in biomarker-selected patients.",
            conditions=gej,
            eligibility="Inclusion Criteria:\n- CCR4-expressing tumors by central assay",
            interventions=[("DRUG", "FLX475")],
            phases=["PHASE2"],
            enrollment=120,
            primary_outcomes=SURVIVAL_PFS,
        ),
        # --- selected -------------------------------------------------------------
        study(
            "NCT80000018",
            title="Zolbetuximab plus chemotherapy in CLDN18.2-positive gastric cancer",
            summary="Targeted therapy in claudin-18.2 positive disease.",
            conditions=gastric,
            eligibility="Inclusion Criteria:\n- CLDN18.2-positive tumor expression",
            interventions=[("BIOLOGICAL", "Zolbetuximab"), ("DRUG", "Oxaliplatin")],
            phases=["PHASE3"],
            enrollment=565,
            primary_outcomes=SURVIVAL_PFS,
            secondary_outcomes=SURVIVAL,
            citations=["Zolbetuximab in CLDN18.2-positive gastric cancer: phase 3 results."],
        ),
        study(
            "NCT80000019",
            title="Trastuzumab deruxtecan in HER2-positive gastric cancer",
            summary="Antibody-drug conjugate after progression on trastuzumab.",
            conditions=gej,
            eligibility="Inclusion Criteria:\n- HER2-positive disease confirmed by central review",
            interventions=[("BIOLOGICAL", "Trastuzumab deruxtecan")],
            phases=["PHASE2"],
            enrollment=187,
            primary_outcomes=SURVIVAL,
            citations=["Trastuzumab deruxtecan in gastric cancer: randomized phase 2."],
        ),
        study(
            "NCT80000020",
            title="Nivolumab plus chemotherapy in MSI-H gastric cancer",
            summary="First-line immunotherapy with microsatellite-instability stratification.",
            conditions=gastric,
            eligibility="Inclusion Criteria:\n- MSI-H or dMMR tumor status",
            interventions=[("BIOLOGICAL", "Nivolumab"), ("DRUG", "Capecitabine")],
            phases=["PHASE3"],
            enrollment=1581,
            primary_outcomes=SURVIVAL,
            secondary_outcomes=SURVIVAL_PFS,
            citations=["Nivolumab plus chemotherapy in MSI-H gastric cancer."],
        ),
    ]


# Raw parser replies per (nct_id, filter_name, condition_index).  Trials the
# pipeline never asks about at a stage simply have no entry for it.
ANSWERS = {
    # study_gastric_or_gej_cancer
    ("NCT80000007", "study_gastric_or_gej_cancer", 0): "No",
    ("NCT80000008", "study_gastric_or_gej_cancer", 0): "No",
    ("NCT80000009", "study_gastric_or_gej_cancer", 0): "No",
    ("NCT80000010", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000011", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000012", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000013", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000014", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000015", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000016", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000017", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000018", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000019", "study_gastric_or_gej_cancer", 0): "Yes",
    ("NCT80000020", "study_gastric_or_gej_cancer", 0): "Yes",
    # targeted_or_immunotherapy
    ("NCT80000010", "targeted_or_immunotherapy", 0): "No",
    ("NCT80000011", "targeted_or_immunotherapy", 0): "No",
    ("NCT80000012", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000013", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000014", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000015", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000016", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000017", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000018", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000019", "targeted_or_immunotherapy", 0): "Yes",
    ("NCT80000020", "targeted_or_immunotherapy", 0): "Yes",
    # reports_survival_outcomes
    ("NCT80000012", "reports_survival_outcomes", 0): "None",
    ("NCT80000013", "reports_survival_outcomes", 0): "Overall survival",
    ("NCT80000014", "reports_survival_outcomes", 0): "Overall survival",
    ("NCT80000015", "reports_survival_outcomes", 0): "Overall survival",
    ("NCT80000016", "reports_survival_outcomes", 0): "Overall survival",
    ("NCT80000017", "reports_survival_outcomes", 0): "Progression-free survival",
    ("NCT80000018", "reports_survival_outcomes", 0): "Progression-free survival",
    ("NCT80000019", "reports_survival_outcomes", 0): "Overall survival",
    ("NCT80000020", "reports_survival_outcomes", 0): "Overall survival",
    # biomarker_stratified_population
    ("NCT80000013", "biomarker_stratified_population", 0): "None",
    ("NCT80000014", "biomarker_stratified_population", 0): "None",
    ("NCT80000015", "biomarker_stratified_population", 0): "HER2-positive",
    ("NCT80000016", "biomarker_stratified_population", 0): "PD-L1 positive",
    ("NCT80000017", "biomarker_stratified_population", 0): "CCR4-expressing",
    ("NCT80000018", "biomarker_stratified_population", 0): "CLDN18.2-positive",
    ("NCT80000019", "biomarker_stratified_population", 0): "HER2-positive",
    ("NCT80000020", "biomarker_stratified_population", 0): "MSI-H",
    # exclude_phase_iii_fewer_than_100_enrollment (guard answers collapse by
    # identical Phase text; enrollment answers are per-trial)
    ("NCT80000015", "exclude_phase_iii_fewer_than_100_enrollment", 0): "Yes",
    ("NCT80000016", "exclude_phase_iii_fewer_than_100_enrollment", 0): "Yes",
    ("NCT80000017", "exclude_phase_iii_fewer_than_100_enrollment", 0): "No",
    ("NCT80000018", "exclude_phase_iii_fewer_than_100_enrollment", 0): "Yes",
    ("NCT80000019", "exclude_phase_iii_fewer_than_100_enrollment", 0): "No",
    ("NCT80000020", "exclude_phase_iii_fewer_than_100_enrollment", 0): "Yes",
    ("NCT80000015", "exclude_phase_iii_fewer_than_100_enrollment", 1): "84",
    ("NCT80000016", "exclude_phase_iii_fewer_than_100_enrollment", 1): "763",
    ("NCT80000018", "exclude_phase_iii_fewer_than_100_enrollment", 1): "565",
    ("NCT80000020", "exclude_phase_iii_fewer_than_100_enrollment", 1): "1581",
    # fda_approved_drugs_only
    ("NCT80000016", "fda_approved_drugs_only", 0): '["pembrolizumab", "placebo"]',
    ("NCT80000017", "fda_approved_drugs_only", 0): '["FLX475"]',
    ("NCT80000018", "fda_approved_drugs_only", 0): '["zolbetuximab", "oxaliplatin"]',
    ("NCT80000019", "fda_approved_drugs_only", 0): '["trastuzumab deruxtecan"]',
    ("NCT80000020", "fda_approved_drugs_only", 0): '["nivolumab", "capecitabine"]',
}

EXPECTED_SELECTED = ["NCT80000016", "NCT80000018", "NCT80000019", "NCT80000020"]
EXPECTED_STAGES = [
    ("prefilter", 6, 14),
    ("study_gastric_or_gej_cancer", 3, 11),
    ("targeted_or_immunotherapy", 2, 9),
    ("reports_survival_outcomes", 1, 8),
    ("biomarker_stratified_population", 2, 6),
    ("exclude_phase_iii_fewer_than_100_enrollment", 1, 5),
    ("fda_approved_drugs_only", 1, 4),
]
EXPECTED_PREFILTER_BUCKETS = {
    "not-interventional": 2,
    "status-not-allowed": 1,
    "missing-phase": 1,
    "phase4": 1,
    "no-results-or-publications": 1,
}


def build_replay(corpus, plans) -> dict:
    by_name = {plan.filter_name: plan for plan in plans}
    responses = {}
    for (nct_id, plan_name, index), reply in ANSWERS.items():
        condition = by_name[plan_name].conditions[index]
        request = ExtractionRequest(
            instruction=condition.llm_instruction,
            attended_text=corpus.get(nct_id).attended_text(condition.fields_to_attend),
            expected_kind=condition.expected_kind(),
        )
        responses[request.digest()] = reply
    return {"version": 1, "responses": responses}


def main() -> None:
    records = build_corpus_records()
    raw = json.dumps(records)
    corpus, report = ingest_registry_dump(raw, source_tag="synthetic-20")
    assert report.ingested == 20 and not report.rejected, report

    plan_set = validate_plan_set(json.loads(data_path("gastric", "plans.json").read_text()))
    replay = build_replay(corpus, plan_set.plans)

    lists = MembershipLibrary()
    library = DrugLibrary.load(data_path("druglists", "gastric.json"))
    lists.register("FDA_approved_drugs_gastric", library.lookup("gastric cancer"))

    parser = ReplayParser(replay["responses"])
    result = run_pipeline(corpus, plan_set.plans, parser, lists=lists, run_id="synthetic")
    assert result.selected.ids() == EXPECTED_SELECTED, result.selected.ids()
    actual_stages = [(s.label, s.excluded, s.remaining) for s in result.flow.stages]
    assert actual_stages == EXPECTED_STAGES, actual_stages

    labels = {
        "expected_selected": EXPECTED_SELECTED,
        "flow": flow_to_jsonable(result.flow),
        "prefilter_buckets": EXPECTED_PREFILTER_BUCKETS,
    }

    out = DATA_DIR / "synthetic"
    (out).mkdir(parents=True, exist_ok=True)
    (out / "corpus.json").write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out / 'corpus.json'}")
    write_json(out / "labels.json", labels)
    write_json(out / "replay.json", replay)


if __name__ == "__main__":
    main()
