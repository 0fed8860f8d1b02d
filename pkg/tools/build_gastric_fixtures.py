"""Build the gastric-landscape fixtures: plans, rules, drug list, generation replay.

Run from the repository root: python3 tools/build_gastric_fixtures.py
"""

from common import DATA_DIR, write_json

from metasieve.druglib import DrugLibrary
from metasieve.extraction import ExpectedKind, ExtractionRequest
from metasieve.pipeline import load_prompt, new_rule_set, rule_set_to_jsonable
from metasieve.plans import validate_plan_set
from metasieve.serialize import canonical_dumps

GASTRIC_QUERY = (
    "Identify and evaluate clinical trials of gastric cancer or gastroesophageal junction"
    " cancer. Trials must investigate targeted therapies or immunotherapies; report survival"
    " outcomes such as progression-free survival (PFS) or overall survival (OS); and enroll"
    " biomarker-stratified populations (e.g., HER2-positive, MSI-H, PD-L1 positive). Exclude"
    " Phase 3 trials with a small sample size (e.g., fewer than 100 enrolled patients)."
    " Include only trials evaluating FDA-approved drugs."
)

RULE_TEXTS = [
    "Include trials that study gastric cancer or gastroesophageal junction cancer",
    "Include trials that investigate targeted therapies or immunotherapies",
    "Include trials that report survival outcomes such as progression-free survival (PFS) or overall survival (OS)",
    "Include trials that enroll biomarker-stratified populations, including but not limited to HER2-positive, MSI-H, or PD-L1-positive",
    "Exclude Phase III trials with fewer than 100 enrolled patients",
    "Include only trials where the drugs under investigation are FDA-approved",
]

PLAN_DICTS = [
    {
        "filter_name": "study_gastric_or_gej_cancer",
        "logical_operator": "default",
        "conditions": [
            {
                "fields_to_attend": ["Title", "Summary", "Conditions"],
                "llm_instruction": (
                    "Does this trial study gastric cancer or gastroesophageal junction"
                    " cancer? Return 'Yes' or 'No' only. Do not explain your answer."
                ),
                "comparison": "equal_to",
                "target_value": "Yes",
            }
        ],
    },
    {
        "filter_name": "targeted_or_immunotherapy",
        "logical_operator": "default",
        "conditions": [
            {
                "fields_to_attend": ["Title", "Summary", "Interventions"],
                "llm_instruction": (
                    "Does this trial investigate a targeted therapy or an immunotherapy?"
                    " Return 'Yes' or 'No' only. Do not explain your answer."
                ),
                "comparison": "equal_to",
                "target_value": "Yes",
            }
        ],
    },
    {
        "filter_name": "reports_survival_outcomes",
        "logical_operator": "default",
        "conditions": [
            {
                "fields_to_attend": ["Primary Outcome", "Secondary Outcome"],
                "llm_instruction": (
                    "Quote the outcome measure describing progression-free survival or"
                    " overall survival. Return the exact phrase that indicates presence,"
                    " or 'None' if not found. Do not explain your answer."
                ),
                "comparison": "presence_match",
            }
        ],
    },
    {
        "filter_name": "biomarker_stratified_population",
        "logical_operator": "default",
        "conditions": [
            {
                "fields_to_attend": ["Title", "Summary", "Eligibility"],
                "llm_instruction": (
                    "Name the biomarker used to stratify enrollment (for example HER2,"
                    " PD-L1, MSI-H or CLDN18.2). Return the exact phrase that indicates"
                    " presence, or 'None' if not found. Do not explain your answer."
                ),
                "comparison": "presence_match",
            }
        ],
    },
    {
        "filter_name": "exclude_phase_iii_fewer_than_100_enrollment",
        "logical_operator": "sequential",
        "conditions": [
            {
                "fields_to_attend": ["Phase"],
                "llm_instruction": (
                    "Check if the trial is in Phase III. Return 'Yes' if it is, otherwise"
                    " return 'No'. Do not explain your answer."
                ),
                "comparison": "equal_to",
                "target_value": "Yes",
            },
            {
                "fields_to_attend": ["Enrollment"],
                "llm_instruction": (
                    "Extract the number of enrolled patients. Return a number only."
                    " Do not include units or explanations."
                ),
                "comparison": "greater_than",
                "target_value": 100,
            },
        ],
    },
    {
        "filter_name": "fda_approved_drugs_only",
        "logical_operator": "default",
        "conditions": [
            {
                "fields_to_attend": ["Interventions"],
                "llm_instruction": (
                    "Extract and return the names of drugs under investigation as a"
                    " Python list. Do not include any other information."
                ),
                "comparison": "in_list",
                "membership_list_name": "FDA_approved_drugs_gastric",
            }
        ],
    },
]

PLAN_SET = {
    "condition": "gastric cancer or gastroesophageal junction cancer",
    "treatment": "targeted therapies or immunotherapies",
    "plans": PLAN_DICTS,
}

# Curated medication entries for the gastric indication; off-label rows are
# dropped on import.  FLX475 is deliberately absent.
DRUG_DOCUMENT = {
    "disease_key": "gastric cancer",
    "source": "drug-reference-page",
    "entries": [
        {"display_name": "Herceptin", "generic_name": "trastuzumab", "brand_names": ["Herceptin"]},
        {"display_name": "Keytruda", "generic_name": "pembrolizumab", "brand_names": ["Keytruda"]},
        {"display_name": "Opdivo", "generic_name": "nivolumab", "brand_names": ["Opdivo"]},
        {"display_name": "Cyramza", "generic_name": "ramucirumab", "brand_names": ["Cyramza"]},
        {
            "display_name": "Enhertu",
            "generic_name": "trastuzumab deruxtecan",
            "brand_names": ["Enhertu"],
        },
        {"display_name": "Vyloy", "generic_name": "zolbetuximab", "brand_names": ["Vyloy"]},
        {"display_name": "Tevimbra", "generic_name": "tislelizumab", "brand_names": ["Tevimbra"]},
        {"display_name": "fluorouracil", "generic_name": "fluorouracil", "brand_names": []},
        {"display_name": "Xeloda", "generic_name": "capecitabine", "brand_names": ["Xeloda"]},
        {"display_name": "Eloxatin", "generic_name": "oxaliplatin", "brand_names": ["Eloxatin"]},
        {"display_name": "cisplatin", "generic_name": "cisplatin", "brand_names": []},
        {"display_name": "Taxotere", "generic_name": "docetaxel", "brand_names": ["Taxotere"]},
        {"display_name": "paclitaxel", "generic_name": "paclitaxel", "brand_names": []},
        {"display_name": "Camptosar", "generic_name": "irinotecan", "brand_names": ["Camptosar"]},
        {"display_name": "doxorubicin", "generic_name": "doxorubicin", "brand_names": []},
        {"display_name": "mitomycin", "generic_name": "mitomycin", "brand_names": []},
        {
            "display_name": "Afinitor",
            "generic_name": "everolimus",
            "brand_names": ["Afinitor"],
            "off_label": True,
        },
    ],
}


def build_generation_replay() -> dict:
    responses = {}
    # The query asset ends with a newline; the digest must cover the file
    # content exactly as a consumer will read it.
    rule_request = ExtractionRequest(
        instruction=load_prompt("rule_generation"),
        attended_text=GASTRIC_QUERY + "\n",
        expected_kind=ExpectedKind.PHRASE_OR_NONE,
    )
    responses[rule_request.digest()] = canonical_dumps(RULE_TEXTS)
    plan_prompt = load_prompt("plan_generation")
    for rule_text, plan in zip(RULE_TEXTS, PLAN_DICTS):
        request = ExtractionRequest(
            instruction=plan_prompt,
            attended_text=rule_text,
            expected_kind=ExpectedKind.PHRASE_OR_NONE,
        )
        responses[request.digest()] = canonical_dumps(plan)
    return {"version": 1, "responses": responses}


def main() -> None:
    plan_set = validate_plan_set(PLAN_SET)
    assert [p.filter_name for p in plan_set.plans] == [d["filter_name"] for d in PLAN_DICTS]

    library = DrugLibrary()
    drug_list, report = library.import_list(DRUG_DOCUMENT)
    assert report.dropped_off_label == ["Afinitor"], report
    assert not any("flx475" in n.casefold() for e in drug_list.entries for n in e.all_names())

    gastric_dir = DATA_DIR / "gastric"
    write_json(gastric_dir / "plans.json", PLAN_SET)
    write_json(gastric_dir / "rules.json", rule_set_to_jsonable(new_rule_set(RULE_TEXTS)))
    write_json(gastric_dir / "generation_replay.json", build_generation_replay())
    (gastric_dir / "query.txt").write_text(GASTRIC_QUERY + "\n", encoding="utf-8")
    print(f"wrote {gastric_dir / 'query.txt'}")
    druglist_path = DATA_DIR / "druglists" / "gastric.json"
    druglist_path.parent.mkdir(parents=True, exist_ok=True)
    library.save(druglist_path)
    print(f"wrote {druglist_path}")


if __name__ == "__main__":
    main()
