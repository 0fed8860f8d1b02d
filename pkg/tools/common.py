"""Shared helpers for the fixture builder scripts."""

from __future__ import annotations

import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent
SRC = REPO_ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

DATA_DIR = SRC / "metasieve" / "data"

from metasieve.serialize import canonical_dumps  # noqa: E402


def write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_dumps(payload, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {path.relative_to(REPO_ROOT)}")


def study(
    nct_id: str,
    *,
    title: str = "",
    summary: str = "",
    eligibility: str = "",
    conditions: list[str] | None = None,
    interventions: list[tuple[str, str]] | None = None,
    study_type: str = "INTERVENTIONAL",
    allocation: str = "RANDOMIZED",
    phases: list[str] | None = None,
    primary_outcomes: list[dict] | None = None,
    secondary_outcomes: list[dict] | None = None,
    citations: list[str] | None = None,
    enrollment: int | None = None,
    status: str = "COMPLETED",
    has_results: bool = True,
) -> dict:
    """Build one raw registry study record in the shape the ingester reads."""
    design: dict = {"studyType": study_type, "designInfo": {"allocation": allocation}}
    if phases is not None:
        design["phases"] = phases
    if enrollment is not None:
        design["enrollmentInfo"] = {"count": enrollment}
    proto: dict = {
        "identificationModule": {"nctId": nct_id, "briefTitle": title},
        "descriptionModule": {"briefSummary": summary},
        "eligibilityModule": {"eligibilityCriteria": eligibility},
        "conditionsModule": {"conditions": conditions or []},
        "armsInterventionsModule": {
            "interventions": [{"type": kind, "name": name} for kind, name in interventions or []]
        },
        "designModule": design,
        "outcomesModule": {
            "primaryOutcomes": primary_outcomes or [],
            "secondaryOutcomes": secondary_outcomes or [],
        },
        "statusModule": {"overallStatus": status},
    }
    if citations:
        proto["referencesModule"] = {"references": [{"citation": c} for c in citations]}
    return {"protocolSection": proto, "hasResults": has_results}


def outcome(measure: str, description: str = "", time_frame: str = "") -> dict:
    return {"measure": measure, "description": description, "timeFrame": time_frame}
