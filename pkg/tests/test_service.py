"""HTTP service tests: run lifecycle, state gates, persistence, serializer parity."""

import json
import threading

import pytest
from fastapi.testclient import TestClient

from metasieve.assets import data_path
from metasieve.meta import (
    estimate_to_jsonable,
    forest_data,
    load_tables_csv,
    pool_ew_mh,
)
from metasieve.serialize import canonical_dumps
from metasieve.service import DEMO_RUN_ID, RUN_STATES, ServiceConfig, create_app

OLAPARIB_IDS = ["NCT00753545", "NCT01844986", "NCT01874353", "NCT02184195"]

GASTRIC_RULE_TEXTS = [
    "Include trials studying gastric or gastro-esophageal junction cancer.",
    "Exclude phase III trials with fewer than 100 participants.",
]


def load_json(*parts):
    return json.loads(data_path(*parts).read_text(encoding="utf-8"))


@pytest.fixture()
def config(tmp_path):
    return ServiceConfig(state_dir=tmp_path / "runs")


@pytest.fixture()
def client(config):
    return TestClient(create_app(config))


def create_gastric_run(client, run_id="gastric-run", **overrides):
    body = {
        "run_id": run_id,
        "query": "targeted or immunotherapy trials in gastric cancer",
        "corpus": "synthetic",
        "parser": f"replay:{data_path('synthetic', 'replay.json')}",
        "rules": list(GASTRIC_RULE_TEXTS),
        "plans": load_json("gastric", "plans.json"),
        "lists": {"FDA_approved_drugs_gastric": {"file": "gastric", "key": "gastric cancer"}},
    }
    body.update(overrides)
    response = client.post("/runs", json=body)
    assert response.status_code == 201, response.text
    return response.json()


def approve(client, run_id):
    response = client.put(f"/runs/{run_id}/rules", json={"action": "approve"})
    assert response.status_code == 200, response.text
    return response.json()


class TestDemoRun:
    def test_listed_and_filtered_on_first_start(self, client):
        listing = client.get("/runs").json()["runs"]
        assert [row["run_id"] for row in listing] == [DEMO_RUN_ID]
        assert listing[0]["state"] == "filtered"

        doc = client.get(f"/runs/{DEMO_RUN_ID}").json()
        assert doc["selected"] == OLAPARIB_IDS
        assert doc["severity_total"] == 3.3
        assert doc["penalties"] == {
            "NCT00753545": 1.8,
            "NCT01844986": 2.8,
            "NCT01874353": 2.8,
            "NCT02184195": 0.0,
        }

    def test_default_weights_are_the_reference_vector(self, client):
        response = client.post(f"/runs/{DEMO_RUN_ID}/weights", json={})
        assert response.status_code == 200
        vector = response.json()
        assert vector["pmax"] == 3.3
        by_id = {s["study_id"]: round(s["weight"], 4) for s in vector["studies"]}
        assert by_id == {
            "NCT00753545": 0.2147,
            "NCT01844986": 0.1323,
            "NCT01874353": 0.1323,
            "NCT02184195": 0.5207,
        }

    def test_meta_reports_both_pooled_estimates(self, client):
        response = client.post(f"/runs/{DEMO_RUN_ID}/meta", json={"gamma": 0.5, "floor": 20})
        assert response.status_code == 200
        payload = response.json()
        assert round(payload["classical"]["theta_hat"], 2) == 2.18
        assert round(payload["weighted"]["theta_hat"], 2) == 1.97
        assert round(payload["weighted"]["ci_low"], 2) == 1.76
        assert round(payload["weighted"]["ci_high"], 2) == 2.20
        assert len(payload["forest"]["studies"]) == 4
        assert [row["label"] for row in payload["forest"]["pooled"]] == [
            "classical",
            "eligibility-weighted",
        ]
        assert client.get(f"/runs/{DEMO_RUN_ID}").json()["state"] == "analyzed"

    def test_floor_100_equalizes_the_pooled_rows(self, client):
        payload = client.post(f"/runs/{DEMO_RUN_ID}/meta", json={"floor": 100}).json()
        assert payload["classical"] == payload["weighted"]

    def test_prisma_and_trials(self, client):
        flow = client.get(f"/runs/{DEMO_RUN_ID}/prisma").json()
        assert flow["initial_count"] == 5
        assert flow["final_count"] == 4

        trials = client.get(f"/runs/{DEMO_RUN_ID}/trials").json()
        assert trials["selected"] == OLAPARIB_IDS
        by_id = {row["nct_id"]: row for row in trials["summaries"]}
        assert by_id["NCT02184195"]["biomarker"] == (
            "deleterious germline BRCA1 or BRCA2 mutation"
        )
        assert by_id["NCT00753545"]["biomarker"] == ""

    def test_sweep_uses_run_tables_and_penalties(self, client):
        payload = client.get(f"/runs/{DEMO_RUN_ID}/sweep").json()
        assert len(payload["rows"]) == 16
        match = [
            row
            for row in payload["rows"]
            if row["gamma"] == 0.5 and row["floor"] == 20.0
        ]
        assert len(match) == 1
        assert round(match[0]["theta_hat"], 2) == 1.97

    def test_audit_trail_covers_the_whole_lifecycle(self, client):
        client.post(f"/runs/{DEMO_RUN_ID}/weights", json={})
        client.post(f"/runs/{DEMO_RUN_ID}/meta", json={})
        events = client.get(f"/runs/{DEMO_RUN_ID}/audit").json()["events"]
        kinds = {event["kind"] for event in events}
        assert {
            "rule-created",
            "rule-edited",
            "plan-validated",
            "extraction",
            "verdict",
            "stage-summary",
            "weights",
            "estimate",
        } <= kinds
        sequences = [event["sequence"] for event in events]
        assert sequences == list(range(1, len(sequences) + 1))


class TestRunLifecycle:
    def test_create_starts_in_draft(self, client):
        doc = create_gastric_run(client)
        assert doc["state"] == "draft"
        assert doc["rule_set"]["revision"] == 1
        assert doc["rule_set"]["status"] == "draft"
        assert doc["flow"] is None and doc["selected"] is None

    def test_rule_edit_then_get_round_trips_with_bumped_revision(self, client):
        create_gastric_run(client)
        before = client.get("/runs/gastric-run/rules").json()
        edited = client.put(
            "/runs/gastric-run/rules",
            json={"action": "edit", "rules": [t + " (reviewed)" for t in GASTRIC_RULE_TEXTS]},
        )
        assert edited.status_code == 200
        assert edited.json()["revision"] == before["revision"] + 1
        assert client.get("/runs/gastric-run/rules").json() == edited.json()

    def test_rule_kind_inferred_from_text(self, client):
        doc = create_gastric_run(client)
        kinds = [rule["kind"] for rule in doc["rule_set"]["rules"]]
        assert kinds == ["include", "exclude"]

    def test_approve_advances_state_and_freezes_rules(self, client):
        create_gastric_run(client)
        approved = approve(client, "gastric-run")
        assert approved["status"] == "approved"
        assert client.get("/runs/gastric-run").json()["state"] == "rules-approved"

        frozen = client.put(
            "/runs/gastric-run/rules", json={"action": "edit", "rules": ["changed"]}
        )
        assert frozen.status_code == 409
        again = client.put("/runs/gastric-run/rules", json={"action": "approve"})
        assert again.status_code == 409

    def test_execute_requires_approved_rules(self, client):
        create_gastric_run(client)
        response = client.post("/runs/gastric-run/execute")
        assert response.status_code == 409
        assert "rules-approved" in response.json()["detail"]

    def test_execute_with_zero_plans_is_409(self, client):
        create_gastric_run(client, run_id="planless", plans=None)
        approve(client, "planless")
        response = client.post("/runs/planless/execute")
        assert response.status_code == 409
        assert "zero approved plans" in response.json()["detail"]

    def test_execute_reproduces_the_labeled_selection(self, client):
        labels = load_json("synthetic", "labels.json")
        create_gastric_run(client)
        approve(client, "gastric-run")
        response = client.post("/runs/gastric-run/execute")
        assert response.status_code == 200
        payload = response.json()
        assert payload["selected"] == labels["expected_selected"]
        assert payload["flow"] == labels["flow"]
        assert client.get("/runs/gastric-run").json()["state"] == "filtered"

        assert client.get("/runs/gastric-run/prisma").json() == labels["flow"]
        re_run = client.post("/runs/gastric-run/execute")
        assert re_run.status_code == 409

    def test_analysis_endpoints_gated_until_filtered(self, client):
        create_gastric_run(client)
        for call in (
            lambda: client.get("/runs/gastric-run/prisma"),
            lambda: client.get("/runs/gastric-run/trials"),
            lambda: client.post("/runs/gastric-run/weights", json={}),
            lambda: client.post("/runs/gastric-run/meta", json={}),
            lambda: client.get("/runs/gastric-run/sweep"),
        ):
            response = call()
            assert response.status_code == 409
            assert "draft" in response.json()["detail"]

    def test_audit_sequences_stay_contiguous_across_requests(self, client):
        create_gastric_run(client)
        client.put(
            "/runs/gastric-run/rules", json={"action": "edit", "rules": GASTRIC_RULE_TEXTS}
        )
        approve(client, "gastric-run")
        client.post("/runs/gastric-run/execute")
        events = client.get("/runs/gastric-run/audit").json()["events"]
        sequences = [event["sequence"] for event in events]
        assert sequences == list(range(1, len(sequences) + 1))
        assert events[0]["kind"] == "rule-created"
        actions = [
            event["payload"]["action"] for event in events if event["kind"] == "rule-edited"
        ]
        assert actions == ["edited", "approved"]

    def test_run_without_stored_penalties_409_on_weights(self, client):
        create_gastric_run(client)
        approve(client, "gastric-run")
        client.post("/runs/gastric-run/execute")

        bare = client.post("/runs/gastric-run/weights", json={})
        assert bare.status_code == 409
        assert "penalties" in bare.json()["detail"]

        supplied = client.post(
            "/runs/gastric-run/weights",
            json={"penalties": {"a": 0.0, "b": 1.0}, "pmax_total": 2.0},
        )
        assert supplied.status_code == 200

        no_total = client.post(
            "/runs/gastric-run/weights", json={"penalties": {"a": 0.0, "b": 1.0}}
        )
        assert no_total.status_code == 422
        assert no_total.json()["pointer"] == "/pmax_total"

    def test_meta_without_tables_409_until_supplied(self, client):
        create_gastric_run(client)
        approve(client, "gastric-run")
        client.post("/runs/gastric-run/execute")

        bare = client.post("/runs/gastric-run/meta", json={})
        assert bare.status_code == 409
        assert "tables" in bare.json()["detail"]

        rows = [
            {"study_id": "s1", "events_trt": 10, "total_trt": 50, "events_ctl": 5, "total_ctl": 50},
            {"study_id": "s2", "events_trt": 20, "total_trt": 80, "events_ctl": 9, "total_ctl": 80},
        ]
        supplied = client.post(
            "/runs/gastric-run/meta", json={"tables": rows, "weights": "uniform"}
        )
        assert supplied.status_code == 200
        assert supplied.json()["classical"]["theta_hat"] > 1


class TestValidation:
    def test_unknown_run_is_404_everywhere(self, client):
        for response in (
            client.get("/runs/nope"),
            client.get("/runs/nope/rules"),
            client.put("/runs/nope/rules", json={"action": "approve"}),
            client.post("/runs/nope/execute"),
            client.get("/runs/nope/prisma"),
            client.get("/runs/nope/trials"),
            client.post("/runs/nope/weights", json={}),
            client.post("/runs/nope/meta", json={}),
            client.get("/runs/nope/sweep"),
            client.get("/runs/nope/audit"),
        ):
            assert response.status_code == 404
            assert response.json() == {"detail": "unknown run: nope"}

    def test_duplicate_run_id_is_409(self, client):
        create_gastric_run(client)
        response = client.post(
            "/runs", json={"run_id": "gastric-run", "query": "q", "corpus": "synthetic"}
        )
        assert response.status_code == 409

    def test_create_schema_errors_carry_json_pointers(self, client):
        cases = [
            ({"corpus": "synthetic"}, "/query"),
            ({"query": "q", "corpus": "missing-corpus"}, "/corpus"),
            ({"query": "q", "corpus": "synthetic", "run_id": "Bad Id"}, "/run_id"),
            ({"query": "q", "corpus": "synthetic", "rules": []}, "/rules"),
            ({"query": "q", "corpus": "synthetic", "rules": ["ok", ""]}, "/rules/1"),
            (
                {"query": "q", "corpus": "synthetic", "rules": ["r"], "generate": True},
                "/generate",
            ),
            ({"query": "q", "corpus": "synthetic", "surprise": 1}, "/surprise"),
        ]
        for body, pointer in cases:
            response = client.post("/runs", json=body)
            assert response.status_code == 422, body
            assert response.json()["pointer"] == pointer

    def test_invalid_plan_document_pointer_is_rooted_at_plans(self, client):
        body = {
            "query": "q",
            "corpus": "synthetic",
            "plans": {"condition": "c", "treatment": "t", "plans": [{"filter_name": "x"}]},
        }
        response = client.post("/runs", json=body)
        assert response.status_code == 422
        assert response.json()["pointer"].startswith("/plans/plans/0")

    def test_rule_action_must_be_edit_or_approve(self, client):
        create_gastric_run(client)
        response = client.put("/runs/gastric-run/rules", json={"action": "delete"})
        assert response.status_code == 422
        assert response.json()["pointer"] == "/action"

    def test_weights_body_validation(self, client):
        bad_mode = client.post(f"/runs/{DEMO_RUN_ID}/weights", json={"pmax_mode": "bogus"})
        assert bad_mode.status_code == 422
        assert bad_mode.json()["pointer"] == "/pmax_mode"

        unknown = client.post(f"/runs/{DEMO_RUN_ID}/weights", json={"gama": 1})
        assert unknown.status_code == 422
        assert unknown.json()["pointer"] == "/gama"

        bad_weights = client.post(f"/runs/{DEMO_RUN_ID}/meta", json={"weights": "magic"})
        assert bad_weights.status_code == 422
        assert bad_weights.json()["pointer"] == "/weights"

    def test_non_object_body_is_422(self, client):
        response = client.post("/runs", json=[1, 2, 3])
        assert response.status_code == 422
        assert "detail" in response.json()


class TestGeneration:
    def test_generated_rules_and_plans_match_the_recorded_review(self, client):
        query = data_path("gastric", "query.txt").read_text(encoding="utf-8")
        body = {
            "run_id": "generated",
            "query": query,
            "corpus": "synthetic",
            "parser": f"replay:{data_path('gastric', 'generation_replay.json')}",
            "generate": True,
            "condition": "gastric or gastro-esophageal junction cancer",
            "treatment": "targeted therapy or immunotherapy",
        }
        response = client.post("/runs", json=body)
        assert response.status_code == 201
        doc = response.json()
        assert doc["state"] == "draft"

        shipped_rules = load_json("gastric", "rules.json")["rules"]
        assert [r["text"] for r in doc["rule_set"]["rules"]] == [
            r["text"] for r in shipped_rules
        ]
        assert doc["plan_set"]["plans"] == load_json("gastric", "plans.json")["plans"]


class TestPersistenceAndParity:
    def test_runs_survive_a_restart(self, config):
        first = TestClient(create_app(config))
        create_gastric_run(first)
        approve(first, "gastric-run")

        second = TestClient(create_app(config))
        runs = {row["run_id"]: row for row in second.get("/runs").json()["runs"]}
        assert set(runs) == {DEMO_RUN_ID, "gastric-run"}
        assert runs["gastric-run"]["state"] == "rules-approved"

    def test_demo_is_not_reseeded_over_existing_state(self, config):
        first = TestClient(create_app(config))
        first.post(f"/runs/{DEMO_RUN_ID}/meta", json={})
        assert first.get(f"/runs/{DEMO_RUN_ID}").json()["state"] == "analyzed"

        second = TestClient(create_app(config))
        assert second.get(f"/runs/{DEMO_RUN_ID}").json()["state"] == "analyzed"

    def test_meta_response_bytes_match_the_library_serializer(self, client):
        tables = load_tables_csv(data_path("olaparib", "tables.csv"))
        classical = pool_ew_mh(tables)
        expected = canonical_dumps(
            {
                "classical": estimate_to_jsonable(classical),
                "weighted": estimate_to_jsonable(classical),
                "weight_vector": None,
                "forest": forest_data(classical, classical),
            },
            indent=2,
        ).encode()
        response = client.post(f"/runs/{DEMO_RUN_ID}/meta", json={"weights": "uniform"})
        assert response.content == expected

    def test_prisma_response_bytes_match_the_stored_flow(self, client, config):
        response = client.get(f"/runs/{DEMO_RUN_ID}/prisma")
        stored = json.loads(
            (config.state_dir / DEMO_RUN_ID / "run.json").read_text(encoding="utf-8")
        )
        assert response.content == canonical_dumps(stored["flow"], indent=2).encode()

    def test_run_snapshot_file_is_canonical_json(self, client, config):
        doc = client.get(f"/runs/{DEMO_RUN_ID}").json()
        on_disk = (config.state_dir / DEMO_RUN_ID / "run.json").read_text(encoding="utf-8")
        assert on_disk == canonical_dumps(doc, indent=2) + "\n"

    def test_concurrent_mutations_serialize_per_run(self, client):
        errors = []

        def hammer():
            try:
                for _ in range(5):
                    assert client.post(f"/runs/{DEMO_RUN_ID}/weights", json={}).status_code == 200
            except Exception as exc:  # noqa: BLE001 - surface to the main thread
                errors.append(exc)

        threads = [threading.Thread(target=hammer) for _ in range(4)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert errors == []

        events = client.get(f"/runs/{DEMO_RUN_ID}/audit").json()["events"]
        sequences = [event["sequence"] for event in events]
        assert sequences == list(range(1, len(sequences) + 1))
        assert sum(1 for event in events if event["kind"] == "weights") == 20

    def test_cors_headers_follow_configuration(self, tmp_path):
        origin = "http://localhost:5173"
        open_config = ServiceConfig(state_dir=tmp_path / "a", cors_origins=(origin,))
        with_cors = TestClient(create_app(open_config)).get("/runs", headers={"Origin": origin})
        assert with_cors.headers.get("access-control-allow-origin") == origin

        closed = TestClient(create_app(ServiceConfig(state_dir=tmp_path / "b")))
        without = closed.get("/runs", headers={"Origin": origin})
        assert "access-control-allow-origin" not in without.headers

    def test_states_are_the_documented_ladder(self):
        assert RUN_STATES == ("draft", "rules-approved", "filtered", "analyzed")
