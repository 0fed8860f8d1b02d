"""HTTP JSON API over persisted runs: rule review, execution, weighting, pooling.

Runs live in per-run directories under a state directory: ``run.json`` holds the
current snapshot (rewritten atomically) and ``audit.jsonl`` grows append-only.
A run advances monotonically through the states draft, rules-approved,
filtered, analyzed; analysis endpoints require at least the filtered state.

Errors: 404 for unknown runs, 409 for requests the run's state or
configuration cannot satisfy, 422 for malformed documents (with a JSON
pointer to the offending node where one exists).  Every response body is
rendered by the same canonical serializer the library and CLI use, so a
payload fetched over HTTP is byte-identical to the library call's output.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from fastapi import Body, FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware

from . import __version__
from .assets import data_path
from .druglib import DrugLibrary
from .eligibility import evaluate_penalties, load_criteria_file, load_penalty_rules
from .eligibility import severity_total as rules_severity_total
from .errors import (
    ConfigurationError,
    EstimationError,
    GenerationError,
    IngestError,
    InputError,
    SchemaError,
)
from .extraction import load_parser
from .meta import (
    estimate_to_jsonable,
    forest_data,
    load_tables_csv,
    pool_ew_mh,
    sensitivity_sweep,
    sweep_to_jsonable,
    tables_from_jsonable,
    tables_to_jsonable,
)
from .pipeline import (
    AuditLog,
    approve_rule_set,
    edit_rule_set,
    event_to_jsonable,
    flow_to_jsonable,
    generate_plan,
    generate_rules,
    new_rule_set,
    rule_set_from_jsonable,
    rule_set_to_jsonable,
    run_pipeline,
    summaries_to_jsonable,
    summarize_selected,
)
from .plans import MembershipLibrary, validate_plan_set
from .serialize import canonical_dumps
from .trials import corpus_from_jsonable, ingest_registry_dump
from .weights import PmaxMode, WeightParams, compute_weights, vector_to_jsonable

logger = logging.getLogger(__name__)

RUN_STATES = ("draft", "rules-approved", "filtered", "analyzed")

DEMO_RUN_ID = "olaparib-demo"

_RUN_ID_RE = re.compile(r"[a-z0-9][a-z0-9_-]{0,63}")

_PACKAGED_CORPORA = {
    "olaparib": ("olaparib", "corpus.json"),
    "synthetic": ("synthetic", "corpus.json"),
}


@dataclass(frozen=True)
class ServiceConfig:
    state_dir: Path
    parser_spec: str = "reference"
    cors_origins: tuple[str, ...] = ()
    corpus_root: Path | None = None


class ApiError(Exception):
    """An HTTP-visible failure with a canonical JSON body."""

    def __init__(self, status: int, detail: str, pointer: str | None = None):
        super().__init__(detail)
        self.status = status
        self.payload = {"detail": detail}
        if pointer is not None:
            self.payload["pointer"] = pointer


def _json_response(payload, status_code: int = 200) -> Response:
    return Response(
        content=canonical_dumps(payload, indent=2),
        status_code=status_code,
        media_type="application/json",
    )


# ---------------------------------------------------------------------------
# Run persistence
# ---------------------------------------------------------------------------


class RunStore:
    """Per-run directories under a root; snapshots replaced atomically.

    ``run.json`` rewrites go through a temp file and ``os.replace``, so a
    concurrent reader sees either the prior or the new snapshot, never a
    partial write.  ``audit.jsonl`` is append-only.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()

    def lock(self, run_id: str) -> threading.Lock:
        with self._registry_lock:
            return self._locks.setdefault(run_id, threading.Lock())

    def run_dir(self, run_id: str) -> Path:
        return self.root / run_id

    def exists(self, run_id: str) -> bool:
        return (self.run_dir(run_id) / "run.json").exists()

    def load(self, run_id: str) -> dict:
        path = self.run_dir(run_id) / "run.json"
        if not path.exists():
            raise ApiError(404, f"unknown run: {run_id}")
        return json.loads(path.read_text(encoding="utf-8"))

    def save(self, doc: dict) -> None:
        run_dir = self.run_dir(doc["run_id"])
        run_dir.mkdir(parents=True, exist_ok=True)
        tmp = run_dir / "run.json.tmp"
        tmp.write_text(canonical_dumps(doc, indent=2) + "\n", encoding="utf-8")
        tmp.replace(run_dir / "run.json")

    def append_audit(self, run_id: str, events) -> None:
        if not events:
            return
        lines = "".join(canonical_dumps(event_to_jsonable(e)) + "\n" for e in events)
        with open(self.run_dir(run_id) / "audit.jsonl", "a", encoding="utf-8") as handle:
            handle.write(lines)

    def read_audit(self, run_id: str) -> list[dict]:
        path = self.run_dir(run_id) / "audit.jsonl"
        if not path.exists():
            return []
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line]

    def list_runs(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(p.name for p in self.root.iterdir() if (p / "run.json").exists())


def _state_index(state: str) -> int:
    return RUN_STATES.index(state)


def _require_state_at_least(doc: dict, state: str) -> None:
    if _state_index(doc["state"]) < _state_index(state):
        raise ApiError(
            409,
            f"run {doc['run_id']!r} is in state {doc['state']!r}; "
            f"this endpoint requires state {state!r} or later",
        )


def _advance_state(doc: dict, state: str) -> None:
    if _state_index(state) > _state_index(doc["state"]):
        doc["state"] = state


def _next_sequence(audit: AuditLog, fallback: int) -> int:
    if audit.events:
        return audit.events[-1].sequence + 1
    return fallback


# ---------------------------------------------------------------------------
# Request-body helpers
# ---------------------------------------------------------------------------


def _check_fields(body: dict, allowed: set[str]) -> None:
    unknown = sorted(set(body) - allowed)
    if unknown:
        raise SchemaError(f"unknown field: {unknown[0]}", f"/{unknown[0]}")


def _required_text(body: dict, key: str) -> str:
    value = body.get(key)
    if not isinstance(value, str) or not value.strip():
        raise SchemaError(f"{key} must be non-empty text", f"/{key}")
    return value.strip()


def _number(value, pointer: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError("expected a number", pointer)
    return float(value)


def _optional_number(body: dict, key: str, default: float | None) -> float | None:
    if key not in body or body[key] is None:
        return default
    return _number(body[key], f"/{key}")


def _rule_texts(value, pointer: str) -> list[str]:
    if not isinstance(value, list) or not value:
        raise SchemaError("expected a non-empty array of rule texts", pointer)
    texts = []
    for i, item in enumerate(value):
        if not isinstance(item, str) or not item.strip():
            raise SchemaError("rule text must be non-empty", f"{pointer}/{i}")
        texts.append(item.strip())
    return texts


def _penalty_map(value, pointer: str) -> dict[str, float]:
    if not isinstance(value, dict) or not value:
        raise SchemaError("expected a study_id to penalty map", pointer)
    return {k: _number(v, f"{pointer}/{k}") for k, v in value.items()}


def _validated_plan_document(raw, pointer: str) -> dict:
    if not isinstance(raw, dict):
        raise SchemaError("plan set must be a JSON object", pointer)
    try:
        validate_plan_set(raw)
    except SchemaError as exc:
        raise SchemaError(exc.detail, pointer + exc.pointer) from None
    return raw


def _floats_param(text: str, name: str) -> list[float]:
    values = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            values.append(float(part))
        except ValueError:
            raise SchemaError(f"{part!r} is not a number", f"/{name}") from None
    if not values:
        raise SchemaError("expected at least one number", f"/{name}")
    return values


def _pmax_mode(value, pointer: str) -> PmaxMode:
    try:
        return PmaxMode.from_string(value)
    except (ValueError, AttributeError, TypeError):
        raise SchemaError(f"unknown pmax mode: {value!r}", pointer) from None


# ---------------------------------------------------------------------------
# Corpus and membership resolution
# ---------------------------------------------------------------------------


def _resolve_corpus_path(ref: str, config: ServiceConfig) -> Path:
    if ref in _PACKAGED_CORPORA:
        return data_path(*_PACKAGED_CORPORA[ref])
    if config.corpus_root is not None:
        candidate = config.corpus_root / Path(ref).name
        if candidate.exists():
            return candidate
    raise SchemaError(f"unknown corpus: {ref}", "/corpus")


def _load_corpus(ref: str, config: ServiceConfig):
    raw = _resolve_corpus_path(ref, config).read_text(encoding="utf-8")
    data = json.loads(raw)
    if isinstance(data, list):
        corpus, report = ingest_registry_dump(raw, source_tag=ref)
        if report.rejected:
            raise InputError(f"corpus {ref}: {len(report.rejected)} records failed ingest")
        return corpus
    return corpus_from_jsonable(data)


def _membership_library(doc: dict) -> MembershipLibrary | None:
    specs = doc.get("lists") or {}
    if not specs:
        return None
    library = MembershipLibrary()
    for name, spec in specs.items():
        drug_library = DrugLibrary.load(data_path("druglists", f"{spec['file']}.json"))
        drug_list = drug_library.lookup(spec["key"])
        if drug_list is None:
            raise ConfigurationError(f"membership list {name!r}: no drug list for {spec['key']!r}")
        library.register(name, drug_list)
    return library


def _list_specs(value, pointer: str) -> dict:
    if not isinstance(value, dict):
        raise SchemaError("expected a name to {file, key} map", pointer)
    specs = {}
    for name, spec in value.items():
        if not isinstance(spec, dict) or set(spec) != {"file", "key"}:
            raise SchemaError("expected {file, key}", f"{pointer}/{name}")
        specs[name] = {"file": str(spec["file"]), "key": str(spec["key"])}
    return specs


# ---------------------------------------------------------------------------
# Weight/meta computation over a run snapshot
# ---------------------------------------------------------------------------


def _penalty_pairs(doc: dict, body: dict) -> list[tuple[str, float]]:
    """Penalties in pooling order: the run's table order when tables exist."""
    if "penalties" in body and body["penalties"] is not None:
        if isinstance(body["penalties"], list):
            ids = body.get("ids")
            if ids is None and doc.get("tables"):
                ids = [row["study_id"] for row in doc["tables"]]
            if not isinstance(ids, list) or len(ids) != len(body["penalties"]):
                raise SchemaError(
                    "penalty array needs matching ids (or run tables)", "/penalties"
                )
            values = [_number(v, f"/penalties/{i}") for i, v in enumerate(body["penalties"])]
            return list(zip([str(i) for i in ids], values))
        penalties = _penalty_map(body["penalties"], "/penalties")
    else:
        penalties = doc.get("penalties")
        if not penalties:
            raise ApiError(409, f"run {doc['run_id']!r} has no stored penalties")
    if doc.get("tables"):
        table_ids = [row["study_id"] for row in doc["tables"]]
        missing = [i for i in table_ids if i not in penalties]
        if missing:
            raise SchemaError(f"no penalty for study {missing[0]!r}", "/penalties")
        return [(i, float(penalties[i])) for i in table_ids]
    return [(i, float(penalties[i])) for i in sorted(penalties)]


def _weight_request(doc: dict, body: dict) -> tuple[list[tuple[str, float]], WeightParams, float | None]:
    pairs = _penalty_pairs(doc, body)
    mode = _pmax_mode(body.get("pmax_mode", "attainable"), "/pmax_mode")
    explicit = _optional_number(body, "explicit_pmax", None)
    params = WeightParams(
        gamma=_optional_number(body, "gamma", 0.5),
        floor=_optional_number(body, "floor", 20.0),
        pmax_mode=mode,
        explicit_pmax=explicit,
    )
    total = _optional_number(body, "pmax_total", doc.get("severity_total"))
    if mode is PmaxMode.ATTAINABLE and explicit is None and total is None:
        raise SchemaError(
            "attainable pmax needs pmax_total (or a run severity_total)", "/pmax_total"
        )
    return pairs, params, total


def _run_tables(doc: dict, body: dict):
    if "tables" in body and body["tables"] is not None:
        if not isinstance(body["tables"], list) or not body["tables"]:
            raise SchemaError("expected a non-empty array of 2x2 count rows", "/tables")
        try:
            return tables_from_jsonable(body["tables"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"bad table row: {exc}", "/tables") from None
    if doc.get("tables"):
        return tables_from_jsonable(doc["tables"])
    raise ApiError(409, f"run {doc['run_id']!r} has no stored 2x2 tables")


# ---------------------------------------------------------------------------
# Demo run
# ---------------------------------------------------------------------------

DEMO_RULE_TEXTS = [
    "Include only trials evaluating maintenance olaparib after platinum-based chemotherapy.",
    "Include only randomized trials with a comparator arm.",
]


def seed_demo_run(store: RunStore, config: ServiceConfig) -> None:
    """Create the bundled demo run if missing: executed and ready for analysis."""
    if store.exists(DEMO_RUN_ID):
        return
    with store.lock(DEMO_RUN_ID):
        if store.exists(DEMO_RUN_ID):
            return
        plan_document = json.loads(data_path("olaparib", "plans.json").read_text(encoding="utf-8"))
        plan_set = validate_plan_set(plan_document)
        corpus = _load_corpus("olaparib", config)
        parser_spec = f"replay:{data_path('olaparib', 'replay.json')}"
        parser = load_parser(parser_spec)

        rules = load_penalty_rules(data_path("olaparib", "penalty_rules.json"))
        criteria = load_criteria_file(data_path("olaparib", "criteria.json"))
        penalties = {
            nct_id: evaluate_penalties(rules, rows, trial_id=nct_id).total
            for nct_id, rows in criteria.items()
        }
        tables = load_tables_csv(data_path("olaparib", "tables.csv"))

        audit = AuditLog(DEMO_RUN_ID)
        rule_set = approve_rule_set(new_rule_set(DEMO_RULE_TEXTS, audit), audit)
        result = run_pipeline(
            corpus,
            plan_set.plans,
            parser,
            rule_set=rule_set,
            run_id=DEMO_RUN_ID,
            audit=audit,
        )
        summaries = summarize_selected(result.selected, parser)

        doc = {
            "run_id": DEMO_RUN_ID,
            "query": f"{plan_set.treatment} for {plan_set.condition}",
            "corpus_ref": "olaparib",
            "parser_spec": parser_spec,
            "state": "filtered",
            "rule_set": rule_set_to_jsonable(rule_set),
            "plan_set": plan_document,
            "lists": {},
            "flow": flow_to_jsonable(result.flow),
            "selected": result.selected.ids(),
            "summaries": summaries_to_jsonable(summaries),
            "tables": tables_to_jsonable(tables),
            "penalties": penalties,
            "severity_total": rules_severity_total(rules),
            "weight_params": None,
            "estimates": None,
            "audit_sequence": _next_sequence(audit, 1),
        }
        store.save(doc)
        store.append_audit(DEMO_RUN_ID, audit.events)
        logger.info("seeded demo run %r (%d trials selected)", DEMO_RUN_ID, len(doc["selected"]))


# ---------------------------------------------------------------------------
# Application factory
# ---------------------------------------------------------------------------


def _run_view(doc: dict) -> dict:
    return doc


def _run_listing(doc: dict) -> dict:
    rule_set = doc.get("rule_set") or {}
    return {
        "run_id": doc["run_id"],
        "state": doc["state"],
        "query": doc["query"],
        "corpus_ref": doc["corpus_ref"],
        "revision": rule_set.get("revision", 0),
    }


def create_app(config: ServiceConfig) -> FastAPI:
    app = FastAPI(title="metasieve", version=__version__)
    store = RunStore(config.state_dir)
    seed_demo_run(store, config)

    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    @app.exception_handler(ApiError)
    def _api_error(request: Request, exc: ApiError) -> Response:
        return _json_response(exc.payload, exc.status)

    @app.exception_handler(SchemaError)
    def _schema_error(request: Request, exc: SchemaError) -> Response:
        return _json_response({"detail": exc.detail, "pointer": exc.pointer}, 422)

    @app.exception_handler(RequestValidationError)
    def _request_error(request: Request, exc: RequestValidationError) -> Response:
        first = exc.errors()[0] if exc.errors() else {"msg": "invalid request", "loc": ()}
        pointer = "/" + "/".join(str(p) for p in first.get("loc", ()) if p != "body")
        return _json_response({"detail": first.get("msg", "invalid request"), "pointer": pointer}, 422)

    @app.exception_handler(ConfigurationError)
    def _configuration_error(request: Request, exc: ConfigurationError) -> Response:
        return _json_response({"detail": str(exc)}, 409)

    for input_error in (InputError, IngestError, EstimationError, GenerationError):

        @app.exception_handler(input_error)
        def _input_error(request: Request, exc: Exception) -> Response:
            return _json_response({"detail": str(exc)}, 422)

    @app.get("/runs")
    def list_runs() -> Response:
        return _json_response({"runs": [_run_listing(store.load(r)) for r in store.list_runs()]})

    @app.post("/runs")
    def create_run(body: dict = Body(...)) -> Response:
        body = {key: value for key, value in body.items() if value is not None}
        _check_fields(
            body,
            {
                "run_id",
                "query",
                "corpus",
                "parser",
                "rules",
                "generate",
                "plans",
                "lists",
                "tables",
                "penalties",
                "severity_total",
                "condition",
                "treatment",
            },
        )
        query = body.get("query")
        if not isinstance(query, str) or not query.strip():
            raise SchemaError("query must be non-empty text", "/query")
        corpus_ref = _required_text(body, "corpus")
        _resolve_corpus_path(corpus_ref, config)

        run_id = body.get("run_id") or f"run-{len(store.list_runs()) + 1:04d}"
        if not isinstance(run_id, str) or not _RUN_ID_RE.fullmatch(run_id):
            raise SchemaError(
                "run_id must be lowercase letters, digits, '-' or '_'", "/run_id"
            )

        parser_spec = body.get("parser") or config.parser_spec
        if not isinstance(parser_spec, str):
            raise SchemaError("parser must be a spec string", "/parser")

        generate = bool(body.get("generate", False))
        if generate and "rules" in body:
            raise SchemaError("provide either rules or generate, not both", "/generate")

        with store.lock(run_id):
            if store.exists(run_id):
                raise ApiError(409, f"run {run_id!r} already exists")

            audit = AuditLog(run_id)
            rule_set = None
            plan_document = None
            if "rules" in body:
                rule_set = new_rule_set(_rule_texts(body["rules"], "/rules"), audit)
            if generate:
                generator = load_parser(parser_spec)
                rule_set = generate_rules(query, generator, audit)
                plan_document = {
                    "condition": body.get("condition", query),
                    "treatment": body.get("treatment", query),
                    "plans": [generate_plan(rule.text, generator) for rule in rule_set.rules],
                }
                plan_document = _validated_plan_document(plan_document, "/plans")
            if "plans" in body:
                plan_document = _validated_plan_document(body["plans"], "/plans")

            doc = {
                "run_id": run_id,
                "query": query,
                "corpus_ref": corpus_ref,
                "parser_spec": parser_spec,
                "state": "draft",
                "rule_set": rule_set_to_jsonable(rule_set) if rule_set else None,
                "plan_set": plan_document,
                "lists": _list_specs(body["lists"], "/lists") if "lists" in body else {},
                "flow": None,
                "selected": None,
                "summaries": None,
                "tables": body.get("tables"),
                "penalties": _penalty_map(body["penalties"], "/penalties")
                if "penalties" in body
                else None,
                "severity_total": _optional_number(body, "severity_total", None),
                "weight_params": None,
                "estimates": None,
                "audit_sequence": _next_sequence(audit, 1),
            }
            if doc["tables"] is not None:
                doc["tables"] = tables_to_jsonable(_run_tables({"run_id": run_id}, body))
            store.save(doc)
            store.append_audit(run_id, audit.events)
        return _json_response(_run_view(doc), 201)

    @app.get("/runs/{run_id}")
    def get_run(run_id: str) -> Response:
        return _json_response(_run_view(store.load(run_id)))

    @app.get("/runs/{run_id}/rules")
    def get_rules(run_id: str) -> Response:
        doc = store.load(run_id)
        rule_set = doc.get("rule_set") or {"revision": 0, "status": "draft", "rules": []}
        return _json_response(rule_set)

    @app.put("/runs/{run_id}/rules")
    def put_rules(run_id: str, body: dict = Body(...)) -> Response:
        _check_fields(body, {"action", "rules"})
        action = body.get("action")
        if action not in ("edit", "approve"):
            raise SchemaError("action must be 'edit' or 'approve'", "/action")
        with store.lock(run_id):
            doc = store.load(run_id)
            if doc["state"] != "draft":
                raise ApiError(
                    409,
                    f"rules are frozen once approved; run {run_id!r} is in state "
                    f"{doc['state']!r}",
                )
            audit = AuditLog(run_id, start_sequence=doc["audit_sequence"])
            if action == "edit":
                texts = _rule_texts(body.get("rules"), "/rules")
                if doc.get("rule_set"):
                    rule_set = edit_rule_set(rule_set_from_jsonable(doc["rule_set"]), texts, audit)
                else:
                    rule_set = new_rule_set(texts, audit)
            else:
                if "rules" in body:
                    raise SchemaError("approve takes no rule texts", "/rules")
                if not doc.get("rule_set"):
                    raise ApiError(409, f"run {run_id!r} has no rules to approve")
                rule_set = approve_rule_set(rule_set_from_jsonable(doc["rule_set"]), audit)
                _advance_state(doc, "rules-approved")
            doc["rule_set"] = rule_set_to_jsonable(rule_set)
            doc["audit_sequence"] = _next_sequence(audit, doc["audit_sequence"])
            store.save(doc)
            store.append_audit(run_id, audit.events)
        return _json_response(doc["rule_set"])

    @app.post("/runs/{run_id}/execute")
    def execute(run_id: str) -> Response:
        with store.lock(run_id):
            doc = store.load(run_id)
            if doc["state"] != "rules-approved":
                raise ApiError(
                    409,
                    f"execute requires state 'rules-approved'; run {run_id!r} is in "
                    f"state {doc['state']!r}",
                )
            plan_document = doc.get("plan_set")
            if not plan_document or not plan_document.get("plans"):
                raise ApiError(409, f"run {run_id!r} has zero approved plans")
            plan_set = validate_plan_set(plan_document)
            corpus = _load_corpus(doc["corpus_ref"], config)
            parser = load_parser(doc["parser_spec"])
            audit = AuditLog(run_id, start_sequence=doc["audit_sequence"])
            result = run_pipeline(
                corpus,
                plan_set.plans,
                parser,
                lists=_membership_library(doc),
                rule_set=rule_set_from_jsonable(doc["rule_set"]),
                run_id=run_id,
                audit=audit,
            )
            summaries = summarize_selected(result.selected, parser)
            doc["flow"] = flow_to_jsonable(result.flow)
            doc["selected"] = result.selected.ids()
            doc["summaries"] = summaries_to_jsonable(summaries)
            doc["audit_sequence"] = _next_sequence(audit, doc["audit_sequence"])
            _advance_state(doc, "filtered")
            store.save(doc)
            store.append_audit(run_id, audit.events)
        return _json_response(
            {"flow": doc["flow"], "selected": doc["selected"], "summaries": doc["summaries"]}
        )

    @app.get("/runs/{run_id}/prisma")
    def get_prisma(run_id: str) -> Response:
        doc = store.load(run_id)
        _require_state_at_least(doc, "filtered")
        return _json_response(doc["flow"])

    @app.get("/runs/{run_id}/trials")
    def get_trials(run_id: str) -> Response:
        doc = store.load(run_id)
        _require_state_at_least(doc, "filtered")
        return _json_response({"selected": doc["selected"], "summaries": doc["summaries"]})

    @app.post("/runs/{run_id}/weights")
    def post_weights(run_id: str, body: dict | None = Body(default=None)) -> Response:
        body = body or {}
        _check_fields(
            body,
            {"penalties", "ids", "gamma", "floor", "pmax_mode", "pmax_total", "explicit_pmax"},
        )
        with store.lock(run_id):
            doc = store.load(run_id)
            _require_state_at_least(doc, "filtered")
            pairs, params, total = _weight_request(doc, body)
            vector = compute_weights(pairs, params, total)
            payload = vector_to_jsonable(vector)
            audit = AuditLog(run_id, start_sequence=doc["audit_sequence"])
            audit.record(
                "weights",
                {
                    "gamma": vector.gamma,
                    "floor": vector.floor,
                    "pmax_mode": vector.pmax_mode,
                    "pmax": vector.pmax,
                    "weights": vector.by_id(),
                },
            )
            doc["weight_params"] = {
                "gamma": vector.gamma,
                "floor": vector.floor,
                "pmax_mode": vector.pmax_mode,
                "pmax": vector.pmax,
            }
            doc["audit_sequence"] = _next_sequence(audit, doc["audit_sequence"])
            store.save(doc)
            store.append_audit(run_id, audit.events)
        return _json_response(payload)

    @app.post("/runs/{run_id}/meta")
    def post_meta(run_id: str, body: dict | None = Body(default=None)) -> Response:
        body = body or {}
        _check_fields(
            body,
            {
                "tables",
                "weights",
                "penalties",
                "ids",
                "gamma",
                "floor",
                "pmax_mode",
                "pmax_total",
                "explicit_pmax",
                "level",
                "correct_zeros",
            },
        )
        level = _optional_number(body, "level", 0.95)
        correct = bool(body.get("correct_zeros", False))
        with store.lock(run_id):
            doc = store.load(run_id)
            _require_state_at_least(doc, "filtered")
            tables = _run_tables(doc, body)
            classical = pool_ew_mh(tables, None, level=level, continuity_correction=correct)
            weights_spec = body.get("weights")
            vector = None
            if isinstance(weights_spec, dict):
                weighted = pool_ew_mh(
                    tables,
                    {k: _number(v, f"/weights/{k}") for k, v in weights_spec.items()},
                    level=level,
                    continuity_correction=correct,
                )
            elif weights_spec == "uniform":
                weighted = classical
            elif weights_spec is None:
                pairs, params, total = _weight_request(doc, body)
                vector = compute_weights(pairs, params, total)
                weighted = pool_ew_mh(tables, vector, level=level, continuity_correction=correct)
            else:
                raise SchemaError("weights must be a map, 'uniform', or omitted", "/weights")
            payload = {
                "classical": estimate_to_jsonable(classical),
                "weighted": estimate_to_jsonable(weighted),
                "weight_vector": vector_to_jsonable(vector) if vector is not None else None,
                "forest": forest_data(classical, weighted),
            }
            audit = AuditLog(run_id, start_sequence=doc["audit_sequence"])
            audit.record(
                "estimate",
                {
                    "classical_theta": classical.theta_hat,
                    "weighted_theta": weighted.theta_hat,
                    "level": level,
                },
            )
            doc["estimates"] = {
                "classical": payload["classical"],
                "weighted": payload["weighted"],
            }
            doc["audit_sequence"] = _next_sequence(audit, doc["audit_sequence"])
            _advance_state(doc, "analyzed")
            store.save(doc)
            store.append_audit(run_id, audit.events)
        return _json_response(payload)

    @app.get("/runs/{run_id}/sweep")
    def get_sweep(
        run_id: str,
        gammas: str = "0.25,0.5,1.0,2.0",
        floors: str = "10,20,50,100",
        modes: str = "attainable",
        pmax_total: float | None = None,
        level: float = 0.95,
    ) -> Response:
        doc = store.load(run_id)
        _require_state_at_least(doc, "filtered")
        tables = _run_tables(doc, {})
        pairs = _penalty_pairs(doc, {})
        total = pmax_total if pmax_total is not None else doc.get("severity_total")
        mode_names = [m.strip() for m in modes.split(",") if m.strip()]
        if any(_pmax_mode(m, "/modes") is PmaxMode.ATTAINABLE for m in mode_names) and total is None:
            raise SchemaError("attainable pmax needs pmax_total", "/pmax_total")
        rows = sensitivity_sweep(
            tables,
            pairs,
            gammas=_floats_param(gammas, "gammas"),
            floors=_floats_param(floors, "floors"),
            modes=mode_names,
            rule_severity_total=total,
            level=level,
        )
        return _json_response(sweep_to_jsonable(rows))

    @app.get("/runs/{run_id}/audit")
    def get_audit(run_id: str) -> Response:
        store.load(run_id)
        return _json_response({"events": store.read_audit(run_id)})

    return app
