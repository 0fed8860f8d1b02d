"""Command-line front door: every pipeline stage, headless and scriptable.

Exit codes: 0 success, 2 input or schema problem, 3 configuration or
estimation problem.  Stdout is byte-stable for identical inputs and flags;
anything time-dependent stays in artifacts or verbose logs.
"""

import functools
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__
from .druglib import DrugLibrary
from .eligibility import (
    criteria_to_jsonable,
    evaluate_penalties,
    load_criteria_file,
    load_penalty_rules,
    severity_total,
    structure_criteria,
)
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
)
from .pipeline import (
    flow_to_jsonable,
    render_flow_table,
    rule_set_from_jsonable,
    run_pipeline,
    summaries_to_csv,
    summaries_to_jsonable,
    summarize_selected,
    write_audit_log,
)
from .plans import MembershipLibrary, validate_plan_set
from .serialize import canonical_dumps, write_json
from .simulate import consistency_curve, is_strictly_decreasing
from .trials import (
    DEFAULT_STATUS_ALLOWLIST,
    Corpus,
    corpus_from_jsonable,
    corpus_to_jsonable,
    ingest_registry_dump,
)
from .trials import prefilter as run_prefilter
from .weights import PmaxMode, WeightParams, compute_weights, vector_to_jsonable

logger = logging.getLogger(__name__)

_INPUT_ERRORS = (IngestError, SchemaError, InputError)
_RUNTIME_ERRORS = (ConfigurationError, EstimationError, GenerationError)

_IN_PATH = click.Path(exists=True, dir_okay=False, path_type=Path)
_OUT_PATH = click.Path(dir_okay=False, path_type=Path)


def _guarded(fn):
    """Map domain errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _INPUT_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except _RUNTIME_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(3)

    return wrapper


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})") from exc


def _load_corpus(path: Path) -> Corpus:
    """Accept either a canonical corpus document or a raw registry dump array."""
    data = _read_json(path)
    if isinstance(data, list):
        corpus, report = ingest_registry_dump(json.dumps(data), source_tag=str(path))
        if report.rejected:
            raise InputError(
                f"{path}: {len(report.rejected)} studies rejected during ingest"
            )
        return corpus
    return corpus_from_jsonable(data)


def _emit(payload) -> None:
    click.echo(canonical_dumps(payload, indent=2))


def _parse_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise InputError(f"{flag} must be comma-separated numbers, got {text!r}") from exc


def _weight_params(gamma: float, floor: float, pmax: str) -> tuple[WeightParams, float | None]:
    """Decode --pmax: 'attainable[:TOTAL]', 'observed', or an explicit number."""
    total = None
    mode, _, arg = pmax.partition(":")
    if mode == "attainable":
        if arg:
            total = float(_parse_floats(arg, "--pmax")[0])
        return WeightParams(gamma=gamma, floor=floor, pmax_mode=PmaxMode.ATTAINABLE), total
    if mode == "observed":
        return WeightParams(gamma=gamma, floor=floor, pmax_mode=PmaxMode.OBSERVED), None
    try:
        explicit = float(pmax)
    except ValueError:
        raise InputError(
            f"--pmax must be attainable[:TOTAL], observed, or a number, got {pmax!r}"
        ) from None
    return WeightParams(gamma=gamma, floor=floor, explicit_pmax=explicit), None


def _resolve_weights(tables, weights_spec: str, gamma: float, floor: float, pmax: str):
    """Decode --weights: uniform, file:PATH (id→weight map), or penalties:LIST."""
    if weights_spec == "uniform":
        return None
    kind, _, arg = weights_spec.partition(":")
    if kind == "file" and arg:
        mapping = _read_json(Path(arg))
        if not isinstance(mapping, dict):
            raise InputError("--weights file must contain a study_id→weight JSON map")
        return {str(k): float(v) for k, v in mapping.items()}
    if kind == "penalties" and arg:
        values = _parse_floats(arg, "--weights penalties")
        if len(values) != len(tables):
            raise InputError(
                f"{len(values)} penalties given for {len(tables)} tables"
            )
        params, total = _weight_params(gamma, floor, pmax)
        pairs = [(t.study_id, p) for t, p in zip(tables, values)]
        return compute_weights(pairs, params, total)
    raise InputError(
        f"--weights must be uniform, file:PATH or penalties:LIST, got {weights_spec!r}"
    )


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="metasieve")
@click.option("--verbose", is_flag=True, help="Enable debug logging on stderr.")
def cli(verbose: bool) -> None:
    """Screen trial registries, score eligibility mismatch, and pool risk ratios."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr
    )


@cli.command()
@click.argument("dump", type=_IN_PATH)
@click.option("-o", "--out", type=_OUT_PATH, required=True, help="Canonical corpus output path.")
@click.option("--source-tag", default="", help="Provenance tag stored on the corpus.")
@_guarded
def ingest(dump: Path, out: Path, source_tag: str) -> None:
    """Parse a registry dump (JSON study array) into a canonical corpus file."""
    corpus, report = ingest_registry_dump(dump.read_bytes(), source_tag=source_tag)
    write_json(out, corpus_to_jsonable(corpus))
    _emit(
        {
            "total_studies": report.total_studies,
            "ingested": report.ingested,
            "rejected": report.rejected,
            "out": str(out),
        }
    )


@cli.command()
@click.argument("corpus_file", type=_IN_PATH)
@click.option(
    "--status",
    "statuses",
    multiple=True,
    help="Allowed overall status (repeatable; default: COMPLETED, ACTIVE_NOT_RECRUITING).",
)
@click.option("-o", "--out", type=_OUT_PATH, default=None, help="Write retained trials here.")
@_guarded
def prefilter(corpus_file: Path, statuses: tuple[str, ...], out: Path | None) -> None:
    """Apply registry-level screens and report per-bucket removal counts."""
    corpus = _load_corpus(corpus_file)
    allowlist = frozenset(statuses) if statuses else DEFAULT_STATUS_ALLOWLIST
    kept, report = run_prefilter(corpus, allowlist)
    if out is not None:
        write_json(out, corpus_to_jsonable(kept))
    _emit(
        {
            "input_count": report.input_count,
            "retained": report.retained,
            "removed": report.removed,
        }
    )


@cli.command("plan-validate")
@click.argument("plans_file", type=_IN_PATH)
@_guarded
def plan_validate(plans_file: Path) -> None:
    """Check a plan-set document; invalid documents exit 2 with a pointer message."""
    plan_set = validate_plan_set(_read_json(plans_file))
    _emit({"valid": True, "plans": [p.filter_name for p in plan_set.plans]})


@cli.command("filter")
@click.option("--corpus", "corpus_file", type=_IN_PATH, required=True)
@click.option("--plans", "plans_file", type=_IN_PATH, required=True)
@click.option(
    "--parser",
    "parser_spec",
    default="reference",
    show_default=True,
    help="Extraction backend: reference, replay:PATH or remote:CONFIG.",
)
@click.option("--druglib", "druglib_file", type=_IN_PATH, default=None, help="Drug library file.")
@click.option(
    "--list",
    "list_specs",
    multiple=True,
    help="NAME=KEY: register membership list NAME from the drug library entry KEY.",
)
@click.option("--rules", "rules_file", type=_IN_PATH, default=None, help="Approved rule-set document.")
@click.option("--run-id", default="cli", show_default=True)
@click.option(
    "--out",
    "out_dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Directory for selected.json, flow.json, audit.jsonl and summary artifacts.",
)
@click.option("--summaries", is_flag=True, help="Also extract summary rows for selected trials.")
@click.option("--table", "as_table", is_flag=True, help="Print the flow as a table instead of JSON.")
@_guarded
def filter_command(
    corpus_file: Path,
    plans_file: Path,
    parser_spec: str,
    druglib_file: Path | None,
    list_specs: tuple[str, ...],
    rules_file: Path | None,
    run_id: str,
    out_dir: Path | None,
    summaries: bool,
    as_table: bool,
) -> None:
    """Run the staged filtering pipeline over a corpus."""
    corpus = _load_corpus(corpus_file)
    plan_set = validate_plan_set(_read_json(plans_file))
    parser = load_parser(parser_spec)

    lists = MembershipLibrary()
    if list_specs and druglib_file is None:
        raise InputError("--list requires --druglib")
    if druglib_file is not None:
        library = DrugLibrary.load(druglib_file)
        for spec in list_specs:
            name, sep, key = spec.partition("=")
            if not sep or not name or not key:
                raise InputError(f"--list must look like NAME=KEY, got {spec!r}")
            drug_list = library.lookup(key)
            if drug_list is None:
                raise InputError(f"drug library has no entry for {key!r}")
            lists.register(name, drug_list)

    rule_set = None
    if rules_file is not None:
        rule_set = rule_set_from_jsonable(_read_json(rules_file))

    result = run_pipeline(
        corpus, plan_set.plans, parser, lists=lists, rule_set=rule_set, run_id=run_id
    )

    summary_rows = summarize_selected(result.selected, parser) if summaries else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_json(out_dir / "selected.json", corpus_to_jsonable(result.selected))
        write_json(out_dir / "flow.json", flow_to_jsonable(result.flow))
        write_audit_log(result.audit, out_dir / "audit.jsonl")
        if summary_rows is not None:
            write_json(out_dir / "summaries.json", summaries_to_jsonable(summary_rows))
            (out_dir / "summaries.csv").write_text(
                summaries_to_csv(summary_rows), encoding="utf-8"
            )

    if as_table:
        click.echo(render_flow_table(result.flow))
        return
    payload = {"selected": result.selected.ids(), "flow": flow_to_jsonable(result.flow)}
    if summary_rows is not None:
        payload["summaries"] = summaries_to_jsonable(summary_rows)
    _emit(payload)


@cli.command("structure-criteria")
@click.option("--corpus", "corpus_file", type=_IN_PATH, required=True)
@click.option(
    "--parser",
    "parser_spec",
    default="reference",
    show_default=True,
    help="Extraction backend: reference, replay:PATH or remote:CONFIG.",
)
@click.option("--trial", "trial_ids", multiple=True, help="Limit to these trial ids (repeatable).")
@click.option("-o", "--out", type=_OUT_PATH, default=None, help="Write the criteria document here.")
@_guarded
def structure_criteria_command(
    corpus_file: Path, parser_spec: str, trial_ids: tuple[str, ...], out: Path | None
) -> None:
    """Map eligibility texts to structured criterion tuples."""
    corpus = _load_corpus(corpus_file)
    parser = load_parser(parser_spec)
    wanted = list(trial_ids) if trial_ids else corpus.ids()
    document: dict = {"trials": {}}
    flags: dict = {}
    for nct_id in wanted:
        trial = corpus.get(nct_id)
        structured = structure_criteria(trial, parser)
        document["trials"][nct_id] = criteria_to_jsonable(structured.criteria)
        if structured.flags:
            flags[nct_id] = structured.flags
    if out is not None:
        write_json(out, document)
    _emit({"trials": document["trials"], "flags": flags})


@cli.command()
@click.option("--criteria", "criteria_file", type=_IN_PATH, required=True)
@click.option("--rules", "rules_file", type=_IN_PATH, required=True)
@click.option(
    "--target",
    "target_id",
    default=None,
    help="Trial id whose criteria act as the comparison target for @target selectors.",
)
@_guarded
def penalize(criteria_file: Path, rules_file: Path, target_id: str | None) -> None:
    """Score structured criteria against severity-weighted penalty rules."""
    rules = load_penalty_rules(rules_file)
    criteria = load_criteria_file(criteria_file)
    target = ()
    if target_id is not None:
        if target_id not in criteria:
            raise InputError(f"--target {target_id!r} is not in the criteria document")
        target = tuple(criteria[target_id])
    scores = {}
    for nct_id in sorted(criteria):
        score = evaluate_penalties(
            rules, criteria[nct_id], trial_id=nct_id, target_criteria=target
        )
        scores[nct_id] = {
            "total": score.total,
            "triggered": [
                {
                    "rule_id": t.rule_id,
                    "severity": t.severity,
                    "matched_criteria": list(t.matched_criteria),
                }
                for t in score.triggered
            ],
        }
    _emit({"scores": scores, "severity_total": severity_total(rules)})


@cli.command()
@click.option("--penalties", required=True, help="Comma-separated penalty totals in study order.")
@click.option("--gamma", type=float, default=0.5, show_default=True)
@click.option("--floor", type=float, default=20.0, show_default=True)
@click.option(
    "--pmax",
    default="attainable",
    show_default=True,
    help="attainable[:TOTAL], observed, or an explicit number.",
)
@click.option("--ids", default=None, help="Comma-separated study ids (default s1..sn).")
@click.option("--json", "as_json", is_flag=True, help="Full per-study breakdown instead of the weight line.")
@_guarded
def weights(penalties: str, gamma: float, floor: float, pmax: str, ids: str | None, as_json: bool) -> None:
    """Transform penalty totals into normalized study weights.

    The default output is one line of weights rounded to four decimals.
    """
    values = _parse_floats(penalties, "--penalties")
    if not values:
        raise InputError("--penalties must contain at least one value")
    if ids is not None:
        id_list = [part.strip() for part in ids.split(",") if part.strip()]
        if len(id_list) != len(values):
            raise InputError(f"{len(id_list)} ids given for {len(values)} penalties")
    else:
        id_list = [f"s{i}" for i in range(1, len(values) + 1)]
    params, total = _weight_params(gamma, floor, pmax)
    vector = compute_weights(list(zip(id_list, values)), params, total)
    if as_json:
        _emit(vector_to_jsonable(vector))
    else:
        click.echo(" ".join(f"{w:.4f}" for w in vector.weights()))


@cli.command()
@click.option("--tables", "tables_file", type=_IN_PATH, required=True, help="2x2 counts CSV.")
@click.option(
    "--weights",
    "weights_spec",
    default="uniform",
    show_default=True,
    help="uniform, file:PATH (study_id→weight map), or penalties:LIST.",
)
@click.option("--gamma", type=float, default=0.5, show_default=True)
@click.option("--floor", type=float, default=20.0, show_default=True)
@click.option("--pmax", default="attainable", show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--correct-zeros", is_flag=True, help="Add 0.5 to every cell of zero-count tables.")
@_guarded
def meta(
    tables_file: Path,
    weights_spec: str,
    gamma: float,
    floor: float,
    pmax: str,
    level: float,
    correct_zeros: bool,
) -> None:
    """Pool per-study risk ratios into a weighted estimate with CI."""
    tables = load_tables_csv(tables_file)
    weight_input = _resolve_weights(tables, weights_spec, gamma, floor, pmax)
    estimate = pool_ew_mh(
        tables, weight_input, level=level, continuity_correction=correct_zeros
    )
    _emit(estimate_to_jsonable(estimate))


@cli.command()
@click.option("--tables", "tables_file", type=_IN_PATH, required=True)
@click.option("--penalties", required=True, help="Comma-separated penalty totals in table order.")
@click.option("--gammas", default="0.5", show_default=True)
@click.option("--floors", default="20", show_default=True)
@click.option("--modes", default="attainable", show_default=True, help="Comma of attainable, observed.")
@click.option("--pmax-total", type=float, default=None, help="Severity total for attainable mode.")
@click.option("--level", type=float, default=0.95, show_default=True)
@_guarded
def sweep(
    tables_file: Path,
    penalties: str,
    gammas: str,
    floors: str,
    modes: str,
    pmax_total: float | None,
    level: float,
) -> None:
    """Re-estimate across a (gamma, floor, pmax-mode) grid."""
    tables = load_tables_csv(tables_file)
    values = _parse_floats(penalties, "--penalties")
    if len(values) != len(tables):
        raise InputError(f"{len(values)} penalties given for {len(tables)} tables")
    pairs = [(t.study_id, p) for t, p in zip(tables, values)]
    rows = sensitivity_sweep(
        tables,
        pairs,
        gammas=_parse_floats(gammas, "--gammas"),
        floors=_parse_floats(floors, "--floors"),
        modes=[m.strip() for m in modes.split(",") if m.strip()],
        rule_severity_total=pmax_total,
        level=level,
    )
    _emit(sweep_to_jsonable(rows))


@cli.command()
@click.option("--tables", "tables_file", type=_IN_PATH, required=True)
@click.option(
    "--weights",
    "weights_spec",
    default="uniform",
    show_default=True,
    help="Weighted row input: uniform, file:PATH, or penalties:LIST.",
)
@click.option("--gamma", type=float, default=0.5, show_default=True)
@click.option("--floor", type=float, default=20.0, show_default=True)
@click.option("--pmax", default="attainable", show_default=True)
@click.option("--level", type=float, default=0.95, show_default=True)
@click.option("--svg", "svg_path", type=_OUT_PATH, default=None, help="Also render an SVG here.")
@_guarded
def forest(
    tables_file: Path,
    weights_spec: str,
    gamma: float,
    floor: float,
    pmax: str,
    level: float,
    svg_path: Path | None,
) -> None:
    """Emit plot-ready dual forest data (classical vs weighted), JSON and optional SVG."""
    tables = load_tables_csv(tables_file)
    classical = pool_ew_mh(tables, level=level)
    weight_input = _resolve_weights(tables, weights_spec, gamma, floor, pmax)
    weighted = pool_ew_mh(tables, weight_input, level=level)
    data = forest_data(classical, weighted)
    if svg_path is not None:
        svg_path.write_text(render_forest_svg(data), encoding="utf-8")
    _emit(data)


def render_forest_svg(data: dict) -> str:
    """Deterministic dual forest plot: per-study rows plus the two pooled rows."""
    import math

    rows = [(s["study_id"], s["rr"], s["ci_low"], s["ci_high"]) for s in data["studies"]]
    rows += [(p["label"], p["theta"], p["ci_low"], p["ci_high"]) for p in data["pooled"]]
    finite = [v for _, rr, lo, hi in rows for v in (rr, lo, hi) if v and v > 0]
    span_low = min(finite + [1.0]) * 0.9
    span_high = max(finite + [1.0]) * 1.1
    width, row_height, left = 640, 28, 180
    plot_width = width - left - 40

    def x(value: float) -> float:
        frac = (math.log(value) - math.log(span_low)) / (
            math.log(span_high) - math.log(span_low)
        )
        return left + frac * plot_width

    height = row_height * (len(rows) + 2)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}"'
        f' font-family="monospace" font-size="12">',
        f'<line x1="{x(1.0):.1f}" y1="10" x2="{x(1.0):.1f}" y2="{height - 20}"'
        ' stroke="#999" stroke-dasharray="4 3"/>',
    ]
    for index, (label, rr, lo, hi) in enumerate(rows):
        y = row_height * (index + 1)
        pooled = label in ("classical", "eligibility-weighted")
        parts.append(f'<text x="8" y="{y + 4}">{label}</text>')
        if rr is None or not (rr > 0):
            parts.append(f'<text x="{left}" y="{y + 4}">(not estimable)</text>')
            continue
        color = "#1a6" if pooled else "#333"
        parts.append(
            f'<line x1="{x(lo):.1f}" y1="{y}" x2="{x(hi):.1f}" y2="{y}"'
            f' stroke="{color}" stroke-width="2"/>'
        )
        marker = (
            f'<rect x="{x(rr) - 5:.1f}" y="{y - 5}" width="10" height="10" fill="{color}"/>'
            if pooled
            else f'<circle cx="{x(rr):.1f}" cy="{y}" r="4" fill="{color}"/>'
        )
        parts.append(marker)
        parts.append(
            f'<text x="{width - 36}" y="{y + 4}" text-anchor="end">{rr:.2f}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)


@cli.command("mc-check")
@click.option("--seed", type=int, default=7, show_default=True)
@click.option("--theta", type=float, default=2.0, show_default=True)
@click.option("--replicates", type=int, default=500, show_default=True)
@click.option("--arm-sizes", default="100,1000,10000", show_default=True)
@_guarded
def mc_check(seed: int, theta: float, replicates: int, arm_sizes: str) -> None:
    """Simulate pooled estimation; exit 3 unless error shrinks as arms grow."""
    sizes = tuple(int(v) for v in _parse_floats(arm_sizes, "--arm-sizes"))
    points = consistency_curve(
        theta=theta, arm_sizes=sizes, replicates=replicates, seed=seed
    )
    decreasing = is_strictly_decreasing(points)
    _emit(
        {
            "points": [
                {
                    "arm_size": p.arm_size,
                    "mean_abs_error": p.mean_abs_error,
                    "replicates": p.replicates,
                }
                for p in points
            ],
            "strictly_decreasing": decreasing,
        }
    )
    if not decreasing:
        raise EstimationError("mean absolute error did not shrink as arms grew")


@cli.command()
@click.option("--host", default=None, help="Bind address (default 127.0.0.1).")
@click.option("--port", type=int, default=None, help="Port (default 8000).")
@click.option("--state-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.option("--parser", "parser_spec", default=None, help="Extraction backend selector.")
@click.option("--cors-origin", "cors_origins", multiple=True, help="Allowed UI origin (repeatable).")
@_guarded
def serve(
    host: str | None,
    port: int | None,
    state_dir: Path | None,
    parser_spec: str | None,
    cors_origins: tuple[str, ...],
) -> None:
    """Run the HTTP service (config file via METASIEVE_CONFIG, flags override)."""
    import uvicorn

    from .service import ServiceConfig, create_app

    file_config: dict = {}
    config_path = os.environ.get("METASIEVE_CONFIG")
    if config_path:
        file_config = _read_json(Path(config_path))
        if not isinstance(file_config, dict):
            raise InputError(f"{config_path}: config must be a JSON object")

    corpus_root = file_config.get("corpus_root")
    config = ServiceConfig(
        state_dir=Path(state_dir or file_config.get("state_dir", "runs")),
        parser_spec=parser_spec or file_config.get("parser", "reference"),
        cors_origins=tuple(cors_origins or file_config.get("cors_origins", ())),
        corpus_root=Path(corpus_root) if corpus_root else None,
    )
    uvicorn.run(
        create_app(config),
        host=host or file_config.get("host", "127.0.0.1"),
        port=port or int(file_config.get("port", 8000)),
        log_level="info",
    )


def main() -> None:
    cli(prog_name="metasieve")


if __name__ == "__main__":
    main()
