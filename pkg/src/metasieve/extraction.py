"""Schema-constrained extraction of typed values from trial text.

Three interchangeable parsers produce raw text replies that are validated
against a per-kind grammar:

* ``ReferenceParser`` — pure keyword/regex heuristics, fully documented below.
* ``ReplayParser`` — fixture map keyed by request digest, for offline runs.
* ``RemoteParser`` — HTTP client for a chat-completion-style service.

Raw replies flow through ``extract``: validate, one retry on a malformed
reply, then the reference heuristics as a deterministic fallback, then
:class:`ExtractionFailure`.  A failure is a value, not an exception — the
filter pipeline turns it into a flagged verdict instead of aborting.

Accepted reply grammar per kind:

===============  ========================================================
boolean_yes_no   "yes" or "no", case-insensitive
number           decimal literal, optional sign and fraction
phrase_or_none   single non-empty line; literal "None" is the none-marker
name_list        bracketed list (JSON or bare) or comma-separated names;
                 the bare none-marker is rejected (no names ≠ a name)
===============  ========================================================
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Protocol

import httpx

from .errors import ConfigurationError
from .serialize import stable_hash

logger = logging.getLogger(__name__)

# Bump when the request digest inputs or reply grammar change, so stale
# replay fixtures miss instead of silently answering a different question.
PARSER_CONTRACT_VERSION = "1"


class ExpectedKind(Enum):
    BOOLEAN_YES_NO = "boolean_yes_no"
    NUMBER = "number"
    PHRASE_OR_NONE = "phrase_or_none"
    NAME_LIST = "name_list"

    @classmethod
    def from_string(cls, value: str) -> "ExpectedKind":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown expected_kind: {value!r}") from None


class FailureReason(Enum):
    SCHEMA_VIOLATION = "schema-violation"
    PARSER_UNAVAILABLE = "parser-unavailable"
    EMPTY_INPUT = "empty-input"


@dataclass(frozen=True)
class ExtractionRequest:
    instruction: str
    attended_text: str
    expected_kind: ExpectedKind

    def digest(self) -> str:
        return stable_hash(
            PARSER_CONTRACT_VERSION,
            self.instruction,
            self.attended_text,
            self.expected_kind.value,
        )


@dataclass(frozen=True)
class Provenance:
    parser_id: str
    request_digest: str


@dataclass(frozen=True)
class ExtractedValue:
    kind: ExpectedKind
    value: object  # bool | int | float | str | None | tuple[str, ...]
    provenance: Provenance


@dataclass(frozen=True)
class ExtractionFailure:
    reason: FailureReason
    request_digest: str
    detail: str = ""


class ParserUnavailable(Exception):
    """Raised by a parser that cannot answer (missing fixture, dead endpoint)."""


class Parser(Protocol):
    parser_id: str

    def parse(self, request: ExtractionRequest) -> str: ...


_NUMBER_RE = re.compile(r"^[+-]?(\d+(\.\d+)?|\.\d+)$")


def validate_reply(kind: ExpectedKind, raw: str):
    """Check a raw reply against the kind grammar; return the typed value.

    Raises ValueError when the reply does not conform.  Never guesses:
    anything outside the grammar is a schema violation.
    """
    text = raw.strip()
    if kind is ExpectedKind.BOOLEAN_YES_NO:
        lowered = text.lower()
        if lowered == "yes":
            return True
        if lowered == "no":
            return False
        raise ValueError(f"expected yes/no, got {raw!r}")
    if kind is ExpectedKind.NUMBER:
        if not _NUMBER_RE.match(text):
            raise ValueError(f"expected a decimal literal, got {raw!r}")
        number = float(text)
        return int(number) if number.is_integer() else number
    if kind is ExpectedKind.PHRASE_OR_NONE:
        if not text:
            raise ValueError("expected a phrase or the none-marker, got empty reply")
        if "\n" in text:
            raise ValueError("expected a single-line phrase")
        return None if text.lower() == "none" else text
    if kind is ExpectedKind.NAME_LIST:
        return tuple(_parse_name_list(text))
    raise ValueError(f"unknown kind: {kind!r}")


def _parse_name_list(text: str) -> list[str]:
    if not text:
        raise ValueError("expected a name list, got empty reply")
    if text.lower() == "none":
        raise ValueError("none-marker is not a name list")
    if text.startswith("[") and text.endswith("]"):
        try:
            entries = json.loads(text)
            if not isinstance(entries, list) or not all(isinstance(e, str) for e in entries):
                raise ValueError
        except ValueError:
            entries = text[1:-1].split(",")
    else:
        entries = text.split(",")
    names, seen = [], set()
    for entry in entries:
        name = entry.strip().strip("'\"").strip()
        if not name:
            continue
        if name.casefold() in seen:
            continue
        seen.add(name.casefold())
        names.append(name)
    return names


def extract(request: ExtractionRequest, parser: Parser) -> ExtractedValue | ExtractionFailure:
    """Run one extraction: parse, validate, retry once, fall back, or fail.

    Deterministic for a fixed parser: the retry re-issues the identical
    request, and the fallback is the pure reference heuristics.
    """
    digest = request.digest()
    if not request.attended_text.strip():
        return ExtractionFailure(FailureReason.EMPTY_INPUT, digest, "attended text is empty")

    attempts = [(parser, "initial"), (parser, "retry"), (ReferenceParser(), "fallback")]
    last_error = ""
    for candidate, stage in attempts:
        try:
            raw = candidate.parse(request)
        except ParserUnavailable as exc:
            return ExtractionFailure(FailureReason.PARSER_UNAVAILABLE, digest, str(exc))
        try:
            value = validate_reply(request.expected_kind, raw)
        except ValueError as exc:
            last_error = str(exc)
            logger.debug("reply rejected at %s: %s", stage, exc)
            continue
        return ExtractedValue(
            kind=request.expected_kind,
            value=value,
            provenance=Provenance(parser_id=candidate.parser_id, request_digest=digest),
        )
    return ExtractionFailure(FailureReason.SCHEMA_VIOLATION, digest, last_error)


# ---------------------------------------------------------------------------
# Reference parser
# ---------------------------------------------------------------------------

# Instruction-pattern -> text keywords used by the yes/no heuristic.  The
# reply is "Yes" iff any keyword for a matched row occurs in the attended
# text (case-insensitive substring), else "No" (default-negative, so
# include-rules fail closed).
YES_NO_TOPIC_TABLE: tuple[tuple[str, tuple[str, ...]], ...] = (
    (r"phase\s*(iii\b|3)", ("phase3", "phase 3", "phase iii")),
    (r"phase\s*(iv\b|4)", ("phase4", "phase 4", "phase iv")),
    (r"phase\s*(ii\b|2)", ("phase2", "phase 2", "phase ii")),
    (r"phase\s*(i\b|1)", ("phase1", "phase 1", "phase i")),
    (r"randomi[sz]", ("randomized", "randomised")),
    (r"placebo", ("placebo",)),
    (r"(gastric|stomach)", ("gastric", "stomach")),
    (r"(result|publicat)", ("results posted", "publication", "citation")),
)

_NAME_ENTRY_RE = re.compile(r"(?:^|;)\s*([A-Z][A-Z_]+):\s*([^;\n]+)", re.MULTILINE)
_QUOTED_RE = re.compile(r"[\"']([^\"']+)[\"']")
_N_EQUALS_RE = re.compile(r"\bn\s*=\s*(\d[\d,]*)", re.IGNORECASE)
_ENROLLMENT_RE = re.compile(r"\bEnrollment:\s*(\d[\d,]*)", re.IGNORECASE)
_INTEGER_RE = re.compile(r"\d[\d,]*")


class ReferenceParser:
    """Deterministic keyword/regex heuristics; the fallback of last resort.

    Rules, in order, per kind:

    number
        1. first ``n=<digits>`` match; 2. first ``Enrollment: <digits>``
        match; 3. first integer anywhere; else the none-marker.
    boolean_yes_no
        keywords = phrases quoted in the instruction plus the topic-table
        rows whose pattern matches the instruction; "Yes" iff any keyword
        occurs in the text, else "No".
    phrase_or_none
        first text line containing a phrase quoted in the instruction,
        else the none-marker.
    name_list
        every ``LABEL: name`` entry with an upper-case label (intervention
        listings render that way); bracketed-list reply, or the none-marker
        when nothing matches.
    """

    parser_id = "reference"

    def parse(self, request: ExtractionRequest) -> str:
        kind, text = request.expected_kind, request.attended_text
        if kind is ExpectedKind.NUMBER:
            for pattern in (_N_EQUALS_RE, _ENROLLMENT_RE, _INTEGER_RE):
                match = pattern.search(text)
                if match:
                    return match.group(match.lastindex or 0).replace(",", "")
            return "None"
        if kind is ExpectedKind.BOOLEAN_YES_NO:
            keywords = self._keywords(request.instruction)
            lowered = text.casefold()
            return "Yes" if any(k.casefold() in lowered for k in keywords) else "No"
        if kind is ExpectedKind.PHRASE_OR_NONE:
            quoted = _QUOTED_RE.findall(request.instruction)
            for line in text.splitlines():
                if any(q.casefold() in line.casefold() for q in quoted):
                    return line.strip()
            return "None"
        if kind is ExpectedKind.NAME_LIST:
            names = [m.group(2).strip() for m in _NAME_ENTRY_RE.finditer(text)]
            return json.dumps(names) if names else "None"
        raise ParserUnavailable(f"unsupported kind: {kind}")

    @staticmethod
    def _keywords(instruction: str) -> list[str]:
        keywords = _QUOTED_RE.findall(instruction)
        for pattern, terms in YES_NO_TOPIC_TABLE:
            if re.search(pattern, instruction, re.IGNORECASE):
                keywords.extend(terms)
                break
        return keywords


# ---------------------------------------------------------------------------
# Replay parser and recording
# ---------------------------------------------------------------------------

REPLAY_FIXTURE_VERSION = 1


class ReplayParser:
    """Answers from a recorded digest -> raw-reply map; read-only at run time."""

    parser_id = "replay"

    def __init__(self, responses: dict[str, str], version: int = REPLAY_FIXTURE_VERSION):
        self.responses = dict(responses)
        self.version = version

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayParser":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict) or "responses" not in data:
            raise ConfigurationError(f"replay fixture {path} must contain a 'responses' map")
        return cls(data["responses"], version=data.get("version", REPLAY_FIXTURE_VERSION))

    def parse(self, request: ExtractionRequest) -> str:
        digest = request.digest()
        try:
            return self.responses[digest]
        except KeyError:
            raise ParserUnavailable(f"no recorded reply for digest {digest}") from None


class RecordingParser:
    """Wraps another parser and captures every exchange as a replay fixture."""

    def __init__(self, inner: Parser):
        self.inner = inner
        self.parser_id = inner.parser_id
        self.responses: dict[str, str] = {}

    def parse(self, request: ExtractionRequest) -> str:
        raw = self.inner.parse(request)
        self.responses[request.digest()] = raw
        return raw

    def save(self, path: str | Path) -> None:
        payload = {"version": REPLAY_FIXTURE_VERSION, "responses": dict(sorted(self.responses.items()))}
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Remote parser
# ---------------------------------------------------------------------------


@dataclass
class RemoteConfig:
    """Endpoint settings for the remote extraction service.

    Credentials come from the environment variable named by ``api_key_env``;
    they are never stored in files this module writes.
    """

    endpoint: str
    model_id: str
    max_output_length: int = 64
    timeout_seconds: float = 30.0
    max_attempts: int = 3
    retry_wait_seconds: float = 0.5
    api_key_env: str = ""

    @classmethod
    def from_file(cls, path: str | Path) -> "RemoteConfig":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(f"bad remote parser config {path}: {exc}") from exc


class RemoteParser:
    """Client for a chat-completion-style extraction endpoint.

    Protocol: POST JSON ``{model_id, instruction, input_text,
    max_output_length}``; success is HTTP 200 with body ``{"text": ...}``.
    Retryable statuses (429 and 5xx) and transport errors are retried up to
    ``max_attempts`` times, then surface as parser-unavailable.
    """

    parser_id = "remote"

    def __init__(self, config: RemoteConfig, client: httpx.Client | None = None):
        self.config = config
        self._client = client or httpx.Client(timeout=config.timeout_seconds)

    def parse(self, request: ExtractionRequest) -> str:
        payload = {
            "model_id": self.config.model_id,
            "instruction": request.instruction,
            "input_text": request.attended_text,
            "max_output_length": self.config.max_output_length,
        }
        headers = {}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        last_detail = ""
        for attempt in range(self.config.max_attempts):
            if attempt:
                time.sleep(self.config.retry_wait_seconds)
            try:
                response = self._client.post(self.config.endpoint, json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_detail = f"transport error: {exc}"
                continue
            if response.status_code == 200:
                try:
                    text = response.json()["text"]
                except (ValueError, KeyError):
                    raise ParserUnavailable("malformed response body (no 'text' field)") from None
                if not isinstance(text, str):
                    raise ParserUnavailable("response 'text' field is not a string")
                return text
            if response.status_code == 429 or response.status_code >= 500:
                last_detail = f"HTTP {response.status_code}"
                continue
            raise ParserUnavailable(f"HTTP {response.status_code}")
        raise ParserUnavailable(f"gave up after {self.config.max_attempts} attempts ({last_detail})")


def load_parser(spec: str) -> Parser:
    """Build a parser from a CLI-style selector.

    ``reference``, ``replay:PATH`` or ``remote:CONFIG_PATH``.
    """
    if spec == "reference":
        return ReferenceParser()
    name, _, arg = spec.partition(":")
    if name == "replay" and arg:
        return ReplayParser.from_file(arg)
    if name == "remote" and arg:
        return RemoteParser(RemoteConfig.from_file(arg))
    raise ConfigurationError(
        f"unknown parser selector {spec!r}; expected reference, replay:PATH or remote:CONFIG"
    )
