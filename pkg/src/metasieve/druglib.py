"""Disease-keyed approved-drug lists backing in_list membership checks.

The library is a local, versioned JSON store.  Imports append a new version
per disease key and never mutate earlier versions.  Retrieval from a live
web source sits behind a tiny fetch interface; the shipped implementation
replays recorded documents so everything stays offline and reproducible.

Key matching: exact normalized match first (casefold, collapsed whitespace),
then a token-subset fallback — a query matches a stored key when every query
token appears among the stored key's tokens ("gastric cancer" matches
"stomach/gastric cancer").  Ties go to the stored key with the fewest extra
tokens, then lexicographic order.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import InputError

logger = logging.getLogger(__name__)

LIBRARY_FILE_VERSION = 1

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def normalize_key(key: str) -> str:
    return " ".join(key.casefold().split())


def _key_tokens(key: str) -> frozenset[str]:
    return frozenset(_TOKEN_RE.findall(key.casefold()))


def _normalize_name(name: str) -> str:
    return " ".join(name.casefold().split())


@dataclass
class DrugEntry:
    display_name: str
    generic_name: str = ""
    brand_names: list[str] = field(default_factory=list)

    def all_names(self) -> list[str]:
        names = [self.display_name]
        if self.generic_name:
            names.append(self.generic_name)
        names.extend(self.brand_names)
        return names


@dataclass
class DrugList:
    disease_key: str
    entries: list[DrugEntry]
    source: str = ""
    retrieved_at: str = ""
    version: int = 1


@dataclass
class ImportReport:
    imported: int
    dropped_off_label: list[str]
    collapsed_duplicates: list[str]


def contains(drug_list: DrugList, name: str) -> bool:
    """Case-insensitive, whitespace-normalized match over every stored name variant."""
    needle = _normalize_name(name)
    if not needle:
        return False
    for entry in drug_list.entries:
        if any(_normalize_name(candidate) == needle for candidate in entry.all_names()):
            return True
    return False


def _clean_entries(raw_entries: list[dict]) -> tuple[list[DrugEntry], ImportReport]:
    entries: list[DrugEntry] = []
    seen: set[str] = set()
    dropped: list[str] = []
    collapsed: list[str] = []
    for raw in raw_entries:
        display = str(raw.get("display_name", "")).strip()
        if not display:
            continue
        if raw.get("off_label"):
            dropped.append(display)
            continue
        if display.casefold() in seen:
            collapsed.append(display)
            continue
        seen.add(display.casefold())
        brands, brand_seen = [], set()
        for brand in raw.get("brand_names", []) or []:
            brand = str(brand).strip()
            if brand and brand.casefold() not in brand_seen:
                brand_seen.add(brand.casefold())
                brands.append(brand)
        entries.append(
            DrugEntry(
                display_name=display,
                generic_name=str(raw.get("generic_name", "")).strip(),
                brand_names=brands,
            )
        )
    return entries, ImportReport(len(entries), dropped, collapsed)


class DrugLibrary:
    """Append-only history of drug lists per normalized disease key."""

    def __init__(self, histories: dict[str, list[DrugList]] | None = None):
        self._histories: dict[str, list[DrugList]] = histories or {}

    # -- lookup ------------------------------------------------------------

    def lookup(self, disease_key: str) -> DrugList | None:
        """Latest list for the key, via exact-normalized then token-subset matching."""
        wanted = normalize_key(disease_key)
        if wanted in self._histories:
            return self._histories[wanted][-1]
        wanted_tokens = _key_tokens(wanted)
        if not wanted_tokens:
            return None
        candidates = [
            key for key in self._histories if wanted_tokens <= _key_tokens(key)
        ]
        if not candidates:
            return None
        best = min(candidates, key=lambda key: (len(_key_tokens(key) - wanted_tokens), key))
        return self._histories[best][-1]

    def history(self, disease_key: str) -> list[DrugList]:
        return list(self._histories.get(normalize_key(disease_key), []))

    def keys(self) -> list[str]:
        return sorted(self._histories)

    # -- import / export ----------------------------------------------------

    def import_list(self, document: dict) -> tuple[DrugList, ImportReport]:
        """Validate an import document, drop off-label rows, append a new version."""
        try:
            disease_key = normalize_key(document["disease_key"])
            raw_entries = document["entries"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"import document must carry disease_key and entries: {exc}") from exc
        if not disease_key:
            raise InputError("import document has an empty disease_key")
        if not isinstance(raw_entries, list):
            raise InputError("entries must be a list")
        entries, report = _clean_entries(raw_entries)
        history = self._histories.setdefault(disease_key, [])
        drug_list = DrugList(
            disease_key=disease_key,
            entries=entries,
            source=str(document.get("source", "")),
            retrieved_at=datetime.now(timezone.utc).isoformat(),
            version=history[-1].version + 1 if history else 1,
        )
        history.append(drug_list)
        if report.dropped_off_label:
            logger.info(
                "dropped %d off-label entries for %s", len(report.dropped_off_label), disease_key
            )
        return drug_list, report

    def export_list(self, disease_key: str) -> dict:
        drug_list = self.lookup(disease_key)
        if drug_list is None:
            raise InputError(f"no drug list for {disease_key!r}")
        return {
            "disease_key": drug_list.disease_key,
            "source": drug_list.source,
            "retrieved_at": drug_list.retrieved_at,
            "version": drug_list.version,
            "entries": [
                {
                    "display_name": e.display_name,
                    "generic_name": e.generic_name,
                    "brand_names": list(e.brand_names),
                }
                for e in drug_list.entries
            ],
        }

    # -- persistence ---------------------------------------------------------

    def to_jsonable(self) -> dict:
        return {
            "version": LIBRARY_FILE_VERSION,
            "lists": {
                key: [
                    {
                        "disease_key": lst.disease_key,
                        "source": lst.source,
                        "retrieved_at": lst.retrieved_at,
                        "version": lst.version,
                        "entries": [
                            {
                                "display_name": e.display_name,
                                "generic_name": e.generic_name,
                                "brand_names": list(e.brand_names),
                            }
                            for e in lst.entries
                        ],
                    }
                    for lst in history
                ]
                for key, history in sorted(self._histories.items())
            },
        }

    @classmethod
    def from_jsonable(cls, data: dict) -> "DrugLibrary":
        histories: dict[str, list[DrugList]] = {}
        for key, versions in data.get("lists", {}).items():
            histories[key] = [
                DrugList(
                    disease_key=v["disease_key"],
                    entries=[
                        DrugEntry(
                            display_name=e["display_name"],
                            generic_name=e.get("generic_name", ""),
                            brand_names=list(e.get("brand_names", [])),
                        )
                        for e in v.get("entries", [])
                    ],
                    source=v.get("source", ""),
                    retrieved_at=v.get("retrieved_at", ""),
                    version=v.get("version", 1),
                )
                for v in versions
            ]
        return cls(histories)

    def save(self, path: str | Path) -> None:
        from .serialize import canonical_dumps

        Path(path).write_text(canonical_dumps(self.to_jsonable(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DrugLibrary":
        return cls.from_jsonable(json.loads(Path(path).read_text(encoding="utf-8")))


class ReplayDrugSource:
    """Recorded retrieval documents keyed by normalized disease key."""

    def __init__(self, documents: dict[str, dict]):
        self.documents = {normalize_key(k): v for k, v in documents.items()}

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayDrugSource":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def fetch(self, disease_key: str) -> dict:
        key = normalize_key(disease_key)
        if key not in self.documents:
            raise InputError(f"no recorded drug-list document for {disease_key!r}")
        return self.documents[key]


def refresh(library: DrugLibrary, source, disease_key: str) -> tuple[DrugList, ImportReport]:
    """Fetch a document from a source (live or replay) and import it."""
    document = source.fetch(disease_key)
    return library.import_list(document)
