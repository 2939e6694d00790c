"""CVE record parsing (cvelistV5-style JSON 5.x) and model-input rendering."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional

log = logging.getLogger(__name__)

CVE_ID_RE = re.compile(r"^CVE-\d{4}-\d{4,}$")


class CveParseError(ValueError):
    """The document is not a usable CVE 5.x record."""


@dataclass(frozen=True)
class AffectedProduct:
    vendor: str
    product: str
    versions: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"vendor": self.vendor, "product": self.product, "versions": list(self.versions)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AffectedProduct":
        return cls(d.get("vendor", ""), d.get("product", ""), tuple(d.get("versions", ())))


@dataclass(frozen=True)
class CveRecord:
    cve_id: str
    description: str
    affected: tuple[AffectedProduct, ...] = ()
    published_year: int = 0

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "description": self.description,
            "affected": [a.to_dict() for a in self.affected],
            "published_year": self.published_year,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CveRecord":
        return cls(
            cve_id=d["cve_id"],
            description=d["description"],
            affected=tuple(AffectedProduct.from_dict(a) for a in d.get("affected", ())),
            published_year=int(d.get("published_year", 0)),
        )


def parse_cve_record(doc: Mapping) -> CveRecord:
    """Parse a CVE record 5.x document (cveMetadata + containers.cna).

    The first English description wins; if none is tagged English the first
    entry is used and a warning logged. A record without any description is
    rejected. Missing `affected` is an empty list, not an error.
    """
    meta = doc.get("cveMetadata") if isinstance(doc, Mapping) else None
    cve_id = meta.get("cveId") if isinstance(meta, Mapping) else None
    if not isinstance(cve_id, str) or not cve_id:
        raise CveParseError("missing cveMetadata.cveId")
    if not CVE_ID_RE.match(cve_id):
        raise CveParseError(f"malformed CVE id: {cve_id!r}")

    cna = doc.get("containers", {}).get("cna", {})
    description = _pick_description(cna.get("descriptions"), cve_id)

    affected = tuple(
        AffectedProduct(
            vendor=str(entry.get("vendor", "") or ""),
            product=str(entry.get("product", "") or ""),
            versions=tuple(
                v for v in (_flatten_version(ver) for ver in entry.get("versions", ())) if v
            ),
        )
        for entry in cna.get("affected", ())
        if isinstance(entry, Mapping)
    )

    id_year = int(cve_id.split("-")[1])
    published_year = id_year
    date_published = meta.get("datePublished")
    if isinstance(date_published, str) and re.match(r"^\d{4}", date_published):
        published_year = int(date_published[:4])
        if published_year != id_year:
            log.warning("%s: published year %d differs from id year %d", cve_id, published_year, id_year)

    return CveRecord(cve_id=cve_id, description=description, affected=affected, published_year=published_year)


def _pick_description(descriptions: object, cve_id: str) -> str:
    entries = [d for d in (descriptions or ()) if isinstance(d, Mapping) and d.get("value")]
    if not entries:
        raise CveParseError("no description")
    for d in entries:
        lang = str(d.get("lang", "")).lower()
        if lang == "en" or lang.startswith("en-"):
            text = str(d["value"]).strip()
            if text:
                return text
    log.warning("%s: no English description, falling back to the first entry", cve_id)
    text = str(entries[0]["value"]).strip()
    if not text:
        raise CveParseError("no description")
    return text


def _flatten_version(ver: object) -> str:
    # CVE 5.x version ranges are rendered as prose; the model input is text,
    # structural range modelling adds nothing downstream.
    if not isinstance(ver, Mapping):
        return str(ver) if ver else ""
    if ver.get("lessThan"):
        return f"< {ver['lessThan']}"
    if ver.get("lessThanOrEqual"):
        return f"<= {ver['lessThanOrEqual']}"
    return str(ver.get("version", "") or "")


def format_model_input(r: CveRecord) -> str:
    """Render the model-facing input text for a CVE (deterministic template).

    "CVE: <id>\\nAffected: <vendor> <product> (<versions>); ...\\nDescription: <text>"
    """
    if r.affected:
        parts = []
        for a in r.affected:
            head = " ".join(x for x in (a.vendor, a.product) if x)
            parts.append(f"{head} ({', '.join(a.versions)})" if a.versions else head)
        affected = "; ".join(parts)
    else:
        affected = "(none)"
    return f"CVE: {r.cve_id}\nAffected: {affected}\nDescription: {r.description}"


def iter_cve_files(root: str | Path, year: Optional[int] = None) -> Iterator[Path]:
    """Yield CVE-*.json files under a cvelistV5-style tree (or any directory)."""
    base = Path(root)
    if year is not None:
        base = base / "cves" / str(year) if (base / "cves").is_dir() else base / str(year)
    yield from sorted(base.rglob("CVE-*.json"))


def load_cve_directory(root: str | Path, year: Optional[int] = None) -> list[CveRecord]:
    records = []
    for path in iter_cve_files(root, year):
        doc = json.loads(path.read_text(encoding="utf-8"))
        try:
            records.append(parse_cve_record(doc))
        except CveParseError as exc:
            log.warning("%s: skipped (%s)", path.name, exc)
    return records


def write_records_jsonl(records: list[CveRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


def read_records_jsonl(path: str | Path) -> list[CveRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(CveRecord.from_dict(json.loads(line)))
    return records
