"""MITRE ATT&CK technique catalog: bundle loading, indexing, and lookups.

The knowledge base is the ground truth for technique validity. It is built
once from a STIX-2.1-style bundle (the enterprise-attack layout: a top-level
"objects" array whose attack-pattern entries carry a "mitre-attack" external
reference holding the technique id) and is immutable afterwards, so it can be
shared freely across threads.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional

TECHNIQUE_ID_RE = re.compile(r"^[Tt]\d{4}(?:\.\d{3})?$")


class TechniqueIdError(ValueError):
    """A string that does not match the T####(.###) technique id pattern."""


class BundleError(ValueError):
    """The bundle document cannot be loaded."""


class ConsistencyError(BundleError):
    """Strict-mode violation: a sub-technique whose parent is absent."""


def parse_technique_id(value: str) -> str:
    """Canonicalize a technique id (upper-case T, e.g. "t1557" -> "T1557").

    Raises TechniqueIdError for anything that does not match the pattern;
    a malformed id is a format error, distinct from an id that is simply
    unknown to the knowledge base.
    """
    if not isinstance(value, str):
        raise TechniqueIdError(f"not a technique id: {value!r}")
    candidate = value.strip()
    if not TECHNIQUE_ID_RE.match(candidate):
        raise TechniqueIdError(f"not a technique id: {value!r}")
    return "T" + candidate[1:]


def is_technique_id(value: object) -> bool:
    return isinstance(value, str) and bool(TECHNIQUE_ID_RE.match(value.strip()))


def normalize_name(name: str) -> str:
    """Name normalization used by the name index and strict name checks.

    Lower-case, trim, collapse internal whitespace, strip surrounding quotes.
    """
    s = name.strip().strip("\"'").strip()
    return re.sub(r"\s+", " ", s).lower()


@dataclass(frozen=True)
class AttackTechnique:
    id: str
    name: str
    description: str = ""
    tactics: tuple[str, ...] = ()
    revoked_or_deprecated: bool = False

    @property
    def is_subtechnique(self) -> bool:
        return "." in self.id

    @property
    def parent_id(self) -> Optional[str]:
        return self.id.split(".")[0] if self.is_subtechnique else None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "description": self.description,
            "tactics": list(self.tactics),
            "is_subtechnique": self.is_subtechnique,
            "parent_id": self.parent_id,
            "revoked_or_deprecated": self.revoked_or_deprecated,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttackTechnique":
        return cls(
            id=parse_technique_id(d["id"]),
            name=d["name"],
            description=d.get("description", ""),
            tactics=tuple(d.get("tactics", ())),
            revoked_or_deprecated=bool(d.get("revoked_or_deprecated", False)),
        )


@dataclass(frozen=True)
class AttackKnowledgeBase:
    """Immutable technique catalog indexed by id and by normalized name."""

    techniques: Mapping[str, AttackTechnique]
    name_index: Mapping[str, frozenset[str]]
    version_label: str = "unknown"
    warnings: tuple[str, ...] = ()

    @classmethod
    def from_techniques(
        cls,
        techniques: Iterable[AttackTechnique],
        version_label: str = "unknown",
        warnings: tuple[str, ...] = (),
    ) -> "AttackKnowledgeBase":
        by_id: dict[str, AttackTechnique] = {}
        for t in techniques:
            if t.id in by_id:
                raise BundleError(f"duplicate technique id {t.id}")
            by_id[t.id] = t
        return cls(
            techniques=by_id,
            name_index=_build_name_index(by_id.values()),
            version_label=version_label,
            warnings=warnings,
        )

    def __len__(self) -> int:
        return len(self.techniques)

    @property
    def valid_ids(self) -> frozenset[str]:
        """Ids usable for hallucination checks: everything not revoked/deprecated."""
        return frozenset(
            tid for tid, t in self.techniques.items() if not t.revoked_or_deprecated
        )

    def valid_techniques(self) -> list[AttackTechnique]:
        return sorted(
            (t for t in self.techniques.values() if not t.revoked_or_deprecated),
            key=lambda t: t.id,
        )

    def lookup_by_id(self, technique_id: str) -> Optional[AttackTechnique]:
        """Exact lookup on the canonical id; None when unknown.

        Malformed id strings raise TechniqueIdError rather than returning None.
        """
        return self.techniques.get(parse_technique_id(technique_id))

    def is_known(self, technique_id: str) -> bool:
        """True when the id names a non-revoked technique. Malformed ids are False."""
        if not is_technique_id(technique_id):
            return False
        return parse_technique_id(technique_id) in self.valid_ids

    def lookup_by_name(self, name: str) -> frozenset[str]:
        return self.name_index.get(normalize_name(name), frozenset())

    def save(self, path: str | Path) -> None:
        doc = {
            "version_label": self.version_label,
            "warnings": list(self.warnings),
            "techniques": [t.to_dict() for t in sorted(self.techniques.values(), key=lambda t: t.id)],
        }
        Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "AttackKnowledgeBase":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls.from_techniques(
            (AttackTechnique.from_dict(d) for d in doc["techniques"]),
            version_label=doc.get("version_label", "unknown"),
            warnings=tuple(doc.get("warnings", ())),
        )


def _build_name_index(techniques: Iterable[AttackTechnique]) -> dict[str, frozenset[str]]:
    index: dict[str, set[str]] = {}
    for t in techniques:
        index.setdefault(normalize_name(t.name), set()).add(t.id)
    return {name: frozenset(ids) for name, ids in index.items()}


def load_attack_bundle(bundle_doc: Mapping, strict: bool = False) -> AttackKnowledgeBase:
    """Build a knowledge base from a parsed STIX-style bundle document.

    Revoked/deprecated attack-patterns are retained (marked) but excluded from
    the valid set. In strict mode a sub-technique without its parent aborts the
    load; in lax mode it is kept and a warning is recorded on the KB.
    """
    objects = bundle_doc.get("objects") if isinstance(bundle_doc, Mapping) else None
    if not isinstance(objects, list):
        raise BundleError("bundle document has no 'objects' array")

    techniques: dict[str, AttackTechnique] = {}
    version_label = "unknown"
    for i, obj in enumerate(objects):
        if not isinstance(obj, Mapping):
            raise BundleError(f"object {i}: not a JSON object")
        obj_type = obj.get("type")
        if obj_type == "x-mitre-collection" and obj.get("x_mitre_version"):
            version_label = str(obj["x_mitre_version"])
        if obj_type != "attack-pattern":
            continue
        tid = _external_technique_id(obj)
        if tid is None:
            raise BundleError(f"object {i}: attack-pattern without a mitre-attack external id")
        try:
            tid = parse_technique_id(tid)
        except TechniqueIdError as exc:
            raise BundleError(f"object {i}: {exc}") from exc
        name = obj.get("name")
        if not isinstance(name, str) or not name.strip():
            raise BundleError(f"object {i}: attack-pattern {tid} has no name")
        if tid in techniques:
            raise BundleError(f"object {i}: duplicate technique id {tid}")
        techniques[tid] = AttackTechnique(
            id=tid,
            name=name,
            description=obj.get("description", "") or "",
            tactics=tuple(
                p.get("phase_name", "")
                for p in obj.get("kill_chain_phases", ())
                if isinstance(p, Mapping) and p.get("phase_name")
            ),
            revoked_or_deprecated=bool(obj.get("revoked")) or bool(obj.get("x_mitre_deprecated")),
        )

    warnings: list[str] = []
    for t in techniques.values():
        if t.is_subtechnique and t.parent_id not in techniques:
            message = f"sub-technique {t.id} has no parent {t.parent_id} in the bundle"
            if strict:
                raise ConsistencyError(message)
            warnings.append(message)

    return AttackKnowledgeBase.from_techniques(
        techniques.values(), version_label=version_label, warnings=tuple(warnings)
    )


def _external_technique_id(obj: Mapping) -> Optional[str]:
    for ref in obj.get("external_references", ()):
        if isinstance(ref, Mapping) and ref.get("source_name") == "mitre-attack":
            ext_id = ref.get("external_id")
            if isinstance(ext_id, str):
                return ext_id
    return None


def technique_corpus_text(t: AttackTechnique) -> str:
    """The embedding document for a technique: "<id> <name>\\n<description>".

    Byte-identical across runs; distinct techniques always yield distinct
    texts because the id is the prefix.
    """
    return f"{t.id} {t.name}\n{t.description}"
