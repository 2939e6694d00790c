"""The CVE-ATT&CK mapping format: parsing raw model output, validation, classification.

Every raw model output falls into exactly one of three classes:

* valid        - parsed structure, every claimed technique exists (and, in strict
                 name checking, carries the catalog name for its id)
* hallucinated - parsed structure, but at least one claim is fictitious
* malformed    - the structure could not be recovered at all

Tolerance lives only at the envelope (markdown fences, surrounding prose);
inside the structure the three category keys are required and each claim must
carry an id and a name.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .attack_kb import (
    AttackKnowledgeBase,
    is_technique_id,
    normalize_name,
    parse_technique_id,
)

CATEGORY_KEYS = ("exploitation_techniques", "primary_impacts", "secondary_impacts")
ENVELOPE_KEYS = frozenset(("cve_id",) + CATEGORY_KEYS)

VALID = "valid"
HALLUCINATED = "hallucinated"
MALFORMED = "malformed"
OUTPUT_CLASSES = (VALID, HALLUCINATED, MALFORMED)

OFFENSE_UNKNOWN_ID = "unknown_id"
OFFENSE_NAME_MISMATCH = "name_mismatch"
OFFENSE_BAD_FORMAT = "bad_format"

NAME_CHECK_STRICT = "strict"
NAME_CHECK_ID_ONLY = "id_only"


class CvemFormatError(ValueError):
    """Raised when raw output fails structural CVEM validation (-> malformed)."""

    def __init__(self, message: str, fragment: str = ""):
        super().__init__(message)
        self.fragment = fragment


@dataclass(frozen=True)
class TechniqueClaim:
    id: str
    name: str
    reason: Optional[str] = None

    def to_dict(self, include_reason: bool = True) -> dict:
        d = {"id": self.id, "name": self.name}
        if include_reason and self.reason is not None:
            d["reason"] = self.reason
        return d


@dataclass(frozen=True)
class CvemMapping:
    cve_id: str
    exploitation_techniques: tuple[TechniqueClaim, ...] = ()
    primary_impacts: tuple[TechniqueClaim, ...] = ()
    secondary_impacts: tuple[TechniqueClaim, ...] = ()
    # Extra category keys the model emitted: kept so Algorithm-1 style scoring
    # can include them in the key union, never re-serialized.
    extra_categories: Mapping[str, tuple[TechniqueClaim, ...]] = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    def category(self, key: str) -> tuple[TechniqueClaim, ...]:
        if key in CATEGORY_KEYS:
            return getattr(self, key)
        return self.extra_categories.get(key, ())

    def all_categories(self) -> dict[str, tuple[TechniqueClaim, ...]]:
        out = {key: getattr(self, key) for key in CATEGORY_KEYS}
        out.update(self.extra_categories)
        return out


@dataclass(frozen=True)
class Offense:
    category: str
    claim_or_fragment: str
    kind: str


@dataclass(frozen=True)
class ValidationOutcome:
    status: str
    offenses: tuple[Offense, ...] = ()

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "offenses": [
                {"category": o.category, "claim_or_fragment": o.claim_or_fragment, "kind": o.kind}
                for o in self.offenses
            ],
        }


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def _extract_json_object(raw: str) -> dict:
    """Find the first JSON object in arbitrary model output.

    Fenced code blocks are tried first, then every '{' in the text.
    """
    candidates = [m.group(1) for m in _FENCE_RE.finditer(raw)]
    candidates.append(raw)
    decoder = json.JSONDecoder()
    for text in candidates:
        pos = text.find("{")
        while pos != -1:
            try:
                obj, _ = decoder.raw_decode(text[pos:])
            except ValueError:
                pos = text.find("{", pos + 1)
                continue
            if isinstance(obj, dict):
                return obj
            pos = text.find("{", pos + 1)
    raise CvemFormatError("no JSON object found", fragment=raw.strip()[:200])


def _parse_claims(
    key: str, value: object, require_reason: bool, warnings: list[str]
) -> tuple[TechniqueClaim, ...]:
    if not isinstance(value, list):
        raise CvemFormatError(
            f"category {key} is not a list", fragment=json.dumps(value, ensure_ascii=False)[:200]
        )
    claims: list[TechniqueClaim] = []
    seen: set[str] = set()
    for item in value:
        if not isinstance(item, Mapping):
            raise CvemFormatError(
                f"claim in {key} is not an object",
                fragment=json.dumps(item, ensure_ascii=False)[:200],
            )
        cid, name = item.get("id"), item.get("name")
        if not isinstance(cid, str) or not cid.strip() or not isinstance(name, str) or not name.strip():
            raise CvemFormatError(
                f"claim in {key} missing id or name",
                fragment=json.dumps(item, ensure_ascii=False)[:200],
            )
        reason = item.get("reason")
        if require_reason and (not isinstance(reason, str) or not reason.strip()):
            raise CvemFormatError(
                f"claim in {key} missing reason",
                fragment=json.dumps(item, ensure_ascii=False)[:200],
            )
        # Canonicalize well-formed ids; ill-formed ones survive parsing and are
        # flagged as bad_format offenses at validation time.
        cid = parse_technique_id(cid) if is_technique_id(cid) else cid.strip()
        if cid in seen:
            warnings.append(f"duplicate {cid} in {key} dropped")
            continue
        seen.add(cid)
        claims.append(
            TechniqueClaim(id=cid, name=name.strip(), reason=reason if isinstance(reason, str) else None)
        )
    return tuple(claims)


def parse_cvem(raw: str, require_reason: bool = False) -> CvemMapping:
    """Parse raw model output into a CvemMapping.

    Raises CvemFormatError (the malformed class) when no JSON object can be
    found, a required category key is missing, a category is not a list, or a
    claim lacks id/name (or reason, when require_reason).
    """
    obj = _extract_json_object(raw)
    warnings: list[str] = []
    categories: dict[str, tuple[TechniqueClaim, ...]] = {}
    for key in CATEGORY_KEYS:
        if key not in obj:
            raise CvemFormatError(
                f"missing required key {key}",
                fragment=json.dumps(sorted(obj.keys()), ensure_ascii=False)[:200],
            )
        categories[key] = _parse_claims(key, obj[key], require_reason, warnings)

    extra: dict[str, tuple[TechniqueClaim, ...]] = {}
    for key, value in obj.items():
        if key in ENVELOPE_KEYS:
            continue
        if isinstance(value, list) and all(
            isinstance(it, Mapping) and isinstance(it.get("id"), str) and isinstance(it.get("name"), str)
            for it in value
        ):
            warnings.append(f"unexpected category key {key}")
            extra[key] = _parse_claims(key, value, require_reason=False, warnings=warnings)
        else:
            warnings.append(f"ignored unknown key {key}")

    cve_id = obj.get("cve_id")
    return CvemMapping(
        cve_id=cve_id if isinstance(cve_id, str) else "",
        exploitation_techniques=categories["exploitation_techniques"],
        primary_impacts=categories["primary_impacts"],
        secondary_impacts=categories["secondary_impacts"],
        extra_categories=extra,
        warnings=tuple(warnings),
    )


def serialize_cvem(m: CvemMapping, include_reasons: bool = True) -> str:
    """Canonical CVEM wire form: cve_id plus the three category keys, in order."""
    doc = {"cve_id": m.cve_id}
    for key in CATEGORY_KEYS:
        doc[key] = [c.to_dict(include_reason=include_reasons) for c in getattr(m, key)]
    return json.dumps(doc, ensure_ascii=False)


def mapping_to_dict(m: CvemMapping) -> dict:
    """Full-fidelity dict form (extra categories and warnings included), used
    for audit storage; the canonical wire form is serialize_cvem."""
    doc: dict = {"cve_id": m.cve_id}
    for key in CATEGORY_KEYS:
        doc[key] = [c.to_dict() for c in getattr(m, key)]
    if m.extra_categories:
        doc["extra_categories"] = {
            k: [c.to_dict() for c in claims] for k, claims in m.extra_categories.items()
        }
    if m.warnings:
        doc["warnings"] = list(m.warnings)
    return doc


def _claims_from_dicts(items) -> tuple[TechniqueClaim, ...]:
    return tuple(TechniqueClaim(id=d["id"], name=d["name"], reason=d.get("reason")) for d in items)


def mapping_from_dict(doc: Mapping) -> CvemMapping:
    return CvemMapping(
        cve_id=doc.get("cve_id", ""),
        exploitation_techniques=_claims_from_dicts(doc.get("exploitation_techniques", ())),
        primary_impacts=_claims_from_dicts(doc.get("primary_impacts", ())),
        secondary_impacts=_claims_from_dicts(doc.get("secondary_impacts", ())),
        extra_categories={
            k: _claims_from_dicts(v) for k, v in doc.get("extra_categories", {}).items()
        },
        warnings=tuple(doc.get("warnings", ())),
    )


def outcome_from_dict(doc: Mapping) -> ValidationOutcome:
    return ValidationOutcome(
        status=doc["status"],
        offenses=tuple(
            Offense(o["category"], o["claim_or_fragment"], o["kind"]) for o in doc.get("offenses", ())
        ),
    )


def claim_offense_kind(
    kb: AttackKnowledgeBase, claim: TechniqueClaim, name_check: str = NAME_CHECK_STRICT
) -> Optional[str]:
    """The offense a single claim commits against the KB, or None when clean."""
    if not is_technique_id(claim.id):
        return OFFENSE_BAD_FORMAT
    if not kb.is_known(claim.id):
        return OFFENSE_UNKNOWN_ID
    if name_check == NAME_CHECK_STRICT:
        known = kb.lookup_by_id(claim.id)
        if normalize_name(claim.name) != normalize_name(known.name):
            return OFFENSE_NAME_MISMATCH
    return None


def validate_cvem(
    kb: AttackKnowledgeBase, m: CvemMapping, name_check: str = NAME_CHECK_STRICT
) -> ValidationOutcome:
    """Check every claim against the KB valid set; >=1 offense means hallucinated."""
    offenses: list[Offense] = []
    for category, claims in m.all_categories().items():
        for claim in claims:
            kind = claim_offense_kind(kb, claim, name_check)
            if kind is not None:
                offenses.append(
                    Offense(category=category, claim_or_fragment=f"{claim.id} {claim.name}", kind=kind)
                )
    status = VALID if not offenses else HALLUCINATED
    return ValidationOutcome(status=status, offenses=tuple(offenses))


def evaluate_output(
    kb: AttackKnowledgeBase,
    raw: str,
    require_reason: bool = False,
    name_check: str = NAME_CHECK_STRICT,
) -> tuple[str, Optional[CvemMapping], ValidationOutcome]:
    """Parse + validate, returning (class, mapping-or-None, outcome)."""
    try:
        mapping = parse_cvem(raw, require_reason=require_reason)
    except CvemFormatError as exc:
        outcome = ValidationOutcome(
            status=MALFORMED,
            offenses=(Offense(category="", claim_or_fragment=exc.fragment or str(exc), kind=OFFENSE_BAD_FORMAT),),
        )
        return MALFORMED, None, outcome
    outcome = validate_cvem(kb, mapping, name_check=name_check)
    return outcome.status, mapping, outcome


def classify_output(
    kb: AttackKnowledgeBase,
    raw: str,
    require_reason: bool = False,
    name_check: str = NAME_CHECK_STRICT,
) -> str:
    """Total, deterministic three-way classification of raw model output."""
    return evaluate_output(kb, raw, require_reason, name_check)[0]


def mapping_id_sets(m: CvemMapping) -> dict[str, frozenset[str]]:
    """Technique-id sets per category key (all claims, canonical and extra keys)."""
    return {key: frozenset(c.id for c in claims) for key, claims in m.all_categories().items()}


def scoreable_id_sets(
    kb: AttackKnowledgeBase, m: CvemMapping, name_check: str = NAME_CHECK_STRICT
) -> dict[str, frozenset[str]]:
    """Id sets per category with fictitious claims dropped.

    A claim carrying any offense (unknown id, strict-mode name mismatch, bad
    id format) is excluded, so hallucinated rows are scored only on the claims
    that actually exist.
    """
    return {
        key: frozenset(c.id for c in claims if claim_offense_kind(kb, c, name_check) is None)
        for key, claims in m.all_categories().items()
    }
