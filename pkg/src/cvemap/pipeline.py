"""End-to-end orchestration and the expert-curation store.

A generation run takes CVE records through retrieve -> prompt -> generate ->
classify and lands every output in the curation store. Records move through a
one-way lifecycle:

    raw ──(validates clean, non-empty exploitation list)── accurate
    accurate ──(expert rates all aspects Good)── curated
    accurate ──(expert rates any aspect Bad)─── rejected

Persistence is an append-only JSONL event log plus a materialized JSON
snapshot per record: diffable, inspectable, and replaying the log alone
reconstructs the exact store state. All mutations are serialized through a
single writer; reads are lock-free over snapshots.
"""
from __future__ import annotations

import datetime as _dt
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from . import cvem
from .attack_kb import AttackKnowledgeBase
from .cve_ingest import CveRecord, format_model_input
from .cvem import CvemMapping, ValidationOutcome
from .prompting import MODE_RAT_R, MODES, build_rat_prompt
from .retrieval import RetrievalIndex, retrieve_top_n
from .transport import TransportError

LIFECYCLE_RAW = "raw"
LIFECYCLE_ACCURATE = "accurate"
LIFECYCLE_CURATED = "curated"
LIFECYCLE_REJECTED = "rejected"

RATING_GOOD = "Good"
RATING_NORMAL = "Normal"
RATING_BAD = "Bad"
RATING_VALUES = (RATING_GOOD, RATING_NORMAL, RATING_BAD)
RATING_ASPECTS = ("accuracy", "relevance", "practicality")


class NotFoundError(KeyError):
    pass


class RatingStateError(ValueError):
    """Rating submitted for a record whose lifecycle does not allow it."""


class GenerationError(RuntimeError):
    """Every record in a run failed."""


@dataclass(frozen=True)
class ExpertRating:
    accuracy: str
    relevance: str
    practicality: str
    rater_id: str
    rated_at: str

    def __post_init__(self):
        for aspect in RATING_ASPECTS:
            value = getattr(self, aspect)
            if value not in RATING_VALUES:
                raise ValueError(f"rating aspect {aspect} must be one of {RATING_VALUES}, got {value!r}")

    @property
    def all_good(self) -> bool:
        return all(getattr(self, a) == RATING_GOOD for a in RATING_ASPECTS)

    @property
    def any_bad(self) -> bool:
        return any(getattr(self, a) == RATING_BAD for a in RATING_ASPECTS)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "relevance": self.relevance,
            "practicality": self.practicality,
            "rater_id": self.rater_id,
            "rated_at": self.rated_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExpertRating":
        return cls(d["accuracy"], d["relevance"], d["practicality"], d.get("rater_id", ""), d.get("rated_at", ""))


@dataclass(frozen=True)
class RetrievedContext:
    rank: int
    technique_id: str
    name: str
    score: float


@dataclass(frozen=True)
class CurationRecord:
    cve_id: str
    cve: CveRecord
    mapping: Optional[CvemMapping]
    validation: ValidationOutcome
    lifecycle: str
    raw_output: str
    retrieved: tuple[RetrievedContext, ...]
    mode: str
    top_n: int
    rating: Optional[ExpertRating] = None
    generated_at: str = ""

    @property
    def is_validation_accurate(self) -> bool:
        """Automatic validation verdict: clean and with a non-empty exploitation list."""
        return (
            self.validation.status == cvem.VALID
            and self.mapping is not None
            and len(self.mapping.exploitation_techniques) > 0
        )

    def to_dict(self) -> dict:
        return {
            "cve_id": self.cve_id,
            "cve": self.cve.to_dict(),
            "mapping": cvem.mapping_to_dict(self.mapping) if self.mapping is not None else None,
            "validation": self.validation.to_dict(),
            "lifecycle": self.lifecycle,
            "raw_output": self.raw_output,
            "retrieved": [
                {"rank": r.rank, "technique_id": r.technique_id, "name": r.name, "score": r.score}
                for r in self.retrieved
            ],
            "mode": self.mode,
            "top_n": self.top_n,
            "rating": self.rating.to_dict() if self.rating else None,
            "generated_at": self.generated_at,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CurationRecord":
        return cls(
            cve_id=d["cve_id"],
            cve=CveRecord.from_dict(d["cve"]),
            mapping=cvem.mapping_from_dict(d["mapping"]) if d.get("mapping") is not None else None,
            validation=cvem.outcome_from_dict(d["validation"]),
            lifecycle=d["lifecycle"],
            raw_output=d.get("raw_output", ""),
            retrieved=tuple(
                RetrievedContext(r["rank"], r["technique_id"], r["name"], r["score"])
                for r in d.get("retrieved", ())
            ),
            mode=d.get("mode", MODE_RAT_R),
            top_n=int(d.get("top_n", 0)),
            rating=ExpertRating.from_dict(d["rating"]) if d.get("rating") else None,
            generated_at=d.get("generated_at", ""),
        )


def compute_lifecycle(
    validation: ValidationOutcome, mapping: Optional[CvemMapping], rating: Optional[ExpertRating]
) -> str:
    """Lifecycle as a pure function of validation and the latest rating."""
    accurate = (
        validation.status == cvem.VALID
        and mapping is not None
        and len(mapping.exploitation_techniques) > 0
    )
    if not accurate:
        return LIFECYCLE_RAW
    if rating is None:
        return LIFECYCLE_ACCURATE
    if rating.any_bad:
        return LIFECYCLE_REJECTED
    if rating.all_good:
        return LIFECYCLE_CURATED
    return LIFECYCLE_ACCURATE


@dataclass
class TierCounts:
    cve_count: int = 0
    raw: int = 0
    accurate: int = 0
    curated: int = 0

    def to_dict(self) -> dict:
        return {"cve_count": self.cve_count, "raw": self.raw, "accurate": self.accurate, "curated": self.curated}


@dataclass
class RunAccounting:
    per_year: dict[int, TierCounts]
    totals: TierCounts

    def to_dict(self) -> dict:
        return {
            "per_year": {str(y): c.to_dict() for y, c in sorted(self.per_year.items())},
            "totals": self.totals.to_dict(),
        }


class CurationStore:
    """Event-sourced store of curation records under a directory.

    `events.jsonl` is the source of truth; `records/` holds one snapshot JSON
    per CVE for inspection. Opening a store replays the log.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "records").mkdir(exist_ok=True)
        self._lock = threading.Lock()
        self._records: dict[str, CurationRecord] = {}
        self._failures: list[dict] = []
        self._replay()

    @property
    def events_path(self) -> Path:
        return self.root / "events.jsonl"

    def _replay(self) -> None:
        if not self.events_path.exists():
            return
        with open(self.events_path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                event = json.loads(line)
                kind = event.get("event")
                if kind == "generated":
                    record = CurationRecord.from_dict(event["record"])
                    self._records[record.cve_id] = record
                elif kind == "rated":
                    record = self._records[event["cve_id"]]
                    rating = ExpertRating.from_dict(event["rating"])
                    self._records[record.cve_id] = replace(
                        record,
                        rating=rating,
                        lifecycle=compute_lifecycle(record.validation, record.mapping, rating),
                    )
                elif kind == "generation_failed":
                    self._failures.append(event)

    def _append_event(self, event: dict) -> None:
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(event, ensure_ascii=False) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _write_snapshot(self, record: CurationRecord) -> None:
        path = self.root / "records" / f"{record.cve_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(record.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")
        tmp.replace(path)

    def add_generated(self, record: CurationRecord) -> None:
        with self._lock:
            self._append_event({"event": "generated", "record": record.to_dict()})
            self._records[record.cve_id] = record
            self._write_snapshot(record)

    def record_failure(self, cve_id: str, year: int, error: str) -> None:
        with self._lock:
            event = {"event": "generation_failed", "cve_id": cve_id, "year": year, "error": error}
            self._append_event(event)
            self._failures.append(event)

    def get(self, cve_id: str) -> CurationRecord:
        try:
            return self._records[cve_id]
        except KeyError:
            raise NotFoundError(cve_id)

    def __contains__(self, cve_id: str) -> bool:
        return cve_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def list_records(self, status: str = "all") -> list[CurationRecord]:
        records = sorted(self._records.values(), key=lambda r: r.cve_id)
        if status == "all":
            return records
        if status == "accurate_unrated":
            return [r for r in records if r.lifecycle == LIFECYCLE_ACCURATE and r.rating is None]
        if status == "rated":
            return [r for r in records if r.rating is not None]
        if status == "raw":
            return [r for r in records if r.lifecycle == LIFECYCLE_RAW]
        raise ValueError(f"unknown queue status {status!r}")

    def submit_rating(
        self,
        cve_id: str,
        accuracy: str,
        relevance: str,
        practicality: str,
        rater_id: str,
        rated_at: Optional[str] = None,
    ) -> CurationRecord:
        """Store an expert rating and recompute the lifecycle.

        Only records that reached `accurate` can be rated (re-rating a curated
        or rejected record is a last-write-wins overwrite; both events stay in
        the log). Rating a raw record is a state error.
        """
        rating = ExpertRating(
            accuracy=accuracy,
            relevance=relevance,
            practicality=practicality,
            rater_id=rater_id,
            rated_at=rated_at or _dt.datetime.now(_dt.timezone.utc).isoformat(),
        )
        with self._lock:
            record = self._records.get(cve_id)
            if record is None:
                raise NotFoundError(cve_id)
            if record.lifecycle == LIFECYCLE_RAW:
                raise RatingStateError(f"{cve_id} is raw; only accurate records can be rated")
            updated = replace(
                record,
                rating=rating,
                lifecycle=compute_lifecycle(record.validation, record.mapping, rating),
            )
            self._append_event({"event": "rated", "cve_id": cve_id, "rating": rating.to_dict()})
            self._records[cve_id] = updated
            self._write_snapshot(updated)
            return updated

    def accounting(self) -> RunAccounting:
        per_year: dict[int, TierCounts] = {}
        totals = TierCounts()

        def bucket(year: int) -> TierCounts:
            return per_year.setdefault(year, TierCounts())

        for record in self._records.values():
            year = record.cve.published_year
            for counts in (bucket(year), totals):
                counts.cve_count += 1
                counts.raw += 1
                if record.is_validation_accurate:
                    counts.accurate += 1
                if record.lifecycle == LIFECYCLE_CURATED:
                    counts.curated += 1
        for failure in self._failures:
            for counts in (bucket(int(failure.get("year", 0))), totals):
                counts.cve_count += 1
        return RunAccounting(per_year=per_year, totals=totals)

    def export_curated(self) -> list[tuple[CveRecord, CvemMapping]]:
        """The curated records, sorted by CVE id, as (record, mapping) pairs."""
        return [
            (r.cve, r.mapping)
            for r in sorted(self._records.values(), key=lambda r: r.cve_id)
            if r.lifecycle == LIFECYCLE_CURATED and r.mapping is not None
        ]

    # Latest evaluation report, surfaced by the HTTP API.
    def save_metrics_report(self, report: Mapping) -> None:
        metrics_dir = self.root / "metrics"
        metrics_dir.mkdir(exist_ok=True)
        (metrics_dir / "latest.json").write_text(
            json.dumps(dict(report), ensure_ascii=False, indent=1), encoding="utf-8"
        )

    def latest_metrics(self) -> Optional[dict]:
        path = self.root / "metrics" / "latest.json"
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))


@dataclass
class GenerationRun:
    records: list[CurationRecord]
    accounting: RunAccounting
    failures: list[dict]


def run_generation(
    records: Sequence[CveRecord],
    kb: AttackKnowledgeBase,
    index: RetrievalIndex,
    embedder,
    llm,
    mode: str = MODE_RAT_R,
    top_n: int = 10,
    store: Optional[CurationStore] = None,
    max_workers: int = 4,
    name_check: str = cvem.NAME_CHECK_STRICT,
) -> GenerationRun:
    """Generate, classify, and store a mapping for every CVE.

    Transport errors are recorded per record and the run continues; the run
    itself fails only when every record failed.
    """
    if mode not in MODES:
        raise ValueError(f"unknown prompt mode {mode!r}")
    if not records:
        raise ValueError("no CVE records to process")

    def process(record: CveRecord):
        retrieved = retrieve_top_n(index, format_model_input(record), top_n, embedder)
        prompt = build_rat_prompt(record, retrieved, kb, mode)
        try:
            raw = llm.complete(prompt)
        except TransportError as exc:
            return record, exc
        classification, mapping, outcome = cvem.evaluate_output(
            kb, raw, require_reason=(mode == MODE_RAT_R), name_check=name_check
        )
        lifecycle = compute_lifecycle(outcome, mapping, rating=None)
        return record, CurationRecord(
            cve_id=record.cve_id,
            cve=record,
            mapping=mapping,
            validation=outcome,
            lifecycle=lifecycle,
            raw_output=raw,
            retrieved=tuple(
                RetrievedContext(i + 1, hit.technique_id, kb.lookup_by_id(hit.technique_id).name, hit.score)
                for i, hit in enumerate(retrieved.ranked)
            ),
            mode=mode,
            top_n=top_n,
            generated_at=_dt.datetime.now(_dt.timezone.utc).isoformat(),
        )

    if max_workers > 1 and len(records) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = list(pool.map(process, records))
    else:
        results = [process(r) for r in records]

    produced: list[CurationRecord] = []
    failures: list[dict] = []
    for record, outcome in results:
        if isinstance(outcome, TransportError):
            failure = {
                "event": "generation_failed",
                "cve_id": record.cve_id,
                "year": record.published_year,
                "error": str(outcome),
            }
            failures.append(failure)
            if store is not None:
                store.record_failure(record.cve_id, record.published_year, str(outcome))
        else:
            produced.append(outcome)
            if store is not None:
                store.add_generated(outcome)

    if not produced:
        raise GenerationError(f"all {len(records)} records failed")

    if store is not None:
        accounting = store.accounting()
    else:
        accounting = _accounting_for(produced, failures)
    return GenerationRun(records=produced, accounting=accounting, failures=failures)


def _accounting_for(records: Iterable[CurationRecord], failures: Iterable[dict]) -> RunAccounting:
    scratch = RunAccounting(per_year={}, totals=TierCounts())

    def bucket(year: int) -> TierCounts:
        return scratch.per_year.setdefault(year, TierCounts())

    for record in records:
        for counts in (bucket(record.cve.published_year), scratch.totals):
            counts.cve_count += 1
            counts.raw += 1
            if record.is_validation_accurate:
                counts.accurate += 1
            if record.lifecycle == LIFECYCLE_CURATED:
                counts.curated += 1
    for failure in failures:
        for counts in (bucket(int(failure.get("year", 0))), scratch.totals):
            counts.cve_count += 1
    return scratch
