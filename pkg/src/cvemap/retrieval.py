"""Embedding index over technique texts: build, top-N retrieval, evaluation.

The corpus is a few hundred documents, so retrieval is an exact brute-force
cosine scan; determinism and correctness dominate, and ties are broken by
ascending technique id so rankings are totally ordered and reproducible.

Two embedding providers ship: a remote HTTP provider (where a fine-tuned
model plugs in) and a fully offline deterministic baseline (hashed-token term
frequencies, dimension 1024, L2-normalized) used by tests and offline runs.
The baseline makes no claim of approximating any neural embedding.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Protocol, Sequence

import numpy as np

from . import transport
from .attack_kb import AttackKnowledgeBase, technique_corpus_text

BASELINE_DIMENSION = 1024
BASELINE_PROVIDER_ID = "hashed-tf-1024-v1"

_TOKEN_RE = re.compile(r"[a-z0-9.]+")


class EmbeddingError(ValueError):
    """Bad embedding input (empty text, no tokens)."""


class IndexConfigError(ValueError):
    """Provider/index mismatch (provider_id or dimension)."""


class EvalInputError(ValueError):
    """Bad labeled data handed to retrieval evaluation."""


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


def _normalize(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0 or not np.isfinite(norm):
        raise EmbeddingError("embedding vector has zero or non-finite norm")
    return vec / norm


class HashedTfEmbedder:
    """Deterministic offline baseline: hashed-token term-frequency vectors."""

    def __init__(self, dimension: int = BASELINE_DIMENSION):
        self.provider_id = BASELINE_PROVIDER_ID if dimension == BASELINE_DIMENSION else f"hashed-tf-{dimension}-v1"
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmbeddingError("cannot embed empty text")
        tokens = _TOKEN_RE.findall(text.lower())
        if not tokens:
            raise EmbeddingError("text has no tokens")
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in tokens:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(digest, "big") % self.dimension] += 1.0
        return _normalize(vec)


class RemoteEmbedder:
    """HTTP embedding endpoint speaking the common embeddings wire shape."""

    def __init__(
        self,
        endpoint_url: str,
        api_key: str = "",
        model_name: str = "",
        dimension: int = 0,
        timeout: float = 60.0,
        max_retries: int = 3,
        post: Optional[Callable] = None,
    ):
        if not endpoint_url:
            raise ValueError("remote embedding provider requires an endpoint URL")
        self.endpoint_url = endpoint_url
        self.api_key = api_key
        self.model_name = model_name
        self.provider_id = f"remote:{model_name or endpoint_url}"
        self.dimension = dimension  # 0 until the first response fixes it
        self.timeout = timeout
        self.max_retries = max_retries
        self._post = post

    @classmethod
    def from_env(cls, env: Optional[dict] = None) -> "RemoteEmbedder":
        env = env if env is not None else os.environ
        return cls(
            endpoint_url=env.get("CVEMAP_EMBED_ENDPOINT", ""),
            api_key=env.get("CVEMAP_EMBED_API_KEY", ""),
            model_name=env.get("CVEMAP_EMBED_MODEL", ""),
        )

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmbeddingError("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        kwargs = {"post": self._post} if self._post is not None else {}
        body = transport.post_json(
            self.endpoint_url,
            {"model": self.model_name, "input": [text]},
            headers,
            timeout=self.timeout,
            max_retries=self.max_retries,
            **kwargs,
        )
        try:
            values = body["data"][0]["embedding"]
            vec = np.asarray(values, dtype=np.float64)
        except (KeyError, IndexError, TypeError, ValueError):
            raise transport.TransportError(f"malformed embedding response from {self.endpoint_url}")
        if vec.ndim != 1 or vec.size == 0 or not np.all(np.isfinite(vec)):
            raise transport.TransportError(f"malformed embedding vector from {self.endpoint_url}")
        if self.dimension == 0:
            self.dimension = int(vec.size)
        elif vec.size != self.dimension:
            raise transport.TransportError(
                f"embedding dimension changed: expected {self.dimension}, got {vec.size}"
            )
        return _normalize(vec)


@dataclass(frozen=True)
class RankedHit:
    technique_id: str
    score: float


@dataclass(frozen=True)
class RetrievalResult:
    ranked: tuple[RankedHit, ...]

    def ids(self) -> list[str]:
        return [hit.technique_id for hit in self.ranked]


@dataclass(frozen=True)
class RetrievalIndex:
    """Immutable embedding index; safe for concurrent retrieval reads."""

    provider_id: str
    dimension: int
    technique_ids: tuple[str, ...]
    matrix: np.ndarray  # shape (N, dimension), unit-norm rows
    gaps: tuple[str, ...] = ()  # technique ids skipped under --skip-failures

    def __len__(self) -> int:
        return len(self.technique_ids)

    def save(self, path: str | Path) -> None:
        doc = {
            "provider_id": self.provider_id,
            "dimension": self.dimension,
            "gaps": list(self.gaps),
            "entries": [
                {"technique_id": tid, "vector": [float(x) for x in row]}
                for tid, row in zip(self.technique_ids, self.matrix)
            ],
        }
        Path(path).write_text(json.dumps(doc), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RetrievalIndex":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        ids = tuple(e["technique_id"] for e in doc["entries"])
        matrix = np.asarray([e["vector"] for e in doc["entries"]], dtype=np.float64)
        if matrix.size == 0:
            matrix = matrix.reshape(0, doc["dimension"])
        return cls(
            provider_id=doc["provider_id"],
            dimension=doc["dimension"],
            technique_ids=ids,
            matrix=matrix,
            gaps=tuple(doc.get("gaps", ())),
        )

    def export_csv(self, path: str | Path) -> None:
        """(technique_id, vector) rows for external visualization tooling."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["technique_id"] + [f"d{i}" for i in range(self.dimension)])
            for tid, row in zip(self.technique_ids, self.matrix):
                writer.writerow([tid] + [repr(float(x)) for x in row])


def build_index(
    kb: AttackKnowledgeBase,
    provider: EmbeddingProvider,
    parallelism: int = 4,
    skip_failures: bool = False,
) -> RetrievalIndex:
    """Embed every valid (non-revoked) technique's corpus text.

    Any provider failure aborts the build unless skip_failures is set, in
    which case the gap is recorded on the index.
    """
    techniques = kb.valid_techniques()
    texts = [technique_corpus_text(t) for t in techniques]

    def embed_one(text: str):
        try:
            return provider.embed(text)
        except Exception as exc:
            if skip_failures:
                return exc
            raise

    if parallelism > 1 and len(texts) > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(embed_one, texts))
    else:
        results = [embed_one(text) for text in texts]

    ids: list[str] = []
    rows: list[np.ndarray] = []
    gaps: list[str] = []
    for t, result in zip(techniques, results):
        if isinstance(result, Exception):
            gaps.append(t.id)
        else:
            ids.append(t.id)
            rows.append(result)

    dimension = provider.dimension or (rows[0].size if rows else 0)
    matrix = np.vstack(rows) if rows else np.zeros((0, dimension))
    return RetrievalIndex(
        provider_id=provider.provider_id,
        dimension=int(dimension),
        technique_ids=tuple(ids),
        matrix=matrix,
        gaps=tuple(gaps),
    )


def retrieve_top_n(
    index: RetrievalIndex, query: str, n: int, provider: EmbeddingProvider
) -> RetrievalResult:
    """Rank the whole corpus by cosine similarity; return min(n, corpus) hits.

    Scores are non-increasing; equal scores order by ascending technique id.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if provider.provider_id != index.provider_id:
        raise IndexConfigError(
            f"index built with provider {index.provider_id!r}, queried with {provider.provider_id!r}"
        )
    qvec = provider.embed(query)
    if qvec.size != index.dimension:
        raise IndexConfigError(
            f"index dimension {index.dimension} != query dimension {qvec.size}"
        )
    scores = index.matrix @ qvec
    order = sorted(range(len(index)), key=lambda i: (-scores[i], index.technique_ids[i]))
    hits = tuple(
        RankedHit(index.technique_ids[i], float(min(1.0, max(-1.0, scores[i]))))
        for i in order[: min(n, len(index))]
    )
    return RetrievalResult(ranked=hits)


@dataclass(frozen=True)
class LabeledQuery:
    query: str
    relevant: frozenset[str]


@dataclass(frozen=True)
class RetrievalEvalReport:
    mrr_at_10: float
    map_at_100: float
    accuracy_at: Mapping[int, float]
    precision_at: Mapping[int, float]
    recall_at: Mapping[int, float]
    query_count: int

    def to_dict(self) -> dict:
        return {
            "mrr_at_10": self.mrr_at_10,
            "map_at_100": self.map_at_100,
            "accuracy_at": {str(k): v for k, v in self.accuracy_at.items()},
            "precision_at": {str(k): v for k, v in self.precision_at.items()},
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "query_count": self.query_count,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=1)


def eval_retrieval(
    index: RetrievalIndex,
    provider: EmbeddingProvider,
    labeled: Sequence[LabeledQuery],
    ks: Iterable[int] = (1, 5),
) -> RetrievalEvalReport:
    """Ranked-retrieval quality over a labeled query set.

    MRR@10 uses the first relevant rank within the top 10 (0 past the cutoff);
    AP@100 divides the summed precisions at relevant ranks by min(|relevant|,
    100), the standard cutoff convention; Accuracy@k is the fraction of
    queries with a relevant hit in the top k; Precision/Recall@k average the
    per-query fractions.
    """
    if not labeled:
        raise EvalInputError("labeled query set is empty")
    known = set(index.technique_ids)
    for q in labeled:
        if not q.relevant:
            raise EvalInputError(f"query {q.query[:40]!r} has an empty relevant set")
        for tid in q.relevant:
            if tid not in known:
                raise EvalInputError(f"relevant id not in index: {tid}")

    ks = sorted(set(ks))
    mrr_sum = 0.0
    ap_sum = 0.0
    hits_at = {k: 0 for k in ks}
    precision_sum = {k: 0.0 for k in ks}
    recall_sum = {k: 0.0 for k in ks}

    for q in labeled:
        ranking = retrieve_top_n(index, q.query, len(index), provider).ids()
        first_relevant = next((i + 1 for i, tid in enumerate(ranking[:10]) if tid in q.relevant), None)
        if first_relevant is not None:
            mrr_sum += 1.0 / first_relevant

        relevant_seen = 0
        precision_total = 0.0
        for rank, tid in enumerate(ranking[:100], start=1):
            if tid in q.relevant:
                relevant_seen += 1
                precision_total += relevant_seen / rank
        ap_sum += precision_total / min(len(q.relevant), 100)

        for k in ks:
            top_k_hits = sum(1 for tid in ranking[:k] if tid in q.relevant)
            if top_k_hits:
                hits_at[k] += 1
            precision_sum[k] += top_k_hits / k
            recall_sum[k] += top_k_hits / len(q.relevant)

    n = len(labeled)
    return RetrievalEvalReport(
        mrr_at_10=mrr_sum / n,
        map_at_100=ap_sum / n,
        accuracy_at={k: hits_at[k] / n for k in ks},
        precision_at={k: precision_sum[k] / n for k in ks},
        recall_at={k: recall_sum[k] / n for k in ks},
        query_count=n,
    )
