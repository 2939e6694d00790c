import math
import random

import numpy as np
import pytest

from cvemap.attack_kb import load_attack_bundle, technique_corpus_text
from cvemap.retrieval import (
    BASELINE_DIMENSION,
    EmbeddingError,
    EvalInputError,
    HashedTfEmbedder,
    IndexConfigError,
    LabeledQuery,
    RemoteEmbedder,
    RetrievalIndex,
    build_index,
    eval_retrieval,
    retrieve_top_n,
)
from cvemap.transport import TransportError

from . import fixtures_attack
from .oracles import ref_rank_all, ref_retrieval_metrics


class TestBaselineEmbedder:
    def test_unit_norm_and_dimension(self, embedder):
        vec = embedder.embed("T1557 Adversary-in-the-Middle intercepts traffic")
        assert vec.shape == (BASELINE_DIMENSION,)
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-6
        assert np.all(np.isfinite(vec))

    def test_deterministic(self, embedder):
        text = "T1003 OS Credential Dumping reads LSASS memory"
        assert np.array_equal(embedder.embed(text), embedder.embed(text))

    def test_distinct_texts_not_identical(self, embedder):
        # hand-check with the hashed-TF construction itself: one token each,
        # different buckets, so cosine must be 0 here (and < 1 in general)
        a, b = embedder.embed("aaa"), embedder.embed("zzz")
        assert float(a @ b) < 1.0

    def test_empty_text_rejected(self, embedder):
        with pytest.raises(EmbeddingError):
            embedder.embed("")
        with pytest.raises(EmbeddingError):
            embedder.embed("!!! ???")


class TestBuildIndex:
    def test_cardinality_matches_valid_set(self, kb, index):
        assert len(index) == len(kb.valid_ids)

    def test_rebuild_identical(self, kb, embedder, index):
        again = build_index(kb, embedder)
        assert again.technique_ids == index.technique_ids
        assert np.array_equal(again.matrix, index.matrix)

    def test_revoked_excluded(self, index):
        assert "T1043" not in index.technique_ids

    def test_small_kb_cardinality(self, embedder):
        bundle = {
            "objects": [
                fixtures_attack.attack_pattern("T1557", "AiTM", [], "intercept"),
                fixtures_attack.attack_pattern("T1040", "Network Sniffing", [], "sniff"),
                fixtures_attack.attack_pattern("T1003", "OS Credential Dumping", [], "dump"),
            ]
        }
        idx = build_index(load_attack_bundle(bundle), embedder)
        assert len(idx) == 3

    def test_provider_failure_aborts_unless_skipping(self, kb):
        class Flaky:
            provider_id = "flaky"
            dimension = 8

            def embed(self, text):
                if "T1557" in text:
                    raise RuntimeError("boom")
                vec = np.zeros(8)
                vec[hash(text) % 8] = 1.0
                return vec

        with pytest.raises(RuntimeError):
            build_index(kb, Flaky(), parallelism=1)
        idx = build_index(kb, Flaky(), parallelism=1, skip_failures=True)
        assert "T1557" in idx.gaps
        assert "T1557" not in idx.technique_ids


class TestRetrieve:
    def test_self_query_rank_one(self, kb, index, embedder):
        t = kb.lookup_by_id("T1557")
        result = retrieve_top_n(index, technique_corpus_text(t), 5, embedder)
        assert result.ranked[0].technique_id == "T1557"
        assert result.ranked[0].score == pytest.approx(1.0, abs=1e-9)

    def test_truncation_to_corpus_size(self, embedder):
        bundle = {
            "objects": [
                fixtures_attack.attack_pattern("T1557", "AiTM", [], "intercept"),
                fixtures_attack.attack_pattern("T1040", "Network Sniffing", [], "sniff"),
                fixtures_attack.attack_pattern("T1003", "OS Credential Dumping", [], "dump"),
            ]
        }
        idx = build_index(load_attack_bundle(bundle), embedder)
        result = retrieve_top_n(idx, "network traffic interception", 100, embedder)
        assert len(result.ranked) == 3

    def test_tie_break_ascending_id(self, embedder):
        # identical descriptions -> identical vectors for two techniques
        bundle = {
            "objects": [
                fixtures_attack.attack_pattern("T1595", "Scanning", [], "same words here"),
                fixtures_attack.attack_pattern("T1046", "Service Discovery", [], "same words here"),
            ]
        }
        kb = load_attack_bundle(bundle)

        class NameBlind:
            provider_id = "name-blind"
            dimension = 4

            def embed(self, text):
                return np.asarray([1.0, 0.0, 0.0, 0.0])

        idx = build_index(kb, NameBlind())
        result = retrieve_top_n(idx, "anything", 2, NameBlind())
        assert [h.technique_id for h in result.ranked] == ["T1046", "T1595"]
        assert result.ranked[0].score == result.ranked[1].score

    def test_prefix_stability(self, index, embedder):
        query = "certificate trust subversion enables interception"
        full = retrieve_top_n(index, query, len(index), embedder).ids()
        for n in (1, 3, 10, 25, len(index)):
            assert retrieve_top_n(index, query, n, embedder).ids() == full[:n]

    def test_scores_non_increasing(self, index, embedder):
        scores = [h.score for h in retrieve_top_n(index, "credential theft", 50, embedder).ranked]
        assert all(a >= b for a, b in zip(scores, scores[1:]))
        assert all(-1.0 <= s <= 1.0 for s in scores)

    def test_provider_mismatch_rejected(self, index):
        other = HashedTfEmbedder(dimension=128)
        with pytest.raises(IndexConfigError):
            retrieve_top_n(index, "x", 5, other)

    def test_n_must_be_positive(self, index, embedder):
        with pytest.raises(ValueError):
            retrieve_top_n(index, "x", 0, embedder)

    def test_agrees_with_bruteforce_ranking(self, kb, index, embedder):
        doc_vectors = {
            tid: [float(x) for x in row] for tid, row in zip(index.technique_ids, index.matrix)
        }
        for query in ("credential dumping from memory", "phishing attachment lure",
                      "T1557 Adversary-in-the-Middle"):
            qvec = [float(x) for x in embedder.embed(query)]
            assert retrieve_top_n(index, query, len(index), embedder).ids() == ref_rank_all(
                doc_vectors, qvec
            )


class TestIndexPersistence:
    def test_snapshot_round_trip(self, index, tmp_path):
        path = tmp_path / "index.json"
        index.save(path)
        loaded = RetrievalIndex.load(path)
        assert loaded.provider_id == index.provider_id
        assert loaded.dimension == index.dimension
        assert loaded.technique_ids == index.technique_ids
        assert np.array_equal(loaded.matrix, index.matrix)

    def test_csv_export(self, index, tmp_path):
        path = tmp_path / "vectors.csv"
        index.export_csv(path)
        lines = path.read_text().splitlines()
        assert len(lines) == len(index) + 1
        assert lines[0].startswith("technique_id,d0,")
        assert lines[1].split(",")[0] == index.technique_ids[0]


class TestEvalRetrieval:
    def _index_for(self, embedder, n=12):
        objs = [
            fixtures_attack.attack_pattern(
                f"T1{600 + i:03d}", f"Synthetic {i}", [], f"synthetic document number {i} about topic-{i}"
            )
            for i in range(n)
        ]
        kb = load_attack_bundle({"objects": objs})
        return kb, build_index(kb, embedder)

    def test_single_relevant_at_rank_3(self, embedder):
        kb, idx = self._index_for(embedder)
        query = "synthetic document number 4 about topic-4"
        ranking = retrieve_top_n(idx, query, len(idx), embedder).ids()
        target = ranking[2]  # choose the item actually at rank 3
        report = eval_retrieval(idx, embedder, [LabeledQuery(query, frozenset({target}))])
        assert report.mrr_at_10 == pytest.approx(1 / 3, abs=1e-12)
        assert report.accuracy_at[1] == 0.0
        assert report.accuracy_at[5] == 1.0

    def test_perfect_query(self, embedder):
        kb, idx = self._index_for(embedder)
        query = "synthetic document number 7 about topic-7"
        top = retrieve_top_n(idx, query, 1, embedder).ids()[0]
        report = eval_retrieval(idx, embedder, [LabeledQuery(query, frozenset({top}))])
        assert report.mrr_at_10 == 1.0
        assert report.map_at_100 == 1.0
        assert report.precision_at[1] == 1.0
        assert report.recall_at[1] == 1.0

    def test_relevant_past_cutoff_contributes_zero_mrr(self, embedder):
        kb, idx = self._index_for(embedder, n=15)
        query = "synthetic document number 0 about topic-0"
        ranking = retrieve_top_n(idx, query, len(idx), embedder).ids()
        report = eval_retrieval(idx, embedder, [LabeledQuery(query, frozenset({ranking[10]}))])
        assert report.mrr_at_10 == 0.0
        assert report.accuracy_at[1] == 0.0

    def test_accuracy1_equals_precision1(self, embedder):
        kb, idx = self._index_for(embedder)
        queries = [
            LabeledQuery("synthetic document number 2 about topic-2", frozenset({"T1602", "T1603"})),
            LabeledQuery("totally unrelated words qqq", frozenset({"T1605"})),
        ]
        report = eval_retrieval(idx, embedder, queries)
        assert report.accuracy_at[1] == pytest.approx(report.precision_at[1], abs=1e-12)

    def test_unknown_relevant_id_rejected(self, index, embedder):
        with pytest.raises(EvalInputError, match="T9999"):
            eval_retrieval(index, embedder, [LabeledQuery("q", frozenset({"T9999"}))])
        with pytest.raises(EvalInputError):
            eval_retrieval(index, embedder, [])
        with pytest.raises(EvalInputError):
            eval_retrieval(index, embedder, [LabeledQuery("q", frozenset())])

    def test_metric_ranges_and_monotonicity(self, embedder):
        kb, idx = self._index_for(embedder, n=15)
        rng = random.Random(5)
        ids = list(idx.technique_ids)
        queries = [
            LabeledQuery(
                f"synthetic document number {i} about topic-{i}",
                frozenset(rng.sample(ids, rng.randint(1, 4))),
            )
            for i in range(8)
        ]
        report = eval_retrieval(idx, embedder, queries, ks=(1, 3, 5, 10))
        values = [report.mrr_at_10, report.map_at_100]
        values += list(report.accuracy_at.values()) + list(report.precision_at.values())
        values += list(report.recall_at.values())
        assert all(0.0 <= v <= 1.0 for v in values)
        ks = sorted(report.recall_at)
        assert all(report.recall_at[a] <= report.recall_at[b] + 1e-12 for a, b in zip(ks, ks[1:]))
        assert all(report.accuracy_at[a] <= report.accuracy_at[b] + 1e-12 for a, b in zip(ks, ks[1:]))

    def test_agrees_with_bruteforce_reference(self, embedder):
        rng = random.Random(42)
        for trial in range(10):
            n_docs = rng.randint(3, 20)
            objs = [
                fixtures_attack.attack_pattern(
                    f"T1{700 + i:03d}", f"Doc {i}", [],
                    " ".join(rng.choice(["alpha", "beta", "gamma", "delta", "epsilon"]) for _ in range(6)),
                )
                for i in range(n_docs)
            ]
            kb = load_attack_bundle({"objects": objs})
            idx = build_index(kb, embedder)
            ids = list(idx.technique_ids)
            queries = []
            for _ in range(rng.randint(1, 10)):
                text = " ".join(rng.choice(["alpha", "beta", "gamma", "delta", "zeta"]) for _ in range(4))
                queries.append(LabeledQuery(text, frozenset(rng.sample(ids, rng.randint(1, min(4, n_docs))))))
            report = eval_retrieval(idx, embedder, queries)
            rankings = [retrieve_top_n(idx, q.query, len(idx), embedder).ids() for q in queries]
            want = ref_retrieval_metrics(rankings, [set(q.relevant) for q in queries])
            assert abs(report.mrr_at_10 - want["mrr_at_10"]) < 1e-12
            assert abs(report.map_at_100 - want["map_at_100"]) < 1e-12
            for k in (1, 5):
                assert abs(report.accuracy_at[k] - want["accuracy_at"][k]) < 1e-12
                assert abs(report.precision_at[k] - want["precision_at"][k]) < 1e-12
                assert abs(report.recall_at[k] - want["recall_at"][k]) < 1e-12


class TestRemoteEmbedder:
    def test_parses_and_normalizes(self):
        def fake_post(url, json=None, headers=None, timeout=None):
            class Resp:
                status_code = 200

                def json(self):
                    return {"data": [{"embedding": [3.0, 4.0]}]}

            return Resp()

        provider = RemoteEmbedder("http://embed.test/v1", api_key="k", post=fake_post)
        vec = provider.embed("hello")
        assert vec == pytest.approx([0.6, 0.8])
        assert provider.dimension == 2

    def test_malformed_body_is_transport_error(self):
        def fake_post(url, json=None, headers=None, timeout=None):
            class Resp:
                status_code = 200

                def json(self):
                    return {"unexpected": True}

            return Resp()

        provider = RemoteEmbedder("http://embed.test/v1", post=fake_post)
        with pytest.raises(TransportError):
            provider.embed("hello")
