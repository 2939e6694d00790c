"""Acceptance suite: one test per release criterion, at pinned tolerances.

Each test prints a single PASS line on success so a -s run reads as a
checklist; any assertion failure surfaces through pytest as usual.
"""
import json
import random
import time

import pytest
from fastapi.testclient import TestClient

from cvemap.attack_kb import technique_corpus_text
from cvemap.cve_ingest import format_model_input
from cvemap.cvem import (
    HALLUCINATED,
    MALFORMED,
    VALID,
    classify_output,
    parse_cvem,
    serialize_cvem,
)
from cvemap.llm_client import MockLlmProvider
from cvemap.metrics import (
    CategorizedIdSets,
    ScoredRow,
    ast_accuracy,
    category_f1,
    category_iou,
    corpus_metrics,
    row_from_outputs,
)
from cvemap.pipeline import CurationStore, run_generation
from cvemap.prompting import MODE_RAT_R, export_finetune, split_dataset, to_chat_example
from cvemap.retrieval import LabeledQuery, eval_retrieval, retrieve_top_n
from cvemap.server import create_app

from .conftest import synthetic_cves
from .oracles import (
    random_id_set,
    random_keyed_sets,
    ref_ast_accuracy,
    ref_corpus_macro,
    ref_f1,
    ref_iou,
    ref_rank_all,
)

ET, PI, SI = "exploitation_techniques", "primary_impacts", "secondary_impacts"


def _ok(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def test_algorithm_fidelity():
    started = time.perf_counter()
    m = CategorizedIdSets.from_dict({ET: {"T1553.004"}, PI: {"T1557"}, SI: {"T1003"}})
    g = CategorizedIdSets.from_dict({ET: {"T1553.004"}, PI: {"T1557", "T1040"}, SI: {"T1059"}})
    assert ast_accuracy(m, g) == 0.5

    identity = CategorizedIdSets.from_dict({ET: {"T1553.004"}, PI: {"T1557"}, SI: {"T1003", "T1059"}})
    assert ast_accuracy(identity, identity) == 1.0

    disjoint_m = CategorizedIdSets.from_dict({ET: {"T1189"}, PI: {"T1190"}, SI: {"T1040"}})
    disjoint_g = CategorizedIdSets.from_dict({ET: {"T1557"}, PI: {"T1003"}, SI: {"T1059"}})
    assert ast_accuracy(disjoint_m, disjoint_g) == 0.0

    elapsed = time.perf_counter() - started
    assert elapsed < 1.0, f"took {elapsed:.3f}s"
    _ok("tree-accuracy fidelity (worked fixture 0.5, identity 1.0, disjoint 0.0)")


def test_metrics_oracle_equivalence():
    started = time.perf_counter()
    rng = random.Random(20240601)
    keys = [ET, PI, SI, "extra_category"]
    ids = [f"T1{i:03d}" for i in range(18)]

    for _ in range(1000):
        m = random_keyed_sets(rng, keys, ids, max_keys=4, max_ids=6)
        g = random_keyed_sets(rng, keys, ids, max_keys=4, max_ids=6)
        got = ast_accuracy(CategorizedIdSets.from_dict(m), CategorizedIdSets.from_dict(g))
        assert abs(got - ref_ast_accuracy(m, g)) < 1e-12
        pred, gt = random_id_set(rng, ids, 6), random_id_set(rng, ids, 6)
        assert abs(category_f1(pred, gt) - ref_f1(pred, gt)) < 1e-12
        assert abs(category_iou(pred, gt) - ref_iou(pred, gt)) < 1e-12

    for _ in range(200):
        rows, ref_rows = [], []
        for _ in range(rng.randint(1, 5)):
            gold = {k: random_id_set(rng, ids, 6) for k in (ET, PI, SI)}
            roll = rng.random()
            if roll < 0.25:
                rows.append(ScoredRow(MALFORMED, None, CategorizedIdSets.from_dict(gold)))
                ref_rows.append((MALFORMED, None, gold))
            else:
                pred = {k: random_id_set(rng, ids, 6) for k in (ET, PI, SI)}
                cls = VALID if roll > 0.6 else HALLUCINATED
                rows.append(ScoredRow(cls, CategorizedIdSets.from_dict(pred), CategorizedIdSets.from_dict(gold)))
                ref_rows.append((cls, pred, gold))
        got = corpus_metrics(rows)
        want = ref_corpus_macro(ref_rows)
        assert abs(got.ast_accuracy - want["ast_accuracy"]) < 1e-12
        assert abs(got.hallucination_rate - want["hallucination_rate"]) < 1e-12
        assert abs(got.error_rate - want["error_rate"]) < 1e-12
        for key, label in ((ET, "ET"), (PI, "PI"), (SI, "SI")):
            assert abs(got.f1[label] - want["f1"][key]) < 1e-12
            assert abs(got.iou[label] - want["iou"][key]) < 1e-12

    elapsed = time.perf_counter() - started
    assert elapsed < 10.0, f"took {elapsed:.3f}s"
    _ok(f"metrics match brute-force reference within 1e-12 ({elapsed:.2f}s)")


def test_classification_partition(kb, golden_mapping):
    valid_raw = serialize_cvem(golden_mapping)
    hallucinated_raw = json.dumps({
        "cve_id": "CVE-0000-0000",
        ET: [{"id": "T9999", "name": "Imaginary Technique", "reason": "made up"}],
        PI: [], SI: [],
    })
    malformed_raw = "I cannot determine the techniques."
    corpus = [valid_raw] * 55 + [hallucinated_raw] * 30 + [malformed_raw] * 15
    assert len(corpus) == 100

    classes = [classify_output(kb, raw) for raw in corpus]
    n_valid = classes.count(VALID)
    n_hallucinated = classes.count(HALLUCINATED)
    n_malformed = classes.count(MALFORMED)
    assert n_valid + n_hallucinated + n_malformed == 100
    assert (n_valid, n_hallucinated, n_malformed) == (55, 30, 15)

    rows = [row_from_outputs(kb, raw, golden_mapping) for raw in corpus]
    report = corpus_metrics(rows)
    assert report.hallucination_rate == 30 / 100
    assert report.error_rate == 15 / 100
    _ok("classification partition over 100 mixed outputs; rates equal hand counts exactly")


def test_retrieval_correctness(kb, index, embedder):
    assert len(index) >= 50

    # every technique's own corpus text retrieves it at rank 1
    for t in kb.valid_techniques():
        top = retrieve_top_n(index, technique_corpus_text(t), 1, embedder)
        assert top.ranked[0].technique_id == t.id, t.id

    # independent brute-force cosine oracle confirms self-similarity is maximal
    # (ranks past the top can reorder within float summation noise, so the
    # oracle statement is about rank 1)
    doc_vectors = {tid: [float(x) for x in row] for tid, row in zip(index.technique_ids, index.matrix)}
    sample = random.Random(3).sample(list(kb.valid_techniques()), 8)
    for t in sample:
        query = technique_corpus_text(t)
        want = ref_rank_all(doc_vectors, [float(x) for x in embedder.embed(query)])
        got = retrieve_top_n(index, query, len(index), embedder).ids()
        assert want[0] == t.id
        assert got[0] == want[0]

    # synthetic label set with first-relevant ranks {1, 3, 11}
    queries = [
        "certificate trust subversion enables interception of traffic",
        "credential dumping from operating system memory stores",
        "phishing message with a malicious attachment lure",
    ]
    rankings = [retrieve_top_n(index, q, len(index), embedder).ids() for q in queries]
    labeled = [
        LabeledQuery(queries[0], frozenset({rankings[0][0]})),
        LabeledQuery(queries[1], frozenset({rankings[1][2]})),
        LabeledQuery(queries[2], frozenset({rankings[2][10]})),
    ]
    report = eval_retrieval(index, embedder, labeled)
    assert abs(report.mrr_at_10 - (1 + 1 / 3 + 0) / 3) < 1e-12

    # prefix stability for every cutoff
    query = "network interception of credentials"
    full = retrieve_top_n(index, query, len(index), embedder).ids()
    for n in range(1, len(index) + 1):
        assert retrieve_top_n(index, query, n, embedder).ids() == full[:n]

    _ok("retrieval self-rank-1 (oracle-confirmed), MRR@10 fixture, prefix stability")


def test_cvem_round_trip_and_golden(kb, golden_mapping):
    # golden worked example: category sizes 1 / 1 / 2
    assert [len(golden_mapping.exploitation_techniques),
            len(golden_mapping.primary_impacts),
            len(golden_mapping.secondary_impacts)] == [1, 1, 2]
    assert golden_mapping.exploitation_techniques[0].id == "T1553.004"
    assert golden_mapping.primary_impacts[0].id == "T1557"
    assert {c.id for c in golden_mapping.secondary_impacts} == {"T1003", "T1059"}

    wire = serialize_cvem(golden_mapping)
    assert serialize_cvem(parse_cvem(wire, require_reason=True)) == wire
    assert classify_output(kb, wire, require_reason=True) == VALID

    hallucinated = json.dumps({
        "cve_id": "CVE-2020-0601",
        ET: [{"id": "T9999", "name": "Imaginary Technique"}],
        PI: [], SI: [],
    })
    assert classify_output(kb, hallucinated) == HALLUCINATED
    assert classify_output(kb, "The mapping is unclear, sorry.") == MALFORMED
    _ok("golden mapping round-trips byte-identically; T9999 hallucinated; prose malformed")


def _curated_pairs(kb, n):
    """n synthetic curated (record, mapping) pairs built over the fixture KB."""
    techniques = kb.valid_techniques()
    records = synthetic_cves(n)
    pairs = []
    for i, record in enumerate(records):
        et = techniques[i % len(techniques)]
        pi = techniques[(i * 7 + 1) % len(techniques)]
        si = techniques[(i * 13 + 2) % len(techniques)]
        mapping = parse_cvem(json.dumps({
            "cve_id": record.cve_id,
            ET: [{"id": et.id, "name": et.name, "reason": f"Matches the flaw class in instance {i}."}],
            PI: [{"id": pi.id, "name": pi.name, "reason": "Direct result of exploitation."}],
            SI: [{"id": si.id, "name": si.name, "reason": "Enabled once access is gained."}],
        }), require_reason=True)
        pairs.append((record, mapping))
    return pairs


def test_dataset_export(kb, index, embedder, tmp_path):
    pairs = _curated_pairs(kb, 1212)
    train_path, val_path = export_finetune(
        pairs, kb, index, embedder, mode=MODE_RAT_R, top_n=10,
        out_dir=tmp_path / "finetune", train_fraction=0.8, seed=42,
    )
    train_lines = train_path.read_text(encoding="utf-8").splitlines()
    val_lines = val_path.read_text(encoding="utf-8").splitlines()
    assert (len(train_lines), len(val_lines)) == (969, 243)

    for line in train_lines + val_lines:
        doc = json.loads(line)
        roles = [m["role"] for m in doc["messages"]]
        assert roles == ["system", "user", "assistant"]
        assistant = doc["messages"][2]["content"]
        assert serialize_cvem(parse_cvem(assistant, require_reason=True)) == assistant
    _ok("1212 curated records export as 969/243 chat examples, all round-tripping")


def test_end_to_end_with_mock_llm(kb, index, embedder, fifty_cves, tmp_path):
    started = time.perf_counter()
    hallucinated_ids = [r.cve_id for r in fifty_cves[:12]]
    malformed_ids = [r.cve_id for r in fifty_cves[12:20]]
    script = {}
    for cve_id in hallucinated_ids:
        script[cve_id] = json.dumps({
            "cve_id": cve_id,
            ET: [{"id": "T9999", "name": "Imaginary Technique", "reason": "scripted hallucination"}],
            PI: [], SI: [],
        })
    for cve_id in malformed_ids:
        script[cve_id] = f"There is no mapping I can produce for {cve_id}."

    store = CurationStore(tmp_path / "store")
    run = run_generation(
        fifty_cves, kb, index, embedder,
        MockLlmProvider(script=script, default_behavior="valid"),
        mode=MODE_RAT_R, top_n=10, store=store,
    )
    totals = run.accounting.totals
    assert (totals.raw, totals.accurate, totals.curated) == (50, 30, 0)

    client = TestClient(create_app(store, kb))

    def monotone():
        acct = client.get("/api/accounting").json()
        rows = list(acct["per_year"].values()) + [acct["totals"]]
        for counts in rows:
            assert counts["curated"] <= counts["accurate"] <= counts["raw"] <= counts["cve_count"]
        return acct

    monotone()
    queue = client.get("/api/queue").json()
    assert queue["count"] == 30
    for item in queue["items"][:10]:
        resp = client.post(
            f"/api/records/{item['cve_id']}/rating",
            json={"accuracy": "Good", "relevance": "Good", "practicality": "Good", "rater_id": "acc"},
        )
        assert resp.status_code == 200
        monotone()

    final = monotone()
    assert final["totals"]["curated"] == 10
    assert final["totals"]["accurate"] == 30
    assert final["totals"]["raw"] == 50
    assert client.get("/api/queue").json()["count"] == 20

    elapsed = time.perf_counter() - started
    assert elapsed < 30.0, f"took {elapsed:.3f}s"
    _ok(f"end-to-end mock run: 50 raw / 30 accurate, 10 curated via API ({elapsed:.2f}s)")


def test_report_covers_all_table_columns(kb, index, embedder, golden_mapping):
    rows = [row_from_outputs(kb, serialize_cvem(golden_mapping), golden_mapping)]
    mapping_report = corpus_metrics(rows).to_dict()
    assert "ast_accuracy" in mapping_report
    for category in ("ET", "PI", "SI"):
        assert category in mapping_report["f1"]
        assert category in mapping_report["iou"]
    assert "hallucination_rate" in mapping_report and "error_rate" in mapping_report

    query = technique_corpus_text(kb.lookup_by_id("T1557"))
    retrieval_report = eval_retrieval(
        index, embedder, [LabeledQuery(query, frozenset({"T1557"}))]
    ).to_dict()
    assert "mrr_at_10" in retrieval_report and "map_at_100" in retrieval_report
    for metric in ("accuracy_at", "precision_at", "recall_at"):
        assert set(retrieval_report[metric]) == {"1", "5"}
    _ok("reports carry every model-table and retrieval-table column")


def test_split_rule_directly():
    train, val = split_dataset(list(range(1212)), 0.8, seed=0)
    assert (len(train), len(val)) == (969, 243)
    _ok("80/20 floor split: 1212 -> 969 train / 243 val")
