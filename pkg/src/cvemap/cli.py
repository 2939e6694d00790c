"""Command-line interface: kb/index building, generation runs, evaluation, serving."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import cvem, metrics, prompting
from .attack_kb import AttackKnowledgeBase, load_attack_bundle
from .cve_ingest import load_cve_directory, read_records_jsonl, write_records_jsonl
from .llm_client import HttpLlmProvider, LlmConfig, MockLlmProvider
from .pipeline import CurationStore, run_generation
from .retrieval import (
    HashedTfEmbedder,
    LabeledQuery,
    RemoteEmbedder,
    RetrievalIndex,
    build_index,
    eval_retrieval,
    retrieve_top_n,
)


def _embedder(name: str):
    if name == "baseline":
        return HashedTfEmbedder()
    if name == "remote":
        return RemoteEmbedder.from_env()
    raise click.BadParameter(f"unknown embedding provider {name!r}")


@click.group()
def main():
    """CVE to ATT&CK mapping pipeline."""


@main.group()
def kb():
    """ATT&CK knowledge base commands."""


@kb.command("load")
@click.option("--bundle", "bundle_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--strict", is_flag=True, help="Fail when a sub-technique lacks its parent.")
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def kb_load(bundle_path: Path, strict: bool, out_path: Path):
    """Load a STIX-style bundle and cache a KB snapshot."""
    doc = json.loads(bundle_path.read_text(encoding="utf-8"))
    knowledge = load_attack_bundle(doc, strict=strict)
    knowledge.save(out_path)
    for warning in knowledge.warnings:
        click.echo(f"warning: {warning}", err=True)
    click.echo(
        f"loaded {len(knowledge)} techniques "
        f"({len(knowledge.valid_ids)} valid) from {bundle_path} -> {out_path}"
    )


@main.command()
@click.option("--cve-dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--year", type=int, default=None)
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def ingest(cve_dir: Path, year, out_path: Path):
    """Parse CVE record files into a normalized JSONL store."""
    records = load_cve_directory(cve_dir, year=year)
    write_records_jsonl(records, out_path)
    click.echo(f"ingested {len(records)} CVE records -> {out_path}")


@main.group()
def index():
    """Embedding index commands."""


@index.command("build")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--provider", default="baseline", type=click.Choice(["baseline", "remote"]))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--skip-failures", is_flag=True)
@click.option("--parallelism", default=4, show_default=True)
def index_build(kb_path: Path, provider: str, out_path: Path, skip_failures: bool, parallelism: int):
    knowledge = AttackKnowledgeBase.load(kb_path)
    idx = build_index(knowledge, _embedder(provider), parallelism=parallelism, skip_failures=skip_failures)
    idx.save(out_path)
    message = f"indexed {len(idx)} techniques -> {out_path}"
    if idx.gaps:
        message += f" ({len(idx.gaps)} gaps)"
    click.echo(message)


@index.command("export-csv")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
def index_export_csv(index_path: Path, out_path: Path):
    """Export (technique_id, vector) rows for external plotting."""
    RetrievalIndex.load(index_path).export_csv(out_path)
    click.echo(f"wrote {out_path}")


@main.command()
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--query", required=True)
@click.option("--n", default=10, show_default=True)
@click.option("--provider", default="baseline", type=click.Choice(["baseline", "remote"]))
def retrieve(index_path: Path, query: str, n: int, provider: str):
    """Top-N techniques for a query string."""
    idx = RetrievalIndex.load(index_path)
    result = retrieve_top_n(idx, query, n, _embedder(provider))
    for rank, hit in enumerate(result.ranked, start=1):
        click.echo(f"{rank:4d}  {hit.technique_id:<12} {hit.score:.6f}")


@main.command()
@click.option("--cves", "cves_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--mode", default="rat-r", type=click.Choice(list(prompting.MODES)))
@click.option("--n", "top_n", default=10, show_default=True)
@click.option("--provider", default="mock", type=click.Choice(["mock", "remote"]))
@click.option("--embed-provider", default="baseline", type=click.Choice(["baseline", "remote"]))
@click.option("--store", "store_dir", required=True, type=click.Path(path_type=Path))
@click.option("--mock-script", type=click.Path(exists=True, path_type=Path), default=None)
@click.option("--mock-default", default="valid", type=click.Choice(["valid", "hallucinate", "malformed"]))
@click.option("--name-check", default=cvem.NAME_CHECK_STRICT, type=click.Choice([cvem.NAME_CHECK_STRICT, cvem.NAME_CHECK_ID_ONLY]))
@click.option("--max-workers", default=4, show_default=True)
def generate(
    cves_path, kb_path, index_path, mode, top_n, provider, embed_provider,
    store_dir, mock_script, mock_default, name_check, max_workers,
):
    """Run ingest -> retrieve -> prompt -> generate -> validate over a CVE store."""
    records = read_records_jsonl(cves_path)
    knowledge = AttackKnowledgeBase.load(kb_path)
    idx = RetrievalIndex.load(index_path)
    if provider == "mock":
        llm = (
            MockLlmProvider.from_script_file(mock_script, default_behavior=mock_default)
            if mock_script
            else MockLlmProvider(default_behavior=mock_default)
        )
    else:
        llm = HttpLlmProvider(LlmConfig.from_env())
    store = CurationStore(store_dir)
    run = run_generation(
        records, knowledge, idx, _embedder(embed_provider), llm,
        mode=mode, top_n=top_n, store=store, max_workers=max_workers, name_check=name_check,
    )
    totals = run.accounting.totals
    click.echo(
        f"processed {totals.cve_count} CVEs: raw={totals.raw} accurate={totals.accurate} "
        f"curated={totals.curated} failures={len(run.failures)}"
    )


@main.command()
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--in", "in_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--require-reason", is_flag=True)
@click.option("--name-check", default=cvem.NAME_CHECK_STRICT, type=click.Choice([cvem.NAME_CHECK_STRICT, cvem.NAME_CHECK_ID_ONLY]))
def validate(kb_path: Path, in_path: Path, out_path: Path, require_reason: bool, name_check: str):
    """Classify raw model outputs (JSONL of {cve_id, raw}) into outcome JSONL."""
    knowledge = AttackKnowledgeBase.load(kb_path)
    n = 0
    with open(in_path, encoding="utf-8") as src, open(out_path, "w", encoding="utf-8") as dst:
        for line in src:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            _, _, outcome = cvem.evaluate_output(
                knowledge, row["raw"], require_reason=require_reason, name_check=name_check
            )
            dst.write(json.dumps({"cve_id": row.get("cve_id", ""), **outcome.to_dict()}, ensure_ascii=False) + "\n")
            n += 1
    click.echo(f"classified {n} outputs -> {out_path}")


@main.group(name="eval")
def eval_group():
    """Evaluation harness."""


@eval_group.command("retrieval")
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--labels", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--provider", default="baseline", type=click.Choice(["baseline", "remote"]))
@click.option("--out", "out_path", type=click.Path(path_type=Path), default=None)
def eval_retrieval_cmd(index_path: Path, labels: Path, provider: str, out_path):
    """Retrieval metrics over labeled queries (JSONL of {query, relevant})."""
    idx = RetrievalIndex.load(index_path)
    labeled = []
    with open(labels, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                row = json.loads(line)
                labeled.append(LabeledQuery(query=row["query"], relevant=frozenset(row["relevant"])))
    report = eval_retrieval(idx, _embedder(provider), labeled)
    click.echo(report.to_json())
    if out_path:
        Path(out_path).write_text(report.to_json(), encoding="utf-8")


@eval_group.command("mappings")
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--pred", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--gold", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_path", required=True, type=click.Path(path_type=Path))
@click.option("--store", "store_dir", type=click.Path(path_type=Path), default=None,
              help="Also record the report as the store's latest metrics.")
@click.option("--aggregation", default=metrics.AGGREGATION_MACRO,
              type=click.Choice([metrics.AGGREGATION_MACRO, metrics.AGGREGATION_MICRO]))
@click.option("--collapse-subtechniques", is_flag=True)
@click.option("--exclude-malformed", is_flag=True)
@click.option("--require-reason", is_flag=True)
@click.option("--name-check", default=cvem.NAME_CHECK_STRICT, type=click.Choice([cvem.NAME_CHECK_STRICT, cvem.NAME_CHECK_ID_ONLY]))
@click.option("--label", default="model", help="Row label for the text table.")
def eval_mappings(
    kb_path, pred, gold, out_path, store_dir, aggregation,
    collapse_subtechniques, exclude_malformed, require_reason, name_check, label,
):
    """Score predictions (JSONL of {cve_id, raw}) against gold CVEM mappings."""
    knowledge = AttackKnowledgeBase.load(kb_path)

    gold_by_id = {}
    with open(gold, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                mapping = cvem.mapping_from_dict(json.loads(line))
                gold_by_id[mapping.cve_id] = mapping

    rows = []
    with open(pred, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            cve_id = row.get("cve_id", "")
            if cve_id not in gold_by_id:
                raise click.ClickException(f"prediction for {cve_id!r} has no gold mapping")
            rows.append(
                metrics.row_from_outputs(
                    knowledge, row["raw"], gold_by_id[cve_id],
                    require_reason=require_reason, name_check=name_check,
                )
            )

    report = metrics.corpus_metrics(
        rows,
        aggregation=aggregation,
        collapse_subtechniques=collapse_subtechniques,
        exclude_malformed=exclude_malformed,
    )
    Path(out_path).write_text(report.to_json(), encoding="utf-8")
    if store_dir:
        CurationStore(store_dir).save_metrics_report(report.to_dict())
    click.echo(report.to_table(label=label))
    click.echo(f"report -> {out_path}")


@main.group(name="export")
def export_group():
    """Dataset export commands."""


@export_group.command("finetune")
@click.option("--curated", "store_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--index", "index_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--mode", default="rat-r", type=click.Choice(list(prompting.MODES)))
@click.option("--n", "top_n", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--train-fraction", default=0.8, show_default=True)
@click.option("--embed-provider", default="baseline", type=click.Choice(["baseline", "remote"]))
@click.option("--out-dir", required=True, type=click.Path(path_type=Path))
def export_finetune_cmd(store_dir, kb_path, index_path, mode, top_n, seed, train_fraction, embed_provider, out_dir):
    """Export curated mappings as chat-format train/val JSONL."""
    store = CurationStore(store_dir)
    pairs = store.export_curated()
    if not pairs:
        raise click.ClickException("store has no curated records to export")
    knowledge = AttackKnowledgeBase.load(kb_path)
    idx = RetrievalIndex.load(index_path)
    train_path, val_path = prompting.export_finetune(
        pairs, knowledge, idx, _embedder(embed_provider),
        mode=mode, top_n=top_n, out_dir=out_dir, train_fraction=train_fraction, seed=seed,
    )
    n_train = sum(1 for _ in open(train_path, encoding="utf-8"))
    n_val = sum(1 for _ in open(val_path, encoding="utf-8"))
    click.echo(f"exported {n_train} train / {n_val} val examples -> {out_dir}")


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--kb", "kb_path", required=True, type=click.Path(exists=True, path_type=Path))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8080, show_default=True)
@click.option("--ui-dist", type=click.Path(path_type=Path), default=None)
def serve(store_dir, kb_path, host, port, ui_dist):
    """Run the review HTTP service."""
    from .server import serve as run_server

    run_server(
        CurationStore(store_dir),
        AttackKnowledgeBase.load(kb_path),
        host=host,
        port=port,
        ui_dist=ui_dist,
    )


@main.command()
@click.option("--store", "store_dir", required=True, type=click.Path(exists=True, path_type=Path))
def accounting(store_dir):
    """Print per-year raw/accurate/curated counters."""
    report = CurationStore(store_dir).accounting()
    click.echo(f"{'Year':<8}{'#CVE':>8}{'Raw':>8}{'Accurate':>10}{'Curated':>9}")
    for year, counts in sorted(report.per_year.items()):
        click.echo(f"{year:<8}{counts.cve_count:>8}{counts.raw:>8}{counts.accurate:>10}{counts.curated:>9}")
    totals = report.totals
    click.echo(f"{'Total':<8}{totals.cve_count:>8}{totals.raw:>8}{totals.accurate:>10}{totals.curated:>9}")


if __name__ == "__main__":
    main(prog_name="cvemap")
