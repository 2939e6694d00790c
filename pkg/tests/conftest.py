from __future__ import annotations

import json
from pathlib import Path

import pytest

from cvemap.attack_kb import load_attack_bundle
from cvemap.cve_ingest import AffectedProduct, CveRecord, parse_cve_record
from cvemap.cvem import CvemMapping, TechniqueClaim
from cvemap.retrieval import HashedTfEmbedder, build_index

from . import fixtures_attack

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def bundle_doc() -> dict:
    return fixtures_attack.make_bundle()


@pytest.fixture(scope="session")
def kb(bundle_doc):
    return load_attack_bundle(bundle_doc, strict=True)


@pytest.fixture(scope="session")
def embedder():
    return HashedTfEmbedder()


@pytest.fixture(scope="session")
def index(kb, embedder):
    return build_index(kb, embedder)


@pytest.fixture(scope="session")
def cve_2020_0601() -> CveRecord:
    doc = json.loads((DATA_DIR / "CVE-2020-0601.json").read_text(encoding="utf-8"))
    return parse_cve_record(doc)


@pytest.fixture()
def golden_mapping() -> CvemMapping:
    """The worked CVE-2020-0601 mapping, with names matching the fixture KB."""
    return CvemMapping(
        cve_id="CVE-2020-0601",
        exploitation_techniques=(
            TechniqueClaim("T1553.004", "Install Root Certificate",
                           "The flaw lets spoofed ECC certificates validate as trusted roots."),
        ),
        primary_impacts=(
            TechniqueClaim("T1557", "Adversary-in-the-Middle",
                           "Forged certificates enable interception of TLS connections."),
        ),
        secondary_impacts=(
            TechniqueClaim("T1003", "OS Credential Dumping",
                           "Intercepted sessions expose credential material."),
            TechniqueClaim("T1059", "Command and Scripting Interpreter",
                           "Signed-looking malware can execute attacker commands."),
        ),
    )


def synthetic_cves(n: int, start_year: int = 2019) -> list[CveRecord]:
    """Deterministic synthetic CVE records spread over a few years."""
    records = []
    products = [
        ("Acme", "Gateway", "A buffer overflow in the request parser allows remote code execution."),
        ("Initech", "Portal", "Improper input validation in the login form allows SQL injection."),
        ("Globex", "Router", "A default credential in the admin interface allows takeover."),
        ("Umbrella", "Agent", "A path traversal in the update endpoint allows arbitrary file write."),
        ("Hooli", "Hub", "Missing authentication on the control channel allows configuration changes."),
    ]
    for i in range(n):
        year = start_year + (i % 3)
        vendor, product, blurb = products[i % len(products)]
        records.append(
            CveRecord(
                cve_id=f"CVE-{year}-{10000 + i}",
                description=f"{blurb} Instance {i} affecting {product} deployments.",
                affected=(AffectedProduct(vendor, product, (f"{1 + i % 4}.0",)),),
                published_year=year,
            )
        )
    return records


@pytest.fixture()
def fifty_cves() -> list[CveRecord]:
    return synthetic_cves(50)
