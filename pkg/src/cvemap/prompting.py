"""Prompt construction and fine-tuning dataset export.

Two prompt modes share one structure (task instruction in the system role,
retrieved technique context appended to it, the formatted CVE as the user
message): the plain mode, and a reason-augmented variant that additionally
requires a short justification per claimed technique. Templates are versioned
so exported datasets record what produced them.
"""
from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .attack_kb import AttackKnowledgeBase
from .cve_ingest import CveRecord, format_model_input
from .cvem import CATEGORY_KEYS, CvemMapping, serialize_cvem
from .retrieval import RetrievalResult, retrieve_top_n

MODE_RAT = "rat"
MODE_RAT_R = "rat-r"
MODES = (MODE_RAT, MODE_RAT_R)

TEMPLATE_VERSION = "v1"

_SYSTEM_COMMON = """\
You are a cybersecurity analyst. Given a CVE, identify the MITRE ATT&CK techniques it involves.

Respond with a single JSON object containing exactly these keys:
  "exploitation_techniques": techniques an attacker uses to exploit the vulnerability
  "primary_impacts": techniques describing the direct result of successful exploitation
  "secondary_impacts": techniques describing follow-on effects the breach enables

Each list entry must be an object with "id" (the ATT&CK technique id, e.g. T1557) and "name" (its exact ATT&CK name).
Only use techniques that appear in the reference list below. Output the JSON object and nothing else."""

SYSTEM_RAT_V1 = _SYSTEM_COMMON + "\n\nReference techniques, ranked by relevance:"

SYSTEM_RAT_R_V1 = (
    _SYSTEM_COMMON.replace(
        'with "id" (the ATT&CK technique id, e.g. T1557) and "name" (its exact ATT&CK name).',
        'with "id" (the ATT&CK technique id, e.g. T1557), "name" (its exact ATT&CK name), '
        'and "reason" (one or two sentences explaining why that technique applies to this CVE).',
    )
    + "\n\nReference techniques, ranked by relevance:"
)


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    retrieved_block: str
    mode: str
    template_version: str = TEMPLATE_VERSION


def combined_system(p: PromptBundle) -> str:
    """What actually goes in the system role: instruction plus retrieved context."""
    if not p.retrieved_block:
        return p.system_text
    return f"{p.system_text}\n{p.retrieved_block}"


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str


@dataclass(frozen=True)
class ChatExample:
    messages: tuple[ChatMessage, ...]

    def to_dict(self) -> dict:
        return {"messages": [{"role": m.role, "content": m.content} for m in self.messages]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)


def first_sentence(text: str) -> str:
    """First sentence of a description, whitespace-collapsed; whole text if unpunctuated."""
    collapsed = re.sub(r"\s+", " ", text.strip())
    m = re.match(r"(.+?\.)(?:\s|$)", collapsed)
    return m.group(1) if m else collapsed


def render_retrieved_block(retrieved: RetrievalResult, kb: AttackKnowledgeBase) -> str:
    """One line per hit, in rank order: "<id>: <name> — <first sentence>"."""
    lines = []
    for hit in retrieved.ranked:
        technique = kb.lookup_by_id(hit.technique_id)
        if technique is None:
            raise PromptError(f"retrieved id {hit.technique_id} is not in the knowledge base")
        lines.append(f"{technique.id}: {technique.name} — {first_sentence(technique.description)}")
    return "\n".join(lines)


def build_rat_prompt(
    r: CveRecord, retrieved: RetrievalResult, kb: AttackKnowledgeBase, mode: str = MODE_RAT_R
) -> PromptBundle:
    if mode not in MODES:
        raise PromptError(f"unknown prompt mode {mode!r}")
    if not retrieved.ranked:
        raise PromptError("retrieval result is empty")
    return PromptBundle(
        system_text=SYSTEM_RAT_R_V1 if mode == MODE_RAT_R else SYSTEM_RAT_V1,
        user_text=format_model_input(r),
        retrieved_block=render_retrieved_block(retrieved, kb),
        mode=mode,
        template_version=TEMPLATE_VERSION,
    )


# Fixed two-example variant for benchmarking baseline models without retrieval;
# shipped for harness parity only, not tuned.
_FEW_SHOT_EXAMPLES = """\
Example input:
CVE: CVE-2014-0160
Affected: OpenSSL Project OpenSSL (< 1.0.1g)
Description: A buffer over-read in the TLS heartbeat extension lets remote attackers read process memory, exposing private keys and session data.
Example output:
{"cve_id": "CVE-2014-0160", "exploitation_techniques": [{"id": "T1190", "name": "Exploit Public-Facing Application"}], "primary_impacts": [{"id": "T1552", "name": "Unsecured Credentials"}], "secondary_impacts": [{"id": "T1078", "name": "Valid Accounts"}]}

Example input:
CVE: CVE-2017-0144
Affected: Microsoft Windows SMBv1 (multiple)
Description: A remote code execution flaw in SMBv1 packet handling allows an unauthenticated attacker to run arbitrary code on the target server.
Example output:
{"cve_id": "CVE-2017-0144", "exploitation_techniques": [{"id": "T1210", "name": "Exploitation of Remote Services"}], "primary_impacts": [{"id": "T1059", "name": "Command and Scripting Interpreter"}], "secondary_impacts": [{"id": "T1105", "name": "Ingress Tool Transfer"}]}"""


def build_few_shot_prompt(r: CveRecord) -> PromptBundle:
    system = _SYSTEM_COMMON.replace(
        "Only use techniques that appear in the reference list below. ", ""
    )
    return PromptBundle(
        system_text=system + "\n\n" + _FEW_SHOT_EXAMPLES,
        user_text=format_model_input(r),
        retrieved_block="",
        mode=MODE_RAT,
        template_version=f"{TEMPLATE_VERSION}-fewshot",
    )


def to_chat_example(
    r: CveRecord,
    m: CvemMapping,
    retrieved: RetrievalResult,
    kb: AttackKnowledgeBase,
    mode: str = MODE_RAT_R,
) -> ChatExample:
    """A three-message fine-tuning example; the assistant turn is canonical CVEM."""
    prompt = build_rat_prompt(r, retrieved, kb, mode)
    if mode == MODE_RAT_R:
        for key in CATEGORY_KEYS:
            for claim in getattr(m, key):
                if not claim.reason or not claim.reason.strip():
                    raise PromptError(f"{m.cve_id}: claim {claim.id} in {key} has no reason")
    assistant = serialize_cvem(m, include_reasons=(mode == MODE_RAT_R))
    return ChatExample(
        messages=(
            ChatMessage("system", combined_system(prompt)),
            ChatMessage("user", prompt.user_text),
            ChatMessage("assistant", assistant),
        )
    )


def split_dataset(
    examples: Sequence, train_fraction: float = 0.8, seed: int = 0
) -> tuple[list, list]:
    """Seeded shuffle, then train = floor(train_fraction * N), remainder to val."""
    if not examples:
        raise ValueError("cannot split an empty dataset")
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must be in (0, 1)")
    indices = list(range(len(examples)))
    random.Random(seed).shuffle(indices)
    cut = math.floor(train_fraction * len(examples))
    return [examples[i] for i in indices[:cut]], [examples[i] for i in indices[cut:]]


def export_finetune(
    pairs: Sequence[tuple[CveRecord, CvemMapping]],
    kb: AttackKnowledgeBase,
    index,
    provider,
    mode: str,
    top_n: int,
    out_dir: str | Path,
    train_fraction: float = 0.8,
    seed: int = 0,
) -> tuple[Path, Path]:
    """Write train.jsonl / val.jsonl of chat examples for the curated pairs."""
    examples = []
    for record, mapping in pairs:
        retrieved = retrieve_top_n(index, format_model_input(record), top_n, provider)
        examples.append(to_chat_example(record, mapping, retrieved, kb, mode))
    train, val = split_dataset(examples, train_fraction=train_fraction, seed=seed)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_path, val_path = out / "train.jsonl", out / "val.jsonl"
    for path, subset in ((train_path, train), (val_path, val)):
        with open(path, "w", encoding="utf-8") as fh:
            for example in subset:
                fh.write(example.to_json() + "\n")
    return train_path, val_path
