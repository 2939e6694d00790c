"""Chat-completion client for generation, plus a deterministic mock provider.

The remote side speaks the de-facto chat-completions wire shape (a messages
array in, choices[0].message.content out). The mock provider is what tests
and offline pipeline runs use: scripted outputs per CVE id, with a synthesized
fallback behavior for everything unscripted.
"""
from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import requests

from . import transport
from .prompting import PromptBundle, combined_system

MOCK_VALID = "valid"
MOCK_HALLUCINATE = "hallucinate"
MOCK_MALFORMED = "malformed"


@dataclass
class LlmConfig:
    endpoint_url: str = ""
    api_key: str = ""
    model_name: str = ""
    temperature: float = 0.0  # default 0 for reproducibility
    max_output_tokens: int = 1024
    timeout_seconds: int = 60
    max_retries: int = 3
    audit_path: Optional[str] = None

    @classmethod
    def from_env(cls, env: Optional[Mapping[str, str]] = None) -> "LlmConfig":
        env = env if env is not None else os.environ
        return cls(
            endpoint_url=env.get("CVEMAP_LLM_ENDPOINT", ""),
            api_key=env.get("CVEMAP_LLM_API_KEY", ""),
            model_name=env.get("CVEMAP_LLM_MODEL", ""),
            audit_path=env.get("CVEMAP_LLM_AUDIT") or None,
        )


def chat_messages(prompt: PromptBundle) -> list[dict]:
    return [
        {"role": "system", "content": combined_system(prompt)},
        {"role": "user", "content": prompt.user_text},
    ]


def complete_chat(
    cfg: LlmConfig,
    prompt: PromptBundle,
    post: Callable = requests.post,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Send the prompt to a chat-completions endpoint; return the assistant text.

    Transient failures retry with exponential backoff up to cfg.max_retries;
    4xx never retries. The API key appears only in the Authorization header,
    never in errors or the audit log.
    """
    if not cfg.endpoint_url:
        raise ValueError("LlmConfig.endpoint_url is required for remote completion")
    headers = {"Content-Type": "application/json"}
    if cfg.api_key:
        headers["Authorization"] = f"Bearer {cfg.api_key}"
    payload = {
        "model": cfg.model_name,
        "messages": chat_messages(prompt),
        "temperature": cfg.temperature,
        "max_tokens": cfg.max_output_tokens,
    }
    body = transport.post_json(
        cfg.endpoint_url,
        payload,
        headers,
        timeout=cfg.timeout_seconds,
        max_retries=cfg.max_retries,
        post=post,
        sleep=sleep,
    )
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise transport.TransportError(
            f"malformed response envelope from {cfg.endpoint_url}", attempts=1
        )
    if not isinstance(content, str):
        raise transport.TransportError(
            f"malformed response envelope from {cfg.endpoint_url}", attempts=1
        )
    if cfg.audit_path:
        _append_audit(cfg.audit_path, cfg.model_name, payload["messages"], content)
    return content


def _append_audit(path: str, model: str, messages: list[dict], response: str) -> None:
    entry = {"ts": time.time(), "model": model, "messages": messages, "response": response}
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(entry, ensure_ascii=False) + "\n")


class HttpLlmProvider:
    """Remote provider handle usable anywhere the pipeline expects `.complete`."""

    def __init__(self, cfg: LlmConfig, post: Callable = requests.post, sleep=time.sleep):
        self.cfg = cfg
        self._post = post
        self._sleep = sleep

    def complete(self, prompt: PromptBundle) -> str:
        return complete_chat(self.cfg, prompt, post=self._post, sleep=self._sleep)


_CVE_LINE_RE = re.compile(r"^CVE:\s*(\S+)", re.MULTILINE)
_RETRIEVED_LINE_RE = re.compile(r"^(T\d{4}(?:\.\d{3})?):\s+(.*?)\s+—", re.MULTILINE)


class MockLlmProvider:
    """Deterministic stand-in for a chat model.

    Scripted CVE ids return their scripted bytes exactly; everything else is
    synthesized per default_behavior: `valid` echoes the rank-1 retrieved
    technique into the exploitation list (with a template reason), `hallucinate`
    claims a technique that does not exist, `malformed` answers in prose.
    """

    def __init__(
        self,
        script: Optional[Mapping[str, str]] = None,
        default_behavior: str = MOCK_VALID,
    ):
        if default_behavior not in (MOCK_VALID, MOCK_HALLUCINATE, MOCK_MALFORMED):
            raise ValueError(f"unknown default_behavior {default_behavior!r}")
        self.script = dict(script or {})
        self.default_behavior = default_behavior

    @classmethod
    def from_script_file(cls, path: str | Path, default_behavior: str = MOCK_VALID) -> "MockLlmProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), default_behavior)

    def complete(self, prompt: PromptBundle) -> str:
        cve_id = self._cve_id(prompt)
        if cve_id in self.script:
            return self.script[cve_id]
        if self.default_behavior == MOCK_MALFORMED:
            return f"I cannot determine the techniques for {cve_id}."
        if self.default_behavior == MOCK_HALLUCINATE:
            mapping = {
                "cve_id": cve_id,
                "exploitation_techniques": [
                    {"id": "T9999", "name": "Imaginary Technique", "reason": "Synthesized fictitious claim."}
                ],
                "primary_impacts": [],
                "secondary_impacts": [],
            }
            return json.dumps(mapping, ensure_ascii=False)
        tid, name = self._first_retrieved(prompt)
        mapping = {
            "cve_id": cve_id,
            "exploitation_techniques": [
                {
                    "id": tid,
                    "name": name,
                    "reason": "Top-ranked technique in the retrieved context for this CVE.",
                }
            ],
            "primary_impacts": [],
            "secondary_impacts": [],
        }
        return json.dumps(mapping, ensure_ascii=False)

    @staticmethod
    def _cve_id(prompt: PromptBundle) -> str:
        m = _CVE_LINE_RE.search(prompt.user_text)
        return m.group(1) if m else "CVE-0000-0000"

    @staticmethod
    def _first_retrieved(prompt: PromptBundle) -> tuple[str, str]:
        m = _RETRIEVED_LINE_RE.search(prompt.retrieved_block)
        if not m:
            raise ValueError("mock valid behavior needs a retrieved block to echo")
        return m.group(1), m.group(2)


def mock_provider(
    script: Optional[Mapping[str, str]] = None, default_behavior: str = MOCK_VALID
) -> MockLlmProvider:
    return MockLlmProvider(script=script, default_behavior=default_behavior)
