"""Shared HTTP plumbing for remote providers: POST with bounded retries.

Retries cover connection failures and 5xx responses with exponential backoff;
4xx responses fail immediately. Secrets travel only in headers built by the
caller and are never echoed into error messages.
"""
from __future__ import annotations

import time
from typing import Callable, Mapping

import requests


class TransportError(RuntimeError):
    def __init__(self, message: str, status: int | None = None, attempts: int = 0):
        super().__init__(message)
        self.status = status
        self.attempts = attempts


def post_json(
    url: str,
    payload: Mapping,
    headers: Mapping[str, str],
    timeout: float = 60.0,
    max_retries: int = 3,
    backoff_base: float = 0.5,
    post: Callable = requests.post,
    sleep: Callable[[float], None] = time.sleep,
) -> dict:
    """POST JSON and return the parsed JSON response body.

    max_retries counts retries, so at most max_retries + 1 requests are sent.
    """
    attempts = 0
    last_status: int | None = None
    last_error = ""
    while attempts <= max_retries:
        attempts += 1
        try:
            resp = post(url, json=payload, headers=dict(headers), timeout=timeout)
        except requests.RequestException as exc:
            last_status, last_error = None, type(exc).__name__
        else:
            status = resp.status_code
            if 200 <= status < 300:
                try:
                    body = resp.json()
                except ValueError:
                    raise TransportError(
                        f"malformed response envelope from {url} (not JSON)",
                        status=status,
                        attempts=attempts,
                    )
                if not isinstance(body, dict):
                    raise TransportError(
                        f"malformed response envelope from {url} (not an object)",
                        status=status,
                        attempts=attempts,
                    )
                return body
            last_status, last_error = status, f"HTTP {status}"
            if 400 <= status < 500:
                raise TransportError(
                    f"HTTP {status} from {url} (not retried)", status=status, attempts=attempts
                )
        if attempts <= max_retries:
            sleep(min(backoff_base * (2 ** (attempts - 1)), 30.0))
    raise TransportError(
        f"{last_error} from {url} after {attempts} attempt(s)",
        status=last_status,
        attempts=attempts,
    )
