"""Chat-completion backends and per-request cost accounting.

Two implementations of one contract: a live HTTP endpoint (openai-chat
dialect) and an offline mock that serves fixture files keyed by the prompt
digest. Tests and dataset rebuilds run entirely on the mock.
"""

from __future__ import annotations

import json
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Protocol

from .errors import BackendError, ConfigError, TransientBackendError
from .prompts import PromptEnvelope, envelope_digest

API_KEY_ENV = "CLOVER_API_KEY"


def estimate_tokens(text: str) -> int:
    """Fallback token estimate when a backend reports no usage: ceil(chars/4)."""
    return (len(text) + 3) // 4


def estimate_prompt_tokens(envelope: PromptEnvelope) -> int:
    return sum(estimate_tokens(m.content) for m in envelope.messages)


@dataclass(frozen=True)
class CostRates:
    rate_in_usd_per_1k: Decimal
    rate_out_usd_per_1k: Decimal

    def cost(self, prompt_tokens: int, completion_tokens: int) -> Decimal:
        return (
            Decimal(prompt_tokens) * self.rate_in_usd_per_1k
            + Decimal(completion_tokens) * self.rate_out_usd_per_1k
        ) / Decimal(1000)


@dataclass(frozen=True)
class GenerationReceipt:
    image_id: str
    prompt_tokens: int
    completion_tokens: int
    estimated_cost_usd: Decimal
    backend_id: str
    retries: int


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 5
    backoff_base_s: float = 1.0
    backoff_factor: float = 2.0

    def delay(self, attempt: int) -> float:
        return self.backoff_base_s * self.backoff_factor**attempt


@dataclass
class BackendResponse:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class CompletionBackend(Protocol):
    backend_id: str

    def complete(self, envelope: PromptEnvelope, max_tokens: int) -> BackendResponse: ...


class MockBackend:
    """Serves completions from `<prompt-digest>.txt` files in a fixture directory.

    Completion text is capped at max_tokens worth of characters, matching how a
    live endpoint truncates, which keeps cost reservations true upper bounds.
    """

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        if not self.fixture_dir.is_dir():
            raise ConfigError(f"mock fixture directory not found: {self.fixture_dir}")
        self.backend_id = f"mock:{self.fixture_dir}"

    def complete(self, envelope: PromptEnvelope, max_tokens: int) -> BackendResponse:
        digest = envelope_digest(envelope)
        path = self.fixture_dir / f"{digest}.txt"
        if not path.exists():
            raise BackendError(f"no fixture for prompt digest {digest} in {self.fixture_dir}")
        text = path.read_text(encoding="utf-8")
        if max_tokens > 0:
            text = text[: max_tokens * 4]
        return BackendResponse(
            text=text,
            prompt_tokens=estimate_prompt_tokens(envelope),
            completion_tokens=estimate_tokens(text),
        )


class LiveBackend:
    """POSTs to an openai-chat dialect endpoint; credential from CLOVER_API_KEY."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dialect: str = "openai-chat",
        timeout_s: float = 60.0,
    ):
        if not endpoint:
            raise ConfigError("live backend requires a non-empty endpoint")
        if dialect != "openai-chat":
            raise ConfigError(f"unsupported backend dialect '{dialect}'")
        api_key = os.environ.get(API_KEY_ENV, "")
        if not api_key:
            raise ConfigError(f"live backend requires the {API_KEY_ENV} environment variable")
        self.endpoint = endpoint
        self.model = model
        self._api_key = api_key
        self.timeout_s = timeout_s
        self.backend_id = f"live:{endpoint}#{model}"

    def complete(self, envelope: PromptEnvelope, max_tokens: int) -> BackendResponse:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in envelope.messages],
        }
        if max_tokens > 0:
            body["max_tokens"] = max_tokens
        request = urllib.request.Request(
            self.endpoint,
            data=json.dumps(body).encode("utf-8"),
            headers={
                "Content-Type": "application/json",
                "Authorization": f"Bearer {self._api_key}",
            },
            method="POST",
        )
        try:
            with urllib.request.urlopen(request, timeout=self.timeout_s) as resp:
                payload = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransientBackendError(
                    f"backend returned HTTP {exc.code}", status=exc.code
                ) from exc
            raise BackendError(f"backend returned HTTP {exc.code}", status=exc.code) from exc
        except (urllib.error.URLError, TimeoutError) as exc:
            raise TransientBackendError(f"network error: {exc}") from exc

        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed backend response: {exc}") from exc
        usage = payload.get("usage") or {}
        return BackendResponse(
            text=text,
            prompt_tokens=usage.get("prompt_tokens"),
            completion_tokens=usage.get("completion_tokens"),
        )


def complete(
    envelope: PromptEnvelope,
    backend: CompletionBackend,
    policy: RetryPolicy,
    rates: CostRates,
    max_completion_tokens: int = 512,
    image_id: str = "",
) -> tuple[str, GenerationReceipt]:
    """Run one completion with exponential-backoff retries; returns text + receipt.

    Usage counts come from the backend when reported, otherwise from the
    ceil(chars/4) estimate. Only the final successful response is billed.
    """
    last: BackendError | None = None
    for attempt in range(policy.max_retries + 1):
        try:
            response = backend.complete(envelope, max_completion_tokens)
        except TransientBackendError as exc:
            last = exc
            if attempt < policy.max_retries:
                time.sleep(policy.delay(attempt))
            continue
        prompt_tokens = (
            response.prompt_tokens
            if response.prompt_tokens is not None
            else estimate_prompt_tokens(envelope)
        )
        completion_tokens = (
            response.completion_tokens
            if response.completion_tokens is not None
            else estimate_tokens(response.text)
        )
        receipt = GenerationReceipt(
            image_id=image_id,
            prompt_tokens=prompt_tokens,
            completion_tokens=completion_tokens,
            estimated_cost_usd=rates.cost(prompt_tokens, completion_tokens),
            backend_id=backend.backend_id,
            retries=attempt,
        )
        return response.text, receipt
    raise BackendError(
        f"retries exhausted after {policy.max_retries + 1} attempts: {last}",
        status=getattr(last, "status", None),
    )
