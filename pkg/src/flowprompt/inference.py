"""LLM backends: a completion-style HTTP client and a deterministic mock.

Both go through the verdict grammar: the remote path parses the returned
completion, the mock renders its canonical JSON and parses it back.
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import requests

from .errors import BudgetExceeded, GrammarViolation, HttpError, InferenceError, Timeout, VerdictError
from .flags import FlagSet
from .grammar import GrammarSpec, ModelVerdict, emit_gbnf, format_probability, format_verdict, parse_verdict

log = logging.getLogger(__name__)

ENV_ENDPOINT = "FLOWPROMPT_ENDPOINT"
ENV_API_KEY = "FLOWPROMPT_API_KEY"
CHARS_PER_TOKEN = 3


@dataclass(frozen=True)
class MockWeights:
    bias: float = -3.0
    per_flag_weight: float = 1.2

    def __post_init__(self):
        if not (math.isfinite(self.bias) and math.isfinite(self.per_flag_weight)):
            raise ValueError("mock weights must be finite")


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"
    endpoint: str | None = None
    model_name: str = "mock"
    temperature: float = 0.0
    top_p: float = 1.0
    n_ctx: int = 1024
    n_batch: int = 8
    timeout: float = 60.0
    max_retries: int = 3
    backoff_base: float = 0.5
    max_tokens: int = 32
    api_key: str | None = field(default=None, repr=False)
    grammar: GrammarSpec = field(default_factory=emit_gbnf)
    mock: MockWeights = field(default_factory=MockWeights)

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.temperature != 0 or self.top_p != 1:
            raise ValueError("decoding must be deterministic: temperature=0, top_p=1")
        if self.n_batch < 1:
            raise ValueError("n_batch must be at least 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.kind == "remote" and not self.endpoint:
            raise ValueError(f"remote backend needs an endpoint (or ${ENV_ENDPOINT})")

    @classmethod
    def remote_from_env(cls, **overrides) -> "BackendConfig":
        # explicit values win; None falls back to the environment
        if overrides.get("endpoint") is None:
            overrides["endpoint"] = os.environ.get(ENV_ENDPOINT)
        if overrides.get("api_key") is None:
            overrides["api_key"] = os.environ.get(ENV_API_KEY)
        return cls(kind="remote", **overrides)

    def describe(self) -> dict:
        """JSON-safe snapshot without secrets."""
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model_name": self.model_name,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "n_ctx": self.n_ctx,
            "n_batch": self.n_batch,
            "timeout": self.timeout,
            "max_retries": self.max_retries,
            "backoff_base": self.backoff_base,
            "max_tokens": self.max_tokens,
            "grammar_version": self.grammar.version,
            "grammar_sha256": self.grammar.sha256,
            "mock": {"bias": self.mock.bias, "per_flag_weight": self.mock.per_flag_weight},
        }


@dataclass(frozen=True)
class InferenceOutcome:
    record_id: int
    verdict: ModelVerdict | None
    latency_ms: float
    attempts: int
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.verdict is not None


def mock_probability(weights: MockWeights, flag_count: int) -> float:
    return 1.0 / (1.0 + math.exp(-(weights.bias + weights.per_flag_weight * flag_count)))


def _mock_verdict(weights: MockWeights, flags: FlagSet) -> ModelVerdict:
    literal = format_probability(mock_probability(weights, flags.count))
    prediction = "attack" if float(literal) >= 0.5 else "benign"
    return parse_verdict(format_verdict(prediction, float(literal)))


def _remote_verdict(config: BackendConfig, prompt: str) -> ModelVerdict:
    payload = {
        "model": config.model_name,
        "prompt": prompt,
        "temperature": config.temperature,
        "top_p": config.top_p,
        "max_tokens": config.max_tokens,
        "grammar": config.grammar.gbnf_text,
    }
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    try:
        resp = requests.post(config.endpoint, json=payload, headers=headers, timeout=config.timeout)
    except requests.Timeout as exc:
        raise Timeout(f"no response within {config.timeout}s") from exc
    except requests.ConnectionError as exc:
        raise HttpError(0, str(exc)) from exc
    if resp.status_code != 200:
        raise HttpError(resp.status_code, resp.text[:200])
    try:
        text = resp.json()["choices"][0]["text"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise HttpError(resp.status_code, "response body lacks choices[0].text") from exc
    try:
        return parse_verdict(text)
    except VerdictError as exc:
        raise GrammarViolation(f"backend output {text[:80]!r} is outside the grammar: {exc}") from exc


def check_budget(config: BackendConfig, prompt: str) -> None:
    if not prompt:
        raise ValueError("empty prompt")
    needed = math.ceil(len(prompt) / CHARS_PER_TOKEN) + config.max_tokens
    if needed > config.n_ctx:
        raise BudgetExceeded(f"prompt needs ~{needed} tokens, context is {config.n_ctx}")


def classify_flow(config: BackendConfig, prompt: str, flags: FlagSet, record_id: int = 0) -> InferenceOutcome:
    """One attempt, no retries. Errors propagate as exceptions."""
    check_budget(config, prompt)
    if config.kind == "mock":
        # simulated backend: no model time is spent, so latency is reported as 0
        return InferenceOutcome(record_id, _mock_verdict(config.mock, flags), 0.0, 1)
    start = time.perf_counter()
    verdict = _remote_verdict(config, prompt)
    return InferenceOutcome(record_id, verdict, (time.perf_counter() - start) * 1000.0, 1)


def _with_retries(config: BackendConfig, record_id: int, prompt: str, flags: FlagSet) -> InferenceOutcome:
    # latency covers every attempt and backoff for the item
    start = time.perf_counter()

    def elapsed_ms() -> float:
        return 0.0 if config.kind == "mock" else (time.perf_counter() - start) * 1000.0

    attempts = 0
    while True:
        attempts += 1
        try:
            verdict = classify_flow(config, prompt, flags, record_id).verdict
            return InferenceOutcome(record_id, verdict, elapsed_ms(), attempts)
        except InferenceError as exc:
            if getattr(exc, "retryable", False) and attempts <= config.max_retries:
                delay = config.backoff_base * 2 ** (attempts - 1)
                log.debug("record %s attempt %d failed (%s); retrying in %.2fs", record_id, attempts, exc, delay)
                time.sleep(delay)
                continue
            error = f"{type(exc).__name__}: {exc}"
        except (BudgetExceeded, ValueError) as exc:
            error = f"{type(exc).__name__}: {exc}"
        return InferenceOutcome(record_id, None, elapsed_ms(), attempts, error)


def classify_batch(config: BackendConfig, items: Sequence[tuple[int, str, FlagSet]]) -> list[InferenceOutcome]:
    """Classify every item with at most ``n_batch`` requests in flight.

    Outcomes come back in input order. A failing item yields an outcome with
    ``error`` set; it never aborts the batch.
    """
    if not items:
        raise ValueError("classify_batch needs at least one item")
    workers = min(config.n_batch, len(items))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_with_retries, config, rid, prompt, flags) for rid, prompt, flags in items]
        return [f.result() for f in futures]
