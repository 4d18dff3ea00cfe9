"""Model transports and the evaluation runner.

Real endpoints speak chat-completions-style HTTP with images inlined as
base64 data URLs. Scripted models (answer-key reader, constant letter,
uniform guesser) plug into the same runner for smoke tests and calibration.
"""

from __future__ import annotations

import os
import time
import zlib
from dataclasses import dataclass
from threading import BoundedSemaphore, Lock

import numpy as np

from ..benchmark_build import BenchmarkManifest
from ..jsonl import append_jsonl
from .prompts import PROMPT_VERSION, build_prompt, valid_letters
from .scoring import PARSE_FAILURE, TRANSPORT_FAILURE, Trial, parse_letter


class EvalError(Exception):
    pass


class TransportFailure(EvalError):
    """Retries exhausted; the trial is recorded incorrect but flagged."""


RETRY_STATUSES = {429, 500, 502, 503, 504}


@dataclass
class ModelEndpoint:
    name: str
    base_url: str
    model_id: str
    auth_token_env: str | None = None
    max_output_tokens: int = 1024
    temperature: float = 0.0  # pinned for determinism at the margin
    request_timeout: float = 120.0
    max_retries: int = 4
    max_concurrent: int = 4
    backoff_base: float = 0.5

    def headers(self) -> dict:
        h = {"Content-Type": "application/json"}
        if self.auth_token_env:
            token = os.environ.get(self.auth_token_env, "")
            if token:
                h["Authorization"] = f"Bearer {token}"
        return h


def query_model(endpoint: ModelEndpoint, messages: list[dict], client=None, extra_body: dict | None = None) -> str:
    """POST to /chat/completions with exponential backoff on 429/5xx."""
    import httpx

    body = {
        "model": endpoint.model_id,
        "messages": messages,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_output_tokens,
    }
    if extra_body:
        body.update(extra_body)
    url = endpoint.base_url.rstrip("/") + "/chat/completions"
    own = client is None
    cli = client or httpx.Client()
    last = "no attempt made"
    try:
        for attempt in range(endpoint.max_retries + 1):
            if attempt:
                time.sleep(endpoint.backoff_base * 2 ** (attempt - 1))
            try:
                resp = cli.post(url, json=body, headers=endpoint.headers(), timeout=endpoint.request_timeout)
            except httpx.HTTPError as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code in RETRY_STATUSES:
                last = f"status {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise TransportFailure(f"{endpoint.name}: non-retryable status {resp.status_code}: {resp.text[:200]}")
            data = resp.json()
            return data["choices"][0]["message"]["content"] or ""
        raise TransportFailure(f"{endpoint.name}: retries exhausted ({last})")
    finally:
        if own:
            cli.close()


# --- scripted models ---------------------------------------------------------


def key_reading_model(keys: dict[str, str]):
    """Always answers from the answer key; the perfect-score control."""

    def model(item):
        return f"Looking carefully, the inconsistent object is {keys[item.pair_id]}."

    return model


def constant_model(letter: str):
    def model(item):
        return letter

    return model


def uniform_random_model(seed: int):
    """Uniform over the item's valid letters, stable per (seed, pair_id)."""

    def model(item):
        rng = np.random.default_rng((seed, zlib.crc32(item.pair_id.encode())))
        letters = valid_letters(item.num_labels)
        return letters[int(rng.integers(len(letters)))]

    return model


# --- runner ------------------------------------------------------------------


def run_eval(
    manifest: BenchmarkManifest,
    model,
    model_name: str | None = None,
    out_path=None,
    max_workers: int = 1,
    client=None,
) -> list[Trial]:
    """Evaluate one model over every manifest item.

    model is either a ModelEndpoint or a callable(item) -> raw response text.
    Trials are returned (and written) in manifest order regardless of worker
    interleaving; log appends go through one writer.
    """
    if isinstance(model, ModelEndpoint):
        endpoint = model
        name = model_name or endpoint.name
        sem = BoundedSemaphore(max(1, endpoint.max_concurrent))

        def ask(item):
            with sem:
                return query_model(endpoint, build_prompt(item), client=client)

    else:
        name = model_name or getattr(model, "__name__", "scripted")

        def ask(item):
            return model(item)

    def one(item) -> Trial:
        t0 = time.perf_counter()
        failure = None
        try:
            raw = ask(item)
        except TransportFailure as exc:
            raw = f"<transport failure: {exc}>"
            failure = TRANSPORT_FAILURE
        latency = (time.perf_counter() - t0) * 1000
        if failure is None:
            parsed = parse_letter(raw, valid_letters(item.num_labels))
            if parsed is None:
                failure = PARSE_FAILURE
        else:
            parsed = None
        return Trial(
            pair_id=item.pair_id,
            model=name,
            raw_response=raw,
            parsed_letter=parsed,
            correct=parsed == item.answer_letter and parsed is not None,
            latency_ms=latency,
            ts=time.time(),
            prompt_version=PROMPT_VERSION,
            failure=failure,
        )

    items = manifest.items
    if max_workers <= 1:
        trials = [one(it) for it in items]
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            trials = list(pool.map(one, items))

    if out_path is not None:
        writer = Lock()
        for t in trials:
            with writer:
                append_jsonl(out_path, t.to_record())
    return trials


def endpoint_from_config(cfg: dict):
    """Build a model (endpoint or scripted callable) from a config mapping.

    kinds: "chat" (HTTP), "scripted-key" {"keys": {...}}, "scripted-constant"
    {"letter": "A"}, "scripted-random" {"seed": 0}.
    """
    kind = cfg.get("kind", "chat")
    if kind == "chat":
        fields = {k: v for k, v in cfg.items() if k != "kind"}
        return ModelEndpoint(**fields)
    if kind == "scripted-key":
        return key_reading_model(cfg["keys"])
    if kind == "scripted-constant":
        return constant_model(cfg["letter"])
    if kind == "scripted-random":
        return uniform_random_model(int(cfg.get("seed", 0)))
    raise EvalError(f"unknown endpoint kind {kind!r}")
