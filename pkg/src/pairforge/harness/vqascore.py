"""Yes-probability judging of (frames, caption) alignment over edited pairs.

For each item the unlabeled reference image is captioned once; the judge then
scores the caption against (reference, clean second view) and against
(reference, edited view). A geometry-aware judge should prefer the clean
pair. Pairwise accuracy counts ties as half; correlations relate the edited
pair's score to per-item human accuracy.
"""

from __future__ import annotations

import math
from pathlib import Path

from ..benchmark_build import BenchmarkManifest
from ..stats import kendall_tau_b, pearson_r
from .scoring import Trial


class CapabilityError(Exception):
    """The judge endpoint does not expose what the protocol needs."""


VQA_QUESTION_TEMPLATE = 'Does this video show "{caption}"? Please answer Yes or No.'
CAPTION_INSTRUCTION = "Describe this scene in one factual sentence."


def yes_probability_from_response(data: dict) -> float:
    """Probability of the Yes token from a chat-completions response.

    Requires logprobs on the first generated token; raises CapabilityError
    when the endpoint did not return token probabilities at all.
    """
    try:
        content = data["choices"][0]["logprobs"]["content"]
        top = content[0]["top_logprobs"]
    except (KeyError, IndexError, TypeError) as exc:
        raise CapabilityError(
            "judge endpoint returned no token probabilities; Yes-scoring needs logprobs"
        ) from exc
    p = 0.0
    for cand in top:
        if str(cand.get("token", "")).strip().lower() == "yes":
            p = max(p, math.exp(float(cand["logprob"])))
    return p


def clean_twin_path(item) -> str:
    return str(Path(item.image_edited).with_name("view2_clean.png"))


def reference_unlabeled_path(item) -> str:
    return str(Path(item.image_edited).with_name("view1.png"))


def human_accuracy_by_item(human_trials: list[Trial]) -> dict[str, float]:
    sums: dict[str, list[int]] = {}
    for t in human_trials:
        cell = sums.setdefault(t.pair_id, [0, 0])
        cell[0] += 1
        cell[1] += int(t.correct)
    return {pid: c / n for pid, (n, c) in sums.items()}


def vqascore_eval(
    manifest: BenchmarkManifest,
    judge,
    captioner,
    human_trials: list[Trial] | None = None,
) -> dict:
    """judge(image_paths, question) -> P(Yes); captioner(image_path) -> text.

    Returns pairwise accuracy plus Pearson/Kendall correlations between the
    edited-pair scores and human accuracy (None when fewer than 3 items have
    human trials).
    """
    rows = []
    wins = 0.0
    for it in manifest.items:
        caption = str(captioner(reference_unlabeled_path(it)))
        question = VQA_QUESTION_TEMPLATE.format(caption=caption)
        ref = reference_unlabeled_path(it)
        score_consistent = float(judge([ref, clean_twin_path(it)], question))
        score_edited = float(judge([ref, it.image_edited], question))
        if score_consistent > score_edited:
            wins += 1.0
        elif score_consistent == score_edited:
            wins += 0.5
        rows.append(
            {
                "pair_id": it.pair_id,
                "caption": caption,
                "yes_score_consistent": score_consistent,
                "yes_score_edited": score_edited,
            }
        )

    result = {
        "pairwise_acc": wins / len(rows) if rows else None,
        "pearson_r": None,
        "kendall_tau": None,
        "items": rows,
    }
    if human_trials:
        acc = human_accuracy_by_item(human_trials)
        xs = [r["yes_score_edited"] for r in rows if r["pair_id"] in acc]
        ys = [acc[r["pair_id"]] for r in rows if r["pair_id"] in acc]
        if len(xs) >= 3:
            try:
                result["pearson_r"] = pearson_r(xs, ys)
                result["kendall_tau"] = kendall_tau_b(xs, ys)
            except ValueError:
                pass  # constant vectors: correlations stay absent
    return result


def judge_from_endpoint(endpoint, client=None):
    """Adapt a chat endpoint with logprob support into a judge callable."""
    from .client import query_model
    from .prompts import _image_part

    def judge(image_paths, question):
        import httpx, json

        messages = [
            {
                "role": "user",
                "content": [{"type": "text", "text": question}] + [_image_part(p) for p in image_paths],
            }
        ]
        body = {
            "model": endpoint.model_id,
            "messages": messages,
            "temperature": 0.0,
            "max_tokens": 1,
            "logprobs": True,
            "top_logprobs": 20,
        }
        url = endpoint.base_url.rstrip("/") + "/chat/completions"
        own = client is None
        cli = client or httpx.Client()
        try:
            resp = cli.post(url, json=body, headers=endpoint.headers(), timeout=endpoint.request_timeout)
            if resp.status_code != 200:
                raise CapabilityError(f"judge endpoint status {resp.status_code}")
            return yes_probability_from_response(resp.json())
        finally:
            if own:
                cli.close()

    return judge


def captioner_from_endpoint(endpoint, client=None):
    from .client import query_model
    from .prompts import _image_part

    def captioner(image_path):
        messages = [
            {
                "role": "user",
                "content": [{"type": "text", "text": CAPTION_INSTRUCTION}, _image_part(image_path)],
            }
        ]
        return query_model(endpoint, messages, client=client)

    return captioner
