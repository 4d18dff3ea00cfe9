"""Parse model replies, score trial logs, ensemble votes, compare wrong sets."""

from __future__ import annotations

import re
from dataclasses import dataclass, asdict

from ..benchmark_build import BenchmarkManifest, expected_random_accuracy
from .prompts import PROMPT_VERSION, valid_letters

PARSE_FAILURE = "parse"
TRANSPORT_FAILURE = "transport"

LABEL_BUCKETS = ((1, 4), (5, 10), (11, 15), (16, 20), (21, 26))
MIN_CATEGORY_ITEMS = 10  # smaller object categories fold into "misc" at report time

_MARKDOWN = str.maketrans({c: " " for c in "*_`~#"})
_STANDALONE = re.compile(r"(?<![A-Za-z0-9])([A-Z])(?![A-Za-z0-9])")


@dataclass
class Trial:
    pair_id: str
    model: str
    raw_response: str
    parsed_letter: str | None
    correct: bool
    latency_ms: float = 0.0
    ts: float = 0.0
    prompt_version: str = PROMPT_VERSION
    failure: str | None = None  # None | "parse" | "transport"

    def to_record(self) -> dict:
        return asdict(self)

    @classmethod
    def from_record(cls, rec: dict) -> "Trial":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in rec.items() if k in known})


def parse_letter(raw: str, valid: list[str] | set[str]) -> str | None:
    """Last standalone capital letter that belongs to the valid set.

    Standalone means not adjacent to other letters or digits; markdown
    emphasis characters are stripped first so "**D**" still parses.
    """
    valid_set = set(valid)
    text = (raw or "").translate(_MARKDOWN)
    hits = [m.group(1) for m in _STANDALONE.finditer(text) if m.group(1) in valid_set]
    return hits[-1] if hits else None


def label_bucket(num_labels: int) -> str:
    for lo, hi in LABEL_BUCKETS:
        if lo <= num_labels <= hi:
            return f"{lo}-{hi}"
    return "27+"


def _acc(counts: tuple[int, int]) -> dict:
    n, correct = counts
    return {"n": n, "correct": correct, "accuracy": (correct / n) if n else None}


def _fold_categories(items) -> dict[str, str]:
    from collections import Counter

    counts = Counter(it.object_category for it in items)
    return {
        cat: ("misc" if counts[cat] < MIN_CATEGORY_ITEMS or cat in ("", "unknown") else cat)
        for cat in counts
    }


def trials_by_model(trials) -> dict[str, dict[str, Trial]]:
    out: dict[str, dict[str, Trial]] = {}
    for t in trials:
        per = out.setdefault(t.model, {})
        if t.pair_id in per:
            raise ValueError(f"model {t.model} has more than one trial for {t.pair_id}")
        per[t.pair_id] = t
    return out


def score(trials: list[Trial], manifest: BenchmarkManifest, strict: bool = False) -> dict:
    """Overall and per-stratum accuracy for every model in the trial log.

    Items without a trial are reported under "missing"; with strict=True they
    also count as incorrect in every accuracy figure.
    """
    items = manifest.items
    fold = _fold_categories(items)
    per_model = trials_by_model(trials)
    report: dict = {
        "expected_random_accuracy": expected_random_accuracy([it.num_labels for it in items]),
        "n_items": len(items),
        "models": {},
    }

    for model, by_pair in sorted(per_model.items()):
        strata: dict[str, dict[str, list[int]]] = {
            "by_depth": {}, "by_light": {}, "by_plausibility": {},
            "by_label_bucket": {}, "by_object_category": {}, "by_scene_category": {},
        }
        overall = [0, 0]
        missing = []
        parse_failures = transport_failures = 0
        for it in items:
            trial = by_pair.get(it.pair_id)
            if trial is None:
                missing.append(it.pair_id)
                if not strict:
                    continue
                correct = False
            else:
                correct = bool(trial.correct)
                if trial.failure == PARSE_FAILURE:
                    parse_failures += 1
                elif trial.failure == TRANSPORT_FAILURE:
                    transport_failures += 1
            overall[0] += 1
            overall[1] += int(correct)
            for key, value in [
                ("by_depth", it.depth_bin),
                ("by_light", it.light_bin),
                ("by_plausibility", it.plausibility),
                ("by_label_bucket", label_bucket(it.num_labels)),
                ("by_object_category", fold[it.object_category]),
                ("by_scene_category", it.scene_category),
            ]:
                cell = strata[key].setdefault(value, [0, 0])
                cell[0] += 1
                cell[1] += int(correct)
        entry = {"overall": _acc(tuple(overall))}
        for key, table in strata.items():
            entry[key] = {k: _acc(tuple(v)) for k, v in sorted(table.items())}
        entry["parse_failures"] = parse_failures
        entry["transport_failures"] = transport_failures
        entry["missing"] = missing
        report["models"][model] = entry
    return report


def ensemble(
    trials_per_model: dict[str, list[Trial]],
    manifest: BenchmarkManifest,
    baseline_model: str,
    accuracies: dict[str, float] | None = None,
) -> dict:
    """Accuracy-weighted letter vote across models.

    Each model's vote carries weight accuracy / accuracy(baseline); failures
    abstain; the letter with the largest total wins, ties resolved toward the
    alphabetically first letter.
    """
    if baseline_model not in trials_per_model:
        raise ValueError(f"baseline model {baseline_model!r} has no trials")
    if accuracies is None:
        accuracies = {}
        for model, trials in trials_per_model.items():
            rep = score(trials, manifest)
            accuracies[model] = rep["models"][model]["overall"]["accuracy"] or 0.0
    base_acc = accuracies[baseline_model]
    if not base_acc or base_acc <= 0:
        raise ValueError(f"baseline model {baseline_model!r} has zero accuracy; weights undefined")
    weights = {m: accuracies[m] / base_acc for m in trials_per_model}

    key = manifest.by_id()
    indexed = {m: {t.pair_id: t for t in ts} for m, ts in trials_per_model.items()}
    choices: dict[str, str | None] = {}
    n_correct = 0
    for it in manifest.items:
        tally: dict[str, float] = {}
        for model, by_pair in indexed.items():
            t = by_pair.get(it.pair_id)
            if t is None or t.parsed_letter is None:
                continue
            tally[t.parsed_letter] = tally.get(t.parsed_letter, 0.0) + weights[model]
        if tally:
            best = max(tally.values())
            letter = min(l for l, v in tally.items() if v >= best)
            choices[it.pair_id] = letter
            if letter == key[it.pair_id].answer_letter:
                n_correct += 1
        else:
            choices[it.pair_id] = None
    n = len(manifest.items)
    return {
        "weights": weights,
        "choices": choices,
        "n": n,
        "correct": n_correct,
        "accuracy": n_correct / n if n else None,
    }


def _wrong_set(trials: list[Trial]) -> set[str]:
    return {t.pair_id for t in trials if not t.correct}


def wrong_set_iou(trials_a: list[Trial], trials_b: list[Trial]) -> float:
    """IoU of the two incorrect-item sets; two perfect runs agree at 1.0."""
    wa, wb = _wrong_set(trials_a), _wrong_set(trials_b)
    union = wa | wb
    if not union:
        return 1.0
    return len(wa & wb) / len(union)


def same_wrong_fraction(trials_a: list[Trial], trials_b: list[Trial]) -> float | None:
    """Among items both answered wrong, the fraction with identical letters.

    A failed parse never matches anything, including another failed parse.
    Absent (None) when the common-wrong set is empty.
    """
    a = {t.pair_id: t for t in trials_a}
    b = {t.pair_id: t for t in trials_b}
    common = _wrong_set(trials_a) & _wrong_set(trials_b)
    if not common:
        return None
    same = sum(
        1
        for pid in common
        if a[pid].parsed_letter is not None and a[pid].parsed_letter == b[pid].parsed_letter
    )
    return same / len(common)


def human_also_wrong_fraction(human_trials: list[Trial], model_trials: list[Trial]) -> float | None:
    """Of the items humans got wrong, how many the model also got wrong."""
    wh = _wrong_set(human_trials)
    if not wh:
        return None
    wm = _wrong_set(model_trials)
    return len(wh & wm) / len(wh)
