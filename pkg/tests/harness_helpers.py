"""Builders for in-memory manifests and trial logs used across harness tests."""

import itertools
import string

from pairforge.benchmark_build import BenchmarkItem, BenchmarkManifest
from pairforge.harness import Trial

DEPTHS = ("close", "medium", "far")
LIGHTS = ("dark", "medium", "bright")
PLAUS = ("plausible", "implausible")


def mk_item(pair_id, answer_letter="A", num_labels=5, **overrides) -> BenchmarkItem:
    i = sum(map(ord, pair_id))
    fields = dict(
        pair_id=pair_id,
        scene_id=f"scene{i % 7}",
        image_labeled=f"{pair_id}/view1_labeled.png",
        image_edited=f"{pair_id}/view2.png",
        answer_letter=answer_letter,
        num_labels=num_labels,
        depth_m=1.0 + (i % 9),
        depth_bin=DEPTHS[i % 3],
        brightness=40.0 + (i % 150),
        light_bin=LIGHTS[(i // 3) % 3],
        plausibility=PLAUS[i % 2],
        roll_deg=float(i % 12),
        object_category=f"cat{i % 4}",
        scene_category=f"room{i % 3}",
        variant="inconsistent",
        expansion=0.05,
    )
    fields.update(overrides)
    return BenchmarkItem(**fields)


def mk_manifest(n=6, num_labels=5, answers=None) -> BenchmarkManifest:
    items = []
    for i in range(n):
        letter = answers[i] if answers else string.ascii_uppercase[i % num_labels]
        items.append(mk_item(f"p{i:03d}", answer_letter=letter, num_labels=num_labels))
    return BenchmarkManifest(items=items, bin_edges={"depth": (3.0, 6.0), "light": (80.0, 160.0)})


def mk_trial(pair_id, model, letter, correct, failure=None) -> Trial:
    return Trial(
        pair_id=pair_id,
        model=model,
        raw_response=f"answer: {letter}" if letter else "no idea",
        parsed_letter=letter,
        correct=correct,
        failure=failure,
    )


def trials_for(manifest, model, letter_fn) -> list[Trial]:
    """letter_fn(item) -> letter | None; correctness derived from the key."""
    out = []
    for it in manifest.items:
        letter = letter_fn(it)
        out.append(mk_trial(it.pair_id, model, letter, correct=letter == it.answer_letter))
    return out
