"""Attach analysis metadata to generated pairs and assemble the benchmark manifest.

Each item carries the scalars the result breakdowns stratify over (object
depth in the reference view, pair brightness, camera roll / plausibility,
label count, object and scene categories) plus the tertile bin labels
derived from the whole manifest's empirical distributions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .geometry import Roll
from .jsonl import read_jsonl, write_jsonl
from .scene_bundle import ViewFrame

FORMAT_VERSION = 1
PLAUSIBLE_MAX_ROLL_DEG = 5.0
DEPTH_BIN_NAMES = ("close", "medium", "far")
LIGHT_BIN_NAMES = ("dark", "medium", "bright")

LUMA_WEIGHTS = (0.2126, 0.7152, 0.0722)  # Rec. 709


class ManifestError(ValueError):
    pass


@dataclass
class BenchmarkItem:
    pair_id: str
    scene_id: str
    image_labeled: str
    image_edited: str
    answer_letter: str
    num_labels: int
    depth_m: float
    depth_bin: str
    brightness: float
    light_bin: str
    plausibility: str
    roll_deg: float
    object_category: str
    scene_category: str
    variant: str
    expansion: float
    self_paste_count: int | str | None = None

    def to_record(self) -> dict:
        return {"kind": "item", **asdict(self)}


@dataclass
class BenchmarkManifest:
    items: list[BenchmarkItem]
    bin_edges: dict[str, tuple[float, float]]
    config: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def by_id(self) -> dict[str, BenchmarkItem]:
        return {it.pair_id: it for it in self.items}


def object_depth(frame: ViewFrame, object_id: int) -> float:
    """Median of the valid depth samples under the object's mask."""
    sel = frame.instances == np.uint16(object_id)
    vals = frame.depth[sel]
    vals = vals[vals > 0]
    if vals.size == 0:
        raise ManifestError(f"object {object_id} has no valid depth in frame {frame.frame_id}")
    return float(np.median(vals))


def pair_brightness(rgb_a: np.ndarray, rgb_b: np.ndarray) -> float:
    """Mean Rec.709 luma over both rasters together."""
    total = 0.0
    count = 0
    for rgb in (rgb_a, rgb_b):
        arr = np.asarray(rgb, dtype=np.float64)
        luma = arr[..., 0] * LUMA_WEIGHTS[0] + arr[..., 1] * LUMA_WEIGHTS[1] + arr[..., 2] * LUMA_WEIGHTS[2]
        total += float(luma.sum())
        count += luma.size
    return total / count


def tertile_bins(values) -> tuple[tuple[float, float], list[int]]:
    """Split values into three near-equal-population bins.

    Stable sort by (value, original index); the first ceil(n/3) go to bin 0,
    the next ceil((n - c0) / 2) to bin 1, the rest to bin 2, so populations
    differ by at most one. Edges are the max values of bins 0 and 1.
    """
    vals = list(values)
    n = len(vals)
    if n < 3:
        raise ManifestError(f"tertile binning needs at least 3 values, got {n}")
    order = sorted(range(n), key=lambda i: (vals[i], i))
    c0 = math.ceil(n / 3)
    c1 = math.ceil((n - c0) / 2)
    bins = [0] * n
    for rank, idx in enumerate(order):
        bins[idx] = 0 if rank < c0 else (1 if rank < c0 + c1 else 2)
    e1 = vals[order[c0 - 1]]
    e2 = vals[order[c0 + c1 - 1]]
    return (float(e1), float(e2)), bins


def plausibility_label(roll: Roll) -> tuple[float, str]:
    """Roll under 5 degrees reads as stably supported; degenerate rolls are 0."""
    deg = 0.0 if roll.degenerate else roll.degrees
    label = "plausible" if abs(deg) < PLAUSIBLE_MAX_ROLL_DEG else "implausible"
    return deg, label


def expected_random_accuracy(num_labels) -> float:
    ks = [int(k) for k in num_labels]
    if not ks or any(k < 1 for k in ks):
        raise ManifestError("every item needs num_labels >= 1")
    return sum(1.0 / k for k in ks) / len(ks)


def build_manifest(
    pairs_root,
    key_records: list[dict],
    config: dict | None = None,
    allow_partial: bool = False,
    scene_categories: dict[str, str] | None = None,
) -> BenchmarkManifest:
    """Join pair metadata with answer keys and derive bins.

    Every pair needs its meta.json (with depth_m / roll_deg recorded at
    generation time), the labeled reference image, and a key row; incomplete
    items abort the build unless allow_partial.
    """
    import json

    pairs_root = Path(pairs_root)
    keys = {k["pair_id"]: k for k in key_records}
    problems: list[str] = []
    rows: list[dict] = []

    for pair_dir in sorted(p.parent for p in pairs_root.glob("*/meta.json")):
        meta = json.loads((pair_dir / "meta.json").read_text())
        pid = meta["pair_id"]
        key = keys.get(pid)
        labeled = pair_dir / "view1_labeled.png"
        edited = pair_dir / "view2.png"
        clean = pair_dir / "view2_clean.png"
        missing = [
            name
            for name, ok in [
                ("key", key is not None),
                ("view1_labeled.png", labeled.exists()),
                ("view2.png", edited.exists()),
                ("view2_clean.png", clean.exists()),
                ("depth_m", meta.get("depth_m") is not None),
                ("roll_deg", meta.get("roll_deg") is not None),
            ]
            if not ok
        ]
        if missing:
            problems.append(f"{pid}: missing {', '.join(missing)}")
            continue
        view1 = np.array(Image.open(pair_dir / "view1.png"))
        brightness = pair_brightness(view1, np.array(Image.open(clean)))
        roll_deg, plaus = plausibility_label(Roll(meta["roll_deg"], meta.get("roll_degenerate", False)))
        rows.append(
            {
                "pair_id": pid,
                "scene_id": meta["scene_id"],
                "image_labeled": str(labeled),
                "image_edited": str(edited),
                "answer_letter": key["answer_letter"],
                "num_labels": key["num_labels"],
                "depth_m": float(meta["depth_m"]),
                "brightness": brightness,
                "roll_deg": roll_deg,
                "plausibility": plaus,
                "object_category": meta.get("answer_object_category", "unknown"),
                "scene_category": (scene_categories or {}).get(pid, "uncategorized"),
                "variant": meta["variant"],
                "expansion": meta["expansion"],
                "self_paste_count": meta.get("self_paste_count"),
            }
        )

    if problems and not allow_partial:
        raise ManifestError("manifest refused; incomplete items:\n" + "\n".join(problems))
    if len(rows) < 3:
        raise ManifestError(f"need at least 3 complete items to bin, got {len(rows)}")

    rows.sort(key=lambda r: r["pair_id"])
    depth_edges, depth_idx = tertile_bins([r["depth_m"] for r in rows])
    light_edges, light_idx = tertile_bins([r["brightness"] for r in rows])
    items = [
        BenchmarkItem(
            depth_bin=DEPTH_BIN_NAMES[depth_idx[i]],
            light_bin=LIGHT_BIN_NAMES[light_idx[i]],
            **row,
        )
        for i, row in enumerate(rows)
    ]
    return BenchmarkManifest(
        items=items,
        bin_edges={"depth": depth_edges, "light": light_edges},
        config=dict(config or {}),
    )


def save_manifest(manifest: BenchmarkManifest, path) -> None:
    header = {
        "kind": "header",
        "format_version": manifest.format_version,
        "bin_edges": {k: list(v) for k, v in manifest.bin_edges.items()},
        "config": manifest.config,
        "n_items": len(manifest.items),
    }
    write_jsonl(path, [header] + [it.to_record() for it in manifest.items])


def load_manifest(path) -> BenchmarkManifest:
    records = list(read_jsonl(path))
    if not records or records[0].get("kind") != "header":
        raise ManifestError(f"{path}: first record must be the manifest header")
    header = records[0]
    items = []
    for rec in records[1:]:
        if rec.get("kind") != "item":
            raise ManifestError(f"{path}: unexpected record kind {rec.get('kind')!r}")
        rec = {k: v for k, v in rec.items() if k != "kind"}
        items.append(BenchmarkItem(**rec))
    return BenchmarkManifest(
        items=items,
        bin_edges={k: tuple(v) for k, v in header["bin_edges"].items()},
        config=header.get("config", {}),
        format_version=header.get("format_version", FORMAT_VERSION),
    )


def verify_manifest(manifest: BenchmarkManifest) -> None:
    """Re-derive bins and edges from the stored scalars; raise on drift."""
    depth_edges, depth_idx = tertile_bins([it.depth_m for it in manifest.items])
    light_edges, light_idx = tertile_bins([it.brightness for it in manifest.items])
    if tuple(depth_edges) != tuple(manifest.bin_edges["depth"]) or tuple(light_edges) != tuple(manifest.bin_edges["light"]):
        raise ManifestError("stored bin edges do not match the item scalars")
    for i, it in enumerate(manifest.items):
        if it.depth_bin != DEPTH_BIN_NAMES[depth_idx[i]] or it.light_bin != LIGHT_BIN_NAMES[light_idx[i]]:
            raise ManifestError(f"{it.pair_id}: stored bins do not match the item scalars")
        _, plaus = plausibility_label(Roll(it.roll_deg, False))
        if it.plausibility != plaus:
            raise ManifestError(f"{it.pair_id}: plausibility label inconsistent with roll_deg")


def categorize_scenes(pair_images: list[tuple[str, str]], caption_fn, assign_fn) -> tuple[dict[str, str], dict]:
    """Two-stage external labeling: caption each pair, then batch-assign categories.

    pair_images: (pair_id, path to the unlabeled reference image). Any failure
    maps the remaining pairs to "uncategorized" rather than aborting the build.
    Returns (categories by pair, provenance).
    """
    ids = [pid for pid, _ in pair_images]
    captions: list[str] = []
    try:
        for _, image_path in pair_images:
            captions.append(str(caption_fn(image_path)))
        assigned = [str(c).strip().lower() or "misc" for c in assign_fn(captions)]
        if len(assigned) != len(ids):
            raise ValueError(f"labeler returned {len(assigned)} categories for {len(ids)} captions")
        cats = dict(zip(ids, assigned))
        provenance = {"n_captioned": len(captions), "failed": False}
    except Exception as exc:  # endpoint failures must not sink the manifest
        cats = {pid: "uncategorized" for pid in ids}
        provenance = {"n_captioned": len(captions), "failed": True, "error": str(exc)}
    return cats, provenance
