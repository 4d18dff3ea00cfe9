"""Build the edited second view for every experimental variant.

The core edit: erase the chosen object from the edited frame by inpainting
its expanded bounding box, paste the object's crop from the donor frame
(aspect preserved, fit inside the original footprint's box, centered), then
restore any pixels of other instances inside the inpainted region so
occlusion ordering survives. Control variants reuse the same machinery:

  self_paste        paste the object back from the edited frame itself
                    (artifacts, no geometry violation)
  no_change         the edited frame untouched
  multi_self_paste  the core edit plus k extra objects self-pasted
  expansion_sweep   the core edit at a caller-chosen box expansion

Box arithmetic uses round-half-up so independent implementations agree
bit-exactly; expansion adds `expansion * side` per side.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .benchmark_build import ManifestError, object_depth
from .geometry import PixelMask, camera_roll_deg
from .inpaint import InpaintParams, inpaint
from .labeling import select_labelable
from .scene_bundle import SceneBundle, ViewFrame, instance_stats, load_bundle
from .triplet_select import TripletCandidate

VARIANTS = ("inconsistent", "self_paste", "no_change", "multi_self_paste", "expansion_sweep")


class CompositeError(ValueError):
    pass


@dataclass
class EditRecipe:
    candidate: TripletCandidate
    variant: str = "inconsistent"
    expansion: float = 0.05
    inpaint_backend: str = "native"
    rng_seed: int = 0
    self_paste_count: int | str | None = None  # for multi_self_paste: k or "all"
    inpaint_params: InpaintParams = field(default_factory=InpaintParams)
    remote_endpoint: str | None = None

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise CompositeError(f"unknown variant {self.variant!r}")
        if self.expansion < 0:
            raise CompositeError("expansion must be >= 0")
        if self.variant == "multi_self_paste":
            k = self.self_paste_count
            if not (k == "all" or (isinstance(k, int) and k >= 1)):
                raise CompositeError("multi_self_paste needs self_paste_count >= 1 or 'all'")


@dataclass
class PasteTransform:
    scale: float
    dst_center: tuple[float, float]  # exact box center; kept unrounded so the
    # placement is reconstructible bit-for-bit


@dataclass
class EditedPair:
    pair_id: str
    view1: np.ndarray          # reference frame rgb, unlabeled
    view2_edited: np.ndarray   # edited second view
    view2_clean: np.ndarray    # the unmodified second frame (controls + judging)
    answer_object: int
    inpaint_region: PixelMask
    paste_transform: PasteTransform | None
    provenance: dict


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def expand_bbox(bbox: tuple[int, int, int, int], expansion: float, width: int, height: int) -> tuple[int, int, int, int]:
    """Grow each side by expansion * side, recenter, round half-up, clamp."""
    x, y, w, h = bbox
    if w <= 0 or h <= 0:
        raise CompositeError(f"degenerate bbox {bbox}")
    nw = _round_half_up((1 + 2 * expansion) * w)
    nh = _round_half_up((1 + 2 * expansion) * h)
    nx = _round_half_up(x + w / 2 - nw / 2)
    ny = _round_half_up(y + h / 2 - nh / 2)
    x0, y0 = max(0, nx), max(0, ny)
    x1, y1 = min(width, nx + nw), min(height, ny + nh)
    if x1 <= x0 or y1 <= y0:
        raise CompositeError(f"expanded bbox {bbox} collapsed after clamping")
    return x0, y0, x1 - x0, y1 - y0


def _bbox_mask(bbox: tuple[int, int, int, int], width: int, height: int) -> PixelMask:
    x, y, w, h = bbox
    m = PixelMask.empty(width, height)
    m.data[y : y + h, x : x + w] = True
    return m


def erase_object(
    frame: ViewFrame,
    object_id: int,
    expansion: float,
    backend: str = "native",
    params: InpaintParams = InpaintParams(),
    endpoint: str | None = None,
    stats: dict | None = None,
) -> tuple[np.ndarray, PixelMask]:
    """Inpaint the object's expanded bounding box out of the frame."""
    stats = stats if stats is not None else instance_stats(frame)
    if object_id not in stats:
        raise CompositeError(f"object {object_id} not present in frame {frame.frame_id}")
    region_box = expand_bbox(stats[object_id].bbox, expansion, frame.width, frame.height)
    region = _bbox_mask(region_box, frame.width, frame.height)
    filled = inpaint(frame.rgb, region, params, backend=backend, endpoint=endpoint)
    return filled, region


def paste_object(
    base: np.ndarray,
    source_frame: ViewFrame,
    object_id: int,
    target_bbox: tuple[int, int, int, int],
    src_stats_table: dict | None = None,
) -> tuple[np.ndarray, PixelMask, PasteTransform]:
    """Composite the object's masked crop onto base, aspect-preserving.

    The crop is uniformly scaled by min(target_w/src_w, target_h/src_h)
    (nearest-neighbor), centered on the target box center; only object
    pixels land, the crop background stays transparent.
    """
    src_stats = (src_stats_table if src_stats_table is not None else instance_stats(source_frame)).get(object_id)
    if src_stats is None or src_stats.area_px == 0:
        raise CompositeError(f"object {object_id} has no pixels in frame {source_frame.frame_id}")
    sx, sy, sw, sh = src_stats.bbox
    tx, ty, tw, th = target_bbox
    scale = min(tw / sw, th / sh)
    out_w = max(1, _round_half_up(sw * scale))
    out_h = max(1, _round_half_up(sh * scale))

    crop_rgb = source_frame.rgb[sy : sy + sh, sx : sx + sw]
    crop_mask = source_frame.instances[sy : sy + sh, sx : sx + sw] == np.uint16(object_id)
    col = np.minimum(((np.arange(out_w) + 0.5) * sw / out_w).astype(np.int64), sw - 1)
    row = np.minimum(((np.arange(out_h) + 0.5) * sh / out_h).astype(np.int64), sh - 1)
    scaled_rgb = crop_rgb[row][:, col]
    scaled_mask = crop_mask[row][:, col]

    cx = tx + tw / 2
    cy = ty + th / 2
    dx0 = _round_half_up(cx - out_w / 2)
    dy0 = _round_half_up(cy - out_h / 2)

    h, w = base.shape[:2]
    gx0, gy0 = max(0, dx0), max(0, dy0)
    gx1, gy1 = min(w, dx0 + out_w), min(h, dy0 + out_h)
    out = base.copy()
    pasted = PixelMask.empty(w, h)
    if gx1 > gx0 and gy1 > gy0:
        sub_rgb = scaled_rgb[gy0 - dy0 : gy1 - dy0, gx0 - dx0 : gx1 - dx0]
        sub_mask = scaled_mask[gy0 - dy0 : gy1 - dy0, gx0 - dx0 : gx1 - dx0]
        view = out[gy0:gy1, gx0:gx1]
        view[sub_mask] = sub_rgb[sub_mask]
        pasted.data[gy0:gy1, gx0:gx1] = sub_mask
    transform = PasteTransform(scale=float(scale), dst_center=(float(cx), float(cy)))
    return out, pasted, transform


def restore_occluders(
    composited: np.ndarray,
    frame: ViewFrame,
    answer_object: int,
    inpaint_region: PixelMask,
    also_keep: tuple[int, ...] = (),
) -> np.ndarray:
    """Restore original pixels of every other instance inside the region.

    Pixels whose instance ID is background, the answer object, or one of
    also_keep stay as composited; everything else reverts bit-exactly.
    """
    keep = {0, int(answer_object), *map(int, also_keep)}
    sel = inpaint_region.data.copy()
    for oid in keep:
        sel &= frame.instances != np.uint16(oid)
    out = composited.copy()
    out[sel] = frame.rgb[sel]
    return out


def pair_id_for(recipe: EditRecipe) -> str:
    c = recipe.candidate
    tag = f"{c.scene_id}-{c.ref_id}-{c.edited_id}-{c.donor_id}-o{c.object_id}-{recipe.variant}"
    pct = recipe.expansion * 100
    tag += f"-exp{pct:g}"
    if recipe.variant == "multi_self_paste":
        tag += f"-k{recipe.self_paste_count}"
    return tag


def _single_edit(
    bundle: SceneBundle, recipe: EditRecipe, timings: dict | None
) -> tuple[np.ndarray, PixelMask, PasteTransform | None]:
    cand = recipe.candidate
    edited = bundle.frame(cand.edited_id)
    edited_stats = bundle.frame_stats(cand.edited_id)
    t0 = time.perf_counter()
    base, region = erase_object(
        edited,
        cand.object_id,
        recipe.expansion,
        backend=recipe.inpaint_backend,
        params=recipe.inpaint_params,
        endpoint=recipe.remote_endpoint,
        stats=edited_stats,
    )
    if timings is not None:
        timings["inpaint"] = timings.get("inpaint", 0.0) + time.perf_counter() - t0

    donor_view = recipe.variant in ("inconsistent", "expansion_sweep", "multi_self_paste")
    source = bundle.frame(cand.donor_id) if donor_view else edited
    source_stats = bundle.frame_stats(cand.donor_id) if donor_view else edited_stats
    target_bbox = edited_stats[cand.object_id].bbox
    t0 = time.perf_counter()
    pasted, _, transform = paste_object(base, source, cand.object_id, target_bbox, src_stats_table=source_stats)
    out = restore_occluders(pasted, edited, cand.object_id, region)
    if timings is not None:
        timings["paste"] = timings.get("paste", 0.0) + time.perf_counter() - t0
    return out, region, transform


def make_pair(bundle: SceneBundle, recipe: EditRecipe, timings: dict | None = None) -> EditedPair:
    """Assemble one edited pair; deterministic for equal (bundle, recipe)."""
    recipe.validate()
    cand = recipe.candidate
    ref = bundle.frame(cand.ref_id)
    edited = bundle.frame(cand.edited_id)

    transform: PasteTransform | None = None
    if recipe.variant == "no_change":
        out = edited.rgb.copy()
        region = PixelMask.empty(edited.width, edited.height)
    else:
        out, region, transform = _single_edit(bundle, recipe, timings)

    if recipe.variant == "multi_self_paste":
        labelable = select_labelable(edited, cand.object_id)
        pool = sorted(oid for oid in labelable if oid != cand.object_id)
        k = len(pool) if recipe.self_paste_count == "all" else min(int(recipe.self_paste_count), len(pool))
        rng = np.random.default_rng(recipe.rng_seed)
        extras = sorted(rng.choice(pool, size=k, replace=False).tolist()) if k else []
        current = out
        scratch = ViewFrame(
            frame_id=edited.frame_id, rgb=current, depth=edited.depth, instances=edited.instances, camera=edited.camera
        )
        edited_stats = bundle.frame_stats(cand.edited_id)
        for oid in extras:
            t0 = time.perf_counter()
            base_i, region_i = erase_object(
                scratch, oid, recipe.expansion,
                backend=recipe.inpaint_backend, params=recipe.inpaint_params, endpoint=recipe.remote_endpoint,
                stats=edited_stats,
            )
            if timings is not None:
                timings["inpaint"] = timings.get("inpaint", 0.0) + time.perf_counter() - t0
            t0 = time.perf_counter()
            pasted_i, _, _ = paste_object(base_i, edited, oid, edited_stats[oid].bbox, src_stats_table=edited_stats)
            # never resurrect the answer object's erased original footprint
            current = restore_occluders(pasted_i, edited, oid, region_i, also_keep=(cand.object_id,))
            if timings is not None:
                timings["paste"] = timings.get("paste", 0.0) + time.perf_counter() - t0
            region = region.union(region_i)
            scratch = ViewFrame(
                frame_id=edited.frame_id, rgb=current, depth=edited.depth, instances=edited.instances, camera=edited.camera
            )
        out = current

    donor = bundle.frame(cand.donor_id)
    try:
        depth_m = object_depth(ref, cand.object_id)
    except ManifestError:
        depth_m = None
    roll = camera_roll_deg(edited.camera, donor.camera)
    provenance = {
        "scene_id": cand.scene_id,
        "ref_id": cand.ref_id,
        "edited_id": cand.edited_id,
        "donor_id": cand.donor_id,
        "answer_object_id": cand.object_id,
        "answer_object_category": bundle.instance_table.get(cand.object_id, {}).get("category", "unknown"),
        "variant": recipe.variant,
        "expansion": recipe.expansion,
        "inpaint_backend": recipe.inpaint_backend,
        "rng_seed": recipe.rng_seed,
        "self_paste_count": recipe.self_paste_count,
        "depth_m": depth_m,
        "roll_deg": 0.0 if roll.degenerate else roll.degrees,
        "roll_degenerate": roll.degenerate,
        "measured": dict(cand.verdict.measured) if cand.verdict else {},
    }
    return EditedPair(
        pair_id=pair_id_for(recipe),
        view1=ref.rgb.copy(),
        view2_edited=out,
        view2_clean=edited.rgb.copy(),
        answer_object=cand.object_id,
        inpaint_region=region,
        paste_transform=transform,
        provenance=provenance,
    )


def write_pair(pair: EditedPair, out_root) -> dict:
    """pairs/<pair_id>/{view1,view2,view2_clean,region}.png + meta.json; returns the meta."""
    import json

    d = Path(out_root) / pair.pair_id
    d.mkdir(parents=True, exist_ok=True)
    # PNG stays lossless at any compress level; low level keeps encode cheap
    Image.fromarray(pair.view1).save(d / "view1.png", compress_level=2)
    Image.fromarray(pair.view2_edited).save(d / "view2.png", compress_level=2)
    Image.fromarray(pair.view2_clean).save(d / "view2_clean.png", compress_level=2)
    Image.fromarray(pair.inpaint_region.data.astype(np.uint8) * 255).save(d / "region.png", compress_level=2)
    meta = {
        "pair_id": pair.pair_id,
        "answer_object_id": pair.answer_object,
        "paste_transform": asdict(pair.paste_transform) if pair.paste_transform else None,
        "inpaint_region_area": pair.inpaint_region.area(),
        **pair.provenance,
    }
    (d / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))
    return meta


# --- batch generation -------------------------------------------------------

_BUNDLE_CACHE: dict[str, SceneBundle] = {}


def _cached_bundle(corpus_root: str, scene_id: str) -> SceneBundle:
    key = f"{corpus_root}//{scene_id}"
    if key not in _BUNDLE_CACHE:
        _BUNDLE_CACHE[key] = load_bundle(Path(corpus_root) / scene_id)
    return _BUNDLE_CACHE[key]


def _build_one(job: tuple[str, str, dict, dict]) -> tuple[dict, dict]:
    """Worker entry: (corpus_root, out_root, candidate record, recipe fields)."""
    corpus_root, out_root, cand_rec, recipe_fields = job
    cand = TripletCandidate.from_record(cand_rec)
    recipe = EditRecipe(candidate=cand, **recipe_fields)
    bundle = _cached_bundle(corpus_root, cand.scene_id)
    timings: dict = {}
    pair = make_pair(bundle, recipe, timings=timings)
    t0 = time.perf_counter()
    meta = write_pair(pair, out_root)
    timings["encode"] = time.perf_counter() - t0
    return meta, timings


def generate_pairs(
    corpus_root,
    candidates: list[TripletCandidate],
    out_root,
    variant: str = "inconsistent",
    expansion: float = 0.05,
    backend: str = "native",
    rng_seed: int = 0,
    self_paste_count: int | str | None = None,
    workers: int = 1,
    inpaint_params: InpaintParams | None = None,
    remote_endpoint: str | None = None,
) -> tuple[list[dict], dict]:
    """Build pairs for every candidate; returns (metas in input order, stage times)."""
    recipe_fields = {
        "variant": variant,
        "expansion": expansion,
        "inpaint_backend": backend,
        "rng_seed": rng_seed,
        "self_paste_count": self_paste_count,
        "inpaint_params": inpaint_params or InpaintParams(rng_seed=rng_seed),
        "remote_endpoint": remote_endpoint,
    }
    jobs = [(str(corpus_root), str(out_root), c.to_record(), recipe_fields) for c in candidates]
    metas: list[dict] = []
    stages: dict[str, float] = {}
    if workers <= 1:
        results = map(_build_one, jobs)
    else:
        from concurrent.futures import ProcessPoolExecutor

        pool = ProcessPoolExecutor(max_workers=workers)
        results = pool.map(_build_one, jobs)
    for meta, timing in results:
        metas.append(meta)
        for k, v in timing.items():
            stages[k] = stages.get(k, 0.0) + v
    if workers > 1:
        pool.shutdown()
    return metas, stages


@dataclass
class ThroughputReport:
    pairs: int
    seconds: float
    pairs_per_sec: float | None
    stages: dict[str, float]

    def to_dict(self) -> dict:
        return {"pairs": self.pairs, "seconds": self.seconds, "pairs_per_sec": self.pairs_per_sec, "stages": dict(self.stages)}


def generation_throughput(
    corpus_root,
    candidates: list[TripletCandidate],
    out_root,
    workers: int = 1,
    **recipe_kwargs,
) -> ThroughputReport:
    """Wall-clock pair generation rate with per-stage breakdown."""
    if not candidates:
        return ThroughputReport(pairs=0, seconds=0.0, pairs_per_sec=None, stages={})
    t0 = time.perf_counter()
    metas, stages = generate_pairs(corpus_root, candidates, out_root, workers=workers, **recipe_kwargs)
    dt = time.perf_counter() - t0
    return ThroughputReport(pairs=len(metas), seconds=dt, pairs_per_sec=len(metas) / dt, stages=stages)
