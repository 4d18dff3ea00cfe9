"""Enumerate and filter (reference, edited, donor, object) candidates.

A candidate passes when all five checks hold:

  1. the object is visible (>= visibility floor) in all three frames,
  2. instance-set overlap(reference, edited) <= overlap_max,
  3. instance-set overlap(edited, donor) <= overlap_max,
  4. the object covers between area_min and area_max of the edited frame,
  5. its donor-view footprint projects onto >= proj_area_min of its
     edited-view footprint.

Failed verdicts list every violated criterion, not just the first. The
projection check (5) is recorded as failed when the object has no pixels in
the edited frame, since no footprint can satisfy it.

Enumeration is deterministic for a given (bundle, config): ordered frame
triples are shuffled with the seeded generator, capped, then re-sorted
lexicographically; objects iterate in ascending ID within each triple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

from .geometry import object_set_overlap, projected_area_fraction, visible_ids
from .scene_bundle import SceneBundle, ViewFrame, instance_stats

FAIL_VISIBILITY = "visibility"
FAIL_OVERLAP_REF_EDITED = "overlap_ref_edited"
FAIL_OVERLAP_EDITED_DONOR = "overlap_edited_donor"
FAIL_AREA_MIN = "area_min"
FAIL_AREA_MAX = "area_max"
FAIL_PROJ_AREA = "proj_area"


@dataclass
class SelectionConfig:
    overlap_max: float = 0.75
    area_min: float = 0.05
    area_max: float = 0.10
    proj_area_min: float = 0.40
    visibility_floor_px: int = 100
    rng_seed: int = 0
    max_triples_per_scene: int = 512

    def validate(self) -> None:
        if not (0 < self.area_min < self.area_max < 1):
            raise ValueError(f"need 0 < area_min < area_max < 1, got {self.area_min}, {self.area_max}")
        if not (0 <= self.overlap_max <= 1):
            raise ValueError(f"overlap_max must be in [0,1], got {self.overlap_max}")
        if not self.proj_area_min > 0:
            raise ValueError(f"proj_area_min must be positive, got {self.proj_area_min}")


@dataclass
class Verdict:
    passed: bool
    failed: list[str]
    measured: dict[str, float] = field(default_factory=dict)


@dataclass
class TripletCandidate:
    scene_id: str
    ref_id: str
    edited_id: str
    donor_id: str
    object_id: int
    verdict: Verdict | None = None

    def to_record(self) -> dict:
        rec = {
            "scene_id": self.scene_id,
            "ref_id": self.ref_id,
            "edited_id": self.edited_id,
            "donor_id": self.donor_id,
            "object_id": self.object_id,
        }
        if self.verdict is not None:
            rec["pass"] = self.verdict.passed
            rec["failed"] = list(self.verdict.failed)
            rec["measured"] = dict(self.verdict.measured)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "TripletCandidate":
        verdict = None
        if "pass" in rec:
            verdict = Verdict(passed=rec["pass"], failed=list(rec.get("failed", [])), measured=dict(rec.get("measured", {})))
        return cls(
            scene_id=rec["scene_id"],
            ref_id=rec["ref_id"],
            edited_id=rec["edited_id"],
            donor_id=rec["donor_id"],
            object_id=int(rec["object_id"]),
            verdict=verdict,
        )


class _Measurer:
    """Caches per-frame measurements across the candidates of one bundle."""

    def __init__(self, bundle: SceneBundle, cfg: SelectionConfig):
        self.bundle = bundle
        self.cfg = cfg
        self._stats: dict[str, dict] = {}
        self._overlap: dict[frozenset, float] = {}
        self._proj: dict[tuple, float] = {}

    def stats(self, frame_id: str) -> dict:
        if frame_id not in self._stats:
            self._stats[frame_id] = instance_stats(self.bundle.frame(frame_id))
        return self._stats[frame_id]

    def area_px(self, object_id: int, frame_id: str) -> int:
        st = self.stats(frame_id).get(object_id)
        return st.area_px if st else 0

    def overlap(self, a: str, b: str) -> float:
        key = frozenset((a, b))
        if key not in self._overlap:
            self._overlap[key] = object_set_overlap(
                self.bundle.frame(a), self.bundle.frame(b), self.cfg.visibility_floor_px
            )
        return self._overlap[key]

    def proj_fraction(self, object_id: int, donor_id: str, edited_id: str) -> float:
        key = (object_id, donor_id, edited_id)
        if key not in self._proj:
            if self.area_px(object_id, edited_id) == 0:
                self._proj[key] = math.nan
            else:
                self._proj[key] = projected_area_fraction(
                    object_id, self.bundle.frame(donor_id), self.bundle.frame(edited_id)
                )
        return self._proj[key]


def _check(meas: _Measurer, cand: TripletCandidate, cfg: SelectionConfig) -> Verdict:
    bundle = meas.bundle
    for fid in (cand.ref_id, cand.edited_id, cand.donor_id):
        bundle.frame(fid)  # raises KeyError for unknown frames
    if cand.object_id not in bundle.instance_table:
        raise KeyError(f"scene {bundle.scene_id}: unknown object ID {cand.object_id}")

    failed: list[str] = []
    edited = bundle.frame(cand.edited_id)
    image_area = edited.width * edited.height

    vis = {fid: meas.area_px(cand.object_id, fid) for fid in (cand.ref_id, cand.edited_id, cand.donor_id)}
    if any(v < cfg.visibility_floor_px for v in vis.values()):
        failed.append(FAIL_VISIBILITY)

    ov_re = meas.overlap(cand.ref_id, cand.edited_id)
    if ov_re > cfg.overlap_max:
        failed.append(FAIL_OVERLAP_REF_EDITED)
    ov_ed = meas.overlap(cand.edited_id, cand.donor_id)
    if ov_ed > cfg.overlap_max:
        failed.append(FAIL_OVERLAP_EDITED_DONOR)

    area_frac = vis[cand.edited_id] / image_area
    if area_frac < cfg.area_min:
        failed.append(FAIL_AREA_MIN)
    if area_frac > cfg.area_max:
        failed.append(FAIL_AREA_MAX)

    proj = meas.proj_fraction(cand.object_id, cand.donor_id, cand.edited_id)
    if math.isnan(proj) or proj < cfg.proj_area_min:
        failed.append(FAIL_PROJ_AREA)

    measured = {
        "visible_px_ref": vis[cand.ref_id],
        "visible_px_edited": vis[cand.edited_id],
        "visible_px_donor": vis[cand.donor_id],
        "overlap_ref_edited": ov_re,
        "overlap_edited_donor": ov_ed,
        "area_fraction_edited": area_frac,
        "proj_area_fraction": proj,
    }
    return Verdict(passed=not failed, failed=failed, measured=measured)


def check_candidate(bundle: SceneBundle, cand: TripletCandidate, cfg: SelectionConfig) -> Verdict:
    cfg.validate()
    return _check(_Measurer(bundle, cfg), cand, cfg)


def _capped_triples(bundle: SceneBundle, cfg: SelectionConfig) -> list[tuple[str, str, str]]:
    import numpy as np

    ids = [fr.frame_id for fr in bundle.frames]
    triples = sorted(
        (a, b, c)
        for a in ids
        for b in ids
        for c in ids
        if len({a, b, c}) == 3
    )
    rng = np.random.default_rng(cfg.rng_seed)
    order = rng.permutation(len(triples))
    kept = [triples[i] for i in order[: cfg.max_triples_per_scene]]
    return sorted(kept)


def enumerate_candidates(bundle: SceneBundle, cfg: SelectionConfig) -> Iterator[TripletCandidate]:
    """All (triple, object) combinations with verdicts, in deterministic order."""
    cfg.validate()
    meas = _Measurer(bundle, cfg)
    objects = sorted(bundle.instance_table)
    for ref_id, edited_id, donor_id in _capped_triples(bundle, cfg):
        for oid in objects:
            cand = TripletCandidate(bundle.scene_id, ref_id, edited_id, donor_id, oid)
            cand.verdict = _check(meas, cand, cfg)
            yield cand


def sample_passing(
    bundle: SceneBundle, cfg: SelectionConfig, n: int, per_scene_cap: int | None = 2
) -> tuple[list[TripletCandidate], bool]:
    """First n passing candidates in enumeration order.

    per_scene_cap limits how many come out of this scene (None = unlimited).
    Returns (candidates, exhausted) with exhausted set when fewer than n
    could be produced.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    limit = n if per_scene_cap is None else min(n, per_scene_cap)
    out: list[TripletCandidate] = []
    for cand in enumerate_candidates(bundle, cfg):
        if cand.verdict and cand.verdict.passed:
            out.append(cand)
            if len(out) >= limit:
                break
    return out, len(out) < n


def sample_passing_corpus(
    bundles: Iterator[SceneBundle], cfg: SelectionConfig, n: int, per_scene_cap: int | None = 2
) -> tuple[list[TripletCandidate], bool]:
    """Pool passing candidates across scenes, per_scene_cap each, up to n total."""
    out: list[TripletCandidate] = []
    for bundle in bundles:
        want = n - len(out)
        if want <= 0:
            break
        cap = want if per_scene_cap is None else min(want, per_scene_cap)
        got, _ = sample_passing(bundle, cfg, cap, per_scene_cap=None)
        out.extend(got)
    return out, len(out) < n
