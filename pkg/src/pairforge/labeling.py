"""Letter labeling of the reference view: pick objects, assign A..Z, render tags.

Letters are assigned in raster order of mask centroids (top-to-bottom, then
left-to-right) so neighbouring tags read naturally. Tags are drawn with an
embedded 5x7 bitmap font so renders are bit-identical across platforms.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

from .scene_bundle import ViewFrame, instance_stats

REFERENCE_IMAGE_AREA = 1024 * 768  # size thresholds are quoted at this raster size

# 5x7 glyphs, one int per row, bit 4 = leftmost column
GLYPHS: dict[str, tuple[int, ...]] = {
    "A": (0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "B": (0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110),
    "C": (0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110),
    "D": (0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110),
    "E": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111),
    "F": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000),
    "G": (0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01110),
    "H": (0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "I": (0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "J": (0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100),
    "K": (0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001),
    "L": (0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111),
    "M": (0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001),
    "N": (0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001),
    "O": (0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110),
    "P": (0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000),
    "Q": (0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101),
    "R": (0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001),
    "S": (0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110),
    "T": (0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100),
    "U": (0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110),
    "V": (0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100),
    "W": (0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010),
    "X": (0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001),
    "Y": (0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100),
    "Z": (0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111),
}

LETTERS = string.ascii_uppercase


class UnlabelablePairError(Exception):
    """The answer object is too small to ever receive a label."""


@dataclass
class LabelEntry:
    letter: str
    object_id: int
    anchor: tuple[int, int]  # (x, y) mask centroid, pixel
    area_px: int


@dataclass
class LabelAssignment:
    entries: list[LabelEntry]
    answer_letter: str

    @property
    def letters(self) -> list[str]:
        return [e.letter for e in self.entries]


@dataclass
class LabelStyle:
    glyph_height: float = 0.035        # fraction of image height
    fill_rgb: tuple[int, int, int] = (255, 255, 255)
    outline_rgb: tuple[int, int, int] = (0, 0, 0)
    min_glyph_px: int = 8


def select_labelable_areas(
    areas: dict[int, int],
    answer_object: int,
    image_area: int,
    base_threshold_px: int = 1000,
    floor_px: int = 300,
    max_labels: int = 26,
    min_labels: int = 5,
) -> list[int]:
    """Core size rule over an {object: area} table; returns ids largest-first.

    Thresholds scale with image area relative to the reference raster size.
    The area threshold halves until at least min_labels qualify or it hits
    the absolute floor; the answer object is always kept (or the pair is
    unlabelable when it sits below the floor).
    """
    scale = image_area / REFERENCE_IMAGE_AREA
    threshold = base_threshold_px * scale
    floor = floor_px * scale

    answer_area = areas.get(answer_object, 0)
    if answer_area < floor:
        raise UnlabelablePairError(
            f"answer object {answer_object} has {answer_area} px, below the scaled floor {floor:.1f}"
        )

    def qualifying(thr: float) -> list[int]:
        eff = max(thr, floor)
        return [oid for oid, a in areas.items() if a >= eff]

    qualify = qualifying(threshold)
    while len(qualify) < min_labels and threshold > floor:
        threshold = threshold / 2
        qualify = qualifying(threshold)

    chosen = set(qualify)
    chosen.add(answer_object)
    ranked = sorted(chosen, key=lambda oid: (-areas.get(oid, 0), oid))
    if len(ranked) > max_labels:
        kept = ranked[:max_labels]
        if answer_object not in kept:
            kept = kept[:-1] + [answer_object]  # drop the smallest kept non-answer
            kept.sort(key=lambda oid: (-areas.get(oid, 0), oid))
        ranked = kept
    return ranked


def select_labelable(
    frame: ViewFrame,
    answer_object: int,
    base_threshold_px: int = 1000,
    floor_px: int = 300,
    max_labels: int = 26,
    min_labels: int = 5,
) -> list[int]:
    stats = instance_stats(frame)
    areas = {oid: st.area_px for oid, st in stats.items()}
    if answer_object not in areas:
        raise UnlabelablePairError(f"answer object {answer_object} is not visible in frame {frame.frame_id}")
    return select_labelable_areas(
        areas,
        answer_object,
        frame.width * frame.height,
        base_threshold_px=base_threshold_px,
        floor_px=floor_px,
        max_labels=max_labels,
        min_labels=min_labels,
    )


def mask_centroid(frame: ViewFrame, object_id: int) -> tuple[float, float]:
    ys, xs = np.nonzero(frame.instances == np.uint16(object_id))
    return float(xs.mean()), float(ys.mean())


def assign_letters(frame: ViewFrame, objects: list[int], answer_object: int) -> LabelAssignment:
    """Letters in raster order of mask centroids; the answer must be listed."""
    if not 1 <= len(objects) <= 26:
        raise ValueError(f"can label 1..26 objects, got {len(objects)}")
    if answer_object not in objects:
        raise ValueError(f"answer object {answer_object} missing from the labelable list")
    stats = instance_stats(frame)
    cents = {oid: mask_centroid(frame, oid) for oid in objects}
    ordered = sorted(objects, key=lambda oid: (cents[oid][1], cents[oid][0], oid))
    entries = []
    answer_letter = None
    for letter, oid in zip(LETTERS, ordered):
        cx, cy = cents[oid]
        anchor = (int(np.floor(cx + 0.5)), int(np.floor(cy + 0.5)))
        entries.append(LabelEntry(letter=letter, object_id=oid, anchor=anchor, area_px=stats[oid].area_px))
        if oid == answer_object:
            answer_letter = letter
    return LabelAssignment(entries=entries, answer_letter=answer_letter)


def _glyph_bitmap(letter: str, glyph_h: int) -> np.ndarray:
    rows = GLYPHS[letter]
    base = np.array([[(r >> (4 - c)) & 1 for c in range(5)] for r in rows], dtype=bool)
    glyph_w = max(1, int(np.floor(glyph_h * 5 / 7 + 0.5)))
    yi = np.minimum((np.arange(glyph_h) * 7) // glyph_h, 6)
    xi = np.minimum((np.arange(glyph_w) * 5) // glyph_w, 4)
    return base[np.ix_(yi, xi)]


def render_labels(rgb: np.ndarray, assignment: LabelAssignment, style: LabelStyle = LabelStyle()) -> np.ndarray:
    """Draw one filled tag per entry; pixels outside tag footprints unchanged.

    Tags colliding with an earlier tag step down by one tag height (then up,
    if the bottom of the image is reached) until they find a free spot.
    """
    out = np.asarray(rgb).copy()
    h, w = out.shape[:2]
    glyph_h = max(style.min_glyph_px, int(np.floor(style.glyph_height * h + 0.5)))
    pad = max(1, glyph_h // 6)
    placed: list[tuple[int, int, int, int]] = []

    for entry in assignment.entries:
        bitmap = _glyph_bitmap(entry.letter, glyph_h)
        tag_h, tag_w = bitmap.shape[0] + 2 * pad, bitmap.shape[1] + 2 * pad
        ax, ay = entry.anchor
        x0 = int(np.clip(ax - tag_w // 2, 0, max(0, w - tag_w)))
        base_y = int(np.clip(ay - tag_h // 2, 0, max(0, h - tag_h)))

        def collides(y):
            return any(x0 < px1 and x0 + tag_w > px0 and y < py1 and y + tag_h > py0 for px0, py0, px1, py1 in placed)

        y0 = base_y
        while collides(y0) and y0 + 2 * tag_h <= h:
            y0 += tag_h
        if collides(y0):
            y0 = base_y
            while collides(y0) and y0 - tag_h >= 0:
                y0 -= tag_h
        # a still-colliding tag is drawn anyway: label presence beats tidiness

        out[y0 : y0 + tag_h, x0 : x0 + tag_w] = style.outline_rgb
        gy, gx = y0 + pad, x0 + pad
        region = out[gy : gy + bitmap.shape[0], gx : gx + bitmap.shape[1]]
        region[bitmap] = style.fill_rgb
        placed.append((x0, y0, x0 + tag_w, y0 + tag_h))
    return out


def key_record(pair_id: str, assignment: LabelAssignment, categories: dict[int, str]) -> dict:
    """Answer-key row consumed by the scorer and the study service."""
    return {
        "pair_id": pair_id,
        "answer_letter": assignment.answer_letter,
        "letters": [
            {"letter": e.letter, "object_id": e.object_id, "category": categories.get(e.object_id, "unknown")}
            for e in assignment.entries
        ],
        "num_labels": len(assignment.entries),
    }
