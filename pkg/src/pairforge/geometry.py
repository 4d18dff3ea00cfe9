"""Projective math: cross-view mask reprojection, overlap, area fractions, roll.

All functions are pure over immutable inputs. Masks reproject by
back-projecting every masked pixel with valid depth, transforming into the
destination camera frame, projecting, rounding to the nearest integer pixel
(half-up) and deduplicating. No splatting or z-buffering: the consumers only
need area ratios for threshold tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scene_bundle import CameraModel, ViewFrame, instance_mask

GIMBAL_TOL_DEG = 1e-6


class DegenerateInputError(ValueError):
    """Raised when a geometric quantity is undefined for the given inputs."""


def round_half_up(x):
    """Round halves toward +inf; works on scalars and arrays.

    Stated explicitly so independent implementations agree bit-exactly.
    """
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


@dataclass
class PixelMask:
    """A set of integer pixel coordinates inside a width x height raster."""

    width: int
    height: int
    data: np.ndarray  # (H, W) bool

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PixelMask":
        arr = np.asarray(arr, dtype=bool)
        return cls(width=arr.shape[1], height=arr.shape[0], data=arr)

    @classmethod
    def from_coords(cls, us: np.ndarray, vs: np.ndarray, width: int, height: int) -> "PixelMask":
        data = np.zeros((height, width), dtype=bool)
        data[vs, us] = True
        return cls(width=width, height=height, data=data)

    @classmethod
    def empty(cls, width: int, height: int) -> "PixelMask":
        return cls(width=width, height=height, data=np.zeros((height, width), dtype=bool))

    def area(self) -> int:
        return int(self.data.sum())

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        """(us, vs) of the set pixels, row-major order."""
        vs, us = np.nonzero(self.data)
        return us, vs

    def union(self, other: "PixelMask") -> "PixelMask":
        return PixelMask(self.width, self.height, self.data | other.data)


@dataclass
class RelativePose:
    """Maps points from one camera frame into another: X_b = R @ X_a + t."""

    rotation: np.ndarray     # 3x3, det +1
    translation: np.ndarray  # 3-vector, meters


class Roll(NamedTuple):
    degrees: float
    degenerate: bool  # pitch within GIMBAL_TOL_DEG of +-90 deg; degrees forced to 0


def relative_pose(cam_a: CameraModel, cam_b: CameraModel) -> RelativePose:
    ra, ta = cam_a.rotation, cam_a.translation
    rb, tb = cam_b.rotation, cam_b.translation
    r = rb.T @ ra
    t = rb.T @ (ta - tb)
    return RelativePose(rotation=r, translation=t)


def backproject(us: np.ndarray, vs: np.ndarray, zs: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Pixel coordinates + planar depth -> (N, 3) camera-frame points."""
    x = (np.asarray(us, dtype=np.float64) - cam.cx) / cam.fx * zs
    y = (np.asarray(vs, dtype=np.float64) - cam.cy) / cam.fy * zs
    return np.stack([x, y, np.asarray(zs, dtype=np.float64)], axis=-1)


def project(points: np.ndarray, cam: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Camera-frame points -> continuous pixel coordinates (us, vs) and depths."""
    pts = np.asarray(points, dtype=np.float64)
    z = pts[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pts[..., 0] / z + cam.cx
        v = cam.fy * pts[..., 1] / z + cam.cy
    return u, v, z


def reproject_mask(
    mask: PixelMask,
    depth: np.ndarray,
    cam_src: CameraModel,
    cam_dst: CameraModel,
    dst_dims: tuple[int, int],
) -> PixelMask:
    """Project a source-view mask into a destination view.

    dst_dims is (width, height). Pixels with invalid depth (0), behind the
    destination camera, or landing out of bounds are dropped.
    """
    us, vs = mask.coords()
    dst_w, dst_h = dst_dims
    if us.size == 0:
        return PixelMask.empty(dst_w, dst_h)
    zs = depth[vs, us].astype(np.float64)
    ok = zs > 0
    if not ok.any():
        return PixelMask.empty(dst_w, dst_h)
    pts = backproject(us[ok], vs[ok], zs[ok], cam_src)
    rel = relative_pose(cam_src, cam_dst)
    pts_dst = pts @ rel.rotation.T + rel.translation
    u, v, z = project(pts_dst, cam_dst)
    front = z > 0
    ui = round_half_up(u[front]).astype(np.int64)
    vi = round_half_up(v[front]).astype(np.int64)
    inb = (ui >= 0) & (ui < dst_w) & (vi >= 0) & (vi < dst_h)
    return PixelMask.from_coords(ui[inb], vi[inb], dst_w, dst_h)


def projected_area_fraction(object_id: int, donor: ViewFrame, edited: ViewFrame) -> float:
    """area(donor-view footprint of the object projected into the edited view)
    divided by area(its footprint in the edited view). May exceed 1; never clamped.
    """
    edited_area = int(instance_mask(edited, object_id).sum())
    if edited_area == 0:
        raise DegenerateInputError(
            f"object {object_id} has zero area in frame {edited.frame_id}; fraction undefined"
        )
    src = PixelMask.from_array(instance_mask(donor, object_id))
    proj = reproject_mask(src, donor.depth, donor.camera, edited.camera, (edited.width, edited.height))
    return proj.area() / edited_area


def visible_ids(frame: ViewFrame, min_area_px: int) -> set[int]:
    ids, counts = np.unique(frame.instances, return_counts=True)
    return {int(i) for i, c in zip(ids, counts) if i != 0 and c >= min_area_px}


def object_set_overlap(frame_a: ViewFrame, frame_b: ViewFrame, min_area_px: int = 100) -> float:
    """IoU of the visible-instance-ID sets of two frames.

    Visibility floor min_area_px keeps speck-sized slivers from counting.
    Both frames empty -> 0 by definition.
    """
    a = visible_ids(frame_a, min_area_px)
    b = visible_ids(frame_b, min_area_px)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def rotation_about_forward(deg: float) -> np.ndarray:
    """Rotation by deg about the +Z (forward) axis, right-hand rule."""
    c, s = math.cos(math.radians(deg)), math.sin(math.radians(deg))
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def roll_from_rotation(r: np.ndarray) -> Roll:
    """Roll component of a rotation under intrinsic yaw-pitch-roll.

    The factorization is R = Ry(yaw) @ Rx(pitch) @ Rz(roll) in the camera
    axes (+X right, +Y down, +Z forward); roll is the rotation about the
    viewing axis, the quantity that tilts content relative to gravity.
    At |pitch| ~ 90 deg yaw and roll are not separable: the result is
    flagged degenerate and roll is 0 by convention.
    """
    r = np.asarray(r, dtype=np.float64)
    sp = float(np.clip(-r[1, 2], -1.0, 1.0))
    pitch_deg = math.degrees(math.asin(sp))
    if abs(90.0 - abs(pitch_deg)) <= GIMBAL_TOL_DEG:
        return Roll(degrees=0.0, degenerate=True)
    roll = math.degrees(math.atan2(r[1, 0], r[1, 1]))
    return Roll(degrees=roll, degenerate=False)


def camera_roll_deg(cam_a: CameraModel, cam_b: CameraModel) -> Roll:
    """Roll of the relative rotation taking cam_a's frame into cam_b's."""
    return roll_from_rotation(relative_pose(cam_a, cam_b).rotation)
