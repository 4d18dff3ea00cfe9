"""Procedural multi-view scenes with analytic depth.

Renders textured planar quads (room walls + free-standing boards) through an
exact pinhole model with a z-buffer. Depth is the analytic ray-plane planar
depth, instance maps are exact, and surface texture is attached to quad-local
texel coordinates so it is consistent across views. Used by the test suite,
the acceptance harness, and ``forge synth`` for demo corpora.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scene_bundle import CameraModel, SceneBundle, ViewFrame


@dataclass
class Quad:
    origin: np.ndarray   # (3,) world
    edge_u: np.ndarray   # (3,) world, first side
    edge_v: np.ndarray   # (3,) world, second side
    instance_id: int
    base_color: tuple[float, float, float]
    texture_seed: int
    texels: int = 12
    checker: float = 0.12
    noise: float = 0.20


def camera_matrix(yaw_deg: float, pitch_deg: float, roll_deg: float, position) -> np.ndarray:
    """world_from_camera for intrinsic yaw (about -Y up), pitch (about X), roll (about Z)."""
    ay, ap, ar = (math.radians(a) for a in (yaw_deg, pitch_deg, roll_deg))
    ry = np.array([[math.cos(ay), 0, math.sin(ay)], [0, 1, 0], [-math.sin(ay), 0, math.cos(ay)]])
    rx = np.array([[1, 0, 0], [0, math.cos(ap), -math.sin(ap)], [0, math.sin(ap), math.cos(ap)]])
    rz = np.array([[math.cos(ar), -math.sin(ar), 0], [math.sin(ar), math.cos(ar), 0], [0, 0, 1]])
    m = np.eye(4)
    m[:3, :3] = ry @ rx @ rz
    m[:3, 3] = np.asarray(position, dtype=np.float64)
    return m


def _texel_hash(seed: int, ti: np.ndarray, tj: np.ndarray) -> np.ndarray:
    """Deterministic per-texel value in [0, 1), identical across views."""
    mix = (seed * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    with np.errstate(over="ignore"):
        h = np.uint64(mix) ^ (ti.astype(np.uint64) * np.uint64(0xBF58476D1CE4E5B9)) ^ (
            tj.astype(np.uint64) * np.uint64(0x94D049BB133111EB)
        )
        h ^= h >> np.uint64(31)
        h *= np.uint64(0xD6E8FEB86659FD93)
        h ^= h >> np.uint64(27)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def render_view(quads: list[Quad], camera: CameraModel, width: int, height: int):
    """Rasterize quads into (rgb uint8, depth float32, instances uint16)."""
    rgb = np.zeros((height, width, 3), dtype=np.float64)
    depth = np.zeros((height, width), dtype=np.float64)
    inst = np.zeros((height, width), dtype=np.uint16)
    zbuf = np.full((height, width), np.inf)

    r_wc = camera.rotation.T
    t = camera.translation
    for q in quads:
        o = r_wc @ (np.asarray(q.origin, dtype=np.float64) - t)
        eu = r_wc @ np.asarray(q.edge_u, dtype=np.float64)
        ev = r_wc @ np.asarray(q.edge_v, dtype=np.float64)
        n = np.cross(eu, ev)

        x0, x1, y0, y1 = _pixel_bbox(o, eu, ev, camera, width, height)
        if x0 > x1 or y0 > y1:
            continue
        us, vs = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
        dx = (us - camera.cx) / camera.fx
        dy = (vs - camera.cy) / camera.fy
        denom = dx * n[0] + dy * n[1] + n[2]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (o @ n) / denom
        px = s * dx - o[0]
        py = s * dy - o[1]
        pz = s - o[2]
        pu = px * eu[0] + py * eu[1] + pz * eu[2]
        pv = px * ev[0] + py * ev[1] + pz * ev[2]
        guu, guv, gvv = eu @ eu, eu @ ev, ev @ ev
        det = guu * gvv - guv * guv
        a = (gvv * pu - guv * pv) / det
        b = (guu * pv - guv * pu) / det
        hit = (s > 1e-6) & (a >= 0) & (a <= 1) & (b >= 0) & (b <= 1) & np.isfinite(s)
        hit &= s < zbuf[y0 : y1 + 1, x0 : x1 + 1]
        if not hit.any():
            continue

        ti = np.clip((a * q.texels).astype(np.int64), 0, q.texels - 1)
        tj = np.clip((b * q.texels).astype(np.int64), 0, q.texels - 1)
        shade = 1.0 - q.checker * ((ti + tj) % 2) - q.noise * _texel_hash(q.texture_seed, ti, tj)
        color = np.asarray(q.base_color, dtype=np.float64)
        sub = (slice(y0, y1 + 1), slice(x0, x1 + 1))
        for c in range(3):
            ch = rgb[sub][..., c]
            ch[hit] = np.clip(color[c] * shade[hit], 0, 255)
            rgb[sub][..., c] = ch
        zb = zbuf[sub]
        zb[hit] = s[hit]
        zbuf[sub] = zb
        dp = depth[sub]
        dp[hit] = s[hit]
        depth[sub] = dp
        im = inst[sub]
        im[hit] = q.instance_id
        inst[sub] = im

    return rgb.astype(np.uint8), depth.astype(np.float32), inst


def _pixel_bbox(o, eu, ev, camera: CameraModel, width: int, height: int):
    corners = np.array([o, o + eu, o + ev, o + eu + ev])
    z = corners[:, 2]
    if (z <= 1e-6).any():
        # partially behind the camera: fall back to the full raster
        return 0, width - 1, 0, height - 1
    u = camera.fx * corners[:, 0] / z + camera.cx
    v = camera.fy * corners[:, 1] / z + camera.cy
    x0 = max(0, int(math.floor(u.min())) - 1)
    x1 = min(width - 1, int(math.ceil(u.max())) + 1)
    y0 = max(0, int(math.floor(v.min())) - 1)
    y1 = min(height - 1, int(math.ceil(v.max())) + 1)
    return x0, x1, y0, y1


ROOM_CATEGORIES = ["chair", "picture", "cabinet", "television", "mirror", "lamp", "table", "door"]

# room extents (meters): x in [-HX, HX], y (down) in [-HY, HY], z in [0.2, DEPTH]
_HX, _HY, _DEPTH = 3.2, 1.8, 9.0


def room_quads(rng: np.random.Generator, first_object_id: int = 10) -> tuple[list[Quad], dict[int, dict[str, str]]]:
    """Five enclosing walls with stable low instance ids (1..5)."""
    wall_color = lambda: tuple(rng.uniform(120, 200, size=3))
    quads = [
        Quad(np.array([-_HX, -_HY, _DEPTH]), np.array([2 * _HX, 0, 0]), np.array([0, 2 * _HY, 0]), 1, wall_color(), int(rng.integers(1 << 31)), texels=24),
        Quad(np.array([-_HX, _HY, 0.0]), np.array([2 * _HX, 0, 0]), np.array([0, 0, _DEPTH]), 2, wall_color(), int(rng.integers(1 << 31)), texels=24),
        Quad(np.array([-_HX, -_HY, 0.0]), np.array([2 * _HX, 0, 0]), np.array([0, 0, _DEPTH]), 3, wall_color(), int(rng.integers(1 << 31)), texels=24),
        Quad(np.array([-_HX, -_HY, 0.0]), np.array([0, 0, _DEPTH]), np.array([0, 2 * _HY, 0]), 4, wall_color(), int(rng.integers(1 << 31)), texels=24),
        Quad(np.array([_HX, -_HY, 0.0]), np.array([0, 0, _DEPTH]), np.array([0, 2 * _HY, 0]), 5, wall_color(), int(rng.integers(1 << 31)), texels=24),
    ]
    table = {
        1: {"category": "wall", "display_name": "back_wall"},
        2: {"category": "floor", "display_name": "floor"},
        3: {"category": "ceiling", "display_name": "ceiling"},
        4: {"category": "wall", "display_name": "left_wall"},
        5: {"category": "wall", "display_name": "right_wall"},
    }
    return quads, table


def board_quad(rng: np.random.Generator, instance_id: int, category_pool=ROOM_CATEGORIES):
    """A free-standing or hung board: a single textured quad inside the room.

    Boards spread across the whole room width so camera yaw swings them in
    and out of view; that churn is what makes view pairs differ.
    """
    z = float(rng.uniform(2.0, 8.0))
    w = float(rng.uniform(0.45, 1.3))
    h = float(rng.uniform(0.45, 1.3))
    x = float(rng.uniform(-_HX * 0.95, _HX * 0.95))
    hung = rng.random() < 0.35
    y_top = float(rng.uniform(-_HY * 0.8, 0.1)) if hung else _HY - h
    yaw = math.radians(float(rng.uniform(-25, 25)))
    eu = np.array([w * math.cos(yaw), 0.0, w * math.sin(yaw)])
    color = tuple(rng.uniform(40, 245, size=3))
    cat = category_pool[int(rng.integers(len(category_pool)))]
    quad = Quad(
        origin=np.array([x - eu[0] / 2, y_top, z - eu[2] / 2]),
        edge_u=eu,
        edge_v=np.array([0.0, h, 0.0]),
        instance_id=instance_id,
        base_color=color,
        texture_seed=int(rng.integers(1 << 31)),
        texels=int(rng.integers(6, 16)),
    )
    return quad, cat


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 192
    n_frames: int = 4
    n_objects: int = 14
    include_room: bool = True
    max_yaw_deg: float = 18.0
    roll_choices: tuple[float, ...] = (0.0, 0.0, 1.5, -2.0, 9.0, -12.0)
    fov_scale: float = 1.0


def make_scene(scene_id: str, seed: int, spec: SceneSpec = SceneSpec()) -> SceneBundle:
    rng = np.random.default_rng(seed)
    quads: list[Quad] = []
    table: dict[int, dict[str, str]] = {}
    if spec.include_room:
        quads, table = room_quads(rng)
    oid = 10
    for _ in range(spec.n_objects):
        quad, cat = board_quad(rng, oid)
        quads.append(quad)
        table[oid] = {"category": cat, "display_name": f"{cat}_{oid}"}
        oid += 1

    w, h = spec.width, spec.height
    fx = fy = spec.fov_scale * w
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    frames = []
    for k in range(spec.n_frames):
        yaw = float(rng.uniform(-spec.max_yaw_deg, spec.max_yaw_deg))
        pitch = float(rng.uniform(-4.0, 4.0))
        roll = float(spec.roll_choices[int(rng.integers(len(spec.roll_choices)))])
        pos = [float(rng.uniform(-1.3, 1.3)), float(rng.uniform(-0.35, 0.15)), float(rng.uniform(0.2, 1.6))]
        cam = CameraModel(fx=fx, fy=fy, cx=cx, cy=cy, world_from_camera=camera_matrix(yaw, pitch, roll, pos))
        rgb, depth, inst = render_view(quads, cam, w, h)
        frames.append(ViewFrame(frame_id=f"f{k:03d}", rgb=rgb, depth=depth, instances=inst, camera=cam))

    bundle = SceneBundle(scene_id=scene_id, frames=frames, instance_table=table)
    bundle.validate()
    return bundle


def make_corpus(out_dir, n_scenes: int, seed: int, spec: SceneSpec = SceneSpec()) -> list[str]:
    """Write n_scenes bundles under out_dir; returns the scene ids."""
    from .scene_bundle import write_bundle
    from pathlib import Path

    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n_scenes):
        sid = f"scene{i:04d}"
        bundle = make_scene(sid, int(rng.integers(1 << 62)), spec)
        write_bundle(bundle, Path(out_dir) / sid)
        ids.append(sid)
    return ids
