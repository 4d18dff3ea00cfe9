"""On-disk multi-view scene format: posed RGB + metric depth + instance maps.

Layout of one scene on disk::

    <scene_id>/manifest.json
    <scene_id>/frames/<frame_id>.rgb.png      8-bit RGB
    <scene_id>/frames/<frame_id>.inst.png     16-bit grayscale, 0 = background
    <scene_id>/frames/<frame_id>.depth.bin    see DEPTH_MAGIC header below

Camera convention: +X right, +Y down, +Z forward. Pixel (u, v) at planar
depth z back-projects to ((u - cx) / fx * z, (v - cy) / fy * z, z) in the
camera frame; ``world_from_camera`` maps camera-frame points to world.
Depth 0 is the invalid sentinel and is excluded from all statistics.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# 8-byte header: 4-byte magic + uint16 height + uint16 width (little-endian),
# followed by H*W float32 little-endian, row-major.
DEPTH_MAGIC = b"DPF1"

ROT_ORTHO_TOL = 1e-6


class SceneFormatError(Exception):
    """A bundle on disk (or in memory) violates the scene format contract."""


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    world_from_camera: np.ndarray  # 4x4, rotation block in SO(3)

    def validate(self, where: str = "camera") -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise SceneFormatError(f"{where}: focal lengths must be positive (fx={self.fx}, fy={self.fy})")
        m = np.asarray(self.world_from_camera, dtype=np.float64)
        if m.shape != (4, 4):
            raise SceneFormatError(f"{where}: world_from_camera must be 4x4, got {m.shape}")
        if not np.array_equal(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise SceneFormatError(f"{where}: bottom row of world_from_camera must be (0,0,0,1)")
        r = m[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > ROT_ORTHO_TOL:
            raise SceneFormatError(f"{where}: rotation block is not orthonormal within {ROT_ORTHO_TOL}")
        if np.linalg.det(r) < 0:
            raise SceneFormatError(f"{where}: rotation block is a reflection (det < 0)")

    @property
    def rotation(self) -> np.ndarray:
        return np.asarray(self.world_from_camera, dtype=np.float64)[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return np.asarray(self.world_from_camera, dtype=np.float64)[:3, 3]


@dataclass
class ViewFrame:
    frame_id: str
    rgb: np.ndarray        # (H, W, 3) uint8
    depth: np.ndarray      # (H, W) float32, meters along the optical axis, 0 = invalid
    instances: np.ndarray  # (H, W) uint16, 0 = background
    camera: CameraModel

    @property
    def height(self) -> int:
        return int(self.rgb.shape[0])

    @property
    def width(self) -> int:
        return int(self.rgb.shape[1])

    def validate(self) -> None:
        fid = self.frame_id
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.dtype != np.uint8:
            raise SceneFormatError(f"frame {fid}: rgb must be (H,W,3) uint8, got {self.rgb.shape} {self.rgb.dtype}")
        hw = self.rgb.shape[:2]
        if self.depth.shape != hw:
            raise SceneFormatError(f"frame {fid}: depth dimensions {self.depth.shape} do not match rgb {hw}")
        if self.instances.shape != hw:
            raise SceneFormatError(f"frame {fid}: instance map dimensions {self.instances.shape} do not match rgb {hw}")
        if self.instances.dtype != np.uint16:
            raise SceneFormatError(f"frame {fid}: instance map must be uint16, got {self.instances.dtype}")
        self.camera.validate(where=f"frame {fid}: camera")


@dataclass
class SceneBundle:
    scene_id: str
    frames: list[ViewFrame]
    instance_table: dict[int, dict[str, str]] = field(default_factory=dict)

    def validate(self) -> None:
        if len(self.frames) < 3:
            raise SceneFormatError(f"scene {self.scene_id}: needs at least 3 frames, has {len(self.frames)}")
        seen = set()
        for fr in self.frames:
            if fr.frame_id in seen:
                raise SceneFormatError(f"scene {self.scene_id}: duplicate frame id {fr.frame_id!r}")
            seen.add(fr.frame_id)
            fr.validate()
            ids = np.unique(fr.instances)
            for oid in ids:
                if oid != 0 and int(oid) not in self.instance_table:
                    raise SceneFormatError(
                        f"scene {self.scene_id}: frame {fr.frame_id}: instance map references "
                        f"ID {int(oid)} absent from instance_table"
                    )

    def frame(self, frame_id: str) -> ViewFrame:
        for fr in self.frames:
            if fr.frame_id == frame_id:
                return fr
        raise KeyError(f"scene {self.scene_id}: no frame {frame_id!r}")

    def frame_stats(self, frame_id: str) -> dict[int, "InstanceStats"]:
        """instance_stats with per-bundle memoization (frames are immutable)."""
        cache = self.__dict__.setdefault("_stats_cache", {})
        if frame_id not in cache:
            cache[frame_id] = instance_stats(self.frame(frame_id))
        return cache[frame_id]


@dataclass
class InstanceStats:
    area_px: int
    bbox: tuple[int, int, int, int]  # x, y, w, h (tight)


def read_depth(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != DEPTH_MAGIC:
        raise SceneFormatError(f"{path}: bad depth header (expected magic {DEPTH_MAGIC!r})")
    h, w = struct.unpack("<HH", raw[4:8])
    expected = 8 + 4 * h * w
    if len(raw) != expected:
        raise SceneFormatError(f"{path}: depth payload is {len(raw)} bytes, expected {expected} for {h}x{w}")
    return np.frombuffer(raw[8:], dtype="<f4").reshape(h, w).copy()


def write_depth(path: Path, depth: np.ndarray) -> None:
    h, w = depth.shape
    if h > 0xFFFF or w > 0xFFFF:
        raise SceneFormatError(f"{path}: depth dimensions {h}x{w} exceed the format limit of 65535")
    with open(path, "wb") as f:
        f.write(DEPTH_MAGIC)
        f.write(struct.pack("<HH", h, w))
        f.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())


def _read_png(path: Path, what: str, frame_id: str) -> np.ndarray:
    if not Path(path).exists():
        raise SceneFormatError(f"frame {frame_id}: missing {what} asset {path}")
    return np.array(Image.open(path))


def load_bundle(path: str | Path) -> SceneBundle:
    """Load and fully validate one scene directory."""
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise SceneFormatError(f"{root}: missing manifest.json")
    manifest = json.loads(manifest_path.read_text())

    table: dict[int, dict[str, str]] = {}
    for key, entry in manifest.get("instance_table", {}).items():
        table[int(key)] = {
            "category": str(entry.get("category", "unknown")),
            "display_name": str(entry.get("display_name", key)),
        }

    frames = []
    for rec in manifest["frames"]:
        fid = rec["frame_id"]
        wfc = rec["world_from_camera"]
        if len(wfc) != 16:
            raise SceneFormatError(f"frame {fid}: world_from_camera must hold 16 row-major floats, got {len(wfc)}")
        cam = CameraModel(
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            world_from_camera=np.array(wfc, dtype=np.float64).reshape(4, 4),
        )
        rgb = _read_png(root / "frames" / f"{fid}.rgb.png", "rgb", fid)
        inst = _read_png(root / "frames" / f"{fid}.inst.png", "instance", fid).astype(np.uint16)
        depth_path = root / "frames" / f"{fid}.depth.bin"
        if not depth_path.exists():
            raise SceneFormatError(f"frame {fid}: missing depth asset {depth_path}")
        depth = read_depth(depth_path)
        frames.append(ViewFrame(frame_id=fid, rgb=rgb, depth=depth, instances=inst, camera=cam))

    bundle = SceneBundle(scene_id=manifest["scene_id"], frames=frames, instance_table=table)
    bundle.validate()
    return bundle


def write_bundle(bundle: SceneBundle, path: str | Path) -> None:
    """Write a validated bundle; ``load_bundle`` reproduces rasters bit-exactly."""
    bundle.validate()
    root = Path(path)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    manifest = {
        "scene_id": bundle.scene_id,
        "frames": [
            {
                "frame_id": fr.frame_id,
                "fx": fr.camera.fx,
                "fy": fr.camera.fy,
                "cx": fr.camera.cx,
                "cy": fr.camera.cy,
                "world_from_camera": [float(v) for v in np.asarray(fr.camera.world_from_camera).reshape(-1)],
            }
            for fr in bundle.frames
        ],
        "instance_table": {str(k): v for k, v in sorted(bundle.instance_table.items())},
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1))
    for fr in bundle.frames:
        Image.fromarray(fr.rgb).save(root / "frames" / f"{fr.frame_id}.rgb.png")
        Image.fromarray(fr.instances.astype(np.uint16)).save(root / "frames" / f"{fr.frame_id}.inst.png")
        write_depth(root / "frames" / f"{fr.frame_id}.depth.bin", fr.depth)


def instance_stats(frame: ViewFrame) -> dict[int, InstanceStats]:
    """Exact pixel count and tight bbox per nonzero instance ID, ordered by ID."""
    ys, xs = np.nonzero(frame.instances)
    if ys.size == 0:
        return {}
    ids = frame.instances[ys, xs]
    order = np.argsort(ids, kind="stable")
    ids, ys, xs = ids[order], ys[order], xs[order]
    uniq, starts = np.unique(ids, return_index=True)
    stats: dict[int, InstanceStats] = {}
    bounds = list(starts) + [ids.size]
    for i, oid in enumerate(uniq):
        lo, hi = bounds[i], bounds[i + 1]
        gy, gx = ys[lo:hi], xs[lo:hi]
        x0, x1 = int(gx.min()), int(gx.max())
        y0, y1 = int(gy.min()), int(gy.max())
        stats[int(oid)] = InstanceStats(area_px=int(hi - lo), bbox=(x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    return stats


def instance_mask(frame: ViewFrame, object_id: int) -> np.ndarray:
    """Boolean (H, W) footprint of one instance."""
    return frame.instances == np.uint16(object_id)


def scan_scenes(root: str | Path) -> list[Path]:
    """All scene directories under root (a dir with manifest.json counts, root itself included)."""
    root = Path(root)
    if (root / "manifest.json").exists():
        return [root]
    return sorted(p.parent for p in root.glob("*/manifest.json"))
