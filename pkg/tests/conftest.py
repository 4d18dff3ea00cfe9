import numpy as np
import pytest

from pairforge.scene_bundle import CameraModel, SceneBundle, ViewFrame
from pairforge.synthetic import SceneSpec, make_scene


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        status = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {status} {name}")


@pytest.fixture(scope="session")
def scene() -> SceneBundle:
    """One mid-sized synthetic scene shared by read-only tests."""
    return make_scene("shared0", seed=20240601, spec=SceneSpec(width=256, height=192, n_frames=4, n_objects=7))


def identity_camera(width=64, height=48, fx=None) -> CameraModel:
    fx = fx or float(width)
    return CameraModel(
        fx=fx, fy=fx, cx=(width - 1) / 2.0, cy=(height - 1) / 2.0, world_from_camera=np.eye(4)
    )


def frame_from_arrays(frame_id, rgb, depth, instances, camera) -> ViewFrame:
    return ViewFrame(
        frame_id=frame_id,
        rgb=np.asarray(rgb, dtype=np.uint8),
        depth=np.asarray(depth, dtype=np.float32),
        instances=np.asarray(instances, dtype=np.uint16),
        camera=camera,
    )


def flat_frame(frame_id="f0", width=64, height=48, depth_m=4.0, camera=None) -> ViewFrame:
    """All-background frame at uniform depth; tests paint instances onto it."""
    cam = camera or identity_camera(width, height)
    return frame_from_arrays(
        frame_id,
        np.full((height, width, 3), 128, dtype=np.uint8),
        np.full((height, width), depth_m, dtype=np.float32),
        np.zeros((height, width), dtype=np.uint16),
        cam,
    )
