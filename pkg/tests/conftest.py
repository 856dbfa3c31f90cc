from datetime import date

import pytest

from camlytics.corpus import CameraRecord, CameraRegistry, ZoneFlag
from camlytics.keypoint import detect_keypoints
from camlytics.synthgen import PacketScenario, SyntheticScene, Viewpoint, gen_packets, render_scene


@pytest.fixture(scope="session")
def textured_frame():
    scene = SyntheticScene(viewpoints=(Viewpoint(0.0),), frames_per_viewpoint=(1,), seed=7)
    frames, _ = render_scene(scene)
    return frames[0]


@pytest.fixture(scope="session")
def detected_textured(textured_frame):
    return detect_keypoints(textured_frame)


@pytest.fixture(scope="session")
def rotated_pair():
    scene = SyntheticScene(
        viewpoints=(Viewpoint(0.0), Viewpoint(10.0)), frames_per_viewpoint=(1, 1), seed=7
    )
    frames, _ = render_scene(scene)
    return frames


@pytest.fixture(scope="session")
def translated_pair():
    scene = SyntheticScene(
        viewpoints=(Viewpoint(0.0), Viewpoint(0.0, 1.0, 10.0, 0.0)),
        frames_per_viewpoint=(1, 1),
        seed=7,
    )
    frames, _ = render_scene(scene)
    return frames


@pytest.fixture()
def small_registry():
    registry = CameraRegistry()
    registry.register(CameraRecord("CAM01", 40.75, -73.99, "Manhattan", ZoneFlag.INSIDE))
    registry.register(CameraRecord("CAM02", 40.76, -73.98, "Manhattan", ZoneFlag.INSIDE))
    registry.register(CameraRecord("CAM03", 40.70, -73.95, "Brooklyn", ZoneFlag.OUTSIDE))
    return registry


@pytest.fixture(scope="session")
def constant_packet_windows():
    """Constant-rate pre/post corpora with an exact -10% injected shift."""
    pre = PacketScenario(
        cam_ids=("CAM01", "CAM02", "CAM03"),
        start_day=date(2024, 2, 5),
        days=7,
        rates={"car": 20, "truck": 10, "ped": 5, "bike": 2},
        distribution="constant",
        seed=3,
    )
    post = PacketScenario(
        cam_ids=pre.cam_ids,
        start_day=date(2025, 2, 3),
        days=7,
        rates={m: r * 0.9 for m, r in pre.rates.items()},
        distribution="constant",
        seed=4,
    )
    pre_packets, _ = gen_packets(pre)
    post_packets, _ = gen_packets(post)
    return pre_packets, post_packets
