import json
import pathlib

import numpy as np
import pytest

from conewave.scene import SceneConfig

ROOT = pathlib.Path(__file__).resolve().parents[1]
CROSSING = ROOT / "configs" / "crossing.json"


def crossing_dict(n=256, theta_deg=75.0, s0=0.065, alpha=1.0, shift=0.0, extra=None):
    """Two broadband fronts meeting at (t, x) = (0.6, 0, 0) on the plane x1 = shift."""
    raw = json.loads(CROSSING.read_text())
    th = np.radians(theta_deg)
    h = raw["grid"]["extent"][0] / n
    raw["grid"]["n"] = [n, n]
    for sg, src in zip((1, -1), raw["sources"]):
        src["xi"] = [float(np.cos(th)), float(sg * np.sin(th))]
        src["s0"] = s0
        src["sigma"] = 3 * h
    raw["coefficient"]["alpha"] = alpha
    raw["coefficient"]["interface"]["offset"] = shift
    raw["experiment"].update(extra or {})
    return raw


@pytest.fixture(scope="session")
def crossing_path():
    return CROSSING


@pytest.fixture
def make_scene():
    def make(**kw):
        return SceneConfig.from_dict(crossing_dict(**kw))
    return make
