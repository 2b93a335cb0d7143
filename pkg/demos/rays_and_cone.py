"""
Predicted singularities of two crossing fronts
==============================================

Two plane fronts meet at the origin at t = 0.6 on the plane x1 = 0 where
the nonlinear coefficient jumps.  Ray tracing predicts where the field
should be singular afterwards: the two transmitted fronts, their
reflections off the plane and a new circular front centred on the
meeting point.
"""

import pathlib

import numpy as np

from conewave.raytrace import predict_support
from conewave.scene import load_scene

CONFIG = pathlib.Path(__file__).resolve().parents[1] / "configs" / "crossing.json"
scene = load_scene(CONFIG)

# the meeting point of the two central rays, and whether it lies on the plane
pred = predict_support(scene, sample_times=np.linspace(0.65, 1.1, 10))
print("meeting point (t, x1, x2):", np.round(pred.p0, 6))
print("on the interface:", pred.on_interface)

# in flat space the new front is the light cone |x - x0| = t - t0
cone = pred.cone
r = np.linalg.norm(cone.points[:, 1:] - pred.p0[1:], axis=1)
print("cone samples:", len(cone.points))
print("max | |x - x0| - (t - t0) |:", np.max(np.abs(r - (cone.points[:, 0] - pred.p0[0]))))

# each surface is a list of spacetime points with tangent frames
for name, surf in pred.surfaces().items():
    print(f"{name:14s} {len(surf.points):5d} samples")

# moving the plane off the meeting point removes the cone from the prediction
shifted = predict_support(scene.with_interface_shift(0.3), sample_times=np.linspace(0.65, 1.1, 10))
print("shifted interface: on_interface", shifted.on_interface, "cone empty", shifted.cone.is_empty)
