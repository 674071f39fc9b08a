"""Shared fixtures-as-functions for the test modules."""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial.transform import Rotation

from hmcd.camera import Intrinsics, Pose
from hmcd.map_model import MapElement


def random_pose(rng: np.random.Generator, spread: float = 50.0) -> Pose:
    q = Rotation.random(random_state=int(rng.integers(2**31))).as_quat(scalar_first=True)
    return Pose(rng.uniform(-spread, spread, 3), q)


def random_intrinsics(rng: np.random.Generator) -> Intrinsics:
    w, h = int(rng.integers(64, 400)), int(rng.integers(64, 400))
    return Intrinsics(rng.uniform(50, 800), rng.uniform(50, 800), rng.uniform(0, w), rng.uniform(0, h), w, h)


def element_in_view(rng: np.random.Generator, pose: Pose, K: Intrinsics, eid: str = "e") -> MapElement:
    """An upright element somewhere in front of the camera, facing it roughly."""
    depth = rng.uniform(4, 40)
    u, v = rng.uniform(0, K.width), rng.uniform(0, K.height)
    ray = np.array([(u - K.cx) / K.fx * depth, (v - K.cy) / K.fy * depth, depth])
    center = pose.rotation @ ray + pose.position
    to_cam = pose.position - center
    to_cam[2] = 0.0
    if np.linalg.norm(to_cam) < 1e-6:
        to_cam = np.array([1.0, 0.0, 0.0])
    yaw = math.atan2(to_cam[1], to_cam[0]) + rng.uniform(-0.6, 0.6)
    normal = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    return MapElement(eid, center, normal, rng.uniform(0.3, 3.0), rng.uniform(0.3, 3.0))


def level_pose(position, yaw: float) -> Pose:
    """Camera with a horizontal optical axis."""
    return Pose.look_at(position, [math.cos(yaw), math.sin(yaw), 0.0])
