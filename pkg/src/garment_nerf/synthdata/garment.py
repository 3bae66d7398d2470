"""Analytic skirt driven by body pose and root-velocity history."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError
from ..geometry import BodyTemplate, Mesh, PoseFrame, joint_world_transforms, yaw_rotation


@dataclass
class GarmentConfig:
    n_segments: int = 24  # even, so the rest shape is symmetric under a half turn
    n_rings: int = 9
    waist_offset: float = 0.06  # above the pelvis joint
    length: float = 0.48
    waist_radius: tuple = (0.19, 0.14)
    hem_radius: tuple = (0.34, 0.30)
    flare_gain: float = 0.35  # hem growth per radian of mean hip rotation
    swing_gain: float = 6.0  # hem displacement per (scene unit / frame) of root speed
    wrinkle_gain: float = 1.5
    n_folds: int = 7
    history: int = 4  # root velocities averaged, most recent weighted highest
    decay: float = 0.5


@dataclass
class GarmentFrame:
    mesh: Mesh
    wrinkle: np.ndarray  # per-vertex radial wrinkle displacement
    wrinkle_amplitude: float
    swing: np.ndarray  # smoothed root velocity driving the swing


def smoothed_velocity(velocity_history: np.ndarray, config: GarmentConfig) -> np.ndarray:
    v = np.asarray(velocity_history, dtype=np.float64).reshape(-1, 3)[: config.history]
    if len(v) == 0:
        return np.zeros(3)
    w = config.decay ** np.arange(len(v))
    return (w[:, None] * v).sum(0) / w.sum()


def _rotation_angle(r):
    return np.arccos(np.clip((np.trace(r) - 1) / 2, -1.0, 1.0))


def garment_frame(body_pose: PoseFrame, velocity_history, config: GarmentConfig,
                  template: BodyTemplate) -> GarmentFrame:
    """`velocity_history[i]` is the root velocity at t - i (scene units per frame)."""
    vh = np.asarray(velocity_history, dtype=np.float64).reshape(-1, 3)
    world = joint_world_transforms(template, body_pose)
    names = list(template.joint_names)
    anchor = world[names.index("pelvis"), :3, 3] + np.array([0.0, config.waist_offset, 0.0])
    heading = yaw_rotation(body_pose.root_yaw)

    hips = [body_pose.joint_rotations[names.index(n)] for n in ("l_hip", "r_hip") if n in names]
    spread = float(np.mean([_rotation_angle(r) for r in hips])) if hips else 0.0

    vbar = smoothed_velocity(vh, config)
    vbar_h = np.array([vbar[0], 0.0, vbar[2]])
    speed = float(np.linalg.norm(vbar_h))
    local_v = heading.T @ vbar_h
    phase = float(np.arctan2(local_v[2], local_v[0])) if speed > 0 else 0.0
    amp = config.wrinkle_gain * speed

    s = np.linspace(0.0, 1.0, config.n_rings)[:, None]
    theta = (2 * np.pi * np.arange(config.n_segments) / config.n_segments)[None, :]
    wx0, wz0 = config.waist_radius
    hx, hz = config.hem_radius
    scale = 1.0 + config.flare_gain * spread
    rx = wx0 + (hx * scale - wx0) * s
    rz = wz0 + (hz * scale - wz0) * s
    wrinkle = amp * s * np.sin(config.n_folds * theta + phase)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    local = np.stack(
        [(rx + wrinkle) * cos_t, np.broadcast_to(-config.length * s, wrinkle.shape), (rz + wrinkle) * sin_t], -1
    )
    swing = -config.swing_gain * vbar_h * (s**2)[..., None]
    verts = anchor + local.reshape(-1, 3) @ heading.T + np.broadcast_to(swing, local.shape).reshape(-1, 3)

    n_s = config.n_segments
    tris = []
    for i in range(config.n_rings - 1):
        for j in range(n_s):
            a, b = i * n_s + j, i * n_s + (j + 1) % n_s
            c, d = a + n_s, b + n_s
            tris.append((a, b, d))
            tris.append((a, d, c))
    return GarmentFrame(Mesh(verts, np.array(tris)), wrinkle.reshape(-1), amp, vbar_h)


def generate_garment_frame(body_pose: PoseFrame, velocity_history, config: GarmentConfig,
                           template: BodyTemplate, k: int = 0) -> Mesh:
    if len(np.asarray(velocity_history).reshape(-1, 3)) < k:
        raise DomainError(f"velocity history shorter than k={k}")
    return garment_frame(body_pose, velocity_history, config, template).mesh


def root_velocity_history(motion, t: int, length: int) -> np.ndarray:
    """Root velocities at t, t-1, ...; frames before the sequence start count as static."""
    first = motion.first_index
    out = []
    for i in range(length):
        a, b = t - i, t - i - 1
        if b < first:
            out.append(np.zeros(3))
        else:
            out.append(motion.at(a).root_transform[:3, 3] - motion.at(b).root_transform[:3, 3])
    return np.array(out).reshape(-1, 3)
