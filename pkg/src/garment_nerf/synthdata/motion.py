"""Seeded procedural body motion: band-limited sinusoidal joint curves plus root sway."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import JOINTS, MotionSequence, PoseFrame, rigid, yaw_rotation


@dataclass
class MotionConfig:
    seed: int = 0
    amplitude: float = 1.0
    max_joint_delta_deg: float = 15.0
    frame_rate: float = 30.0
    root_sway: float = 0.12
    root_bob: float = 0.02
    root_turn_deg: float = 35.0
    period_frames: tuple = (36.0, 72.0)
    first_index: int = 0


# joint -> [(axis, centre_deg, amplitude_deg, harmonic)]
_DOFS = {
    "spine": [(0, 0.0, 8.0, 2), (1, 0.0, 15.0, 1), (2, 0.0, 6.0, 1)],
    "neck": [(0, 0.0, 12.0, 1), (1, 0.0, 25.0, 1)],
    "l_shoulder": [(0, 0.0, 45.0, 1), (2, 10.0, 20.0, 1)],
    "l_elbow": [(0, -35.0, 30.0, 1)],
    "r_shoulder": [(0, 0.0, 45.0, 1), (2, -10.0, 20.0, 1)],
    "r_elbow": [(0, -35.0, 30.0, 1)],
    "l_hip": [(0, 0.0, 32.0, 1), (2, 3.0, 6.0, 1)],
    "l_knee": [(0, 25.0, 25.0, 1)],
    "r_hip": [(0, 0.0, 32.0, 1), (2, -3.0, 6.0, 1)],
    "r_knee": [(0, 25.0, 25.0, 1)],
}


def axis_rotation(axis: int, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    if axis == 0:
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == 1:
        return yaw_rotation(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def generate_motion(config: MotionConfig, n_frames: int) -> MotionSequence:
    """Deterministic in `config.seed`.

    Each joint rotation is a product of single-axis rotations whose angles
    change by at most max_joint_delta / n_axes per frame, so the relative
    rotation between consecutive frames never exceeds max_joint_delta.
    """
    rng = np.random.default_rng(config.seed)
    period = rng.uniform(*config.period_frames)
    omega = 2 * np.pi / period
    names = [n for n, _, _ in JOINTS]
    t = np.arange(n_frames, dtype=np.float64)
    amp = config.amplitude

    angles = {}  # joint -> list of (axis, angle series in radians)
    gait_phase = rng.uniform(0, 2 * np.pi)
    for name, dofs in _DOFS.items():
        per_axis_cap = np.radians(config.max_joint_delta_deg) / len(dofs)
        series = []
        for axis, centre, a_deg, harmonic in dofs:
            w = omega * harmonic
            a = np.radians(a_deg) * amp * rng.uniform(0.6, 1.0)
            a = min(a, 0.95 * per_axis_cap / w)
            phase = gait_phase + rng.uniform(-0.4, 0.4)
            if name.startswith("r_"):
                phase += np.pi  # opposite limbs swing in antiphase
            c = np.radians(centre) * amp
            series.append((axis, c + a * np.sin(w * t + phase)))
        angles[name] = series

    sway_phase = rng.uniform(0, 2 * np.pi, size=3)
    turn_w = omega / rng.uniform(2.0, 3.0)
    root_x = amp * config.root_sway * np.sin(omega * t + sway_phase[0])
    root_z = amp * config.root_sway * 0.7 * np.sin(0.5 * omega * t + sway_phase[1])
    root_y = amp * config.root_bob * np.sin(2 * omega * t + sway_phase[2])
    yaw = amp * np.radians(config.root_turn_deg) * np.sin(turn_w * t + rng.uniform(0, 2 * np.pi))

    frames = []
    for i in range(n_frames):
        rots = np.tile(np.eye(3), (len(names), 1, 1))
        for name, series in angles.items():
            r = np.eye(3)
            for axis, ang in series:
                r = r @ axis_rotation(axis, ang[i])
            rots[names.index(name)] = r
        root = rigid(yaw_rotation(yaw[i]), (root_x[i], root_y[i], root_z[i]))
        frames.append(PoseFrame(root, rots, config.first_index + i))
    return MotionSequence("desk_body", frames, config.frame_rate)


def relative_angle_deg(r1: np.ndarray, r2: np.ndarray) -> float:
    c = (np.trace(r1.T @ r2) - 1) / 2
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def motion_arrays(motion: MotionSequence) -> dict[str, np.ndarray]:
    return {
        "frame_index": np.array([f.frame_index for f in motion.frames], dtype=np.int64),
        "root_transform": np.stack([f.root_transform for f in motion.frames]),
        "joint_rotations": np.stack([f.joint_rotations for f in motion.frames]),
        "frame_rate": np.array([motion.frame_rate]),
    }


def motion_from_arrays(arrs: dict, template_ref: str = "desk_body") -> MotionSequence:
    frames = [
        PoseFrame(r, j, int(t))
        for t, r, j in zip(arrs["frame_index"], arrs["root_transform"], arrs["joint_rotations"])
    ]
    return MotionSequence(template_ref, frames, float(arrs["frame_rate"][0]))
