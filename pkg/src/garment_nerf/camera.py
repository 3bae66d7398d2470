"""Pinhole camera. Camera axes: x right, y down, z forward (looking direction)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(eq=False)
class Camera:
    pose: np.ndarray  # 4x4 world-from-camera
    fx: float
    fy: float
    cx: float
    cy: float
    height: int
    width: int
    name: str = ""

    def __post_init__(self):
        self.pose = np.asarray(self.pose, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError("focal lengths must be positive")
        if not (0 <= self.cx <= self.width and 0 <= self.cy <= self.height):
            raise ConfigurationError("principal point outside the image")
        r = self.pose[:3, :3]
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ConfigurationError("degenerate camera rotation")

    @classmethod
    def look_at(cls, eye, target, fov_deg: float, height: int, width: int, name: str = "", up=(0.0, 1.0, 0.0)):
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(fwd)
        if norm == 0:
            raise ConfigurationError("camera eye coincides with target")
        fwd /= norm
        right = np.cross(fwd, up)
        if np.linalg.norm(right) < 1e-9:
            raise ConfigurationError("view direction parallel to up vector")
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        pose = np.eye(4)
        pose[:3, :3] = np.stack([right, down, fwd], 1)
        pose[:3, 3] = eye
        f = 0.5 * width / np.tan(np.radians(fov_deg) / 2)
        return cls(pose, f, f, width / 2, height / 2, height, width, name)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.height, self.width

    @property
    def center(self) -> np.ndarray:
        return self.pose[:3, 3].copy()

    @property
    def forward(self) -> np.ndarray:
        return self.pose[:3, 2].copy()

    @property
    def azimuth_deg(self) -> float:
        """Azimuth of the camera position about +y, 0 on the +z axis."""
        c = self.center
        return float(np.degrees(np.arctan2(c[0], c[2])) % 360.0)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        r, t = self.pose[:3, :3], self.pose[:3, 3]
        return (np.asarray(points) - t) @ r

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (x, y) with pixel (i, j) centred at (j + .5, i + .5), and depth."""
        pc = self.to_camera(points)
        z = pc[..., 2]
        zs = np.where(np.abs(z) > 1e-12, z, 1e-12)
        xy = np.stack([self.fx * pc[..., 0] / zs + self.cx, self.fy * pc[..., 1] / zs + self.cy], -1)
        return xy, z

    def scaled(self, height: int, width: int) -> "Camera":
        sx, sy = width / self.width, height / self.height
        return Camera(self.pose, self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, height, width, self.name)

    def transformed(self, m: np.ndarray) -> "Camera":
        return Camera(m @ self.pose, self.fx, self.fy, self.cx, self.cy, self.height, self.width, self.name)

    def pixel_rays(self) -> tuple[np.ndarray, np.ndarray]:
        """Ray origins and unit directions through every pixel centre, (H*W, 3) row-major."""
        j, i = np.meshgrid(np.arange(self.width) + 0.5, np.arange(self.height) + 0.5)
        d = np.stack([(j - self.cx) / self.fx, (i - self.cy) / self.fy, np.ones_like(j)], -1).reshape(-1, 3)
        d = d @ self.pose[:3, :3].T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.broadcast_to(self.center, d.shape).copy(), d

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pose": self.pose.tolist(),
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "height": self.height,
            "width": self.width,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(np.array(d["pose"]), d["fx"], d["fy"], d["cx"], d["cy"], d["height"], d["width"], d.get("name", ""))
