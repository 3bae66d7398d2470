from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import Camera
from ..errors import ConfigurationError


@dataclass(eq=False)
class CameraRig:
    cameras: list
    front_index: int
    back_index: int

    def __post_init__(self):
        az_f = self.cameras[self.front_index].azimuth_deg
        az_b = self.cameras[self.back_index].azimuth_deg
        gap = abs(((az_b - az_f) % 360.0) - 180.0)
        if gap > 1.0:
            raise ConfigurationError(f"front/back cameras are {180 - gap:.2f} deg apart, need 180 +- 1")

    def __len__(self):
        return len(self.cameras)

    def __getitem__(self, i) -> Camera:
        return self.cameras[i]

    @property
    def front(self) -> Camera:
        return self.cameras[self.front_index]

    @property
    def back(self) -> Camera:
        return self.cameras[self.back_index]

    def subset(self, n: int) -> list[int]:
        """Indices of n evenly spaced cameras, always including the front camera."""
        if n >= len(self.cameras):
            return list(range(len(self.cameras)))
        step = len(self.cameras) / n
        return sorted({(self.front_index + int(round(i * step))) % len(self.cameras) for i in range(n)})

    def to_dict(self) -> dict:
        return {
            "front_index": self.front_index,
            "back_index": self.back_index,
            "cameras": [c.to_dict() for c in self.cameras],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls([Camera.from_dict(c) for c in d["cameras"]], d["front_index"], d["back_index"])


def make_camera_rig(n: int, radius: float, height: float, resolution, fov_deg: float = 40.0,
                    target=(0.0, 0.9, 0.0), azimuth_offset_deg: float = 0.0, prefix: str = "c") -> CameraRig:
    """n cameras evenly spaced on a horizontal circle, all looking at `target`."""
    if n < 2:
        raise ConfigurationError("a camera rig needs at least 2 cameras")
    h, w = resolution
    target = np.asarray(target, dtype=np.float64)
    cams = []
    az = azimuth_offset_deg + 360.0 * np.arange(n) / n
    for i, a in enumerate(np.radians(az)):
        eye = np.array([radius * np.sin(a), height, radius * np.cos(a)])
        cams.append(Camera.look_at(eye, target, fov_deg, h, w, name=f"{prefix}{i:02d}"))
    rel = (az - azimuth_offset_deg) % 360.0
    front = int(np.argmin(np.minimum(rel, 360.0 - rel)))
    back = int(np.argmin(np.abs(rel - 180.0)))
    return CameraRig(cams, front, back)
