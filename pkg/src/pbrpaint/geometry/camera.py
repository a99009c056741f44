from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

RING_RADIUS = 2.5
RING_FOV = 45.0
LOW_ELEVATION = 20.0
HIGH_ELEVATION = 55.0


@dataclass
class Camera:
    """Pinhole camera. Camera space follows OpenGL: x right, y up, looking down -z."""

    position: np.ndarray
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    fov_deg: float = RING_FOV
    width: int = 64
    height: int = 64

    def __post_init__(self):
        self.position = np.asarray(self.position, np.float64)
        self.target = np.asarray(self.target, np.float64)
        self.up = np.asarray(self.up, np.float64)
        if np.allclose(self.position, self.target):
            raise ValueError("camera position equals target")
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"fov {self.fov_deg} outside (0, 180)")

    def with_resolution(self, width: int, height: int | None = None) -> "Camera":
        return Camera(self.position, self.target, self.up, self.fov_deg, width, height or width)

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation (rows are camera x, y, z axes in world coordinates)."""
        fwd = self.target - self.position
        fwd = fwd / np.linalg.norm(fwd)
        up = self.up
        if abs(np.dot(fwd, up / np.linalg.norm(up))) > 0.999:
            up = np.array([0.0, 1.0, 0.0]) if abs(fwd[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return np.stack([right, true_up, -fwd])

    def world_to_camera(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - self.position) @ self.rotation().T

    def dirs_to_camera(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(d) @ self.rotation().T

    @property
    def focal(self) -> float:
        """Focal length in NDC units (vertical)."""
        return 1.0 / math.tan(math.radians(self.fov_deg) / 2)

    def project(self, p_world: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """World points to continuous pixel coordinates ``(x, y)`` and view depth.

        Pixel ``(row i, col j)`` has its center at ``(j + 0.5, i + 0.5)``.
        Depth is the distance along the viewing axis (positive in front).
        """
        pc = self.world_to_camera(p_world)
        depth = -pc[..., 2]
        safe = np.where(np.abs(depth) < 1e-9, 1e-9, depth)
        aspect = self.width / self.height
        xn = self.focal / aspect * pc[..., 0] / safe
        yn = self.focal * pc[..., 1] / safe
        px = (xn + 1.0) * 0.5 * self.width
        py = (1.0 - yn) * 0.5 * self.height
        return np.stack([px, py], -1), depth

    def pixel_size_at(self, depth) -> np.ndarray:
        """World-space footprint of one pixel at a given depth."""
        return 2.0 * np.asarray(depth) / (self.focal * self.height)


def orbit_camera(azimuth_deg: float, elevation_deg: float, radius: float = RING_RADIUS,
                 fov_deg: float = RING_FOV, resolution: int = 64) -> Camera:
    """Camera on a sphere around the origin; azimuth 0 sits on -y looking toward +y."""
    az, el = math.radians(azimuth_deg), math.radians(elevation_deg)
    pos = radius * np.array([math.sin(az) * math.cos(el), -math.cos(az) * math.cos(el), math.sin(el)])
    return Camera(pos, np.zeros(3), np.array([0.0, 0.0, 1.0]), fov_deg, resolution, resolution)


def camera_ring(n_views: int, resolution: int = 64) -> list[Camera]:
    """The 6- or 10-view rig used for dataset rendering and painting."""
    if n_views not in (6, 10):
        raise ValueError(f"camera rig supports 6 or 10 views, got {n_views}")
    cams = [orbit_camera(az, LOW_ELEVATION, resolution=resolution) for az in range(0, 360, 60)]
    if n_views == 10:
        cams += [orbit_camera(az, HIGH_ELEVATION, resolution=resolution) for az in (45, 135, 225, 315)]
    return cams
