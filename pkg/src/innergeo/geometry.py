"""Camera projection, oriented boxes and BEV grid coordinates.

Conventions: the world frame is right-handed with z up and the BEV plane is
(x, y). Cameras use x right, y down, z forward. Pixel coordinates (u, v) are
continuous; a point is on the image iff ``0 <= u < width`` and
``0 <= v < height``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import DomainError

ORTHONORMAL_TOL = 1e-9


def _vec3(x, name):
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.shape != (3,):
        raise DomainError(f"{name} must be a 3-vector, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def yaw_matrix(yaw: float) -> np.ndarray:
    """Rotation about the world z axis."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera. ``rotation``/``translation`` map world to camera:
    ``X_cam = rotation @ X_world + translation``."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        if rot.shape != (3, 3):
            raise DomainError(f"rotation must be 3x3, got {rot.shape}")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > ORTHONORMAL_TOL:
            raise DomainError("rotation is not orthonormal")
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError("focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise DomainError("image size must be at least 1x1")
        rot = rot.copy()
        rot.setflags(write=False)
        t = _vec3(self.translation, "translation")
        t.setflags(write=False)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @classmethod
    def looking_at(cls, position, target, fx, fy, width, height, cx=None, cy=None):
        """Camera at ``position`` with its optical axis through ``target``.

        The image x axis stays parallel to the ground plane (no roll).
        """
        position = _vec3(position, "position")
        forward = _vec3(target, "target") - position
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise DomainError("camera target coincides with its position")
        forward = forward / norm
        right = np.cross(forward, [0.0, 0.0, 1.0])
        if np.linalg.norm(right) < 1e-12:
            raise DomainError("camera cannot look straight up or down")
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        rot = np.stack([right, down, forward])
        cx = width / 2.0 if cx is None else cx
        cy = height / 2.0 if cy is None else cy
        return cls(fx, fy, cx, cy, rot, -rot @ position, width, height)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3).copy()
        if not np.all(np.isfinite(pts)):
            raise DomainError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True, eq=False)
class Box3D:
    """Oriented box; ``size`` is (length, width, height) along the box's
    local x, y, z axes, and ``yaw`` rotates local x towards world y."""

    center: np.ndarray
    size: np.ndarray
    yaw: float = 0.0

    def __post_init__(self):
        center = _vec3(self.center, "center")
        size = _vec3(self.size, "size")
        if np.any(size <= 0):
            raise DomainError("box size components must be positive")
        if not math.isfinite(self.yaw):
            raise DomainError("box yaw must be finite")
        center.setflags(write=False)
        size.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", float(self.yaw))

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Express world points in the box frame."""
        # row-vector form of R(-yaw) @ (p - c)
        return (np.asarray(points, dtype=np.float64) - self.center) @ yaw_matrix(self.yaw)

    def bev_corners(self) -> np.ndarray:
        """The four footprint corners in world (x, y), counter-clockwise."""
        hl, hw = self.size[0] / 2, self.size[1] / 2
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center[:2]


@dataclass(frozen=True)
class BevSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    H_bev: int
    W_bev: int

    def __post_init__(self):
        if not self.x_max > self.x_min or not self.y_max > self.y_min:
            raise DomainError("BEV extents must satisfy max > min")
        if self.H_bev < 2 or self.W_bev < 2:
            raise DomainError("BEV grid needs at least 2 cells per axis")

    def cell_centers(self):
        """World (x, y) of every cell center, each shaped (H_bev, W_bev)."""
        xs = np.linspace(self.x_min, self.x_max, self.H_bev)
        ys = np.linspace(self.y_min, self.y_max, self.W_bev)
        return np.meshgrid(xs, ys, indexing="ij")


class Projection(NamedTuple):
    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    index: np.ndarray


def project_points(camera: CameraModel, cloud) -> Projection:
    """Project world points, keeping those in front of and on the image."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    cam = camera.to_camera(pts)
    z = cam[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    keep = front & (u >= 0) & (u < camera.width) & (v >= 0) & (v < camera.height)
    idx = np.flatnonzero(keep)
    return Projection(u[idx], v[idx], z[idx], idx)


def backproject_pixel(camera: CameraModel, u: float, v: float, depth: float) -> np.ndarray:
    if not depth > 0:
        raise DomainError(f"depth must be positive, got {depth}")
    cam = np.array([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth])
    return camera.rotation.T @ (cam - camera.translation)


def points_in_box(cloud, box: Box3D) -> np.ndarray:
    """Indices of points inside ``box``, boundary inclusive."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    local = box.to_local(pts)
    inside = np.all(np.abs(local) <= box.size / 2, axis=1)
    return np.flatnonzero(inside)


def enlarge_box_bev(box: Box3D, factor: float) -> Box3D:
    """Scale the footprint (length, width) by ``factor``; height is kept."""
    if not factor >= 1:
        raise DomainError(f"enlargement factor must be >= 1, got {factor}")
    size = box.size * np.array([factor, factor, 1.0])
    return Box3D(box.center, size, box.yaw)


def bev_world_to_grid(spec: BevSpec, x, y):
    """Continuous (row, col) for world (x, y); extents map onto the outer
    cell centers, x to rows and y to columns. Works elementwise on arrays."""
    row = (np.asarray(x, dtype=np.float64) - spec.x_min) * ((spec.H_bev - 1) / (spec.x_max - spec.x_min))
    col = (np.asarray(y, dtype=np.float64) - spec.y_min) * ((spec.W_bev - 1) / (spec.y_max - spec.y_min))
    return row, col
