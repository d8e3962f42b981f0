"""Seeded synthetic scenes: boxes, LiDAR-like points, cameras, teacher BEV
features and student initial states.

Every generator is a pure function of its spec. Independent random streams
are derived from ``(seed, stream)`` so changing, say, the teacher settings
never perturbs the sampled geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .bev import DEFAULT_ENLARGE, BevFeatureGrid, bilinear_sample, sample_keypoint_coords
from .depth import CategoricalDepthMap, DepthBinSpec, GroundTruthDepthMap, localize_foreground, rasterize_gt_depth
from .errors import DomainError
from .geometry import BevSpec, Box3D, CameraModel, PointCloud, enlarge_box_bev, points_in_box
from .losses import DistillProblem

_BOXES, _POINTS, _BACKGROUND, _TEACHER, _STUDENT = range(5)
INIT_MODES = ("uniform", "noisy-teacher", "random")


def _rng(seed, stream):
    return np.random.default_rng([int(seed), stream])


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 7
    num_targets: int = 4
    length_range: tuple = (3.6, 4.8)
    width_range: tuple = (1.7, 2.1)
    height_range: tuple = (1.4, 1.8)
    distance_range: tuple = (8.0, 14.0)
    points_per_target: int = 400
    background_points: int = 1500
    visible_bias: float = 0.85
    num_cameras: int = 2
    camera_height: float = 1.6
    camera_pitch: float = 0.1
    image_width: int = 64
    image_height: int = 40
    focal: float = 48.0
    bins: DepthBinSpec = DepthBinSpec(K=32, d_min=1.0, d_max=40.0)
    bev: BevSpec = BevSpec(-24.0, 24.0, -24.0, 24.0, 32, 32)
    C: int = 16
    grid_side: int = 4
    enlarge: float = DEFAULT_ENLARGE
    background_amplitude: float = 1.0
    target_amplitude: float = 8.0
    max_placement_tries: int = 200

    def __post_init__(self):
        if self.num_targets < 0:
            raise DomainError("num_targets must be >= 0")
        if self.num_cameras < 1 or self.C < 1 or self.grid_side < 1:
            raise DomainError("need >= 1 camera, channel and keypoint")
        for name in ("length_range", "width_range", "height_range", "distance_range"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise DomainError(f"{name} must satisfy 0 < low <= high")
        if not 0 <= self.visible_bias <= 1:
            raise DomainError("visible_bias must lie in [0, 1]")
        if self.points_per_target < 1 and self.num_targets > 0:
            raise DomainError("points_per_target must be >= 1")

    @property
    def N(self) -> int:
        return self.grid_side**2


@dataclass(frozen=True, eq=False)
class Scene:
    spec: SceneSpec
    boxes: tuple
    cloud: PointCloud
    cameras: tuple
    teacher_bev: BevFeatureGrid
    gt_maps: tuple

    def targets(self):
        """Foreground pixel sets per camera."""
        return [localize_foreground(cam, self.cloud, self.boxes) for cam in self.cameras]

    def keypoint_coords(self):
        return [sample_keypoint_coords(b, self.spec.enlarge, self.spec.grid_side) for b in self.boxes]

    def problem(self, normalize: bool = False) -> DistillProblem:
        coords = self.keypoint_coords()
        teacher = [bilinear_sample(self.teacher_bev, xy) for xy in coords]
        return DistillProblem(self.spec.bins, list(self.gt_maps), self.targets(), self.spec.bev,
                              coords, teacher, normalize)


@dataclass(frozen=True, eq=False)
class StudentState:
    depth_maps: tuple  # CategoricalDepthMap per camera
    bev: BevFeatureGrid

    @property
    def probs(self):
        return [m.probs for m in self.depth_maps]


def make_cameras(spec: SceneSpec):
    """Cameras at the origin, evenly spread in heading, pitched down slightly."""
    cams = []
    for i in range(spec.num_cameras):
        heading = 2 * math.pi * i / spec.num_cameras
        pos = np.array([0.0, 0.0, spec.camera_height])
        look = pos + np.array([math.cos(heading), math.sin(heading), -math.tan(spec.camera_pitch)])
        cams.append(CameraModel.looking_at(pos, look, spec.focal, spec.focal, spec.image_width, spec.image_height))
    return cams


def _footprint_inside(spec: BevSpec, corners):
    return (np.all(corners[:, 0] >= spec.x_min) and np.all(corners[:, 0] <= spec.x_max)
            and np.all(corners[:, 1] >= spec.y_min) and np.all(corners[:, 1] <= spec.y_max))


def _place_boxes(spec: SceneSpec, rng):
    half_fov = math.atan(spec.image_width / 2 / spec.focal)
    ext = min(spec.bev.x_max - spec.bev.x_min, spec.bev.y_max - spec.bev.y_min)
    if spec.num_targets and spec.length_range[0] * spec.enlarge > ext:
        raise DomainError("boxes cannot fit inside the BEV extents")
    boxes = []
    for j in range(spec.num_targets):
        heading = 2 * math.pi * (j % spec.num_cameras) / spec.num_cameras
        for _ in range(spec.max_placement_tries):
            length = rng.uniform(*spec.length_range)
            width = rng.uniform(*spec.width_range)
            height = rng.uniform(*spec.height_range)
            bearing = heading + rng.uniform(-0.6, 0.6) * half_fov
            dist = rng.uniform(*spec.distance_range)
            yaw = rng.uniform(-math.pi, math.pi)
            center = [dist * math.cos(bearing), dist * math.sin(bearing), height / 2]
            box = Box3D(center, [length, width, height], yaw)
            radius = 0.5 * math.hypot(length, width) * spec.enlarge
            clear = all(
                np.hypot(*(box.center[:2] - other.center[:2]))
                > radius + 0.5 * math.hypot(*other.size[:2]) * spec.enlarge
                for other in boxes
            )
            if clear and _footprint_inside(spec.bev, enlarge_box_bev(box, spec.enlarge).bev_corners()):
                boxes.append(box)
                break
        else:
            raise DomainError(f"could not place target {j} without overlap inside the BEV extents")
    return boxes


_FACES = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0)]  # (axis, sign); the bottom rests on the ground


def _surface_points(box: Box3D, camera_pos, count, visible_bias, rng):
    """Points on the box shell, ``visible_bias`` of them on camera-facing faces."""
    half = box.size / 2
    cam_local = box.to_local(camera_pos[None])[0]
    areas = np.array([np.prod(np.delete(box.size, axis)) for axis, _ in _FACES])
    visible = np.array([sign * cam_local[axis] > half[axis] for axis, sign in _FACES])
    probs = areas / areas.sum()
    if visible.any() and visible_bias > 0:
        vis = np.where(visible, areas, 0.0)
        probs = (1 - visible_bias) * probs + visible_bias * vis / vis.sum()
    faces = rng.choice(len(_FACES), size=count, p=probs)
    # inset keeps points strictly inside despite rounding in the yaw rotation
    local = rng.uniform(-1.0, 1.0, size=(count, 3)) * half * (1 - 1e-6)
    for f, (axis, sign) in enumerate(_FACES):
        sel = faces == f
        local[sel, axis] = sign * half[axis] * (1 - 1e-6)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def _ground_points(spec: SceneSpec, boxes, rng):
    out = np.zeros((0, 3))
    while len(out) < spec.background_points:
        n = 2 * (spec.background_points - len(out))
        pts = np.column_stack([
            rng.uniform(spec.bev.x_min, spec.bev.x_max, n),
            rng.uniform(spec.bev.y_min, spec.bev.y_max, n),
            np.zeros(n),
        ])
        keep = np.ones(n, dtype=bool)
        for box in boxes:
            keep[points_in_box(pts, box)] = False
        out = np.vstack([out, pts[keep]])
    return out[: spec.background_points]


def gen_scene(spec: SceneSpec) -> Scene:
    cameras = make_cameras(spec)
    boxes = _place_boxes(spec, _rng(spec.seed, _BOXES))
    rng = _rng(spec.seed, _POINTS)
    chunks = []
    for j, box in enumerate(boxes):
        cam_pos = cameras[j % spec.num_cameras].rotation.T @ -cameras[j % spec.num_cameras].translation
        chunks.append(_surface_points(box, cam_pos, spec.points_per_target, spec.visible_bias, rng))
    chunks.append(_ground_points(spec, boxes, _rng(spec.seed, _BACKGROUND)))
    cloud = PointCloud(np.vstack(chunks))
    gt_maps = tuple(rasterize_gt_depth(cam, cloud) for cam in cameras)
    partial = Scene(spec, tuple(boxes), cloud, tuple(cameras), None, gt_maps)
    return replace(partial, teacher_bev=gen_teacher_bev(partial, spec))


def teacher_background(spec: SceneSpec) -> np.ndarray:
    """Smooth random field: a few plane waves per channel."""
    rng = _rng(spec.seed, _TEACHER)
    xs, ys = spec.bev.cell_centers()
    field_ = np.zeros((spec.C, spec.bev.H_bev, spec.bev.W_bev))
    n_modes = 4
    wavelengths = rng.uniform(12.0, 40.0, size=(spec.C, n_modes))
    angles = rng.uniform(0, 2 * math.pi, size=(spec.C, n_modes))
    phases = rng.uniform(0, 2 * math.pi, size=(spec.C, n_modes))
    amps = rng.normal(size=(spec.C, n_modes)) * spec.background_amplitude / math.sqrt(n_modes)
    for c in range(spec.C):
        for m in range(n_modes):
            k = 2 * math.pi / wavelengths[c, m]
            arg = k * (math.cos(angles[c, m]) * xs + math.sin(angles[c, m]) * ys) + phases[c, m]
            field_[c] += amps[c, m] * np.cos(arg)
    return field_


def gen_teacher_bev(scene: Scene, spec: SceneSpec) -> BevFeatureGrid:
    """Background field plus one bump per box.

    Each bump carries a seeded channel signature and two seeded gradients
    along the box axes, so keypoints inside one target differ from each other
    and targets differ from one another.
    """
    values = teacher_background(spec)
    rng = _rng(spec.seed + 1, _TEACHER)
    xs, ys = spec.bev.cell_centers()
    flat = np.column_stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)])
    scale = spec.target_amplitude / math.sqrt(spec.C)
    for box in scene.boxes:
        sig, along, across = rng.normal(size=(3, spec.C)) * scale
        big = enlarge_box_bev(box, spec.enlarge)
        local = box.to_local(flat)
        u = local[:, 0] / (big.size[0] / 2)
        v = local[:, 1] / (big.size[1] / 2)
        window = np.exp(-0.5 * (u * u + v * v)).reshape(xs.shape)
        u, v = u.reshape(xs.shape), v.reshape(xs.shape)
        values += window * (sig[:, None, None] + along[:, None, None] * u + across[:, None, None] * v)
    return BevFeatureGrid(spec.bev, values)


def init_student_state(scene: Scene, spec: SceneSpec, mode: str = "uniform", amplitude: float = 0.1,
                       seed: Optional[int] = None) -> StudentState:
    """Starting point for the student.

    ``uniform``: flat depth distributions and a zero BEV grid.
    ``noisy-teacher``: flat depth, teacher grid plus Gaussian noise of ``amplitude``.
    ``random``: Dirichlet(1) depth per pixel and a Gaussian grid of ``amplitude``.
    """
    if mode not in INIT_MODES:
        raise DomainError(f"unknown init mode {mode!r}; expected one of {INIT_MODES}")
    rng = _rng(spec.seed if seed is None else seed, _STUDENT)
    h, w, k = spec.image_height, spec.image_width, spec.bins.K
    shape = scene.teacher_bev.values.shape
    if mode == "random":
        maps = []
        for _ in scene.cameras:
            p = rng.gamma(1.0, size=(h, w, k))
            maps.append(CategoricalDepthMap(p / p.sum(axis=-1, keepdims=True)))
        grid = amplitude * rng.normal(size=shape)
    else:
        maps = [CategoricalDepthMap.uniform(h, w, k) for _ in scene.cameras]
        if mode == "uniform":
            grid = np.zeros(shape)
        else:
            grid = scene.teacher_bev.values + amplitude * rng.normal(size=shape)
    return StudentState(tuple(maps), BevFeatureGrid(spec.bev, grid))
