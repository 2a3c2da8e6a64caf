"""Camera models, relative rotations, virtual-camera sampling, triangulation,
and rigid/similarity alignment.

Conventions (right-handed everywhere):
  World frame:  z up, millimeters.
  Camera frame: x right, y down, z forward (standard CV); extrinsics map
                world to camera as ``x_cam = R @ x_world + t``.
  Image frame:  u right, v down, pixels; pixel centers at integer coords.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    ConfigError,
    DegenerateGeometryError,
    DegeneratePoseError,
    InvalidRotationError,
)

ROTATION_TOL = 1e-9

POSE_FRAMES = ("world", "camera", "root_relative")


def _as_f64(a, shape, name: str) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    if out.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {out.shape}")
    return out


@dataclass(frozen=True)
class Rotation3:
    """Proper rotation in 3D, validated on construction."""

    matrix: np.ndarray

    def __post_init__(self):
        m = _as_f64(self.matrix, (3, 3), "rotation matrix")
        if not np.all(np.isfinite(m)):
            raise InvalidRotationError("rotation matrix has non-finite entries")
        ortho_err = np.linalg.norm(m.T @ m - np.eye(3))
        if ortho_err > ROTATION_TOL:
            raise InvalidRotationError(
                f"matrix is not orthonormal (||R^T R - I||_F = {ortho_err:.3e})"
            )
        det = np.linalg.det(m)
        if abs(det - 1.0) > ROTATION_TOL:
            raise InvalidRotationError(f"matrix is not proper (det = {det:.12f})")
        object.__setattr__(self, "matrix", m)

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3(np.eye(3))

    @staticmethod
    def from_axis_angle(axis, angle_rad: float) -> "Rotation3":
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0:
            raise InvalidRotationError("zero axis")
        k = axis / n
        kx = np.array(
            [[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]], dtype=np.float64
        )
        m = np.eye(3) + np.sin(angle_rad) * kx + (1 - np.cos(angle_rad)) * (kx @ kx)
        return Rotation3(m)

    def compose(self, other: "Rotation3") -> "Rotation3":
        """Rotation applying ``other`` first, then ``self``."""
        return Rotation3(self.matrix @ other.matrix)

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate (..., 3) points."""
        return np.asarray(points, dtype=np.float64) @ self.matrix.T


def euler_zyx(rx: float, ry: float, rz: float) -> Rotation3:
    """Rotation Rz(rz) @ Ry(ry) @ Rx(rx)."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    mx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    my = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    mz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rotation3(mz @ my @ mx)


@dataclass(frozen=True)
class Camera:
    """Calibrated pinhole camera. Extrinsics are world-to-camera."""

    rotation: Rotation3
    translation: np.ndarray  # (3,) mm
    focal: np.ndarray  # (2,) px
    principal_point: np.ndarray  # (2,) px
    image_size: np.ndarray  # (2,) px, (width, height)

    def __post_init__(self):
        object.__setattr__(self, "translation", _as_f64(self.translation, (3,), "translation"))
        object.__setattr__(self, "focal", _as_f64(self.focal, (2,), "focal"))
        object.__setattr__(
            self, "principal_point", _as_f64(self.principal_point, (2,), "principal_point")
        )
        object.__setattr__(self, "image_size", _as_f64(self.image_size, (2,), "image_size"))
        if not np.all(self.focal > 0):
            raise ConfigError("camera.focal", f"focal components must be > 0, got {self.focal}")
        inside = np.all(self.principal_point >= 0) and np.all(
            self.principal_point <= self.image_size
        )
        if not inside:
            raise ConfigError(
                "camera.principal_point",
                f"{self.principal_point} outside image bounds {self.image_size}",
            )

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates: -R^T t."""
        return -self.rotation.matrix.T @ self.translation

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, np.float64) @ self.rotation.matrix.T + self.translation

    def projection_matrix(self) -> np.ndarray:
        """3x4 matrix K [R | t]."""
        k = np.array(
            [
                [self.focal[0], 0, self.principal_point[0]],
                [0, self.focal[1], self.principal_point[1]],
                [0, 0, 1],
            ]
        )
        return k @ np.hstack([self.rotation.matrix, self.translation[:, None]])

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.matrix.tolist(),
            "translation": self.translation.tolist(),
            "focal": self.focal.tolist(),
            "principal_point": self.principal_point.tolist(),
            "image_size": self.image_size.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(
            rotation=Rotation3(np.array(d["rotation"])),
            translation=np.array(d["translation"]),
            focal=np.array(d["focal"]),
            principal_point=np.array(d["principal_point"]),
            image_size=np.array(d["image_size"]),
        )


@dataclass
class Pose3D:
    """Joint positions in millimeters. ``frame`` tags the coordinate system."""

    joints: np.ndarray  # (P, 3)
    frame: str = "world"

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 2 or self.joints.shape[1] != 3:
            raise ValueError(f"joints must be (P, 3), got {self.joints.shape}")
        if not np.all(np.isfinite(self.joints)):
            raise ValueError("joints contain non-finite entries")
        if self.frame not in POSE_FRAMES:
            raise ValueError(f"unknown frame {self.frame!r}, expected one of {POSE_FRAMES}")

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]

    def root_relative(self, root: int = 0) -> "Pose3D":
        return Pose3D(self.joints - self.joints[root], frame="root_relative")


@dataclass
class TorusSampler:
    """Uniform camera placement on a torus band around a look-at point."""

    radius_mm: float = 5000.0
    azimuth_range: tuple = (0.0, 2.0 * np.pi)
    elevation_range: tuple = (np.deg2rad(-15.0), np.deg2rad(15.0))
    focal: tuple = (500.0, 500.0)
    principal_point: tuple = (128.0, 128.0)
    image_size: tuple = (256.0, 256.0)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ConfigError("torus.radius_mm", f"must be > 0, got {self.radius_mm}")
        a0, a1 = self.azimuth_range
        e0, e1 = self.elevation_range
        if not (0.0 <= a0 <= a1 < 2.0 * np.pi + 1e-12):
            raise ConfigError("torus.azimuth_range", f"need 0 <= lo <= hi < 2*pi, got {self.azimuth_range}")
        if not (-np.pi / 2 < e0 <= e1 < np.pi / 2):
            raise ConfigError(
                "torus.elevation_range", f"need -pi/2 < lo <= hi < pi/2, got {self.elevation_range}"
            )


def rotation_between(cam_i: Camera, cam_j: Camera) -> Rotation3:
    """Relative rotation taking camera-i coordinates to camera-j coordinates.

    For world-to-camera extrinsics R_i, R_j this is R_j @ R_i^T; direction
    vectors (e.g. root-relative joint offsets) satisfy v_j = R @ v_i.
    """
    return Rotation3(cam_j.rotation.matrix @ cam_i.rotation.matrix.T)


def project(pose: Pose3D, cam: Camera) -> np.ndarray:
    """Pinhole-project a world-frame pose; returns (P, 2) pixel coordinates.

    Raises BehindCameraError listing joints with camera-frame z <= 0.
    """
    if pose.frame != "world":
        raise ValueError(f"project expects a world-frame pose, got frame={pose.frame!r}")
    pc = cam.world_to_camera(pose.joints)
    behind = np.nonzero(pc[:, 2] <= 0)[0]
    if behind.size:
        raise BehindCameraError(behind.tolist())
    return pc[:, :2] / pc[:, 2:3] * cam.focal + cam.principal_point


def camera_at(
    look_at: np.ndarray,
    radius_mm: float,
    azimuth: float,
    elevation: float,
    focal=(500.0, 500.0),
    principal_point=(128.0, 128.0),
    image_size=(256.0, 256.0),
) -> Camera:
    """Camera at spherical offset (radius, azimuth, elevation) from ``look_at``,
    oriented so ``look_at`` projects onto the principal point.
    """
    look_at = _as_f64(look_at, (3,), "look_at")
    ce, se = np.cos(elevation), np.sin(elevation)
    ca, sa = np.cos(azimuth), np.sin(azimuth)
    center = look_at + radius_mm * np.array([ce * ca, ce * sa, se])
    fwd = look_at - center
    fwd = fwd / np.linalg.norm(fwd)
    up_world = np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up_world)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise DegenerateGeometryError("camera forward axis parallel to world up")
    right /= nr
    down = np.cross(fwd, right)
    r = Rotation3(np.stack([right, down, fwd]))
    t = -r.matrix @ center
    return Camera(
        rotation=r,
        translation=t,
        focal=np.asarray(focal, np.float64),
        principal_point=np.asarray(principal_point, np.float64),
        image_size=np.asarray(image_size, np.float64),
    )


def sample_virtual_camera(sampler: TorusSampler, look_at: np.ndarray) -> Camera:
    """Draw a camera uniformly from the sampler's azimuth/elevation ranges."""
    a0, a1 = sampler.azimuth_range
    e0, e1 = sampler.elevation_range
    azimuth = sampler.rng.uniform(a0, a1) if a1 > a0 else a0
    elevation = sampler.rng.uniform(e0, e1) if e1 > e0 else e0
    return camera_at(
        look_at,
        sampler.radius_mm,
        azimuth,
        elevation,
        focal=sampler.focal,
        principal_point=sampler.principal_point,
        image_size=sampler.image_size,
    )


def triangulate(views: list) -> tuple:
    """Per-joint DLT triangulation from >= 2 calibrated views.

    Args:
        views: list of (keypoints, camera) with keypoints (P, 2) pixels.

    Returns:
        (pose, residual_px): world-frame Pose3D and mean reprojection
        residual in pixels over all views and joints.
    """
    if len(views) < 2:
        raise DegenerateGeometryError(f"triangulation needs >= 2 views, got {len(views)}")
    kps = [np.asarray(k, np.float64) for k, _ in views]
    cams = [c for _, c in views]
    num_joints = kps[0].shape[0]
    for k in kps:
        if k.shape != (num_joints, 2):
            raise ValueError("all views must observe the same joint count")
    centers = np.stack([c.center for c in cams])
    spread = np.linalg.norm(centers - centers[0], axis=1)
    if np.max(spread) < 1e-6:
        raise DegenerateGeometryError("coincident camera centers: baseline is zero")

    mats = [c.projection_matrix() for c in cams]
    pts = np.empty((num_joints, 3))
    for p in range(num_joints):
        rows = []
        for k, m in zip(kps, mats):
            u, v = k[p]
            rows.append(u * m[2] - m[0])
            rows.append(v * m[2] - m[1])
        a = np.stack(rows)
        _, s, vt = np.linalg.svd(a)
        # A one-dimensional nullspace is required; a second tiny singular
        # value means the rays do not intersect in a unique point.
        if s[-2] < 1e-9 * max(s[0], 1.0):
            raise DegenerateGeometryError(f"rank-deficient DLT system for joint {p}")
        hom = vt[-1]
        if abs(hom[3]) < 1e-15:
            raise DegenerateGeometryError(f"triangulated point at infinity for joint {p}")
        pts[p] = hom[:3] / hom[3]

    pose = Pose3D(pts, frame="world")
    residuals = []
    for k, c in zip(kps, cams):
        residuals.append(np.linalg.norm(project(pose, c) - k, axis=1))
    return pose, float(np.mean(residuals))


def procrustes_align(pred: Pose3D, gt: Pose3D, with_scale: bool = True) -> tuple:
    """Optimal similarity (or rigid) alignment of ``pred`` onto ``gt``.

    Closed-form Umeyama solution with the reflection guard det(R) = +1.

    Returns:
        (aligned, residual_mm): aligned prediction and post-alignment MPJPE.
    """
    if pred.num_joints != gt.num_joints:
        raise ValueError(f"joint count mismatch: {pred.num_joints} vs {gt.num_joints}")
    x = pred.joints
    y = gt.joints
    mu_x = x.mean(axis=0)
    mu_y = y.mean(axis=0)
    xc = x - mu_x
    yc = y - mu_y
    if np.linalg.norm(yc) < 1e-9:
        raise DegeneratePoseError("ground-truth joints are all coincident")
    if np.linalg.norm(xc) < 1e-12:
        # A point mass can only be translated onto the gt centroid.
        aligned = np.broadcast_to(mu_y, y.shape).copy()
        return Pose3D(aligned, frame=gt.frame), mpjpe_mm(aligned, y)

    cov = yc.T @ xc / x.shape[0]
    u, d, vt = np.linalg.svd(cov)
    sign = np.sign(np.linalg.det(u @ vt))
    flip = np.ones(3)
    flip[-1] = sign
    r = u @ np.diag(flip) @ vt
    if with_scale:
        var_x = (xc**2).sum() / x.shape[0]
        scale = float((d * flip).sum() / var_x)
    else:
        scale = 1.0
    t = mu_y - scale * r @ mu_x
    aligned = scale * x @ r.T + t
    return Pose3D(aligned, frame=gt.frame), mpjpe_mm(aligned, y)


def mpjpe_mm(a: np.ndarray, b: np.ndarray) -> float:
    """Mean Euclidean distance between matching rows of two (P, 3) arrays."""
    return float(np.mean(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)))
