"""Core domain types: Gaussian primitives, cameras, thresholds, loss weights.

All types are immutable value objects; every operation here is a pure
function. Batch variants (suffix ``_batch``) operate on stacked arrays and
are what the rasterizer consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

QUAT_NORM_EPS = 1e-12


def _as_f64(x, shape, name):
    a = np.asarray(x, dtype=np.float64)
    if a.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
    return a


def quaternion_to_rotation(q) -> np.ndarray:
    """Rotation matrix of a (w, x, y, z) quaternion, normalized first.

    Raises ValueError on a (near-)zero-norm quaternion.
    """
    q = _as_f64(q, (4,), "q")
    return quaternion_to_rotation_batch(q[None])[0]


def quaternion_to_rotation_batch(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1)
    if np.any(norm <= QUAT_NORM_EPS) or not np.all(np.isfinite(norm)):
        raise ValueError("zero-norm or non-finite quaternion")
    w, x, y, z = (q / norm[..., None]).T
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def quaternion_rotation_grad_batch(q_unit: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Backward of quaternion_to_rotation_batch at already-normalized q.

    Given dL/dR (N,3,3), returns dL/dq_unit (N,4) before the normalization
    Jacobian. Entry layout matches the forward formula.
    """
    w, x, y, z = q_unit.T
    g = dR
    dw = 2 * (-z * (g[:, 0, 1] - g[:, 1, 0])
              + y * (g[:, 0, 2] - g[:, 2, 0])
              - x * (g[:, 1, 2] - g[:, 2, 1]))
    dx = 2 * (y * (g[:, 0, 1] + g[:, 1, 0])
              + z * (g[:, 0, 2] + g[:, 2, 0])
              - w * (g[:, 1, 2] - g[:, 2, 1])
              - 2 * x * (g[:, 1, 1] + g[:, 2, 2]))
    dy = 2 * (x * (g[:, 0, 1] + g[:, 1, 0])
              + w * (g[:, 0, 2] - g[:, 2, 0])
              + z * (g[:, 1, 2] + g[:, 2, 1])
              - 2 * y * (g[:, 0, 0] + g[:, 2, 2]))
    dz = 2 * (-w * (g[:, 0, 1] - g[:, 1, 0])
              + x * (g[:, 0, 2] + g[:, 2, 0])
              + y * (g[:, 1, 2] + g[:, 2, 1])
              - 2 * z * (g[:, 0, 0] + g[:, 1, 1]))
    return np.stack([dw, dx, dy, dz], axis=-1)


def normalize_quaternion_grad_batch(q_raw: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Chain dL/d(q/|q|) back to dL/dq."""
    norm = np.linalg.norm(q_raw, axis=-1, keepdims=True)
    u = q_raw / norm
    return (d_unit - u * np.sum(d_unit * u, axis=-1, keepdims=True)) / norm


def covariance(log_scale, q) -> np.ndarray:
    """3x3 world covariance R * S * S^T * R^T with S = diag(exp(log_scale))."""
    log_scale = _as_f64(log_scale, (3,), "log_scale")
    q = _as_f64(q, (4,), "q")
    if not (np.all(np.isfinite(log_scale)) and np.all(np.isfinite(q))):
        raise ValueError("non-finite covariance inputs")
    return covariance_batch(log_scale[None], q[None])[0]


def covariance_batch(log_scale: np.ndarray, q: np.ndarray) -> np.ndarray:
    R = quaternion_to_rotation_batch(q)
    D = np.exp(2.0 * np.asarray(log_scale, dtype=np.float64))
    return np.einsum("nij,nj,nkj->nik", R, D, R)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class GaussianPrimitive:
    """One anisotropic 3D Gaussian: position, color, raw opacity, log scales,
    rotation quaternion. Opacity and scales are stored pre-activation."""

    position: np.ndarray
    color: np.ndarray
    opacity_raw: float
    log_scale: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_f64(self.position, (3,), "position"))
        object.__setattr__(self, "color", _as_f64(self.color, (3,), "color"))
        object.__setattr__(self, "log_scale", _as_f64(self.log_scale, (3,), "log_scale"))
        object.__setattr__(self, "rotation", _as_f64(self.rotation, (4,), "rotation"))

    @property
    def covariance(self) -> np.ndarray:
        return covariance(self.log_scale, self.rotation)


def activate(primitive: GaussianPrimitive):
    """(opacity in (0,1), scales > 0) from the raw fields. Saturates, never raises."""
    opacity = float(sigmoid(np.float64(primitive.opacity_raw)))
    scales = np.exp(primitive.log_scale)
    return opacity, scales


@dataclass(frozen=True)
class GaussianSet:
    """Ordered, provenance-tagged collection of pixel-sourced primitives.

    Stored struct-of-arrays. ``provenance[i] = (view_id, row, col)`` names the
    source pixel of primitive i.
    """

    positions: np.ndarray      # (N,3) world frame
    colors: np.ndarray         # (N,3) linear RGB in [0,1]
    opacity_raw: np.ndarray    # (N,)
    log_scales: np.ndarray     # (N,3)
    rotations: np.ndarray      # (N,4) wxyz
    provenance: np.ndarray     # (N,3) int64: view_id, row, col

    def __post_init__(self):
        n = self.positions.shape[0]
        for name in ("positions", "colors", "opacity_raw", "log_scales", "rotations"):
            a = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, a)
            if a.shape[0] != n:
                raise ValueError(f"GaussianSet field {name} length mismatch")
        prov = np.asarray(self.provenance, dtype=np.int64)
        if prov.shape != (n, 3):
            raise ValueError("provenance must be (N,3) (view_id, row, col)")
        object.__setattr__(self, "provenance", prov)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def primitive(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            position=self.positions[i],
            color=self.colors[i],
            opacity_raw=float(self.opacity_raw[i]),
            log_scale=self.log_scales[i],
            rotation=self.rotations[i],
        )

    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_raw)

    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    def take(self, index: np.ndarray) -> "GaussianSet":
        return GaussianSet(
            positions=self.positions[index],
            colors=self.colors[index],
            opacity_raw=self.opacity_raw[index],
            log_scales=self.log_scales[index],
            rotations=self.rotations[index],
            provenance=self.provenance[index],
        )

    @staticmethod
    def empty() -> "GaussianSet":
        return GaussianSet(
            positions=np.zeros((0, 3)),
            colors=np.zeros((0, 3)),
            opacity_raw=np.zeros(0),
            log_scales=np.zeros((0, 3)),
            rotations=np.zeros((0, 4)),
            provenance=np.zeros((0, 3), dtype=np.int64),
        )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera pose.

    Pixel (row r, col c) samples the image plane at continuous (x=c, y=r);
    projection is u = fx*x/z + cx, v = fy*y/z + cy with z forward.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))     # world->camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if self.width < 0 or self.height < 0:
            raise ValueError("image dims must be non-negative")
        R = _as_f64(self.rotation, (3, 3), "rotation")
        t = _as_f64(self.translation, (3,), "translation")
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise ValueError("rotation part is not orthonormal")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def camera_to_world(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def project_points(self, points_world: np.ndarray):
        """(u, v, z_cam) for an (N,3) world-point array."""
        pc = self.world_to_camera(np.atleast_2d(points_world))
        z = pc[:, 2]
        u = self.fx * pc[:, 0] / z + self.cx
        v = self.fy * pc[:, 1] / z + self.cy
        return u, v, z

    def pixel_rays(self) -> np.ndarray:
        """(H,W,3) unit view directions in the camera frame, one per pixel."""
        c, r = np.meshgrid(np.arange(self.width), np.arange(self.height))
        d = np.stack([(c - self.cx) / self.fx, (r - self.cy) / self.fy,
                      np.ones_like(c, dtype=np.float64)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def with_pose(self, rotation: np.ndarray, translation: np.ndarray) -> "Camera":
        return replace(self, rotation=rotation, translation=translation)


def look_at_camera(template: Camera, eye: np.ndarray, target: np.ndarray) -> Camera:
    """Camera at ``eye`` whose optical axis passes through ``target``.

    The roll convention keeps the image y axis (which points down) aligned
    with the template camera's y axis as closely as possible.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    fwd = fwd / n
    down = template.rotation[1]  # template camera y axis, world coords
    right = np.cross(down, fwd)
    rn = np.linalg.norm(right)
    if rn < 1e-12:
        raise ValueError("view direction parallel to the camera up axis")
    right = right / rn
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return template.with_pose(rotation=R, translation=-R @ eye)


@dataclass(frozen=True)
class Thresholds:
    """Alpha binarization threshold, artifact angle threshold (radians), and
    artifact alpha threshold."""

    tau: float = 0.5
    tau_theta: float = np.deg2rad(15.0)
    tau_artifact: float = 0.5

    def __post_init__(self):
        if not (0 < self.tau < 1):
            raise ValueError("tau must lie in (0,1)")
        if self.tau_theta <= 0 or self.tau_artifact <= 0:
            raise ValueError("thresholds must be strictly positive")


@dataclass(frozen=True)
class LossWeights:
    lambda_reg: float = 0.05
    lambda_novel: float = 1.0
    lambda_perp: float = 0.5
    lambda_clip: float = 0.5

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_novel", "lambda_perp", "lambda_clip"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")
