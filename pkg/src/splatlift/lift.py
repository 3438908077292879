"""Feed-forward lifting of an RGB-D image plus predicted attribute maps into
a pixel-aligned GaussianSet (one primitive per pixel), and the matching
reverse-mode pass from per-primitive gradients back to the maps and inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianSet
from .raster import GradientBuffer, RenderTargets

OFFSET_CLAMP_FRACTION = 0.05  # of median input depth, when not given explicitly


@dataclass(frozen=True)
class RgbdInput:
    """A single RGB-D observation: image in [0,1], strictly positive depth,
    and the camera it was taken with."""

    image: np.ndarray   # (H,W,3)
    depth: np.ndarray   # (H,W)
    camera: Camera
    view_id: int = 0
    key: str = "view0"  # identity label used by table-based predictors

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float64)
        dep = np.asarray(self.depth, dtype=np.float64)
        H, W = self.camera.height, self.camera.width
        if img.shape != (H, W, 3) or dep.shape != (H, W):
            raise ValueError("image/depth dims inconsistent with the camera")
        if dep.size and (not np.all(np.isfinite(dep)) or np.any(dep <= 0)):
            raise ValueError("depth must be strictly positive and finite")
        object.__setattr__(self, "image", img)
        object.__setattr__(self, "depth", dep)

    @property
    def shape(self):
        return self.depth.shape


@dataclass(frozen=True)
class AttributeMaps:
    """Per-pixel Gaussian attribute maps predicted for one RGB-D input."""

    offset: np.ndarray          # (H,W,3) scene units, camera frame
    color_residual: np.ndarray  # (H,W,3)
    opacity_raw: np.ndarray     # (H,W)
    log_scale: np.ndarray       # (H,W,3)
    rotation: np.ndarray        # (H,W,4)

    def __post_init__(self):
        hw = np.asarray(self.opacity_raw).shape
        expected = {"offset": hw + (3,), "color_residual": hw + (3,),
                    "opacity_raw": hw, "log_scale": hw + (3,), "rotation": hw + (4,)}
        for name, shape in expected.items():
            a = np.asarray(getattr(self, name), dtype=np.float64)
            if a.shape != shape:
                raise ValueError(f"attribute map {name}: expected {shape}, got {a.shape}")
            if a.size and not np.all(np.isfinite(a)):
                raise ValueError(f"attribute map {name} contains non-finite values")
            object.__setattr__(self, name, a)

    @staticmethod
    def zeros(height: int, width: int) -> "AttributeMaps":
        rot = np.zeros((height, width, 4))
        rot[..., 0] = 1.0
        return AttributeMaps(
            offset=np.zeros((height, width, 3)),
            color_residual=np.zeros((height, width, 3)),
            opacity_raw=np.zeros((height, width)),
            log_scale=np.zeros((height, width, 3)),
            rotation=rot,
        )


@dataclass
class LiftGradients:
    """Partials of a scalar loss w.r.t. the attribute maps and the RGB-D
    input that fed one lift."""

    d_offset: np.ndarray
    d_color_residual: np.ndarray
    d_opacity_raw: np.ndarray
    d_log_scale: np.ndarray
    d_rotation: np.ndarray
    d_image: np.ndarray
    d_depth: np.ndarray


def footprint_log_scale(depth: np.ndarray, cam: Camera) -> np.ndarray:
    """log(1.5 x single-pixel footprint in scene units at each pixel's depth);
    the default splat extent for a fresh pixel-aligned lift."""
    footprint = np.asarray(depth) * 0.5 * (1.0 / cam.fx + 1.0 / cam.fy)
    return np.log(1.5 * footprint)


def init_attribute_maps(rgbd: "RgbdInput") -> AttributeMaps:
    """Identity-style initialization: zero offsets and residuals, near-opaque
    splats sized to the local pixel footprint, identity rotations. Lifting
    with these maps renders a near-photographic canonical view."""
    H, W = rgbd.shape
    maps = AttributeMaps.zeros(H, W)
    return AttributeMaps(
        offset=maps.offset,
        color_residual=maps.color_residual,
        opacity_raw=np.full((H, W), 4.0),
        log_scale=np.repeat(footprint_log_scale(rgbd.depth, rgbd.camera)[..., None], 3, axis=-1),
        rotation=maps.rotation,
    )


def unproject(u: float, v: float, d: float, cam: Camera) -> np.ndarray:
    """Camera-frame point of pixel (u,v) at depth d."""
    if d <= 0:
        raise ValueError("depth must be positive")
    return d * np.array([(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0])


def _pixel_dirs(cam: Camera) -> np.ndarray:
    c, r = np.meshgrid(np.arange(cam.width), np.arange(cam.height))
    return np.stack([(c - cam.cx) / cam.fx, (r - cam.cy) / cam.fy,
                     np.ones((cam.height, cam.width))], axis=-1)


def default_offset_clamp(depth: np.ndarray) -> float:
    return OFFSET_CLAMP_FRACTION * float(np.median(depth)) if depth.size else 0.0


def lift_pixel_aligned(rgbd: RgbdInput, maps: AttributeMaps,
                       clamp_offset: float | None = None) -> GaussianSet:
    """One Gaussian per pixel: position = unprojected depth plus a clamped
    3D offset (world frame), color = input pixel plus a clamped residual."""
    H, W = rgbd.shape
    if maps.opacity_raw.shape != (H, W):
        raise ValueError("attribute maps do not match the input dims")
    if clamp_offset is None:
        clamp_offset = default_offset_clamp(rgbd.depth)
    cam = rgbd.camera
    pos_cam = rgbd.depth[..., None] * _pixel_dirs(cam) \
        + np.clip(maps.offset, -clamp_offset, clamp_offset)
    positions = cam.camera_to_world(pos_cam.reshape(-1, 3))
    colors = np.clip(rgbd.image + maps.color_residual, 0.0, 1.0).reshape(-1, 3)
    r, c = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    provenance = np.stack([np.full(H * W, rgbd.view_id, dtype=np.int64),
                           r.reshape(-1), c.reshape(-1)], axis=1)
    return GaussianSet(
        positions=positions,
        colors=colors,
        opacity_raw=maps.opacity_raw.reshape(-1).copy(),
        log_scales=maps.log_scale.reshape(-1, 3).copy(),
        rotations=maps.rotation.reshape(-1, 4).copy(),
        provenance=provenance,
    )


def lift_backward(rgbd: RgbdInput, maps: AttributeMaps,
                  grad: GradientBuffer,
                  clamp_offset: float | None = None) -> LiftGradients:
    """Chain per-primitive gradients of a pixel-aligned lift back to the
    attribute maps and the RGB-D input."""
    H, W = rgbd.shape
    if clamp_offset is None:
        clamp_offset = default_offset_clamp(rgbd.depth)
    cam = rgbd.camera
    d_pos_cam = (grad.d_position @ cam.rotation.T).reshape(H, W, 3)
    offset_pass = np.abs(maps.offset) < clamp_offset
    d_offset = np.where(offset_pass, d_pos_cam, 0.0)
    d_depth = np.sum(d_pos_cam * _pixel_dirs(cam), axis=-1)

    raw_color = rgbd.image + maps.color_residual
    color_pass = (raw_color > 0.0) & (raw_color < 1.0)
    d_col = np.where(color_pass, grad.d_color.reshape(H, W, 3), 0.0)
    return LiftGradients(
        d_offset=d_offset,
        d_color_residual=d_col,
        d_opacity_raw=grad.d_opacity_raw.reshape(H, W).copy(),
        d_log_scale=grad.d_log_scale.reshape(H, W, 3).copy(),
        d_rotation=grad.d_rotation.reshape(H, W, 4).copy(),
        d_image=d_col.copy(),
        d_depth=d_depth,
    )


def rgbd_from_render(targets: RenderTargets, cam: Camera,
                     view_id: int = 1, key: str = "view1") -> RgbdInput:
    """Turn one render into a valid RGB-D input for re-lifting. Hole pixels
    (zero rendered depth) take the median of the covered depths so the
    re-lift stays well conditioned."""
    covered = targets.depth > 0
    fill = float(np.median(targets.depth[covered])) if np.any(covered) else 1.0
    depth = np.where(covered, targets.depth, fill)
    return RgbdInput(image=np.clip(targets.color, 0.0, 1.0), depth=depth,
                     camera=cam, view_id=view_id, key=key)
