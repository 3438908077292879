"""Orbit-style camera sampling around a depth-derived pivot.

A novel view is parameterized by (yaw, pitch) about the pivot point: the
unprojection of the canonical camera's principal point at a reference depth
(typically the median of the input depth map). The camera keeps the pivot on
its optical axis, so the subject stays centered.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, look_at_camera


@dataclass(frozen=True)
class CameraSampler:
    """Truncated-normal yaw/pitch sampler (radians, cut at two spreads)."""

    yaw_spread: float = 0.3
    pitch_spread: float = 0.15
    pivot_depth: float = 1.0

    def __post_init__(self):
        if self.yaw_spread < 0 or self.pitch_spread < 0:
            raise ValueError("spreads must be non-negative")
        if self.pivot_depth <= 0:
            raise ValueError("pivot depth must be positive")


def _orbit_direction(yaw: float, pitch: float) -> np.ndarray:
    """Unit vector from pivot toward the camera, canonical camera frame."""
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([-sy * cp, sp, -cy * cp])


def orbit_camera(canonical: Camera, yaw: float, pitch: float,
                 pivot_depth: float) -> Camera:
    """Camera rotated (yaw, pitch) about the pivot on the canonical optical
    axis at ``pivot_depth``, re-aimed so the pivot stays at the principal
    point."""
    if yaw == 0.0 and pitch == 0.0:
        return canonical
    pivot_c = np.array([0.0, 0.0, pivot_depth])
    center_c = pivot_c + pivot_depth * _orbit_direction(yaw, pitch)
    pivot_w = canonical.camera_to_world(pivot_c[None])[0]
    center_w = canonical.camera_to_world(center_c[None])[0]
    return look_at_camera(canonical, center_w, pivot_w)


def relative_orbit(cam0: Camera, cam1: Camera):
    """Recover (yaw, pitch, pivot_depth) such that
    orbit_camera(cam0, yaw, pitch, pivot_depth) reproduces cam1."""
    c0, c1 = cam0.center, cam1.center
    f0, f1 = cam0.rotation[2], cam1.rotation[2]
    df = f0 - f1
    denom = float(df @ df)
    if denom < 1e-18:
        return 0.0, 0.0, 1.0
    rho = float(df @ (c1 - c0)) / denom
    if rho <= 0:
        raise ValueError("cameras do not share a forward pivot")
    pivot_w = c0 + rho * f0
    u1 = cam0.rotation @ ((c1 - pivot_w) / rho)
    pitch = float(np.arcsin(np.clip(u1[1], -1.0, 1.0)))
    yaw = float(np.arctan2(-u1[0], -u1[2]))
    return yaw, pitch, rho


def sample_novel_camera(canonical: Camera, sampler: CameraSampler, rng) -> Camera:
    """Yaw and pitch drawn from zero-mean normals with the configured
    spreads, re-drawn until within two spreads of zero."""
    def draw(spread):
        if spread == 0.0:
            return 0.0
        while True:
            x = rng.normal(0.0, spread)
            if abs(x) <= 2.0 * spread:
                return x
    yaw = draw(sampler.yaw_spread)
    pitch = draw(sampler.pitch_spread)
    return orbit_camera(canonical, yaw, pitch, sampler.pivot_depth)


def sample_arc(cam0: Camera, cam1: Camera, n: int = 16) -> list[Camera]:
    """n cameras uniformly interpolated in (yaw, pitch) from cam0 to cam1,
    endpoints included."""
    for name in ("fx", "fy", "cx", "cy", "width", "height"):
        if getattr(cam0, name) != getattr(cam1, name):
            raise ValueError("arc endpoints must share intrinsics")
    if n < 2:
        raise ValueError("an arc needs at least two views")
    same_pose = (np.array_equal(cam0.rotation, cam1.rotation)
                 and np.array_equal(cam0.translation, cam1.translation))
    if same_pose:
        return [cam0] * n
    yaw, pitch, rho = relative_orbit(cam0, cam1)
    cams = [orbit_camera(cam0, y, p, rho)
            for y, p in zip(np.linspace(0.0, yaw, n), np.linspace(0.0, pitch, n))]
    cams[-1] = cam1  # exact endpoint, not a floating-point reconstruction
    return cams
