"""Synthetic RGB-D fixtures: smooth single-surface scenes, the two-plane
occluder family used to study disocclusion holes, and artifact seeding for
the refinement stage. All generators are deterministic in their seed."""

from __future__ import annotations

import numpy as np

from .core import Camera
from .lift import RgbdInput


def canonical_camera(height: int, width: int, focal_factor: float = 1.2) -> Camera:
    return Camera(fx=focal_factor * width, fy=focal_factor * width,
                  cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                  width=width, height=height)


def _uv_grid(height, width):
    v, u = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width),
                       indexing="ij")
    return u, v


def _smooth_field(u, v, rng, n_waves=3, amp=0.35):
    out = np.zeros_like(u)
    for _ in range(n_waves):
        fu, fv = rng.uniform(0.5, 2.5, 2)
        phase = rng.uniform(0, 2 * np.pi)
        out += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (fu * u + fv * v) + phase)
    out /= n_waves
    return amp * out


def smooth_scene(height: int = 64, width: int = 64, seed: int = 0,
                 depth_mid: float = 3.0, depth_amp: float = 0.3,
                 key: str = "scene0") -> RgbdInput:
    """A gently undulating textured surface filling the frame."""
    rng = np.random.default_rng(seed)
    u, v = _uv_grid(height, width)
    image = np.stack([np.clip(0.5 + _smooth_field(u, v, rng), 0.05, 0.95)
                      for _ in range(3)], axis=-1)
    depth = depth_mid + depth_amp * _smooth_field(u, v, rng, amp=1.0)
    return RgbdInput(image=image, depth=depth,
                     camera=canonical_camera(height, width), key=key)


def occluder_scene(height: int = 32, width: int = 32, seed: int = 0,
                   fg_depth: float = 2.0, bg_depth: float = 4.0,
                   fg_half: float = 0.28, key: str = "scene0") -> RgbdInput:
    """Two fronto-parallel planes: a textured background filling the frame
    and a closer textured square hiding part of it. Novel views disocclude
    background the canonical lift never saw."""
    rng = np.random.default_rng(seed)
    u, v = _uv_grid(height, width)
    bg = np.stack([np.clip(0.45 + _smooth_field(u, v, rng, n_waves=4), 0.05, 0.95)
                   for _ in range(3)], axis=-1)
    fg = np.stack([np.clip(0.55 + _smooth_field(u, v, rng, n_waves=2, amp=0.4),
                           0.05, 0.95) for _ in range(3)], axis=-1)
    square = (np.abs(u - 0.5) < fg_half) & (np.abs(v - 0.5) < fg_half)
    image = np.where(square[..., None], fg, bg)
    depth = np.where(square, fg_depth, bg_depth)
    return RgbdInput(image=image, depth=depth,
                     camera=canonical_camera(height, width), key=key)


def occluder_corpus(n_scenes: int = 2, height: int = 32, width: int = 32,
                    seed: int = 0) -> list:
    """Occluder scenes with varied textures and square sizes."""
    rng = np.random.default_rng(seed)
    return [occluder_scene(height, width, seed=int(rng.integers(1 << 31)),
                           fg_half=float(rng.uniform(0.22, 0.32)),
                           key=f"scene{i}")
            for i in range(n_scenes)]


def seed_artifacts(predictor, scene: RgbdInput, rows: slice, cols: slice,
                   stretch: float = 3.0, opacity_raw: float = -1.0):
    """Corrupt a block of a fitted table predictor's maps so novel views show
    the classic stretched-splat streaks: elongate the block's splats along
    the viewing axis and thin them out."""
    table = predictor.tables[scene.key]
    table["log_scale"][rows, cols, 2] += stretch
    table["opacity_raw"][rows, cols] = opacity_raw
