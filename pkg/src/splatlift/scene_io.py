"""Scene manifests, raster file IO (8/16-bit PNG, PFM float maps), flat
key-value run configuration, and line-delimited metrics logs."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .core import Camera, LossWeights, Thresholds
from .lift import RgbdInput
from .train import TrainConfig


class SceneLoadError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneEntry:
    image_path: str
    depth_path: str
    fx: float
    fy: float
    cx: float
    cy: float
    depth_scale: float = 1.0

    def __post_init__(self):
        if self.depth_scale <= 0:
            raise ValueError("depth_scale must be positive")


@dataclass(frozen=True)
class SceneManifest:
    entries: list

    @staticmethod
    def load(path) -> "SceneManifest":
        path = Path(path)
        data = json.loads(path.read_text())
        base = path.parent
        entries = []
        for raw in data["scenes"]:
            raw = dict(raw)
            intr = raw.pop("intrinsics")
            raw["image_path"] = str(base / raw["image_path"])
            raw["depth_path"] = str(base / raw["depth_path"])
            entries.append(SceneEntry(**raw, **intr))
        return SceneManifest(entries=entries)

    def save(self, path):
        path = Path(path)
        base = path.parent

        def rel(p):
            p = Path(p)
            try:
                return str(p.relative_to(base))
            except ValueError:
                return str(p)

        data = {"scenes": [{
            "image_path": rel(e.image_path),
            "depth_path": rel(e.depth_path),
            "intrinsics": {"fx": e.fx, "fy": e.fy, "cx": e.cx, "cy": e.cy},
            "depth_scale": e.depth_scale,
        } for e in self.entries]}
        path.write_text(json.dumps(data, indent=2) + "\n")


# ---------------------------------------------------------------------------
# raster files


def write_image_file(path, image: np.ndarray, bitdepth: int = 8):
    """Linear [0,1] RGB to an 8- or 16-bit raster file."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bitdepth == 8:
        arr = np.round(image * 255.0).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(path)
    elif bitdepth == 16:
        arr = np.round(image * 65535.0).astype(np.uint16)
        # Pillow has no 16-bit RGB mode; store the channels as a stacked gray image
        h, w, _ = arr.shape
        Image.fromarray(arr.transpose(2, 0, 1).reshape(3 * h, w), mode="I;16").save(path)
    else:
        raise ValueError("bitdepth must be 8 or 16")


def read_image_file(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except OSError as e:
        raise SceneLoadError(f"cannot read image {path}: {e}") from e
    if img.mode == "I;16":
        arr = np.asarray(img, dtype=np.float64) / 65535.0
        h3, w = arr.shape
        if h3 % 3:
            raise SceneLoadError(f"{path}: stacked 16-bit image height not divisible by 3")
        return arr.reshape(3, h3 // 3, w).transpose(1, 2, 0)
    arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def write_mask_file(path, mask: np.ndarray):
    Image.fromarray(np.asarray(mask, dtype=bool), mode="1").save(path)


def read_mask_file(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except OSError as e:
        raise SceneLoadError(f"cannot read mask {path}: {e}") from e
    return np.asarray(img.convert("1"), dtype=bool)


def write_depth_png(path, depth: np.ndarray, depth_scale: float):
    """Depth in scene units to a 16-bit grayscale PNG storing
    round(depth / depth_scale)."""
    raw = np.round(np.asarray(depth, dtype=np.float64) / depth_scale)
    if np.any(raw < 0) or np.any(raw > 65535):
        raise ValueError("depth does not fit a 16-bit raster at this scale")
    Image.fromarray(raw.astype(np.uint16), mode="I;16").save(path)


def read_depth_png(path) -> np.ndarray:
    try:
        img = Image.open(path)
    except OSError as e:
        raise SceneLoadError(f"cannot read depth {path}: {e}") from e
    return np.asarray(img, dtype=np.float64)


def write_pfm(path, data: np.ndarray):
    """Single-channel portable float map, little endian, bottom-up rows."""
    data = np.asarray(data, dtype=np.float32)
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{data.shape[1]} {data.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise SceneLoadError(f"{path}: not a single-channel PFM file")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(), dtype="<f4" if scale < 0 else ">f4",
                             count=w * h)
        return np.flipud(data.reshape(h, w)).astype(np.float64)


def load_scene(entry: SceneEntry, view_id: int = 0, key: str | None = None) -> RgbdInput:
    """Decode one manifest entry into an RgbdInput. Non-positive depths are
    clamped to the 1st percentile of the positive values, with a warning."""
    image = read_image_file(entry.image_path)
    if str(entry.depth_path).endswith(".pfm"):
        depth_raw = read_pfm(entry.depth_path)
    else:
        depth_raw = read_depth_png(entry.depth_path)
    depth = depth_raw * entry.depth_scale
    if image.shape[:2] != depth.shape:
        raise SceneLoadError(
            f"image {entry.image_path} {image.shape[:2]} and depth "
            f"{entry.depth_path} {depth.shape} dims differ")
    bad = depth <= 0
    if np.any(bad):
        positives = depth[~bad]
        if positives.size == 0:
            raise SceneLoadError(f"{entry.depth_path}: no positive depths")
        floor = float(np.percentile(positives, 1.0))
        warnings.warn(f"{entry.depth_path}: clamped {int(bad.sum())} "
                      f"non-positive depths to {floor:.6g}")
        depth = np.where(bad, floor, depth)
    H, W = depth.shape
    cam = Camera(fx=entry.fx, fy=entry.fy, cx=entry.cx, cy=entry.cy,
                 width=W, height=H)
    return RgbdInput(image=image, depth=depth, camera=cam, view_id=view_id,
                     key=key if key is not None else entry.image_path)


def load_corpus(manifest: SceneManifest) -> list:
    return [load_scene(e, view_id=0, key=f"scene{i}")
            for i, e in enumerate(manifest.entries)]


# ---------------------------------------------------------------------------
# run configuration and metrics logs


def load_config(path) -> TrainConfig:
    """Flat key: value document mirroring the TrainConfig / Thresholds /
    LossWeights field names."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a flat key-value document")
    th_names = {f.name for f in fields(Thresholds)}
    lw_names = {f.name for f in fields(LossWeights)}
    cfg_names = {f.name for f in fields(TrainConfig)}
    th = {k: v for k, v in raw.items() if k in th_names}
    lw = {k: v for k, v in raw.items() if k in lw_names}
    rest = {}
    for k, v in raw.items():
        if k in th_names or k in lw_names:
            continue
        if k not in cfg_names:
            raise ValueError(f"{path}: unknown config key {k!r}")
        if k == "background":
            v = tuple(v)
        rest[k] = v
    return TrainConfig(**rest, weights=LossWeights(**lw), thresholds=Thresholds(**th))


def save_config(path, cfg: TrainConfig):
    flat = {}
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if f.name == "weights":
            flat.update({wf.name: getattr(v, wf.name) for wf in fields(LossWeights)})
        elif f.name == "thresholds":
            flat.update({tf.name: getattr(v, tf.name) for tf in fields(Thresholds)})
        elif f.name == "background":
            flat[f.name] = list(v)
        else:
            flat[f.name] = v
    Path(path).write_text(yaml.safe_dump(flat, sort_keys=True))


def write_metrics_log(path, records: list):
    """One JSON record per line, keys sorted: identical runs produce
    byte-identical logs."""
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_metrics_log(path) -> list:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
