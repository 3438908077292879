"""Stage-two geometry-guided texture refinement.

Artifacts in novel views show up as pixels whose rendered alpha is low while
the depth-derived normal lies nearly parallel to the viewing ray. A 16-view
arc between the canonical and novel cameras is rendered, masked, in-painted
(push-pull pyramid by default, or any external tool speaking the staging
directory contract), and the masked L1 between renders and in-painted frames
fine-tunes the predictor at a reduced learning rate.
"""

from __future__ import annotations

import subprocess
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aggregate import BinaryMask
from .core import Camera, GaussianSet, Thresholds
from .lift import RgbdInput
from .losses import bilinear_sample, make_report, total_loss
from .raster import (RenderGradients, RenderTargets, normals_from_depth,
                     rasterize_with_cache)
from .views import sample_arc


def artifact_mask(alpha: np.ndarray, normal: np.ndarray, view_dir: np.ndarray,
                  th: Thresholds, view_id: int = 0) -> BinaryMask:
    """True where alpha is below tau_artifact and the normal points within
    tau_theta of the viewing ray."""
    alpha = np.asarray(alpha, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    view_dir = np.asarray(view_dir, dtype=np.float64)
    for name, vec in (("normal", normal), ("view_dir", view_dir)):
        norms = np.linalg.norm(vec, axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > 1e-3:
            raise ValueError(f"{name} must be unit length")
    angle = np.arccos(np.clip(np.sum(normal * view_dir, axis=-1), -1.0, 1.0))
    return BinaryMask((alpha < th.tau_artifact) & (angle < th.tau_theta),
                      grid_view=view_id)


@dataclass(frozen=True)
class ArcSequence:
    cameras: list
    renders: list       # RenderTargets per view
    masks: list         # BinaryMask per view
    contexts: list      # rasterizer caches, reused by the backward pass

    def __len__(self):
        return len(self.cameras)

    @property
    def images(self):
        return [r.color for r in self.renders]

    @property
    def mask_popcount(self) -> int:
        return int(sum(m.popcount for m in self.masks))


def render_arc(gset: GaussianSet, cam0: Camera, cam1: Camera, th: Thresholds,
               n: int = 16, background=(0.0, 0.0, 0.0)) -> ArcSequence:
    """Render n uniformly interpolated views and localize artifacts in each
    from the alpha map and the depth-derived normal map."""
    cameras = sample_arc(cam0, cam1, n)
    renders, masks, contexts = [], [], []
    for k, cam in enumerate(cameras):
        targets, ctx = rasterize_with_cache(gset, cam, background)
        normals = normals_from_depth(targets.depth, cam)
        masks.append(artifact_mask(targets.alpha, normals, cam.pixel_rays(),
                                   th, view_id=k))
        renders.append(targets)
        contexts.append(ctx)
    return ArcSequence(cameras=cameras, renders=renders, masks=masks,
                       contexts=contexts)


@dataclass(frozen=True)
class InpaintResult:
    frames: list  # (H,W,3) arrays, unmasked pixels bit-exact copies


def _mask_values(mask) -> np.ndarray:
    return mask.values if isinstance(mask, BinaryMask) else np.asarray(mask, bool)


def _upsample_bilinear(img: np.ndarray, H: int, W: int) -> np.ndarray:
    h, w = img.shape[:2]
    u = (np.arange(W) + 0.5) * (w / W) - 0.5
    v = (np.arange(H) + 0.5) * (h / H) - 0.5
    uu, vv = np.meshgrid(u, v)
    return bilinear_sample(img, uu, vv)


def push_pull_fill(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Fill masked pixels from unmasked neighbors via a weighted image
    pyramid: push averages down past the holes, pull interpolates the coarse
    values back into them. Unmasked pixels are returned untouched."""
    image = np.asarray(image, dtype=np.float64)
    mask = _mask_values(mask)
    if not mask.any():
        return image.copy()
    if mask.all():
        raise ValueError("push-pull fill needs at least one unmasked pixel")
    w = (~mask).astype(np.float64)
    v = image * w[..., None]
    levels = [(v, w)]
    while max(levels[-1][0].shape[:2]) > 1:
        v, w = levels[-1]
        H, W = v.shape[:2]
        ph, pw = (H + 1) // 2, (W + 1) // 2
        vp = np.zeros((ph * 2, pw * 2, 3))
        wp = np.zeros((ph * 2, pw * 2))
        vp[:H, :W] = v
        wp[:H, :W] = w
        v2 = vp.reshape(ph, 2, pw, 2, 3).sum(axis=(1, 3))
        w2 = wp.reshape(ph, 2, pw, 2).sum(axis=(1, 3))
        levels.append((v2, w2))

    vt, wt = levels[-1]
    filled = vt / np.maximum(wt, 1e-12)[..., None]
    for v, w in reversed(levels[:-1]):
        H, W = v.shape[:2]
        up = _upsample_bilinear(filled, H, W)
        known = w > 0
        filled = np.where(known[..., None], v / np.maximum(w, 1e-12)[..., None], up)
    out = image.copy()
    out[mask] = filled[mask]
    return out


class PushPullInpainter:
    """Default deterministic sequence in-painter: per-frame push-pull fill,
    then averaging of each masked pixel across the adjacent frames whose
    masks also cover it. Implements the same contract an external video
    in-painter would."""

    def __call__(self, frames, masks) -> InpaintResult:
        return inpaint_sequence(frames, masks)


def inpaint_sequence(frames, masks) -> InpaintResult:
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    mvals = [_mask_values(m) for m in masks]
    if len(frames) != len(mvals):
        raise ValueError("frame/mask count mismatch")
    n = len(frames)
    if n and all(m.all() for m in mvals):
        raise ValueError("every frame is fully masked; nothing to fill from")

    fills: list = [None] * n
    for i, (f, m) in enumerate(zip(frames, mvals)):
        if not m.all():
            fills[i] = push_pull_fill(f, m)
    for i in range(n):
        if fills[i] is None:  # fully masked frame: borrow the nearest filled one
            for d in range(1, n):
                for j in (i - d, i + d):
                    if 0 <= j < n and fills[j] is not None:
                        fills[i] = fills[j]
                        break
                if fills[i] is not None:
                    break

    out = []
    for i, (f, m) in enumerate(zip(frames, mvals)):
        frame = f.copy()
        if m.any():
            acc = np.zeros_like(f)
            cnt = np.zeros(f.shape[:2])
            for j in (i - 1, i, i + 1):
                if 0 <= j < n:
                    overlap = m & mvals[j]
                    acc[overlap] += fills[j][overlap]
                    cnt[overlap] += 1.0
            sel = m & (cnt > 0)
            frame[sel] = acc[sel] / cnt[sel][..., None]
        out.append(frame)
    return InpaintResult(frames=out)


class DirectoryInpainter:
    """File-contract adapter for external in-painters: stages the frames as
    ``frame_%02d.png`` plus one-bit ``mask_%02d.png``, invokes a command with
    the staging directory as its single argument, and collects
    ``out_%02d.png``. The staged round trip quantizes to 8 bits."""

    def __init__(self, staging_dir, command=None):
        self.staging_dir = Path(staging_dir)
        self.command = command

    def __call__(self, frames, masks) -> InpaintResult:
        from .scene_io import read_image_file, write_image_file, write_mask_file

        self.staging_dir.mkdir(parents=True, exist_ok=True)
        frames = [np.asarray(f, dtype=np.float64) for f in frames]
        for i, (f, m) in enumerate(zip(frames, masks)):
            write_image_file(self.staging_dir / f"frame_{i:02d}.png", f)
            write_mask_file(self.staging_dir / f"mask_{i:02d}.png", _mask_values(m))
        if self.command is None:
            run_inpaint_contract(self.staging_dir)
        elif callable(self.command):
            self.command(self.staging_dir)
        else:
            subprocess.run([*self.command, str(self.staging_dir)], check=True)
        out = []
        for i, (f, m) in enumerate(zip(frames, masks)):
            got = read_image_file(self.staging_dir / f"out_{i:02d}.png")
            frame = f.copy()  # contract: unmasked pixels stay bit-exact
            mv = _mask_values(m)
            frame[mv] = got[mv]
            out.append(frame)
        return InpaintResult(frames=out)


def run_inpaint_contract(staging_dir):
    """Reference implementation of the staging-directory contract using the
    push-pull surrogate; usable as the command of a DirectoryInpainter."""
    from .scene_io import read_image_file, read_mask_file, write_image_file

    staging_dir = Path(staging_dir)
    frames, masks = [], []
    i = 0
    while (staging_dir / f"frame_{i:02d}.png").exists():
        frames.append(read_image_file(staging_dir / f"frame_{i:02d}.png"))
        masks.append(read_mask_file(staging_dir / f"mask_{i:02d}.png"))
        i += 1
    result = inpaint_sequence(frames, masks)
    for k, frame in enumerate(result.frames):
        write_image_file(staging_dir / f"out_{k:02d}.png", frame)


def video_loss(renders, inpainted: InpaintResult, masks) -> float:
    """Masked per-pixel L1 between rendered and in-painted frames, summed
    over the sequence and normalized by the total masked pixel count."""
    return video_loss_grad(renders, inpainted, masks)[0]


def video_loss_grad(renders, inpainted: InpaintResult, masks):
    imgs = [r.color if isinstance(r, RenderTargets) else np.asarray(r, dtype=np.float64)
            for r in renders]
    mvals = [_mask_values(m) for m in masks]
    total_masked = int(sum(m.sum() for m in mvals))
    d_frames = [np.zeros_like(f) for f in imgs]
    if total_masked == 0:
        return 0.0, d_frames
    loss = 0.0
    for f, tgt, m, d in zip(imgs, inpainted.frames, mvals, d_frames):
        diff = f[m] - tgt[m]
        loss += float(np.sum(np.abs(diff))) / 3.0
        d[m] = np.sign(diff) / (3.0 * total_masked)
    return loss / total_masked, d_frames


def refine_step(state, scene: RgbdInput, cam1: Camera, th: Thresholds,
                lr_scale: float = 0.1, inpainter=None, n_views: int = 16):
    """One stage-two step: run the cycle branch at the given novel view,
    render the arc from the merged set, in-paint online, add the video loss,
    and apply one reduced-rate optimizer step."""
    from .train import _apply_step, cycle_gradients

    cfg = state.config
    if inpainter is None:
        inpainter = PushPullInpainter()

    def video_objective(merged0, cam0, cam1_):
        arc = render_arc(merged0, cam0, cam1_, th,
                         n=n_views, background=cfg.background)
        inpainted = inpainter(arc.images, arc.masks)
        video, d_frames = video_loss_grad(arc.renders, inpainted, arc.masks)
        extras = [(cam, RenderGradients(d_color=d,
                                        d_depth=np.zeros_like(r.depth),
                                        d_alpha=np.zeros_like(r.alpha)), ctx)
                  for cam, r, d, ctx in zip(arc.cameras, arc.renders, d_frames,
                                            arc.contexts)]
        return {"video": video, "arc_mask_popcount": arc.mask_popcount}, video, extras

    report, grads, _ = cycle_gradients(state, scene, cam1,
                                       extra_objective=video_objective)
    _apply_step(state, grads, report.weighted_total, lr_scale=lr_scale)
    return report
