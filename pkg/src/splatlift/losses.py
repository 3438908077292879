"""Training objectives: RGB-D reconstruction, cycle consistency, photometric
warping, a pooled-pyramid perceptual surrogate, total-variation depth
smoothing, and the branch-dependent total.

Each loss has a plain forward and a ``*_grad`` variant returning the loss
together with its partials w.r.t. the differentiable inputs (hand-derived;
checked against finite differences in the test suite).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import Camera, LossWeights
from .lift import RgbdInput, _pixel_dirs
from .raster import NEAR_PLANE, RenderGradients, RenderTargets

PYRAMID_FACTORS = (1, 2, 4, 8)


@dataclass(frozen=True)
class LossReport:
    """Named loss terms and their branch-weighted total."""

    branch: str
    terms: dict
    weighted_total: float

    def __getitem__(self, name: str) -> float:
        return self.terms[name]


@dataclass(frozen=True)
class StopGradBoundary:
    """Marks a rendered RGB-D pair as a gradient sink: nothing upstream of
    these tensors receives gradient unless ``blocked`` is lifted (tests
    only)."""

    image: np.ndarray
    depth: np.ndarray
    blocked: bool = True


def _l1_mean(a, b):
    return float(np.mean(np.abs(a - b))) if np.asarray(a).size else 0.0


def recon_loss(render: RenderTargets, target: RgbdInput, tau: float = 0.5) -> float:
    """Mean L1 on color plus mean L1 on depth over alpha-solid pixels."""
    return recon_loss_grad(render, target, tau)[0]


def recon_loss_grad(render: RenderTargets, target: RgbdInput, tau: float = 0.5):
    if render.color.shape != target.image.shape:
        raise ValueError("render and target dims differ")
    dc = render.color - target.image
    color_term = _l1_mean(render.color, target.image)
    d_color = np.sign(dc) / dc.size if dc.size else np.zeros_like(dc)

    solid = render.alpha > tau
    n_solid = int(np.count_nonzero(solid))
    d_depth = np.zeros_like(render.depth)
    depth_term = 0.0
    if n_solid:
        dd = render.depth - target.depth
        depth_term = float(np.mean(np.abs(dd[solid])))
        d_depth[solid] = np.sign(dd[solid]) / n_solid
    grad = RenderGradients(d_color=d_color, d_depth=d_depth,
                           d_alpha=np.zeros_like(render.alpha))
    return color_term + depth_term, grad


def cycle_loss(render: RenderTargets, target: RgbdInput, tau: float = 0.5) -> float:
    """Same formula as recon_loss; supervises the re-rendered cycle branch."""
    return recon_loss(render, target, tau)


def cycle_loss_grad(render: RenderTargets, target: RgbdInput, tau: float = 0.5):
    return recon_loss_grad(render, target, tau)


def warp_coordinates(depth0: np.ndarray, cam0: Camera, cam1: Camera):
    """Reproject every view-0 pixel into view 1 using its depth.
    Returns (u, v, in_bounds)."""
    pts_cam0 = depth0[..., None] * _pixel_dirs(cam0)
    pts_w = cam0.camera_to_world(pts_cam0.reshape(-1, 3))
    u, v, z = cam1.project_points(pts_w)
    H, W = depth0.shape
    inb = ((z > NEAR_PLANE)
           & (u >= 0) & (u <= cam1.width - 1)
           & (v >= 0) & (v <= cam1.height - 1))
    return u.reshape(H, W), v.reshape(H, W), inb.reshape(H, W)


def _bilinear_setup(u, v, width, height):
    uc = np.clip(u, 0.0, width - 1.0)
    vc = np.clip(v, 0.0, height - 1.0)
    u0 = np.minimum(np.floor(uc), width - 2).astype(np.int64) if width > 1 \
        else np.zeros_like(uc, dtype=np.int64)
    v0 = np.minimum(np.floor(vc), height - 2).astype(np.int64) if height > 1 \
        else np.zeros_like(vc, dtype=np.int64)
    fu = uc - u0 if width > 1 else np.zeros_like(uc)
    fv = vc - v0 if height > 1 else np.zeros_like(vc)
    return u0, v0, fu, fv


def bilinear_sample(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Border-clamped bilinear lookup of an (H,W,C) image at float coords."""
    H, W = img.shape[:2]
    u0, v0, fu, fv = _bilinear_setup(u, v, W, H)
    u1 = np.minimum(u0 + 1, W - 1)
    v1 = np.minimum(v0 + 1, H - 1)
    w00 = ((1 - fu) * (1 - fv))[..., None]
    w01 = (fu * (1 - fv))[..., None]
    w10 = ((1 - fu) * fv)[..., None]
    w11 = (fu * fv)[..., None]
    return (w00 * img[v0, u0] + w01 * img[v0, u1]
            + w10 * img[v1, u0] + w11 * img[v1, u1])


def photometric_loss(image0: np.ndarray, depth0: np.ndarray, image1: np.ndarray,
                     cam0: Camera, cam1: Camera) -> float:
    """L1 between view-0 pixels and their depth-warped samples of view 1,
    averaged over pixels whose reprojection lands inside view 1."""
    return photometric_loss_grad(image0, depth0, image1, cam0, cam1)[0]


def photometric_loss_grad(image0, depth0, image1, cam0: Camera, cam1: Camera):
    image0 = np.asarray(image0, dtype=np.float64)
    image1 = np.asarray(image1, dtype=np.float64)
    depth0 = np.asarray(depth0, dtype=np.float64)
    u, v, inb = warp_coordinates(depth0, cam0, cam1)
    d_image1 = np.zeros_like(image1)
    n_valid = int(np.count_nonzero(inb))
    if n_valid == 0:
        warnings.warn("photometric loss: every reprojection fell outside view 1")
        return 0.0, d_image1

    H1, W1 = image1.shape[:2]
    uu, vv = u[inb], v[inb]
    sample = bilinear_sample(image1, uu, vv)
    resid = image0[inb] - sample
    loss = float(np.mean(np.abs(resid)))

    d_sample = -np.sign(resid) / (n_valid * 3)
    u0, v0, fu, fv = _bilinear_setup(uu, vv, W1, H1)
    u1 = np.minimum(u0 + 1, W1 - 1)
    v1 = np.minimum(v0 + 1, H1 - 1)
    for wgt, rr, cc in [((1 - fu) * (1 - fv), v0, u0), (fu * (1 - fv), v0, u1),
                        ((1 - fu) * fv, v1, u0), (fu * fv, v1, u1)]:
        np.add.at(d_image1, (rr, cc), wgt[:, None] * d_sample)
    return loss, d_image1


def _pool(x: np.ndarray, f: int):
    """Average-pool by factor f with exact partial blocks at the edges."""
    if f == 1:
        return x, None
    H, W = x.shape[:2]
    ri = np.arange(0, H, f)
    ci = np.arange(0, W, f)
    s = np.add.reduceat(np.add.reduceat(x, ri, axis=0), ci, axis=1)
    bh = np.diff(np.append(ri, H))
    bw = np.diff(np.append(ci, W))
    counts = np.multiply.outer(bh, bw).astype(np.float64)
    return s / counts[..., None], (bh, bw, counts)


def _unpool(d_pooled: np.ndarray, meta, f: int, shape):
    if f == 1:
        return d_pooled
    bh, bw, counts = meta
    spread = d_pooled / counts[..., None]
    return np.repeat(np.repeat(spread, bh, axis=0), bw, axis=1)


class PooledPyramidSurrogate:
    """Deterministic stand-in for learned perceptual/CLIP feature distances:
    L1 between average-pool pyramids, summed over levels. Any object with the
    same call/grad signature can be swapped in."""

    def __init__(self, factors=PYRAMID_FACTORS):
        self.factors = tuple(factors)

    def __call__(self, a: np.ndarray, b: np.ndarray) -> float:
        return self.grad(a, b)[0]

    def grad(self, a: np.ndarray, b: np.ndarray):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ValueError("surrogate inputs must share a shape")
        total = 0.0
        d_a = np.zeros_like(a)
        for f in self.factors:
            pa, meta = _pool(a, f)
            pb, _ = _pool(b, f)
            diff = pa - pb
            total += float(np.mean(np.abs(diff)))
            d_a += _unpool(np.sign(diff) / diff.size, meta, f, a.shape)
        return total, d_a


pyramid_surrogate = PooledPyramidSurrogate()


def perceptual_surrogate(image1: np.ndarray, image0: np.ndarray) -> float:
    return pyramid_surrogate(image1, image0)


def perceptual_surrogate_grad(image1: np.ndarray, image0: np.ndarray):
    return pyramid_surrogate.grad(image1, image0)


def tv_loss(depth: np.ndarray) -> float:
    """Anisotropic total variation: mean |forward diff| along each axis."""
    return tv_loss_grad(depth)[0]


def tv_loss_grad(depth: np.ndarray):
    depth = np.asarray(depth, dtype=np.float64)
    d = np.zeros_like(depth)
    loss = 0.0
    du = depth[:, 1:] - depth[:, :-1]
    if du.size:
        loss += float(np.mean(np.abs(du)))
        s = np.sign(du) / du.size
        d[:, 1:] += s
        d[:, :-1] -= s
    dv = depth[1:, :] - depth[:-1, :]
    if dv.size:
        loss += float(np.mean(np.abs(dv)))
        s = np.sign(dv) / dv.size
        d[1:, :] += s
        d[:-1, :] -= s
    return loss, d


def total_loss(branch: str, terms: Mapping[str, float], w: LossWeights) -> float:
    """Branch-weighted composition of the named loss terms."""
    try:
        if branch == "canonical":
            return float(terms["recon"] + w.lambda_reg * terms["reg"])
        if branch == "novel":
            clip_term = terms.get("clip", terms["perp_surrogate"])
            novel = (terms["photo"]
                     + w.lambda_perp * terms["perp_surrogate"]
                     + w.lambda_clip * clip_term)
            return float(terms["cycle"] + w.lambda_reg * terms["reg"]
                         + w.lambda_novel * novel)
    except KeyError as e:
        raise ValueError(f"missing loss term {e} for branch {branch!r}") from e
    raise ValueError(f"unknown branch {branch!r}")


def make_report(branch: str, terms: Mapping[str, float], w: LossWeights) -> LossReport:
    terms = dict(terms)
    if branch == "novel":
        clip_term = terms.get("clip", terms.get("perp_surrogate", 0.0))
        terms.setdefault("novel", terms.get("photo", 0.0)
                         + w.lambda_perp * terms.get("perp_surrogate", 0.0)
                         + w.lambda_clip * clip_term)
    return LossReport(branch=branch, terms=terms,
                      weighted_total=total_loss(branch, terms, w))
