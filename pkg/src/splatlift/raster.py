"""Differentiable software rasterizer for anisotropic Gaussian splats.

Forward: perspective-project each splat (EWA: cov2d = J W Sigma W^T J^T plus
an isotropic 0.3 px^2 low-pass dilation), bucket pixel overlaps, composite
front-to-back with per-splat alpha capped at 0.99 and early termination once
transmittance drops below 1e-4. Depth is alpha-normalized expected depth.

Backward: hand-derived reverse-mode partials through the compositing
recurrence, the Gaussian falloff, the conic inversion, the projection
Jacobian, the covariance construction, and the activations, all the way to
the raw per-primitive parameters.

``rasterize_reference`` is an independent naive implementation kept as a
correctness witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .core import (
    Camera,
    GaussianSet,
    covariance_batch,
    normalize_quaternion_grad_batch,
    quaternion_rotation_grad_batch,
    quaternion_to_rotation_batch,
    sigmoid,
)

NEAR_PLANE = 0.01
COV2D_DILATION = 0.3
ALPHA_MAX = _kernels.ALPHA_MAX
T_MIN = _kernels.T_MIN
DEPTH_EPS = _kernels.DEPTH_EPS


@dataclass(frozen=True)
class ProjectedGaussian:
    mean2d: np.ndarray        # (2,) pixels
    cov2d: np.ndarray         # (2,2) pixels^2, after low-pass dilation
    camera_depth: float
    opacity: float
    color: np.ndarray


@dataclass(frozen=True)
class RenderTargets:
    color: np.ndarray   # (H,W,3)
    depth: np.ndarray   # (H,W)
    alpha: np.ndarray   # (H,W)


@dataclass(frozen=True)
class RenderGradients:
    """Upstream partials of a scalar loss w.r.t. one render's outputs."""

    d_color: np.ndarray
    d_depth: np.ndarray
    d_alpha: np.ndarray

    @staticmethod
    def zeros(height: int, width: int) -> "RenderGradients":
        return RenderGradients(
            d_color=np.zeros((height, width, 3)),
            d_depth=np.zeros((height, width)),
            d_alpha=np.zeros((height, width)),
        )


@dataclass
class GradientBuffer:
    """Partials of a scalar loss w.r.t. every primitive's raw parameters."""

    d_position: np.ndarray
    d_color: np.ndarray
    d_opacity_raw: np.ndarray
    d_log_scale: np.ndarray
    d_rotation: np.ndarray

    @staticmethod
    def zeros(n: int) -> "GradientBuffer":
        return GradientBuffer(
            d_position=np.zeros((n, 3)),
            d_color=np.zeros((n, 3)),
            d_opacity_raw=np.zeros(n),
            d_log_scale=np.zeros((n, 3)),
            d_rotation=np.zeros((n, 4)),
        )

    def add_(self, other: "GradientBuffer") -> "GradientBuffer":
        self.d_position += other.d_position
        self.d_color += other.d_color
        self.d_opacity_raw += other.d_opacity_raw
        self.d_log_scale += other.d_log_scale
        self.d_rotation += other.d_rotation
        return self


@dataclass
class _RenderContext:
    """Everything the backward pass reuses from a forward render."""

    index: np.ndarray          # original primitive index per surviving splat
    xc: np.ndarray             # (n,3) camera-frame positions
    mx: np.ndarray
    my: np.ndarray
    cov_a: np.ndarray
    cov_b: np.ndarray
    cov_c: np.ndarray
    conic_a: np.ndarray
    conic_b: np.ndarray
    conic_c: np.ndarray
    opa: np.ndarray
    col: np.ndarray
    sigma_rot: np.ndarray      # (n,3,3) unit-quaternion rotation matrices
    q_unit: np.ndarray
    scale_sq: np.ndarray       # (n,3) exp(2*log_scale)
    starts: np.ndarray
    counts: np.ndarray
    pair_splat: np.ndarray
    pair_alpha: np.ndarray
    pair_T: np.ndarray
    out_alpha: np.ndarray      # flat (H*W,)
    out_draw: np.ndarray


def _project_arrays(gset: GaussianSet, cam: Camera):
    """Cull, depth-sort, and project to screen space. Returns None if no
    splat survives."""
    if len(gset) == 0:
        return None
    xc = cam.world_to_camera(gset.positions)
    valid = np.flatnonzero(xc[:, 2] > NEAR_PLANE)
    if valid.size == 0:
        return None
    order = valid[np.argsort(xc[valid, 2], kind="stable")]
    xc = xc[order]
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]

    sigma = covariance_batch(gset.log_scales[order], gset.rotations[order])
    W = cam.rotation
    m = np.einsum("ij,njk,lk->nil", W, sigma, W)  # camera-frame 3D covariance

    fx, fy = cam.fx, cam.fy
    j = np.zeros((order.size, 2, 3))
    j[:, 0, 0] = fx / z
    j[:, 0, 2] = -fx * x / z**2
    j[:, 1, 1] = fy / z
    j[:, 1, 2] = -fy * y / z**2
    c2 = np.einsum("nab,nbc,ndc->nad", j, m, j)
    a = c2[:, 0, 0] + COV2D_DILATION
    b = c2[:, 0, 1]
    c = c2[:, 1, 1] + COV2D_DILATION
    det = a * c - b * b
    assert np.all(det > 0), "dilated cov2d must be positive definite"

    q_unit = gset.rotations[order]
    q_unit = q_unit / np.linalg.norm(q_unit, axis=1, keepdims=True)
    return {
        "index": order,
        "xc": xc,
        "mx": fx * x / z + cam.cx,
        "my": fy * y / z + cam.cy,
        "cov": (a, b, c),
        "conic": (c / det, -b / det, a / det),
        "opa": sigmoid(gset.opacity_raw[order]),
        "col": np.ascontiguousarray(gset.colors[order]),
        "sigma_rot": quaternion_to_rotation_batch(q_unit),
        "q_unit": q_unit,
        "scale_sq": np.exp(2.0 * gset.log_scales[order]),
    }


def project(gset: GaussianSet, cam: Camera) -> list[ProjectedGaussian]:
    """Screen-space view of every surviving (in-front) primitive, in
    front-to-back depth order."""
    p = _project_arrays(gset, cam)
    if p is None:
        return []
    a, b, c = p["cov"]
    out = []
    for i in range(p["index"].size):
        out.append(ProjectedGaussian(
            mean2d=np.array([p["mx"][i], p["my"][i]]),
            cov2d=np.array([[a[i], b[i]], [b[i], c[i]]]),
            camera_depth=float(p["xc"][i, 2]),
            opacity=float(p["opa"][i]),
            color=p["col"][i].copy(),
        ))
    return out


def _build_pairs(p, cam: Camera):
    a, b, c = p["cov"]
    eigmax = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    radius = np.sqrt(2.0 * _kernels.E_CUT * eigmax) + 1.0
    x0 = np.maximum(np.ceil(p["mx"] - radius), 0).astype(np.int64)
    x1 = np.minimum(np.floor(p["mx"] + radius), cam.width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(p["my"] - radius), 0).astype(np.int64)
    y1 = np.minimum(np.floor(p["my"] + radius), cam.height - 1).astype(np.int64)
    npix = np.maximum(x1 - x0 + 1, 0) * np.maximum(y1 - y0 + 1, 0)
    offsets = np.zeros(npix.size + 1, dtype=np.int64)
    np.cumsum(npix, out=offsets[1:])
    total = int(offsets[-1])
    hw = cam.height * cam.width
    counts_pix = np.zeros(hw, dtype=np.int64)
    if total == 0:
        return np.zeros(hw, dtype=np.int64), counts_pix, np.zeros(0, np.int32)
    pair_splat = np.empty(total, dtype=np.int32)
    pair_pix = np.empty(total, dtype=np.int64)
    _kernels.fill_pairs(x0, x1, y0, y1, offsets, cam.width, pair_splat, pair_pix)
    counts_pix = np.bincount(pair_pix, minlength=hw)
    starts = np.zeros(hw, dtype=np.int64)
    np.cumsum(counts_pix[:-1], out=starts[1:])
    sorted_splat = np.empty(total, dtype=np.int32)
    _kernels.bucket_pairs_by_pixel(pair_splat, pair_pix, starts, sorted_splat)
    return starts, counts_pix, sorted_splat


def _empty_targets(cam: Camera, background: np.ndarray) -> RenderTargets:
    color = np.broadcast_to(background, (cam.height, cam.width, 3)).copy()
    return RenderTargets(color=color,
                         depth=np.zeros((cam.height, cam.width)),
                         alpha=np.zeros((cam.height, cam.width)))


def _forward(gset: GaussianSet, cam: Camera, background):
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    p = _project_arrays(gset, cam)
    if p is None:
        return _empty_targets(cam, bg), None
    starts, counts, pair_splat = _build_pairs(p, cam)
    hw = cam.height * cam.width
    out_color = np.empty((hw, 3))
    out_alpha = np.empty(hw)
    out_draw = np.empty(hw)
    pair_alpha = np.zeros(pair_splat.size)
    pair_T = np.zeros(pair_splat.size)
    ca, cb, cc = p["conic"]
    _kernels.composite_forward(
        starts, counts, pair_splat, cam.width,
        p["mx"], p["my"], ca, cb, cc, p["opa"], p["col"], p["xc"][:, 2], bg,
        out_color, out_alpha, out_draw, pair_alpha, pair_T)
    targets = RenderTargets(
        color=out_color.reshape(cam.height, cam.width, 3),
        depth=(out_draw / (out_alpha + DEPTH_EPS)).reshape(cam.height, cam.width),
        alpha=out_alpha.reshape(cam.height, cam.width),
    )
    a, b, c = p["cov"]
    ctx = _RenderContext(
        index=p["index"], xc=p["xc"], mx=p["mx"], my=p["my"],
        cov_a=a, cov_b=b, cov_c=c, conic_a=ca, conic_b=cb, conic_c=cc,
        opa=p["opa"], col=p["col"], sigma_rot=p["sigma_rot"],
        q_unit=p["q_unit"], scale_sq=p["scale_sq"],
        starts=starts, counts=counts, pair_splat=pair_splat,
        pair_alpha=pair_alpha, pair_T=pair_T,
        out_alpha=out_alpha, out_draw=out_draw,
    )
    return targets, ctx


def rasterize(gset: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0)) -> RenderTargets:
    targets, _ = _forward(gset, cam, background)
    return targets


def rasterize_with_cache(gset: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0)):
    """Render and keep the intermediate state a later backward pass can reuse."""
    return _forward(gset, cam, background)


def rasterize_backward(gset: GaussianSet, cam: Camera, background,
                       upstream: RenderGradients,
                       ctx: _RenderContext | None = None) -> GradientBuffer:
    """Analytic partials of a scalar loss (given its per-pixel upstream
    gradients) w.r.t. every primitive's raw parameters."""
    shape = (cam.height, cam.width)
    if (upstream.d_color.shape != shape + (3,)
            or upstream.d_depth.shape != shape
            or upstream.d_alpha.shape != shape):
        raise ValueError("upstream gradient dims do not match the camera")
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    grads = GradientBuffer.zeros(len(gset))
    if ctx is None:
        _, ctx = _forward(gset, cam, bg)
    if ctx is None:
        return grads

    n_pairs = ctx.pair_splat.size
    pg = [np.zeros(n_pairs) for _ in range(10)]
    _kernels.composite_backward(
        ctx.starts, ctx.counts, ctx.pair_splat, cam.width,
        ctx.mx, ctx.my, ctx.conic_a, ctx.conic_b, ctx.conic_c,
        ctx.opa, ctx.col, ctx.xc[:, 2],
        ctx.out_alpha, ctx.out_draw, ctx.pair_alpha, ctx.pair_T,
        np.ascontiguousarray(upstream.d_color.reshape(-1, 3)),
        np.ascontiguousarray(upstream.d_alpha.reshape(-1)),
        np.ascontiguousarray(upstream.d_depth.reshape(-1)),
        bg, *pg)

    n = ctx.index.size
    acc = [np.bincount(ctx.pair_splat, weights=g, minlength=n) for g in pg]
    g_col = np.stack(acc[0:3], axis=1)
    g_z = acc[3]
    g_mx, g_my = acc[4], acc[5]
    g_lam = np.empty((n, 2, 2))
    g_lam[:, 0, 0] = acc[6]
    g_lam[:, 0, 1] = acc[7]
    g_lam[:, 1, 0] = acc[7]
    g_lam[:, 1, 1] = acc[8]
    g_opa = acc[9]

    lam = np.empty((n, 2, 2))
    lam[:, 0, 0] = ctx.conic_a
    lam[:, 0, 1] = ctx.conic_b
    lam[:, 1, 0] = ctx.conic_b
    lam[:, 1, 1] = ctx.conic_c
    d_c2 = -np.einsum("nij,njk,nkl->nil", lam, g_lam, lam)

    x, y, z = ctx.xc[:, 0], ctx.xc[:, 1], ctx.xc[:, 2]
    fx, fy = cam.fx, cam.fy
    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = fx / z
    j[:, 0, 2] = -fx * x / z**2
    j[:, 1, 1] = fy / z
    j[:, 1, 2] = -fy * y / z**2

    d_m = np.einsum("nba,nbc,ncd->nad", j, d_c2, j)
    m = np.einsum("ij,njk,lk->nil", cam.rotation,
                  np.einsum("nij,nj,nkj->nik", ctx.sigma_rot, ctx.scale_sq, ctx.sigma_rot),
                  cam.rotation)
    d_j = 2.0 * np.einsum("nab,nbc,ncd->nad", d_c2, j, m)
    d_sigma = np.einsum("ji,njk,kl->nil", cam.rotation, d_m, cam.rotation)

    d_rot = 2.0 * np.einsum("nij,njk->nik", d_sigma, ctx.sigma_rot) * ctx.scale_sq[:, None, :]
    d_diag = np.einsum("nji,njk,nki->ni", ctx.sigma_rot, d_sigma, ctx.sigma_rot)
    d_log_scale = d_diag * 2.0 * ctx.scale_sq
    d_q_unit = quaternion_rotation_grad_batch(ctx.q_unit, d_rot)
    d_q = normalize_quaternion_grad_batch(gset.rotations[ctx.index], d_q_unit)

    inv_z2 = 1.0 / z**2
    d_xc = np.zeros((n, 3))
    d_xc[:, 0] = d_j[:, 0, 2] * (-fx * inv_z2) + g_mx * fx / z
    d_xc[:, 1] = d_j[:, 1, 2] * (-fy * inv_z2) + g_my * fy / z
    d_xc[:, 2] = (d_j[:, 0, 0] * (-fx * inv_z2)
                  + d_j[:, 1, 1] * (-fy * inv_z2)
                  + d_j[:, 0, 2] * (2.0 * fx * x / z**3)
                  + d_j[:, 1, 2] * (2.0 * fy * y / z**3)
                  + g_mx * (-fx * x * inv_z2)
                  + g_my * (-fy * y * inv_z2)
                  + g_z)

    grads.d_position[ctx.index] = d_xc @ cam.rotation
    grads.d_color[ctx.index] = g_col
    grads.d_opacity_raw[ctx.index] = g_opa * ctx.opa * (1.0 - ctx.opa)
    grads.d_log_scale[ctx.index] = d_log_scale
    grads.d_rotation[ctx.index] = d_q
    return grads


def rasterize_reference(gset: GaussianSet, cam: Camera,
                        background=(0.0, 0.0, 0.0)) -> RenderTargets:
    """Naive per-pixel global-sort compositor (no bbox culling, no pixel
    bucketing); the oracle the production path must match to 1e-5."""
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    H, W = cam.height, cam.width
    color = np.broadcast_to(bg, (H, W, 3)).copy()
    depth = np.zeros((H, W))
    alpha = np.zeros((H, W))
    if len(gset) == 0:
        return RenderTargets(color=color, depth=depth, alpha=alpha)
    xc = cam.world_to_camera(gset.positions)
    keep = xc[:, 2] > NEAR_PLANE
    if not np.any(keep):
        return RenderTargets(color=color, depth=depth, alpha=alpha)
    xc = xc[keep]
    order = np.argsort(xc[:, 2], kind="stable")
    xc = xc[order]
    x, y, z = xc[:, 0], xc[:, 1], xc[:, 2]
    mx = cam.fx * x / z + cam.cx
    my = cam.fy * y / z + cam.cy
    sigma = covariance_batch(gset.log_scales[keep][order], gset.rotations[keep][order])
    m = np.einsum("ij,njk,lk->nil", cam.rotation, sigma, cam.rotation)
    j = np.zeros((order.size, 2, 3))
    j[:, 0, 0] = cam.fx / z
    j[:, 0, 2] = -cam.fx * x / z**2
    j[:, 1, 1] = cam.fy / z
    j[:, 1, 2] = -cam.fy * y / z**2
    c2 = np.einsum("nab,nbc,ndc->nad", j, m, j)
    a = c2[:, 0, 0] + COV2D_DILATION
    b = c2[:, 0, 1]
    c = c2[:, 1, 1] + COV2D_DILATION
    det = a * c - b * b
    la, lb, lc = c / det, -b / det, a / det
    opa = sigmoid(gset.opacity_raw[keep][order])
    col = gset.colors[keep][order]

    for r in range(H):
        for u in range(W):
            dx = u - mx
            dy = r - my
            e = 0.5 * (la * dx**2 + lc * dy**2) + lb * dx * dy
            al = np.where(e <= _kernels.E_CUT,
                          np.minimum(opa * np.exp(-e), ALPHA_MAX), 0.0)
            T = np.empty_like(al)
            T[0] = 1.0
            np.cumprod(1.0 - al[:-1], out=T[1:])
            live = T >= T_MIN
            w = np.where(live, al * T, 0.0)
            A = w.sum()
            alpha[r, u] = A
            color[r, u] = w @ col + (1.0 - A) * bg
            depth[r, u] = (w @ z) / (A + DEPTH_EPS)
    return RenderTargets(color=color, depth=depth, alpha=alpha)


def normals_from_depth(depth: np.ndarray, cam: Camera) -> np.ndarray:
    """Per-pixel unit normals of the camera-space surface spanned by the
    depth map. Central differences inside, one-sided at borders; degenerate
    pixels fall back to the view direction."""
    depth = np.asarray(depth, dtype=np.float64)
    H, W = depth.shape
    c, r = np.meshgrid(np.arange(W), np.arange(H))
    pts = np.stack([depth * (c - cam.cx) / cam.fx,
                    depth * (r - cam.cy) / cam.fy,
                    depth], axis=-1)
    tu = np.gradient(pts, axis=1) if W > 1 else np.zeros_like(pts)
    tv = np.gradient(pts, axis=0) if H > 1 else np.zeros_like(pts)
    n = np.cross(tv, tu)
    norm = np.linalg.norm(n, axis=-1)
    rays = cam.pixel_rays()
    bad = norm < 1e-12
    n[bad] = rays[bad]
    n[~bad] /= norm[~bad][..., None]
    return n
