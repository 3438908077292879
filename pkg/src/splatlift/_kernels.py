"""Numba kernels for the tile/pixel-bucketed splat compositor.

The pair list maps every (pixel, splat) overlap, bucketed by pixel with
splats in front-to-back depth order inside each bucket. Kernels parallelize
over pixels; each pixel owns disjoint output slots, so results are
deterministic regardless of thread count. Per-splat gradient reduction
happens outside via np.bincount (fixed order).
"""

import numpy as np
from numba import njit, prange

# Pairs with Gaussian exponent above E_CUT contribute < 1e-12 weight and are
# skipped; the bbox radius is derived from the same bound so the forward and
# backward passes see an identical (continuous to ~1e-12) function.
E_CUT = 27.631021115928547  # -ln(1e-12)
ALPHA_MAX = 0.99
T_MIN = 1e-4
DEPTH_EPS = 1e-8


@njit(cache=True, parallel=True)
def fill_pairs(x0, x1, y0, y1, offsets, width, pair_splat, pair_pix):
    n = x0.shape[0]
    for s in prange(n):
        o = offsets[s]
        for yy in range(y0[s], y1[s] + 1):
            base = yy * width
            for xx in range(x0[s], x1[s] + 1):
                pair_splat[o] = s
                pair_pix[o] = base + xx
                o += 1


@njit(cache=True)
def bucket_pairs_by_pixel(pair_splat, pair_pix, starts, out_splat):
    cursor = starts.copy()
    for i in range(pair_splat.shape[0]):
        p = pair_pix[i]
        out_splat[cursor[p]] = pair_splat[i]
        cursor[p] += 1


@njit(cache=True, parallel=True)
def composite_forward(starts, counts, pair_splat, width,
                      mx, my, ca, cb, cc, opa, col, z, bg,
                      out_color, out_alpha, out_draw, pair_alpha, pair_T):
    n_pix = starts.shape[0]
    for p in prange(n_pix):
        px = np.float64(p % width)
        py = np.float64(p // width)
        s = starts[p]
        T = 1.0
        c0 = 0.0; c1 = 0.0; c2 = 0.0
        A = 0.0
        D = 0.0
        for k in range(counts[p]):
            i = s + k
            if T < T_MIN:
                break
            j = pair_splat[i]
            dx = px - mx[j]
            dy = py - my[j]
            e = 0.5 * (ca[j] * dx * dx + cc[j] * dy * dy) + cb[j] * dx * dy
            if e > E_CUT:
                continue
            al = opa[j] * np.exp(-e)
            if al > ALPHA_MAX:
                al = ALPHA_MAX
            pair_alpha[i] = al
            pair_T[i] = T
            w = al * T
            c0 += w * col[j, 0]
            c1 += w * col[j, 1]
            c2 += w * col[j, 2]
            A += w
            D += w * z[j]
            T *= 1.0 - al
        out_color[p, 0] = c0 + (1.0 - A) * bg[0]
        out_color[p, 1] = c1 + (1.0 - A) * bg[1]
        out_color[p, 2] = c2 + (1.0 - A) * bg[2]
        out_alpha[p] = A
        out_draw[p] = D


@njit(cache=True, parallel=True)
def composite_backward(starts, counts, pair_splat, width,
                       mx, my, ca, cb, cc, opa, col, z,
                       out_alpha, out_draw, pair_alpha, pair_T,
                       d_color, d_alpha, d_depth, bg,
                       g_c0, g_c1, g_c2, g_z, g_mx, g_my,
                       g_p00, g_p01, g_p11, g_o):
    n_pix = starts.shape[0]
    for p in prange(n_pix):
        cnt = counts[p]
        if cnt == 0:
            continue
        px = np.float64(p % width)
        py = np.float64(p // width)
        s = starts[p]
        A = out_alpha[p]
        denom = A + DEPTH_EPS
        dc0 = d_color[p, 0]
        dc1 = d_color[p, 1]
        dc2 = d_color[p, 2]
        # alpha also feeds the background term and the depth normalization
        dAx = (d_alpha[p]
               - (dc0 * bg[0] + dc1 * bg[1] + dc2 * bg[2])
               - d_depth[p] * out_draw[p] / (denom * denom))
        dDraw = d_depth[p] / denom
        S = 0.0
        for k in range(cnt - 1, -1, -1):
            i = s + k
            T = pair_T[i]
            if T == 0.0:
                continue
            j = pair_splat[i]
            al = pair_alpha[i]
            w = al * T
            dLdw = (dc0 * col[j, 0] + dc1 * col[j, 1] + dc2 * col[j, 2]
                    + dAx + dDraw * z[j])
            dal = dLdw * T - S / (1.0 - al)
            S += dLdw * w
            g_c0[i] = dc0 * w
            g_c1[i] = dc1 * w
            g_c2[i] = dc2 * w
            g_z[i] = dDraw * w
            if al >= ALPHA_MAX:
                continue  # clamped: no gradient into the falloff or opacity
            g = al / opa[j]
            g_o[i] = dal * g
            de = -dal * al
            dx = px - mx[j]
            dy = py - my[j]
            ddx = de * (ca[j] * dx + cb[j] * dy)
            ddy = de * (cb[j] * dx + cc[j] * dy)
            g_mx[i] = -ddx
            g_my[i] = -ddy
            g_p00[i] = de * 0.5 * dx * dx
            g_p01[i] = de * 0.5 * dx * dy
            g_p11[i] = de * 0.5 * dy * dy


def warm_up():
    """Compile (or load from cache) every kernel on a tiny scene."""
    starts = np.zeros(1, dtype=np.int64)
    counts = np.ones(1, dtype=np.int64)
    ps = np.zeros(1, dtype=np.int32)
    one = np.ones(1)
    col = np.ones((1, 3))
    bg = np.zeros(3)
    oc = np.zeros((1, 3)); oa = np.zeros(1); od = np.zeros(1)
    pa = np.zeros(1); pt = np.zeros(1)
    fill_pairs(np.zeros(1, np.int64), np.zeros(1, np.int64),
               np.zeros(1, np.int64), np.zeros(1, np.int64),
               np.zeros(2, np.int64), 1, np.zeros(1, np.int32),
               np.zeros(1, np.int64))
    bucket_pairs_by_pixel(ps, np.zeros(1, np.int64), starts.copy(), ps.copy())
    composite_forward(starts, counts, ps, 1, one * 0, one * 0, one, one * 0,
                      one, one * 0.5, col, one, bg, oc, oa, od, pa, pt)
    grads = [np.zeros(1) for _ in range(10)]
    composite_backward(starts, counts, ps, 1, one * 0, one * 0, one, one * 0,
                       one, one * 0.5, col, one, oa, od, pa, pt,
                       oc, oa.copy(), od.copy(), bg, *grads)
