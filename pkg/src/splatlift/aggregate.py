"""Complementary aggregation of pixel-aligned Gaussian sets.

Two sets lifted from different views of the same scene each leave holes
(pixels with low accumulated alpha) in the other's view. Masks built from
the four cross-rendered alpha maps pick, per hole pixel of the recipient,
the donor's pixel-aligned primitive; concatenation merges them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Camera, GaussianSet
from .lift import RgbdInput, lift_pixel_aligned, rgbd_from_render
from .raster import rasterize


@dataclass(frozen=True)
class BinaryMask:
    values: np.ndarray  # (H,W) bool
    grid_view: int      # view id whose pixel grid the mask lives on

    def __post_init__(self):
        v = np.asarray(self.values, dtype=bool)
        if v.ndim != 2:
            raise ValueError("mask must be 2-D")
        object.__setattr__(self, "values", v)

    @property
    def popcount(self) -> int:
        return int(np.count_nonzero(self.values))


@dataclass(frozen=True)
class AggregationOutcome:
    merged_set: GaussianSet
    donor_count: int
    recipient_hole_mask: BinaryMask   # where the recipient set was a hole
    donor_mask: BinaryMask            # the mask used to select donors


def binarize_alpha(alpha: np.ndarray, tau: float) -> np.ndarray:
    """True marks invisible/hole pixels: alpha strictly below tau."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if np.any(alpha < 0) or np.any(alpha > 1):
        raise ValueError("alpha map must lie in [0,1]")
    return alpha < tau


def complementary_masks(a00, a01, a10, a11, tau: float,
                        view0: int = 0, view1: int = 1):
    """Masks of pixels where one set has a hole and the other is solid.

    a_ij is the alpha map of set i rendered in view j. Returns
    (m_1to0, m_0to1): m_1to0 lives on view1's grid and marks where set 0 is
    a hole but set 1 is solid (set 1 can donate into set 0); m_0to1 lives on
    view0's grid, roles swapped.
    """
    a00, a01, a10, a11 = (np.asarray(a) for a in (a00, a01, a10, a11))
    if a01.shape != a11.shape or a10.shape != a00.shape:
        raise ValueError("alpha maps rendered into the same view must share a grid")
    m_1to0 = binarize_alpha(a01, tau) & ~binarize_alpha(a11, tau)
    m_0to1 = binarize_alpha(a10, tau) & ~binarize_alpha(a00, tau)
    return BinaryMask(m_1to0, grid_view=view1), BinaryMask(m_0to1, grid_view=view0)


def _require_pixel_aligned(gset: GaussianSet, mask: BinaryMask):
    H, W = mask.values.shape
    if len(gset) != H * W:
        raise ValueError("set is not pixel-aligned to the mask grid")
    if len(gset) and not np.all(gset.provenance[:, 0] == mask.grid_view):
        raise ValueError("set provenance view does not match the mask grid view")
    lin = gset.provenance[:, 1] * W + gset.provenance[:, 2]
    if not np.array_equal(np.sort(lin), np.arange(H * W)):
        raise ValueError("set does not cover the mask grid exactly once per pixel")


def select_primitives(gset: GaussianSet, mask: BinaryMask) -> GaussianSet:
    """Keep exactly the primitives whose provenance pixel is true, in order."""
    _require_pixel_aligned(gset, mask)
    keep = mask.values[gset.provenance[:, 1], gset.provenance[:, 2]]
    return gset.take(np.flatnonzero(keep))


def concat(a: GaussianSet, b: GaussianSet) -> GaussianSet:
    """Primitives of a followed by b; nothing re-activated or mutated."""
    return GaussianSet(
        positions=np.concatenate([a.positions, b.positions]),
        colors=np.concatenate([a.colors, b.colors]),
        opacity_raw=np.concatenate([a.opacity_raw, b.opacity_raw]),
        log_scales=np.concatenate([a.log_scales, b.log_scales]),
        rotations=np.concatenate([a.rotations, b.rotations]),
        provenance=np.concatenate([a.provenance, b.provenance]),
    )


def render_alpha(gset: GaussianSet, cam: Camera) -> np.ndarray:
    return rasterize(gset, cam).alpha


def aggregate_pair(gs0: GaussianSet, gs1: GaussianSet,
                   cam0: Camera, cam1: Camera, tau: float,
                   view0: int = 0, view1: int = 1):
    """Cross-render the four alpha maps, build the complementary masks, and
    merge each set with the other's donors. Returns the two outcomes
    (merged-from-0's-perspective, merged-from-1's-perspective)."""
    a00 = render_alpha(gs0, cam0)
    a01 = render_alpha(gs0, cam1)
    a10 = render_alpha(gs1, cam0)
    a11 = render_alpha(gs1, cam1)
    m_1to0, m_0to1 = complementary_masks(a00, a01, a10, a11, tau,
                                         view0=view0, view1=view1)
    donors_for_0 = select_primitives(gs1, m_1to0) if len(gs1) else GaussianSet.empty()
    donors_for_1 = select_primitives(gs0, m_0to1) if len(gs0) else GaussianSet.empty()
    out0 = AggregationOutcome(
        merged_set=concat(gs0, donors_for_0),
        donor_count=len(donors_for_0),
        recipient_hole_mask=BinaryMask(binarize_alpha(a01, tau), grid_view=view1),
        donor_mask=m_1to0,
    )
    out1 = AggregationOutcome(
        merged_set=concat(gs1, donors_for_1),
        donor_count=len(donors_for_1),
        recipient_hole_mask=BinaryMask(binarize_alpha(a10, tau), grid_view=view0),
        donor_mask=m_0to1,
    )
    return out0, out1


def inference_aggregate(rgbd: RgbdInput, predictor, novel_cam: Camera,
                        tau: float = 0.5) -> GaussianSet:
    """Inference-time two-view aggregation: lift the input, re-lift the
    novel-view render through the same predictor, and merge the donors the
    novel-view set contributes into the input's set."""
    gs0 = lift_pixel_aligned(rgbd, predictor.predict(rgbd))
    if len(gs0) == 0:
        return gs0
    novel_render = rasterize(gs0, novel_cam)
    novel_rgbd = rgbd_from_render(novel_render, novel_cam,
                                  view_id=rgbd.view_id + 1,
                                  key=f"{rgbd.key}:novel")
    gs1 = lift_pixel_aligned(novel_rgbd, predictor.predict(novel_rgbd))
    out0, _ = aggregate_pair(gs0, gs1, rgbd.camera, novel_cam, tau,
                             view0=rgbd.view_id, view1=novel_rgbd.view_id)
    return out0.merged_set
