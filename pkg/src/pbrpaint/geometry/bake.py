"""UV baking, known-region projection and pull-push hole filling."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..material import MID_GRAY, MaterialSet
from .camera import Camera
from .mesh import Mesh
from .raster import GBuffer, UVMaps, rasterize_gbuffer, rasterize_uv, sample_bilinear, uv_to_pixel

# a texel is visible when its depth is within this many pixel footprints of the buffer
DEPTH_TOL_PIXELS = 1.5


@dataclass
class BakeState:
    materials: MaterialSet  # UV-space accumulator
    weight: np.ndarray  # (R, R) best view-angle cosine so far (0 = never written)
    uvmaps: UVMaps

    @property
    def known(self) -> np.ndarray:
        return self.weight > 0

    @property
    def occupancy(self) -> np.ndarray:
        return self.uvmaps.occupancy

    @property
    def resolution(self) -> int:
        return self.uvmaps.resolution

    def known_fraction(self) -> float:
        occ = self.occupancy.sum()
        return float((self.known & self.occupancy).sum() / occ) if occ else 0.0

    def hole_mask(self) -> np.ndarray:
        return self.occupancy & ~self.known

    def copy(self) -> "BakeState":
        return BakeState(self.materials.copy(), self.weight.copy(), self.uvmaps)

    @classmethod
    def empty(cls, mesh: Mesh, uv_res: int, uvmaps: Optional[UVMaps] = None) -> "BakeState":
        uvmaps = uvmaps if uvmaps is not None else rasterize_uv(mesh, uv_res)
        R = uvmaps.resolution
        return cls(MaterialSet.filled(R, R, 0.0), np.zeros((R, R), np.float32), uvmaps)


def _texel_visibility(bake: BakeState, gbuf: GBuffer):
    """Project occupied texels into the view and depth-test them against the G-buffer."""
    cam = gbuf.camera
    occ = bake.occupancy
    pos = bake.uvmaps.position[occ].astype(np.float64)
    nrm = bake.uvmaps.normal[occ].astype(np.float64)
    xy, depth = cam.project(pos)
    H, W = gbuf.shape
    view = cam.position[None] - pos
    view /= np.maximum(np.linalg.norm(view, axis=1, keepdims=True), 1e-12)
    w = np.maximum(0.0, (nrm * view).sum(1))
    inside = (xy[:, 0] >= 0) & (xy[:, 0] < W) & (xy[:, 1] >= 0) & (xy[:, 1] < H) & (depth > 0)
    # nearest covered depth in the 2x2 bilinear neighbourhood
    x0 = np.clip(np.floor(xy[:, 0] - 0.5).astype(np.int64), 0, W - 1)
    y0 = np.clip(np.floor(xy[:, 1] - 0.5).astype(np.int64), 0, H - 1)
    dmin = np.full(len(pos), np.inf)
    for dy in (0, 1):
        for dx in (0, 1):
            yi, xi = np.clip(y0 + dy, 0, H - 1), np.clip(x0 + dx, 0, W - 1)
            dmin = np.minimum(dmin, np.where(gbuf.coverage[yi, xi], gbuf.depth[yi, xi], np.inf))
    tol = DEPTH_TOL_PIXELS * cam.pixel_size_at(depth) / np.maximum(w, 0.25)
    visible = inside & np.isfinite(dmin) & (depth <= dmin + tol) & (w > 0)
    return xy, w, visible


def bake_view_to_uv(view_materials: MaterialSet, gbuf: GBuffer, bake: BakeState) -> BakeState:
    """Winner-take-all bake of one view into the atlas.

    Every occupied texel is projected into the view; if it is visible, its
    weight is the cosine between its normal and the direction to the
    camera, and it takes the view's (coverage-aware bilinear) material iff
    that weight beats the stored one. Returns a new state.
    """
    if view_materials.shape != gbuf.shape:
        raise ValueError(f"view materials {view_materials.shape} vs G-buffer {gbuf.shape}")
    out = bake.copy()
    xy, w, visible = _texel_visibility(bake, gbuf)
    w = w.astype(bake.weight.dtype)  # compare at the stored precision
    stack = view_materials.stack()
    vals, wsum, _ = sample_bilinear(stack, xy, gbuf.coverage)
    occ_idx = np.nonzero(bake.occupancy.ravel())[0]
    cur = out.weight.ravel()[occ_idx]
    win = visible & (wsum > 0) & (w > cur)
    tex = occ_idx[win]
    acc = out.materials.stack().reshape(-1, 8)
    acc[tex] = np.clip(vals[win], 0.0, 1.0)
    R = bake.resolution
    out.materials = MaterialSet.from_stack(acc.reshape(R, R, 8).astype(np.float32))
    wflat = out.weight.reshape(-1)
    wflat[tex] = w[win]
    return out


def sample_atlas(atlas: MaterialSet, uv: np.ndarray, valid: Optional[np.ndarray] = None):
    """Bilinear material lookup at UV coordinates; returns ``(stack (...,8), weight, nearest_valid)``."""
    xy = uv_to_pixel(uv.astype(np.float64), atlas.height)
    return sample_bilinear(atlas.stack(), xy, valid)


def project_known(mesh: Mesh, bake: BakeState, cam: Camera, res=None,
                  gbuf: Optional[GBuffer] = None) -> tuple[MaterialSet, np.ndarray]:
    """Materials already fixed by earlier views, seen from ``cam``, plus the known mask.

    Unknown pixels are mid-gray; the mask is 1 where the pixel's nearest
    texel is known.
    """
    if gbuf is None:
        gbuf = rasterize_gbuffer(mesh, cam, res)
    H, W = gbuf.shape
    out = MaterialSet.filled(H, W, MID_GRAY).stack()
    known = np.zeros((H, W), np.float32)
    cov = gbuf.coverage
    if cov.any() and bake.known.any():
        uv = gbuf.uv[cov]
        vals, wsum, near = sample_atlas(bake.materials, uv, bake.known)
        # pixels whose nearest texel lies outside the atlas (seam slivers) borrow from known neighbours
        _, _, in_atlas = sample_atlas(bake.materials, uv, bake.occupancy)
        hit = (near | ~in_atlas) & (wsum > 0)
        sub = out[cov]
        sub[hit] = vals[hit]
        out[cov] = sub
        k = np.zeros(cov.sum(), np.float32)
        k[hit] = 1.0
        known[cov] = k
    return MaterialSet.from_stack(out.astype(np.float32)), known


def _pull_push(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Fill zero-weight texels from a weighted image pyramid.

    ``values`` is ``(H, W, C)``, ``weights`` in [0, 1]. Every filled value
    is a convex combination of known values.
    """
    H, W, C = values.shape
    if H <= 1 and W <= 1 or weights.max() <= 0:
        return values
    # pull: 2x2 weighted box filter, pad odd sizes by edge replication with zero weight
    ph, pw = H + (H % 2), W + (W % 2)
    v = np.zeros((ph, pw, C))
    w = np.zeros((ph, pw))
    v[:H, :W] = values * weights[..., None]
    w[:H, :W] = weights
    ws = w.reshape(ph // 2, 2, pw // 2, 2).sum((1, 3))
    vs = v.reshape(ph // 2, 2, pw // 2, 2, C).sum((1, 3))
    coarse_v = np.where(ws[..., None] > 0, vs / np.maximum(ws, 1e-12)[..., None], 0.0)
    coarse_w = np.minimum(ws, 1.0)
    coarse_v = _pull_push(coarse_v, coarse_w)
    # push: nearest upsample of the filled coarse level, blended by remaining weight
    up = np.repeat(np.repeat(coarse_v, 2, 0), 2, 1)[:H, :W]
    return values * weights[..., None] + up * (1.0 - weights[..., None])


def pullpush_fill(bake: BakeState, occupancy: Optional[np.ndarray] = None) -> MaterialSet:
    """Complete the atlas: known texels stay bit-identical, occupied holes are interpolated,
    unoccupied texels are zero."""
    occ = bake.occupancy if occupancy is None else occupancy
    known = bake.known & occ
    R = bake.resolution
    stack = bake.materials.stack().astype(np.float64)
    if not known.any():
        if occ.any():
            warnings.warn("no known texels to fill from; using mid-gray", stacklevel=2)
        out = np.where(occ[..., None], MID_GRAY, 0.0)
        return MaterialSet.from_stack(np.broadcast_to(out, (R, R, 8)).astype(np.float32))
    filled = _pull_push(np.where(known[..., None], stack, 0.0), known.astype(np.float64))
    out = np.where(known[..., None], stack, filled)
    out = np.where(occ[..., None], out, 0.0)
    # known texels are copied rather than round-tripped through float64 and clip
    return bake.materials.where(known, MaterialSet.from_stack(np.clip(out, 0.0, 1.0).astype(np.float32)))


def hole_fraction(filled_mask: np.ndarray, occupancy: np.ndarray) -> float:
    occ = occupancy.sum()
    return float((occupancy & ~filled_mask).sum() / occ) if occ else 0.0
