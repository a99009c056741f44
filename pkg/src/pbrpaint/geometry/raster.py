"""Software rasterization of view-space G-buffers and UV-space texel maps."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .camera import Camera
from .mesh import Mesh

NEAR = 0.05
_MAX_PAIRS = 4_000_000


@dataclass
class Fragments:
    face_id: np.ndarray  # (H, W) int, -1 where empty
    bary: np.ndarray  # (H, W, 3) interpolation weights
    depth: np.ndarray  # (H, W), inf where empty

    @property
    def coverage(self) -> np.ndarray:
        return self.face_id >= 0


def rasterize_triangles(xy: np.ndarray, height: int, width: int, depth: Optional[np.ndarray] = None,
                        perspective: bool = True) -> Fragments:
    """Rasterize triangles given in continuous pixel coordinates.

    ``xy`` is ``(F, 3, 2)``; a pixel is covered when its center lies inside
    the triangle. With ``depth`` (``(F, 3)`` view depths) the nearest
    fragment wins and barycentrics are perspective-corrected; otherwise the
    lowest face index wins.
    """
    F = xy.shape[0]
    face_id = np.full((height, width), -1, np.int64)
    bary_out = np.zeros((height, width, 3), np.float64)
    depth_out = np.full((height, width), np.inf)
    if F == 0:
        return Fragments(face_id, bary_out, depth_out)
    xy = xy.astype(np.float64)
    lo = xy.min(1)
    hi = xy.max(1)
    j0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, width).astype(np.int64)
    j1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, width - 1).astype(np.int64)
    i0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, height).astype(np.int64)
    i1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, height - 1).astype(np.int64)
    nx = np.maximum(j1 - j0 + 1, 0)
    ny = np.maximum(i1 - i0 + 1, 0)
    a, b, c = xy[:, 0], xy[:, 1], xy[:, 2]
    area = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    counts = np.where(np.abs(area) > 1e-12, nx * ny, 0)

    best_key = np.full(height * width, np.inf)
    best_face = np.full(height * width, -1, np.int64)
    best_bary = np.zeros((height * width, 3))
    best_depth = np.full(height * width, np.inf)

    # chunk faces so the (face, pixel) pair list stays bounded
    csum = np.cumsum(counts)
    start = 0
    while start < F:
        base = csum[start - 1] if start else 0
        stop = int(np.searchsorted(csum, base + _MAX_PAIRS, side="right"))
        stop = max(stop, start + 1)
        sel = np.arange(start, min(stop, F))
        start = min(stop, F)
        cnt = counts[sel]
        total = int(cnt.sum())
        if total == 0:
            continue
        tri = np.repeat(sel, cnt)
        offs = np.repeat(np.cumsum(cnt) - cnt, cnt)
        local = np.arange(total) - offs
        jj = j0[tri] + local % nx[tri]
        ii = i0[tri] + local // nx[tri]
        px, py = jj + 0.5, ii + 0.5
        A, B, C = a[tri], b[tri], c[tri]
        ar = area[tri]
        l0 = ((B[:, 0] - px) * (C[:, 1] - py) - (B[:, 1] - py) * (C[:, 0] - px)) / ar
        l1 = ((C[:, 0] - px) * (A[:, 1] - py) - (C[:, 1] - py) * (A[:, 0] - px)) / ar
        l2 = 1.0 - l0 - l1
        lam = np.stack([l0, l1, l2], 1)
        inside = (lam >= -1e-9).all(1)
        tri, ii, jj, lam = tri[inside], ii[inside], jj[inside], lam[inside]
        if depth is not None:
            z = depth[tri].astype(np.float64)
            inv = lam / z
            s = inv.sum(1)
            frag_depth = 1.0 / s
            bary = inv / s[:, None] if perspective else lam
            key = frag_depth
        else:
            bary = lam
            frag_depth = np.zeros(len(tri))
            key = tri.astype(np.float64)
        pix = ii * width + jj
        order = np.lexsort((key, pix))
        pix_s = pix[order]
        first = np.ones(len(order), bool)
        first[1:] = pix_s[1:] != pix_s[:-1]
        win = order[first]
        p = pix[win]
        better = key[win] < best_key[p]
        p, win = p[better], win[better]
        best_key[p] = key[win]
        best_face[p] = tri[win]
        best_bary[p] = bary[win]
        best_depth[p] = frag_depth[win]

    face_id[:] = best_face.reshape(height, width)
    bary_out[:] = best_bary.reshape(height, width, 3)
    if depth is not None:
        depth_out[:] = best_depth.reshape(height, width)
    return Fragments(face_id, bary_out, depth_out)


def _interp(attr: np.ndarray, frags: Fragments) -> np.ndarray:
    """Interpolate a per-corner attribute ``(F, 3, C)`` over covered pixels."""
    H, W = frags.face_id.shape
    out = np.zeros((H, W, attr.shape[-1]), np.float64)
    cov = frags.coverage
    if cov.any():
        f = frags.face_id[cov]
        out[cov] = np.einsum("nk,nkc->nc", frags.bary[cov], attr[f].astype(np.float64))
    return out


def _unit(v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    out = np.where(n > 1e-12, v / np.maximum(n, 1e-12), 0.0)
    out[~mask] = 0.0
    return out


@dataclass
class GBuffer:
    """Per-pixel geometry for one view. Uncovered pixels hold zeros (depth: +inf)."""

    normal: np.ndarray  # (H, W, 3) world-space shading normal
    tangent: np.ndarray  # (H, W, 3) world-space tangent
    position: np.ndarray  # (H, W, 3) world position
    depth: np.ndarray  # (H, W) distance along the view axis
    uv: np.ndarray  # (H, W, 2)
    ccm: np.ndarray  # (H, W, 3) normalized object-space position in [0, 1]
    coverage: np.ndarray  # (H, W) bool
    face_id: np.ndarray  # (H, W) int, -1 where uncovered
    camera: Camera

    @property
    def shape(self) -> tuple[int, int]:
        return self.coverage.shape

    def normal_camera(self) -> np.ndarray:
        n = self.camera.dirs_to_camera(self.normal)
        n[~self.coverage] = 0.0
        return n

    def normal_map(self) -> np.ndarray:
        """Camera-space normals encoded to [0, 1]; zero where uncovered."""
        enc = self.normal_camera() * 0.5 + 0.5
        enc[~self.coverage] = 0.0
        return enc.astype(np.float32)

    def view_dirs(self) -> np.ndarray:
        v = self.camera.position[None, None] - self.position
        return _unit(v, self.coverage)

    def to_arrays(self) -> dict[str, np.ndarray]:
        cam = self.camera
        return dict(normal=self.normal, tangent=self.tangent, position=self.position, depth=self.depth,
                    uv=self.uv, ccm=self.ccm, coverage=self.coverage, face_id=self.face_id,
                    cam_position=cam.position, cam_target=cam.target, cam_up=cam.up,
                    cam_fov=np.array(cam.fov_deg))

    @classmethod
    def from_arrays(cls, d) -> "GBuffer":
        H, W = d["coverage"].shape
        cam = Camera(d["cam_position"], d["cam_target"], d["cam_up"], float(d["cam_fov"]), W, H)
        return cls(d["normal"], d["tangent"], d["position"], d["depth"], d["uv"], d["ccm"],
                   d["coverage"].astype(bool), d["face_id"], cam)


def rasterize_gbuffer(mesh: Mesh, cam: Camera, res: int | tuple[int, int] | None = None) -> GBuffer:
    """Depth-buffered, back-face-culled rasterization with perspective-correct interpolation."""
    if res is None:
        H, W = cam.height, cam.width
    elif isinstance(res, int):
        H = W = res
    else:
        H, W = res
    if (W, H) != (cam.width, cam.height):
        cam = cam.with_resolution(W, H)
    corners = mesh.corners().astype(np.float64)
    pc = cam.world_to_camera(corners)
    depth = -pc[..., 2]
    fn = np.cross(pc[:, 1] - pc[:, 0], pc[:, 2] - pc[:, 0])
    front = (fn * -pc[:, 0]).sum(1) > 0
    keep = front & (depth > NEAR).all(1)
    idx = np.nonzero(keep)[0]
    xy, _ = cam.project(corners[idx])
    frags = rasterize_triangles(xy, H, W, depth=depth[idx])
    # map back to mesh face ids
    cov = frags.coverage
    frags.face_id[cov] = idx[frags.face_id[cov]]

    normal = _unit(_interp(mesh.normals, frags), cov)
    tangent_face = mesh.face_tangents()
    tangent = np.zeros_like(normal)
    tangent[cov] = tangent_face[frags.face_id[cov]]
    position = _interp(corners, frags)
    uv = _interp(mesh.uvs, frags)
    ccm = np.clip(position + 0.5, 0.0, 1.0)
    ccm[~cov] = 0.0
    dep = np.where(cov, frags.depth, np.inf)
    return GBuffer(normal.astype(np.float32), tangent.astype(np.float32), position.astype(np.float32),
                   dep.astype(np.float32), uv.astype(np.float32), ccm.astype(np.float32), cov,
                   frags.face_id, cam)


@dataclass
class UVMaps:
    """Texel-space geometry of a mesh atlas."""

    position: np.ndarray  # (R, R, 3)
    normal: np.ndarray  # (R, R, 3)
    ccm: np.ndarray  # (R, R, 3)
    occupancy: np.ndarray  # (R, R) bool
    face_id: np.ndarray
    n_degenerate: int

    @property
    def resolution(self) -> int:
        return int(self.occupancy.shape[0])


def uv_to_pixel(uv: np.ndarray, res: int) -> np.ndarray:
    """UV (v up) to continuous texel coordinates (row 0 at the top)."""
    return np.stack([uv[..., 0] * res, (1.0 - uv[..., 1]) * res], -1)


def rasterize_uv(mesh: Mesh, uv_res: int) -> UVMaps:
    xy = uv_to_pixel(mesh.uvs.astype(np.float64), uv_res)
    area = np.abs((xy[:, 1, 0] - xy[:, 0, 0]) * (xy[:, 2, 1] - xy[:, 0, 1])
                  - (xy[:, 1, 1] - xy[:, 0, 1]) * (xy[:, 2, 0] - xy[:, 0, 0]))
    ok = area > 1e-9
    idx = np.nonzero(ok)[0]
    frags = rasterize_triangles(xy[idx], uv_res, uv_res, depth=None)
    cov = frags.coverage
    frags.face_id[cov] = idx[frags.face_id[cov]]
    position = _interp(mesh.corners(), frags)
    normal = _unit(_interp(mesh.normals, frags), cov)
    ccm = np.clip(position + 0.5, 0.0, 1.0)
    ccm[~cov] = 0.0
    return UVMaps(position.astype(np.float32), normal.astype(np.float32), ccm.astype(np.float32), cov,
                  frags.face_id, int((~ok).sum()))


def compute_ccm_uv(mesh: Mesh, uv_res: int) -> UVMaps:
    """UV-space canonical coordinate map plus occupancy (and the skipped-triangle count)."""
    return rasterize_uv(mesh, uv_res)


def sample_bilinear(img: np.ndarray, xy: np.ndarray, valid: Optional[np.ndarray] = None):
    """Bilinear lookup at continuous pixel coordinates, renormalized over ``valid`` pixels.

    Returns ``(values, weight_sum, nearest_valid)``; ``weight_sum`` is the
    fraction of bilinear weight that landed on valid pixels.
    """
    H, W = img.shape[:2]
    x = xy[..., 0] - 0.5
    y = xy[..., 1] - 0.5
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    fx, fy = x - x0, y - y0
    flat = img.reshape(H, W, -1).astype(np.float64)
    acc = np.zeros(xy.shape[:-1] + (flat.shape[-1],))
    wsum = np.zeros(xy.shape[:-1])
    for dy, dx, w in ((0, 0, (1 - fx) * (1 - fy)), (0, 1, fx * (1 - fy)), (1, 0, (1 - fx) * fy), (1, 1, fx * fy)):
        xi, yi = x0 + dx, y0 + dy
        inb = (xi >= 0) & (xi < W) & (yi >= 0) & (yi < H)
        xi_c, yi_c = np.clip(xi, 0, W - 1), np.clip(yi, 0, H - 1)
        ok = inb if valid is None else inb & valid[yi_c, xi_c]
        ww = np.where(ok, w, 0.0)
        acc += ww[..., None] * flat[yi_c, xi_c]
        wsum += ww
    vals = acc / np.maximum(wsum, 1e-12)[..., None]
    xn = np.clip(np.floor(xy[..., 0]).astype(np.int64), 0, W - 1)
    yn = np.clip(np.floor(xy[..., 1]).astype(np.int64), 0, H - 1)
    inb = (xy[..., 0] >= 0) & (xy[..., 0] < W) & (xy[..., 1] >= 0) & (xy[..., 1] < H)
    near = inb if valid is None else inb & valid[yn, xn]
    if img.ndim == 2:
        vals = vals[..., 0]
    return vals, wsum, near
