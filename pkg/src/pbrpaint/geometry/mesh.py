"""Triangle meshes, OBJ loading and procedural primitives.

World space is z-up. Meshes are normalized into a unit bounding cube
centered at the origin, so canonical coordinates are simply ``p + 0.5``.
Normals and UVs are stored per corner (``(F, 3, 3)`` and ``(F, 3, 2)``),
which keeps UV seams and hard edges explicit.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = path
        self.line_no = line_no


@dataclass
class Mesh:
    positions: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3) int
    normals: np.ndarray  # (F, 3, 3) per-corner unit normals
    uvs: np.ndarray  # (F, 3, 2) per-corner UVs in [0, 1]
    name: str = "mesh"

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    @property
    def n_vertices(self) -> int:
        return int(self.positions.shape[0])

    def corners(self) -> np.ndarray:
        """Corner positions, ``(F, 3, 3)``."""
        return self.positions[self.faces]

    def face_normals(self) -> np.ndarray:
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        return _normalize(n)

    def face_tangents(self) -> np.ndarray:
        """Per-face tangent (direction of increasing u), ``(F, 3)``."""
        c = self.corners().astype(np.float64)
        uv = self.uvs.astype(np.float64)
        e1, e2 = c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]
        d1, d2 = uv[:, 1] - uv[:, 0], uv[:, 2] - uv[:, 0]
        det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
        safe = np.where(np.abs(det) < 1e-12, 1.0, det)
        t = (e1 * d2[:, 1:2] - e2 * d1[:, 1:2]) / safe[:, None]
        bad = (np.abs(det) < 1e-12) | (np.linalg.norm(t, axis=1) < 1e-12)
        if bad.any():
            # any direction orthogonal to the face normal
            fn = self.face_normals()[bad]
            helper = np.where(np.abs(fn[:, :1]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
            t[bad] = np.cross(helper, fn)
        return _normalize(t).astype(np.float32)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n_vertices == 0:
            return np.zeros(3), np.zeros(3)
        return self.positions.min(0), self.positions.max(0)

    def validate(self) -> None:
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= self.n_vertices):
            raise ValueError("face index out of range")
        if self.normals.shape != (self.n_faces, 3, 3) or self.uvs.shape != (self.n_faces, 3, 2):
            raise ValueError("per-corner normals/uvs do not match face count")
        if self.n_faces:
            lens = np.linalg.norm(self.normals, axis=-1)
            if np.abs(lens - 1.0).max() > 1e-4:
                raise ValueError("normals are not unit length")


def _normalize(v: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.maximum(n, eps)


def normalize_to_unit_cube(positions: np.ndarray) -> np.ndarray:
    if len(positions) == 0:
        return positions
    lo, hi = positions.min(0), positions.max(0)
    extent = float((hi - lo).max())
    center = 0.5 * (lo + hi)
    scale = 1.0 / extent if extent > 0 else 1.0
    return ((positions - center) * scale).astype(np.float32)


def area_weighted_normals(positions: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Per-vertex normals; the unnormalized cross product already carries 2x area."""
    c = positions[faces]
    fn = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    vn = np.zeros_like(positions, dtype=np.float64)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    return _normalize(vn).astype(np.float32)


def box_project_uvs(positions: np.ndarray, faces: np.ndarray, pad: float = 0.02) -> np.ndarray:
    """Six-chart box projection laid out on a 3x2 atlas.

    Each face goes to the chart of its dominant normal axis/sign and is
    projected orthographically onto the other two axes.
    """
    c = positions[faces].astype(np.float64)
    fn = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
    axis = np.abs(fn).argmax(1)
    sign = np.take_along_axis(fn, axis[:, None], 1)[:, 0] >= 0
    chart = axis * 2 + (~sign)
    lo = positions.min(0) if len(positions) else np.zeros(3)
    ext = float((positions.max(0) - lo).max()) if len(positions) else 1.0
    ext = ext if ext > 0 else 1.0
    local = (c - lo) / ext  # (F, 3, 3) in [0, 1]
    # (u axis, v axis, flip u) per chart so that charts are seen from outside
    table = {0: (1, 2, False), 1: (1, 2, True), 2: (0, 2, True), 3: (0, 2, False), 4: (0, 1, False), 5: (0, 1, True)}
    uvs = np.zeros((len(faces), 3, 2))
    cell = (1.0 - 4 * pad) / 3.0, (1.0 - 3 * pad) / 2.0
    for k, (ua, va, flip) in table.items():
        sel = chart == k
        if not sel.any():
            continue
        u = local[sel][..., ua]
        v = local[sel][..., va]
        if flip:
            u = 1.0 - u
        col, row = k % 3, k // 3
        u0 = pad + col * (cell[0] + pad)
        v0 = pad + row * (cell[1] + pad)
        uvs[sel, :, 0] = u0 + u * cell[0]
        uvs[sel, :, 1] = v0 + v * cell[1]
    return uvs.astype(np.float32)


def _parse_index(tok: str, n: int, path, line_no: int) -> int:
    try:
        i = int(tok)
    except ValueError:
        raise MeshParseError(path, line_no, f"bad index {tok!r}") from None
    if i == 0:
        raise MeshParseError(path, line_no, "OBJ indices are 1-based")
    idx = i - 1 if i > 0 else n + i
    if idx < 0 or idx >= n:
        raise MeshParseError(path, line_no, f"index {i} out of range (have {n})")
    return idx


def load_mesh(path) -> Mesh:
    """Load a Wavefront OBJ file (``v``/``vn``/``vt``/``f``), triangulating polygons.

    The result is normalized into the unit cube. Missing normals are
    rebuilt as area-weighted vertex normals; missing UVs fall back to a box
    projection with a warning.
    """
    path = Path(path)
    v, vn, vt = [], [], []
    face_v, face_t, face_n = [], [], []
    with open(path, "r") as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            key = tok[0]
            try:
                if key == "v":
                    v.append([float(x) for x in tok[1:4]])
                    if len(tok) < 4:
                        raise ValueError
                elif key == "vn":
                    vn.append([float(x) for x in tok[1:4]])
                    if len(tok) < 4:
                        raise ValueError
                elif key == "vt":
                    vt.append([float(x) for x in tok[1:3]])
                    if len(tok) < 3:
                        raise ValueError
            except ValueError:
                raise MeshParseError(path, line_no, f"malformed {key!r} record") from None
            if key != "f":
                continue
            verts = tok[1:]
            if len(verts) < 3:
                raise MeshParseError(path, line_no, "face needs at least 3 vertices")
            parts = [p.split("/") for p in verts]
            layout = {len(p) for p in parts}
            has_t = {bool(p[1]) if len(p) > 1 else False for p in parts}
            has_n = {bool(p[2]) if len(p) > 2 else False for p in parts}
            if len(layout) != 1 or len(has_t) != 1 or len(has_n) != 1 or layout.pop() > 3:
                raise MeshParseError(path, line_no, f"inconsistent face vertex format: {line!r}")
            iv = [_parse_index(p[0], len(v), path, line_no) for p in parts]
            it = [_parse_index(p[1], len(vt), path, line_no) for p in parts] if has_t.pop() else None
            in_ = [_parse_index(p[2], len(vn), path, line_no) for p in parts] if has_n.pop() else None
            for k in range(1, len(iv) - 1):
                tri = [0, k, k + 1]
                face_v.append([iv[j] for j in tri])
                face_t.append([it[j] for j in tri] if it is not None else None)
                face_n.append([in_[j] for j in tri] if in_ is not None else None)

    positions = normalize_to_unit_cube(np.asarray(v, np.float32).reshape(-1, 3))
    faces = np.asarray(face_v, np.int64).reshape(-1, 3)

    if face_n and all(n is not None for n in face_n):
        normals = _normalize(np.asarray(vn, np.float32)[np.asarray(face_n)]).astype(np.float32)
    else:
        vnorm = area_weighted_normals(positions, faces)
        normals = vnorm[faces] if len(faces) else np.zeros((0, 3, 3), np.float32)
    if face_t and all(t is not None for t in face_t):
        uvs = np.asarray(vt, np.float32)[np.asarray(face_t)]
    else:
        if len(faces):
            warnings.warn(f"{path}: no texture coordinates, using box-projection UVs", stacklevel=2)
        uvs = box_project_uvs(positions, faces)
    mesh = Mesh(positions, faces, normals.astype(np.float32), uvs.astype(np.float32), name=path.stem)
    mesh.validate()
    return mesh


def save_obj(path, mesh: Mesh) -> None:
    with open(path, "w") as f:
        f.write(f"# {mesh.name}\n")
        for p in mesh.positions:
            f.write(f"v {p[0]:.7g} {p[1]:.7g} {p[2]:.7g}\n")
        for uv in mesh.uvs.reshape(-1, 2):
            f.write(f"vt {uv[0]:.7g} {uv[1]:.7g}\n")
        for n in mesh.normals.reshape(-1, 3):
            f.write(f"vn {n[0]:.7g} {n[1]:.7g} {n[2]:.7g}\n")
        for i, tri in enumerate(mesh.faces):
            c = [f"{tri[k] + 1}/{3 * i + k + 1}/{3 * i + k + 1}" for k in range(3)]
            f.write("f " + " ".join(c) + "\n")


# --- procedural primitives -------------------------------------------------

def _grid_mesh(pos: np.ndarray, nrm: np.ndarray, uv: np.ndarray, name: str) -> Mesh:
    """Triangulate an ``(R+1, C+1)`` grid of positions/normals/uvs (CCW outward)."""
    rows, cols = pos.shape[0] - 1, pos.shape[1] - 1
    idx = np.arange((rows + 1) * (cols + 1)).reshape(rows + 1, cols + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, :-1].ravel(), idx[1:, 1:].ravel()
    faces = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    P, N, U = pos.reshape(-1, 3), nrm.reshape(-1, 3), uv.reshape(-1, 2)
    return Mesh(P.astype(np.float32), faces, _normalize(N[faces]).astype(np.float32),
                U[faces].astype(np.float32), name=name)


def _drop_degenerate(mesh: Mesh) -> Mesh:
    c = mesh.corners()
    area = np.linalg.norm(np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0]), axis=1)
    keep = area > 1e-10
    return Mesh(mesh.positions, mesh.faces[keep], mesh.normals[keep], mesh.uvs[keep], mesh.name)


def _merge(meshes: list[Mesh], name: str) -> Mesh:
    pos, faces, nrm, uvs = [], [], [], []
    off = 0
    for m in meshes:
        pos.append(m.positions)
        faces.append(m.faces + off)
        nrm.append(m.normals)
        uvs.append(m.uvs)
        off += m.n_vertices
    return Mesh(np.concatenate(pos), np.concatenate(faces), np.concatenate(nrm), np.concatenate(uvs), name)


def uv_sphere(n_lat: int = 24, n_lon: int = 48, radius: float = 0.5) -> Mesh:
    """Latitude-longitude sphere whose v coordinate is equal-area, ``v = (1 + sin(lat)) / 2``.

    With equal-area UVs the atlas texel count is proportional to surface
    area, so coverage fractions measured in texels are area fractions.
    """
    lat = np.linspace(math.pi / 2, -math.pi / 2, n_lat + 1)[:, None]
    lon = np.linspace(0.0, 2 * math.pi, n_lon + 1)[None, :]
    # grid ordered top-to-bottom, left-to-right: outward normals need (a, b, d) winding
    n = np.stack(np.broadcast_arrays(np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon),
                                     np.sin(lat) + 0 * lon), -1)
    uv = np.stack(np.broadcast_arrays(lon / (2 * math.pi) + 0 * lat, (1 + np.sin(lat)) / 2 + 0 * lon), -1)
    mesh = _grid_mesh(radius * n, n, uv, "sphere")
    return _fix_winding(_drop_degenerate(mesh))


def _fix_winding(mesh: Mesh) -> Mesh:
    """Flip faces whose geometric normal disagrees with the corner normals."""
    fn = mesh.face_normals()
    flip = (fn * mesh.normals.mean(1)).sum(1) < 0
    if flip.any():
        mesh.faces[flip] = mesh.faces[flip][:, ::-1]
        mesh.normals[flip] = mesh.normals[flip][:, ::-1]
        mesh.uvs[flip] = mesh.uvs[flip][:, ::-1]
    return mesh


def cube(subdiv: int = 4, size: float = 1.0) -> Mesh:
    """Axis-aligned cube with flat per-face normals and box-projection UVs."""
    s = np.linspace(-0.5, 0.5, subdiv + 1) * size
    faces = []
    for axis in range(3):
        for sign in (1.0, -1.0):
            a, b = [k for k in range(3) if k != axis]
            A, B = np.meshgrid(s, s, indexing="ij")
            pos = np.zeros(A.shape + (3,))
            pos[..., axis] = sign * 0.5 * size
            pos[..., a] = A
            pos[..., b] = B
            nrm = np.zeros_like(pos)
            nrm[..., axis] = sign
            faces.append(_grid_mesh(pos, nrm, np.zeros(A.shape + (2,)), "face"))
    m = _fix_winding(_merge(faces, "cube"))
    m = _weld(m)
    m.uvs = box_project_uvs(m.positions, m.faces)
    return m


def _weld(mesh: Mesh, tol: float = 1e-6) -> Mesh:
    key = np.round(mesh.positions / tol).astype(np.int64)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    return Mesh(mesh.positions[first], inverse.reshape(-1)[mesh.faces], mesh.normals, mesh.uvs, mesh.name)


def cylinder(n_seg: int = 40, n_h: int = 6, radius: float = 0.5, height: float = 1.0) -> Mesh:
    """Capped cylinder; side occupies the lower 60% of the atlas, caps the top."""
    th = np.linspace(0.0, 2 * math.pi, n_seg + 1)[None, :]
    z = np.linspace(0.5 * height, -0.5 * height, n_h + 1)[:, None]
    pos = np.stack(np.broadcast_arrays(radius * np.cos(th), radius * np.sin(th), z), -1)
    nrm = np.stack(np.broadcast_arrays(np.cos(th), np.sin(th), 0 * z), -1)
    uv = np.stack(np.broadcast_arrays(th / (2 * math.pi), 0.02 + 0.56 * (z / height + 0.5)), -1)
    side = _fix_winding(_grid_mesh(pos, nrm, uv, "side"))
    caps = []
    for sign, u0 in ((1.0, 0.25), (-1.0, 0.75)):
        rr = np.linspace(0.0, radius, 4)[:, None]
        p = np.stack(np.broadcast_arrays(rr * np.cos(th), rr * np.sin(th), sign * 0.5 * height + 0 * rr), -1)
        n = np.zeros_like(p)
        n[..., 2] = sign
        cu = np.stack(np.broadcast_arrays(u0 + 0.19 * (rr / radius) * np.cos(th),
                                          0.795 + 0.19 * (rr / radius) * np.sin(th)), -1)
        caps.append(_fix_winding(_drop_degenerate(_grid_mesh(p, n, cu, "cap"))))
    return _merge([side] + caps, "cylinder")


def torus(n_major: int = 48, n_minor: int = 20, major: float = 0.35, minor: float = 0.15) -> Mesh:
    u = np.linspace(0.0, 2 * math.pi, n_major + 1)[None, :]
    v = np.linspace(0.0, 2 * math.pi, n_minor + 1)[:, None]
    ring = major + minor * np.cos(v)
    pos = np.stack(np.broadcast_arrays(ring * np.cos(u), ring * np.sin(u), minor * np.sin(v) + 0 * u), -1)
    nrm = np.stack(np.broadcast_arrays(np.cos(v) * np.cos(u), np.cos(v) * np.sin(u), np.sin(v) + 0 * u), -1)
    uv = np.stack(np.broadcast_arrays(u / (2 * math.pi) + 0 * v, v / (2 * math.pi) + 0 * u), -1)
    return _fix_winding(_grid_mesh(pos, nrm, uv, "torus"))


def plane(size: float = 1.0, subdiv: int = 2, normal_axis: int = 1, sign: float = -1.0) -> Mesh:
    """Square facing ``sign * axis`` (default -y, toward the front camera)."""
    s = np.linspace(-0.5, 0.5, subdiv + 1) * size
    a, b = [k for k in range(3) if k != normal_axis]
    A, B = np.meshgrid(s, s, indexing="ij")
    pos = np.zeros(A.shape + (3,))
    pos[..., a] = A
    pos[..., b] = B
    nrm = np.zeros_like(pos)
    nrm[..., normal_axis] = sign
    uv = np.stack([A / size + 0.5, B / size + 0.5], -1)
    return _fix_winding(_grid_mesh(pos, nrm, uv, "plane"))


PRIMITIVES = {"sphere": uv_sphere, "cube": cube, "cylinder": cylinder, "torus": torus}
