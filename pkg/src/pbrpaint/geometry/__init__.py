from .bake import BakeState, bake_view_to_uv, hole_fraction, project_known, pullpush_fill, sample_atlas
from .camera import Camera, camera_ring, orbit_camera
from .mesh import Mesh, MeshParseError, cube, cylinder, load_mesh, plane, save_obj, torus, uv_sphere
from .raster import GBuffer, UVMaps, compute_ccm_uv, rasterize_gbuffer, rasterize_uv

__all__ = [
    "BakeState", "bake_view_to_uv", "hole_fraction", "project_known", "pullpush_fill", "sample_atlas",
    "Camera", "camera_ring", "orbit_camera",
    "Mesh", "MeshParseError", "cube", "cylinder", "load_mesh", "plane", "save_obj", "torus", "uv_sphere",
    "GBuffer", "UVMaps", "compute_ccm_uv", "rasterize_gbuffer", "rasterize_uv",
]
