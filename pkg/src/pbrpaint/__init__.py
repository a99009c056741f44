"""Material generation for meshes: estimation, progressive painting and UV refinement."""
__version__ = "0.1.0"
