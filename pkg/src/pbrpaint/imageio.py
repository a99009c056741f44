"""PFM / PNG readers and writers.

Float maps are stored as little-endian PFM (negative scale header). PNG
previews are 8-bit; only albedo and lit renders go through the sRGB curve,
data maps (roughness, metallic, bump, normal, confidence) are written as-is.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .material import MaterialSet, pack_rm, unpack_rm

ROLE_SUFFIXES = ("_albedo", "_rm", "_bump", "_conf", "_normal")
SRGB_ROLES = {"albedo", "render"}


def write_pfm(path, arr: np.ndarray) -> None:
    arr = np.asarray(arr, dtype="<f4")
    if arr.ndim == 2:
        header = b"Pf"
        h, w = arr.shape
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
        h, w = arr.shape[:2]
    elif arr.ndim == 3 and arr.shape[2] == 1:
        header = b"Pf"
        h, w = arr.shape[:2]
        arr = arr[..., 0]
    else:
        raise ValueError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    # PFM scanlines run bottom-to-top
    data = np.ascontiguousarray(arr[::-1])
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        kind = f.readline().strip()
        if kind not in (b"PF", b"Pf"):
            raise ValueError(f"{path}: not a PFM file (header {kind!r})")
        dims = f.readline().split()
        while not dims:
            dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        nch = 3 if kind == b"PF" else 1
        raw = f.read()
    data = np.frombuffer(raw, dtype=dtype, count=w * h * nch)
    if data.size != w * h * nch:
        raise ValueError(f"{path}: truncated PFM payload")
    data = data.reshape(h, w, nch) if nch == 3 else data.reshape(h, w)
    return data[::-1].astype(np.float32)


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def write_png(path, arr: np.ndarray, role: str = "data") -> None:
    arr = np.asarray(arr, np.float64)
    if role in SRGB_ROLES:
        arr = linear_to_srgb(arr)
    img = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    Image.fromarray(img).save(path)


def read_png(path, role: str = "data") -> np.ndarray:
    img = np.asarray(Image.open(path)).astype(np.float32) / 255.0
    if img.ndim == 3 and img.shape[2] == 4:
        img = img[..., :3]
    if role in SRGB_ROLES:
        img = srgb_to_linear(img).astype(np.float32)
    return img


def read_image(path, role: str = "data") -> np.ndarray:
    if str(path).lower().endswith(".pfm"):
        return read_pfm(path)
    return read_png(path, role)


def material_paths(stem) -> dict[str, Path]:
    stem = str(stem)
    return {k: Path(stem + f"_{k}.pfm") for k in ("albedo", "rm", "bump")}


def save_material_set(stem, m: MaterialSet, png: bool = False) -> dict[str, Path]:
    """Write ``<stem>_albedo.pfm``, ``<stem>_rm.pfm`` and ``<stem>_bump.pfm``."""
    paths = material_paths(stem)
    os.makedirs(Path(paths["albedo"]).parent, exist_ok=True)
    rm = pack_rm(np.clip(m.roughness, 0, 1), np.clip(m.metallic, 0, 1))
    write_pfm(paths["albedo"], m.albedo)
    write_pfm(paths["rm"], rm)
    write_pfm(paths["bump"], m.bump)
    if png:
        write_png(str(stem) + "_albedo.png", m.albedo, "albedo")
        write_png(str(stem) + "_rm.png", rm)
        write_png(str(stem) + "_bump.png", m.bump)
    return paths


def load_material_set(stem) -> MaterialSet:
    paths = material_paths(stem)
    for p in paths.values():
        if not p.exists():
            raise FileNotFoundError(p)
    r, m = unpack_rm(read_pfm(paths["rm"]))
    return MaterialSet(read_pfm(paths["albedo"]), r, m, read_pfm(paths["bump"]))
