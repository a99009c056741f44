"""Material tensors, channel packing and confidence masks.

Every stage of the pipeline exchanges a :class:`MaterialSet`: albedo (3),
roughness (1), metallic (1) and a tangent-space bump map (3), all in [0, 1].
Arrays are ``(H, W, C)`` / ``(H, W)`` numpy arrays, except inside the
differentiable paths where torch tensors of the same layout are accepted.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

N_CHANNELS = 8
FLAT_BUMP = (0.5, 0.5, 1.0)
MID_GRAY = 0.5


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


class FormatError(ValueError):
    pass


class LightingScenario(enum.Enum):
    REALISTIC = "realistic"
    LIGHT_FREE = "lightfree"
    GENERATED = "generated"

    @classmethod
    def parse(cls, name: str) -> "LightingScenario":
        key = name.strip().lower().replace("-", "").replace("_", "")
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown lighting scenario {name!r}")


@dataclass
class MaterialSet:
    albedo: np.ndarray
    roughness: np.ndarray
    metallic: np.ndarray
    bump: np.ndarray

    @property
    def height(self) -> int:
        return int(self.albedo.shape[0])

    @property
    def width(self) -> int:
        return int(self.albedo.shape[1])

    @property
    def shape(self) -> tuple[int, int]:
        return self.height, self.width

    @classmethod
    def filled(cls, height: int, width: int, value: float = MID_GRAY) -> "MaterialSet":
        return cls(
            albedo=np.full((height, width, 3), value, np.float32),
            roughness=np.full((height, width), value, np.float32),
            metallic=np.full((height, width), value, np.float32),
            bump=np.full((height, width, 3), value, np.float32),
        )

    @classmethod
    def uniform(cls, height, width, albedo=(0.5, 0.5, 0.5), roughness=0.5,
                metallic=0.0, bump=FLAT_BUMP) -> "MaterialSet":
        return cls(
            albedo=np.broadcast_to(np.asarray(albedo, np.float32), (height, width, 3)).copy(),
            roughness=np.full((height, width), roughness, np.float32),
            metallic=np.full((height, width), metallic, np.float32),
            bump=np.broadcast_to(np.asarray(bump, np.float32), (height, width, 3)).copy(),
        )

    def stack(self) -> np.ndarray:
        """All eight channels as one ``(H, W, 8)`` array."""
        return np.concatenate(
            [self.albedo, self.roughness[..., None], self.metallic[..., None], self.bump], axis=-1
        )

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "MaterialSet":
        if arr.shape[-1] != N_CHANNELS:
            raise DimensionError(f"expected {N_CHANNELS} channels, got {arr.shape[-1]}")
        return cls(arr[..., 0:3].copy(), arr[..., 3].copy(), arr[..., 4].copy(), arr[..., 5:8].copy())

    def packed(self) -> np.ndarray:
        """``(H, W, 9)``: albedo, packed roughness-metallic, bump."""
        return np.concatenate([self.albedo, pack_rm(self.roughness, self.metallic), self.bump], axis=-1)

    @classmethod
    def from_packed(cls, arr: np.ndarray, rm_tol: Optional[float] = 1e-3) -> "MaterialSet":
        r, m = unpack_rm(arr[..., 3:6], tol=rm_tol)
        return cls(arr[..., 0:3].copy(), r, m, arr[..., 6:9].copy())

    def copy(self) -> "MaterialSet":
        return MaterialSet(self.albedo.copy(), self.roughness.copy(), self.metallic.copy(), self.bump.copy())

    def where(self, mask: np.ndarray, other: "MaterialSet") -> "MaterialSet":
        """Per-pixel select: ``self`` where ``mask`` else ``other``."""
        m3 = mask[..., None]
        return MaterialSet(
            np.where(m3, self.albedo, other.albedo),
            np.where(mask, self.roughness, other.roughness),
            np.where(mask, self.metallic, other.metallic),
            np.where(m3, self.bump, other.bump),
        )

    def astype(self, dtype) -> "MaterialSet":
        return MaterialSet(*(np.asarray(a, dtype) for a in (self.albedo, self.roughness, self.metallic, self.bump)))


def pack_rm(roughness: np.ndarray, metallic: np.ndarray) -> np.ndarray:
    roughness = np.asarray(roughness)
    metallic = np.asarray(metallic)
    if roughness.shape != metallic.shape:
        raise DimensionError(f"roughness {roughness.shape} vs metallic {metallic.shape}")
    for name, a in (("roughness", roughness), ("metallic", metallic)):
        if a.size and (np.isnan(a).any() or a.min() < 0.0 or a.max() > 1.0):
            raise DomainError(f"{name} values outside [0, 1]")
    dtype = np.result_type(roughness.dtype, metallic.dtype, np.float32)
    return np.stack([np.ones_like(roughness, dtype=dtype), roughness.astype(dtype), metallic.astype(dtype)], axis=-1)


def unpack_rm(packed: np.ndarray, tol: Optional[float] = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(roughness, metallic)`` from a packed map.

    ``tol`` bounds how far the R channel may drift from 1.0; ``None``
    skips the check (used on raw network output).
    """
    packed = np.asarray(packed)
    if packed.shape[-1] != 3:
        raise DimensionError(f"packed RM needs 3 channels, got {packed.shape[-1]}")
    if tol is not None and packed.size:
        dev = np.abs(packed[..., 0] - 1.0).max()
        if dev > tol:
            raise FormatError(f"packed RM red channel deviates from 1.0 by {dev:.4g} (> {tol})")
    return packed[..., 1].copy(), packed[..., 2].copy()


def assign_confidence(scenario: LightingScenario, known_mask: Optional[np.ndarray] = None,
                      shape: Optional[tuple[int, int]] = None) -> np.ndarray:
    """Confidence mask for a conditioning image.

    Realistic lighting is trusted everywhere, light-free input nowhere, and
    generated lighting only where materials are already known.
    """
    if scenario is LightingScenario.GENERATED:
        if known_mask is None:
            raise ValueError("generated scenario requires a known-region mask")
        known_mask = np.asarray(known_mask)
        if shape is not None and tuple(known_mask.shape) != tuple(shape):
            raise DimensionError(f"known mask {known_mask.shape} vs requested {shape}")
        return (known_mask > 0.5).astype(np.float32)
    if shape is None:
        if known_mask is None:
            raise ValueError("shape or known_mask required")
        shape = known_mask.shape
    value = 1.0 if scenario is LightingScenario.REALISTIC else 0.0
    return np.full(shape, value, np.float32)


@dataclass
class Violation:
    kind: str  # "shape" | "range" | "finite"
    channel: str
    message: str
    index: Optional[tuple] = None


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __len__(self) -> int:
        return len(self.violations)

    def __str__(self) -> str:
        if self.ok:
            return "valid"
        return "\n".join(f"{v.kind}:{v.channel}: {v.message}" for v in self.violations)


_EXPECTED_CH = {"albedo": 3, "roughness": 0, "metallic": 0, "bump": 3}


def validate_material_set(m: MaterialSet, max_range_reports: int = 16) -> ValidationReport:
    report = ValidationReport()
    ref = np.asarray(m.albedo).shape[:2]
    for name, nch in _EXPECTED_CH.items():
        a = np.asarray(getattr(m, name))
        want = ref + ((nch,) if nch else ())
        if a.shape != want:
            report.violations.append(Violation("shape", name, f"shape {a.shape}, expected {want}"))
            continue
        bad_nan = ~np.isfinite(a)
        if bad_nan.any():
            idx = tuple(int(i) for i in np.argwhere(bad_nan)[0])
            report.violations.append(Violation("finite", name, f"non-finite value at {idx}", idx))
        bad = np.argwhere(np.isfinite(a) & ((a < 0.0) | (a > 1.0)))
        for idx in bad[:max_range_reports]:
            idx = tuple(int(i) for i in idx)
            report.violations.append(
                Violation("range", name, f"value {float(a[idx]):.4g} outside [0,1] at {idx}", idx))
        if len(bad) > max_range_reports:
            report.violations.append(
                Violation("range", name, f"... {len(bad) - max_range_reports} further out-of-range values"))
    return report


def assert_valid(m: MaterialSet, stage: str = "") -> MaterialSet:
    """Stage-boundary guard: raise on any invariant violation."""
    report = validate_material_set(m)
    if not report.ok:
        first = report.violations[0]
        err = DimensionError if first.kind == "shape" else DomainError
        raise err(f"{stage or 'material set'}: {first.channel}: {first.message}")
    return m
