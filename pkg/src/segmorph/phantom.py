"""Synthetic masks with known geometry, and seeded perturbations that mimic segmentation error.

Random draws use SplitMix64 (Steele, Lea & Flood 2014): state_i = seed + i·0x9E3779B97F4A7C15,
output mixed with the standard two-multiply finaliser, uniform = (z >> 11)·2⁻⁵³.
Candidates are visited in x-fastest flat order, one draw each, so ports can
reproduce perturbed fixtures exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import GridTooSmall, LevelOutOfRange
from .morphometry import fractal_dimension, volume_ml
from .volume import BinaryMask, boundary_bits, structuring_element

log = logging.getLogger(__name__)

DEFAULT_MARGIN = 2
DEFAULT_SEED = 20240917

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64(seed: int, n: int, start: int = 0) -> np.ndarray:
    """Outputs ``start .. start+n-1`` of the SplitMix64 stream seeded with ``seed``."""
    i = np.arange(start + 1, start + n + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(seed % (1 << 64)) + i * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform01(seed: int, n: int) -> np.ndarray:
    return (splitmix64(seed, n) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


# -- shapes -------------------------------------------------------------------

def _grid(n: int, margin: int) -> np.ndarray:
    if n < 8:
        raise GridTooSmall(f"phantom size must be >= 8, got {n}")
    if margin < 0:
        raise ValueError("margin must be non-negative")
    side = n + 2 * margin
    return np.zeros((side, side, side), dtype=bool)


def make_cube(n: int, margin: int = DEFAULT_MARGIN) -> BinaryMask:
    """Filled n³ cube centred in an (n + 2·margin)³ grid."""
    bits = _grid(n, margin)
    bits[margin:margin + n, margin:margin + n, margin:margin + n] = True
    return BinaryMask(bits)


def make_plane(n: int, margin: int = DEFAULT_MARGIN) -> BinaryMask:
    """One-voxel-thick n×n plane normal to z through the grid centre."""
    bits = _grid(n, margin)
    mid = bits.shape[2] // 2
    bits[margin:margin + n, margin:margin + n, mid] = True
    return BinaryMask(bits)


def make_line(n: int, margin: int = DEFAULT_MARGIN) -> BinaryMask:
    """n voxels along x through the grid centre."""
    bits = _grid(n, margin)
    mid = bits.shape[1] // 2
    bits[margin:margin + n, mid, mid] = True
    return BinaryMask(bits)


def make_sphere(n: int, radius_voxels: float, margin: int = DEFAULT_MARGIN) -> BinaryMask:
    """Voxels whose centres lie within ``radius_voxels`` of the grid centre."""
    bits = _grid(n, margin)
    if not 0 < radius_voxels <= n / 2:
        raise GridTooSmall(f"radius {radius_voxels} does not fit a size-{n} phantom")
    c = (bits.shape[0] - 1) / 2.0
    ax = (np.arange(bits.shape[0]) - c) ** 2
    r2 = ax[:, None, None] + ax[None, :, None] + ax[None, None, :]
    return BinaryMask(r2 <= radius_voxels ** 2)


def make_menger(level: int) -> BinaryMask:
    """Menger sponge on a 3^level grid: a voxel is removed if, at any digit
    position, at least two of its base-3 coordinates equal 1."""
    if not 1 <= level <= 4:
        raise LevelOutOfRange(f"Menger level must be in [1, 4], got {level}")
    side = 3 ** level
    idx = np.arange(side)
    keep = np.ones((side, side, side), dtype=bool)
    for k in range(level):
        digit = (idx // 3 ** k) % 3 == 1
        dx, dy, dz = digit[:, None, None], digit[None, :, None], digit[None, None, :]
        ones = dx.astype(np.int8) + dy + dz
        keep &= ones < 2
    return BinaryMask(keep)


SHAPES = ("cube", "sphere", "plane", "line", "menger")


# -- perturbation -------------------------------------------------------------

@dataclass(frozen=True)
class PerturbationSpec:
    kind: str  # dilate | erode | boundary_flip
    iterations: int = 0
    flip_rate: float = 0.0
    seed: int = DEFAULT_SEED
    connectivity: str = "face6"

    def __post_init__(self):
        if self.kind not in ("dilate", "erode", "boundary_flip"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if not 0.0 <= self.flip_rate <= 1.0:
            raise ValueError("flip_rate must lie in [0, 1]")
        structuring_element(self.connectivity)

    @classmethod
    def parse(cls, text: str) -> "PerturbationSpec":
        """``dilate:2``, ``erode:1:full26`` or ``flip:0.1[:seed][:connectivity]``."""
        parts = text.split(":")
        kind = {"flip": "boundary_flip"}.get(parts[0], parts[0])
        if len(parts) < 2:
            raise ValueError(f"perturbation {text!r} needs a value, e.g. dilate:1")
        rest = parts[2:]
        conn = "face6"
        if rest and rest[-1] in ("face6", "full26"):
            conn = rest.pop()
        if kind == "boundary_flip":
            seed = int(rest[0]) if rest else DEFAULT_SEED
            return cls(kind, flip_rate=float(parts[1]), seed=seed, connectivity=conn)
        if rest:
            raise ValueError(f"unexpected fields in {text!r}")
        return cls(kind, iterations=int(parts[1]), connectivity=conn)

    def label(self) -> str:
        if self.kind == "boundary_flip":
            return f"flip:{self.flip_rate:g}:{self.seed}:{self.connectivity}"
        return f"{self.kind}:{self.iterations}:{self.connectivity}"


def flip_candidates(bits: np.ndarray, connectivity: str) -> np.ndarray:
    """Boundary voxels plus the false face-neighbours of the mask."""
    outer = ndimage.binary_dilation(bits, structure=structuring_element("face6")) & ~bits
    return boundary_bits(bits, connectivity) | outer


def perturb(mask: BinaryMask, spec: PerturbationSpec) -> BinaryMask:
    bits = mask.bits
    if spec.kind in ("dilate", "erode"):
        if spec.iterations == 0:
            return mask
        op = ndimage.binary_dilation if spec.kind == "dilate" else ndimage.binary_erosion
        out = op(bits, structure=structuring_element(spec.connectivity),
                 iterations=spec.iterations, border_value=0)
    else:
        if spec.flip_rate == 0.0:
            return mask
        cand = flip_candidates(bits, spec.connectivity)
        flat = np.flatnonzero(cand.ravel(order="F"))
        hit = flat[uniform01(spec.seed, flat.size) < spec.flip_rate]
        out = bits.copy(order="F")
        view = out.reshape(-1, order="F")
        view[hit] = ~view[hit]
        out = view.reshape(bits.shape, order="F")
    result = mask.with_bits(out)
    if result.empty:
        log.warning("perturbation %s emptied the mask", spec.label())
    return result


# -- propagation experiment ---------------------------------------------------

@dataclass(frozen=True)
class PropagationRow:
    structure: str
    perturbation: str
    delta_volume_ml: float
    delta_fd: float


DEFAULT_SCHEDULE: tuple[PerturbationSpec, ...] = (
    PerturbationSpec("erode", iterations=1),
    PerturbationSpec("dilate", iterations=1),
    PerturbationSpec("dilate", iterations=2),
    PerturbationSpec("dilate", iterations=3),
    PerturbationSpec("dilate", iterations=1, connectivity="full26"),
    PerturbationSpec("boundary_flip", flip_rate=0.05, seed=DEFAULT_SEED),
    PerturbationSpec("boundary_flip", flip_rate=0.15, seed=DEFAULT_SEED + 1),
    PerturbationSpec("boundary_flip", flip_rate=0.30, seed=DEFAULT_SEED + 2),
)


def default_phantoms() -> dict[str, BinaryMask]:
    return {
        "cube": make_cube(24),
        "menger": make_menger(3),
        "sphere": make_sphere(28, 12),
    }


def propagation_experiment(base_masks: Mapping[str, BinaryMask] | Iterable[tuple[str, BinaryMask]],
                           schedule: Sequence[PerturbationSpec] = DEFAULT_SCHEDULE
                           ) -> list[PropagationRow]:
    """Signed volume and FD change (perturbed − base) for every mask × schedule entry."""
    items = base_masks.items() if isinstance(base_masks, Mapping) else base_masks
    rows = []
    for name, base in items:
        if not schedule:
            continue
        v0 = volume_ml(base)
        fd0 = fractal_dimension(base).fd
        for spec in schedule:
            moved = perturb(base, spec)
            rows.append(PropagationRow(
                structure=name,
                perturbation=spec.label(),
                delta_volume_ml=volume_ml(moved) - v0,
                delta_fd=fractal_dimension(moved).fd - fd0,
            ))
    return rows
