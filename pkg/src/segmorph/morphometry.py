"""Structure volume and 3D box-counting fractal dimension."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    EmptyMask,
    InsufficientVoxels,
    ScaleRangeTooNarrow,
    ScaleTooLarge,
    TooFewScales,
)
from .volume import BinaryMask

OFFSET_POLICIES = ("default", "origin", "exhaustive")
EXHAUSTIVE_MAX_SCALE = 4
ANISOTROPY_LIMIT = 1.05
R2_TIE_TOL = 1e-12
MIN_FD_VOXELS = 8
MIN_SCALES = 3


def volume_ml(mask: BinaryMask) -> float:
    """Voxel count times voxel volume, converted from mm³ to mL."""
    sx, sy, sz = mask.spacing
    return mask.voxel_count * sx * sy * sz / 1000.0


@dataclass(frozen=True)
class BoxCountSeries:
    scales: tuple[int, ...]
    counts: tuple[int, ...]
    offsets_tried: tuple[int, ...]
    best_offsets: tuple[tuple[int, int, int], ...]


@dataclass(frozen=True)
class FDFit:
    fd: float
    intercept: float
    r_squared: float
    window: tuple[int, int]  # inclusive scale indices into series
    n_scales_used: int
    series: BoxCountSeries
    degenerate: bool = False
    anisotropic: bool = False


def dyadic_scales(dims) -> list[int]:
    """Powers of two from 1 up to the largest one <= min(dims)."""
    top = min(int(d) for d in dims)
    if top < 1:
        return []
    return [1 << k for k in range(int(math.log2(top)) + 1)]


def lattice_offsets(s: int) -> list[tuple[int, int, int]]:
    steps = sorted({0, s // 3, (2 * s) // 3})
    return list(itertools.product(steps, repeat=3))


def _count_boxes(bits: np.ndarray, start, s: int, offset) -> int:
    """Occupied s-boxes when box index along each axis is floor((x + offset) / s).

    ``bits`` is a crop of the full grid beginning at global coordinate ``start``.
    """
    pads = []
    for n, c, o in zip(bits.shape, start, offset):
        front = (c + o) % s
        back = -(front + n) % s
        pads.append((front, back))
    padded = np.pad(bits, pads) if any(p != (0, 0) for p in pads) else bits
    a, b, c = (d // s for d in padded.shape)
    return int(np.count_nonzero(padded.reshape(a, s, b, s, c, s).any(axis=(1, 3, 5))))


def box_count(mask: BinaryMask, scales=None, offset_policy: str = "default") -> BoxCountSeries:
    """N(s) for each scale, minimised over the grid offsets chosen by ``offset_policy``.

    ``default``: all s³ offsets for s <= 4; otherwise the 3×3×3 lattice
    {0, s//3, 2s//3}³ plus the best offset found at the previous scale, which
    keeps N(s) non-increasing. ``origin`` uses offset 0 only; ``exhaustive``
    tries all s³ offsets at every scale.
    """
    if mask.empty:
        raise EmptyMask("box counting requires a non-empty mask")
    if offset_policy not in OFFSET_POLICIES:
        raise ValueError(f"offset_policy must be one of {OFFSET_POLICIES}")
    allowed = dyadic_scales(mask.dims)
    scales = allowed if scales is None else sorted(int(s) for s in scales)
    for s in scales:
        if s < 1 or s & (s - 1):
            raise ValueError(f"scale {s} is not a power of two")
        if s > allowed[-1]:
            raise ScaleTooLarge(f"scale {s} exceeds largest dyadic scale {allowed[-1]} for dims {mask.dims}")
    if len(set(scales)) != len(scales):
        raise ValueError("scales must be distinct")

    nz = np.nonzero(mask.bits)
    start = tuple(int(ix.min()) for ix in nz)
    stop = tuple(int(ix.max()) + 1 for ix in nz)
    crop = mask.bits[start[0]:stop[0], start[1]:stop[1], start[2]:stop[2]]

    counts, tried, best_offsets = [], [], []
    prev_best = None
    for s in scales:
        if offset_policy == "origin":
            offsets = [(0, 0, 0)]
        elif offset_policy == "exhaustive" or s <= EXHAUSTIVE_MAX_SCALE:
            offsets = list(itertools.product(range(s), repeat=3))
        else:
            offsets = lattice_offsets(s)
            if prev_best is not None and prev_best not in offsets:
                offsets.append(prev_best)
        best, best_off = None, None
        for off in offsets:
            n = _count_boxes(crop, start, s, off)
            if best is None or n < best:
                best, best_off = n, off
        counts.append(best)
        tried.append(len(offsets))
        best_offsets.append(best_off)
        prev_best = best_off
    return BoxCountSeries(tuple(scales), tuple(counts), tuple(tried), tuple(best_offsets))


def _ols(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, bool]:
    """Slope, intercept, r² and whether y is constant."""
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    slope = float(dx @ dy) / sxx
    intercept = ym - slope * xm
    if syy == 0.0:
        return 0.0, float(ym), 1.0, True
    resid = y - (intercept + slope * x)
    r2 = 1.0 - float(resid @ resid) / syy
    return slope, float(intercept), min(max(r2, 0.0), 1.0), False


def fd_fit(series: BoxCountSeries) -> FDFit:
    """Best log-log window: OLS of log N(s) on log(1/s) over every contiguous window of >= 3 scales.

    The window with the highest r² wins; r² values within 1e-12 tie and are
    broken by wider window, then smaller first index. Windows with constant
    N carry no scaling information and only win when the whole series is
    constant, which is returned as fd 0 flagged ``degenerate``.
    """
    m = len(series.scales)
    if m < MIN_SCALES:
        raise TooFewScales(f"need at least {MIN_SCALES} scales, got {m}")
    x = -np.log(np.asarray(series.scales, dtype=float))
    y = np.log(np.asarray(series.counts, dtype=float))

    best = None
    best_key = None
    for i in range(m):
        for j in range(i + MIN_SCALES - 1, m):
            slope, icpt, r2, flat = _ols(x[i:j + 1], y[i:j + 1])
            cand = (not flat, r2, j - i + 1, -i)
            if best_key is None or _better(cand, best_key):
                best_key = cand
                best = (slope, icpt, r2, (i, j), flat)
    slope, icpt, r2, window, flat = best
    return FDFit(
        fd=slope, intercept=icpt, r_squared=r2, window=window,
        n_scales_used=window[1] - window[0] + 1, series=series, degenerate=flat,
    )


def _better(a, b) -> bool:
    # a, b: (informative, r2, width, -first_index)
    if a[0] != b[0]:
        return a[0]
    if abs(a[1] - b[1]) > R2_TIE_TOL:
        return a[1] > b[1]
    return (a[2], a[3]) > (b[2], b[3])


def fractal_dimension(mask: BinaryMask, offset_policy: str = "default") -> FDFit:
    """Box-counting FD over all dyadic scales of the grid, computed in voxel units."""
    if mask.voxel_count < MIN_FD_VOXELS:
        raise InsufficientVoxels(f"FD needs >= {MIN_FD_VOXELS} voxels, mask has {mask.voxel_count}")
    scales = dyadic_scales(mask.dims)
    if len(scales) < MIN_SCALES:
        raise ScaleRangeTooNarrow(f"grid {mask.dims} supports only {len(scales)} dyadic scales")
    fit = fd_fit(box_count(mask, scales, offset_policy))
    aniso = max(mask.spacing) / min(mask.spacing) > ANISOTROPY_LIMIT
    if aniso:
        fit = FDFit(**{**fit.__dict__, "anisotropic": True})
    return fit
