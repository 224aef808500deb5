"""Exact Euclidean distance transform on anisotropic voxel grids.

Separable squared-distance transform: one 1-D lower-envelope-of-parabolas pass
per axis (Felzenszwalb & Huttenlocher), each weighted by that axis' spacing².
"""
from __future__ import annotations

import numba
import numpy as np

from .errors import EmptyMask
from .volume import BinaryMask


TIE_EPS = 1e-9


@numba.njit(cache=True, nogil=True)
def _envelope_rows(f, weight):
    """In place: f[r, q] <- min_p f[r, p] + weight * (q - p)**2, skipping infinite sites."""
    nrows, n = f.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    src = np.empty(n, dtype=np.float64)
    for r in range(nrows):
        for q in range(n):
            src[q] = f[r, q]
        k = -1
        for q in range(n):
            fq = src[q]
            if fq == np.inf:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            while True:
                p = v[k]
                s = ((fq + weight * (q * q)) - (src[p] + weight * (p * p))) / (2.0 * weight * (q - p))
                # pop only on a clear win; near-ties stay and are settled in the scan
                if s < z[k] - TIE_EPS * (1.0 + abs(s)):
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            k += 1
            v[k] = q
            z[k] = -np.inf if k == 0 else s
            z[k + 1] = np.inf
        if k < 0:
            continue  # whole line is infinite
        j = 0
        for q in range(n):
            while z[j + 1] < q:
                j += 1
            d = q - v[j]
            best = src[v[j]] + weight * (d * d)
            # breakpoints are rounded; at a near-tie the adjacent parabola can round lower
            if j > 0:
                d = q - v[j - 1]
                best = min(best, src[v[j - 1]] + weight * (d * d))
            if j < k:
                d = q - v[j + 1]
                best = min(best, src[v[j + 1]] + weight * (d * d))
            f[r, q] = best


def _pass(sq: np.ndarray, axis: int, weight: float) -> np.ndarray:
    moved = np.moveaxis(sq, axis, -1)
    shape = moved.shape
    rows = np.ascontiguousarray(moved.reshape(-1, shape[-1]))
    _envelope_rows(rows, float(weight))
    return np.moveaxis(rows.reshape(shape), -1, axis)


def squared_distance_field(bits: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Squared mm distance from each voxel to the nearest true voxel of ``bits``."""
    sq = np.where(bits, 0.0, np.inf)
    for axis in range(bits.ndim):
        sq = _pass(sq, axis, float(spacing[axis]) * float(spacing[axis]))
    return sq


def distance_transform(mask: BinaryMask) -> np.ndarray:
    """Per-voxel Euclidean distance (mm) to the nearest true voxel of ``mask``."""
    if mask.empty:
        raise EmptyMask("distance transform of an empty mask is undefined")
    return np.sqrt(squared_distance_field(mask.bits, mask.spacing))
