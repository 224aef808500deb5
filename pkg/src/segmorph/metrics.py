"""Overlap, boundary-distance and information metrics between segmentations."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .distance import squared_distance_field
from .errors import EmptyMask, InsufficientVoxels, ScaleRangeTooNarrow
from .morphometry import fractal_dimension, volume_ml
from .volume import (
    BinaryMask,
    LabelDictionary,
    LabelMap3D,
    boundary_bits,
    check_same_grid,
    extract_mask,
    nonzero_mask,
    subtract_labels,
)

log = logging.getLogger(__name__)

WHOLE_BRAIN = "Whole-Brain"
HD_PERCENTILE = 95.0


@dataclass(frozen=True)
class MetricRecord:
    subject_id: str
    structure_name: str
    method_name: str
    dice: float | None = None
    iou: float | None = None
    hd95_mm: float | None = None
    nmi: float | None = None
    volume_ml: float | None = None
    fd: float | None = None
    label_id: int | None = None
    flags: tuple[str, ...] = field(default=())


def _counts(a: BinaryMask, b: BinaryMask) -> tuple[int, int, int]:
    check_same_grid(a, b)
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter, a.voxel_count, b.voxel_count


def dice(a: BinaryMask, b: BinaryMask) -> float:
    """2|A∩B| / (|A|+|B|); two empty masks score 1.0."""
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """|A∩B| / |A∪B|; two empty masks score 1.0."""
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def _bbox(bits: np.ndarray):
    nz = np.nonzero(bits)
    return tuple(slice(int(ix.min()), int(ix.max()) + 1) for ix in nz)


def directed_boundary_distances(src: np.ndarray, dst: np.ndarray, spacing) -> np.ndarray:
    """Distance (mm) from every true voxel of ``src`` to the nearest true voxel of ``dst``."""
    # The nearest dst voxel always lies in dst's bounding box, so the union box is exact.
    box = _bbox(src | dst)
    sq = squared_distance_field(dst[box], spacing)
    return np.sqrt(sq[src[box]])


def percentile_linear(values: np.ndarray, q: float) -> float:
    """Linear interpolation between order statistics at rank q/100·(n−1)."""
    return float(np.percentile(values, q, method="linear"))


def hd95(a: BinaryMask, b: BinaryMask, connectivity: str = "face6") -> float:
    """Symmetric 95th-percentile Hausdorff distance between the boundaries of a and b, in mm."""
    check_same_grid(a, b)
    if a.empty or b.empty:
        raise EmptyMask("HD95 is undefined when either mask is empty")
    ba = boundary_bits(a.bits, connectivity)
    bb = boundary_bits(b.bits, connectivity)
    d_ab = directed_boundary_distances(ba, bb, a.spacing)
    d_ba = directed_boundary_distances(bb, ba, a.spacing)
    return max(percentile_linear(d_ab, HD_PERCENTILE), percentile_linear(d_ba, HD_PERCENTILE))


@dataclass(frozen=True)
class JointLabelHistogram:
    labels_a: np.ndarray
    labels_b: np.ndarray
    counts: np.ndarray  # counts[i, j]: voxels with label_a == labels_a[i] and label_b == labels_b[j]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_arrays(cls, a: np.ndarray, b: np.ndarray) -> "JointLabelHistogram":
        ua, ia = np.unique(a.ravel(), return_inverse=True)
        ub, ib = np.unique(b.ravel(), return_inverse=True)
        flat = np.bincount(ia.astype(np.int64) * len(ub) + ib, minlength=len(ua) * len(ub))
        return cls(ua, ub, flat.reshape(len(ua), len(ub)))

    def entropies(self) -> tuple[float, float, float]:
        """H(A), H(B), H(A,B) in nats."""
        p = self.counts / self.total
        pa, pb = p.sum(axis=1), p.sum(axis=0)
        return _entropy(pa), _entropy(pb), _entropy(p.ravel())


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _nmi(hist: JointLabelHistogram) -> float:
    const_a = len(hist.labels_a) == 1
    const_b = len(hist.labels_b) == 1
    if const_a and const_b:
        return 1.0 if hist.labels_a[0] == hist.labels_b[0] else 0.0
    if const_a or const_b:
        return 0.0
    ha, hb, hab = hist.entropies()
    mi = ha + hb - hab
    return min(max(2.0 * mi / (ha + hb), 0.0), 1.0)


def nmi_binary(a: BinaryMask, b: BinaryMask) -> float:
    """2·I(A;B) / (H(A)+H(B)) over the 2×2 foreground/background histogram of the grid."""
    check_same_grid(a, b)
    return _nmi(JointLabelHistogram.from_arrays(a.bits, b.bits))


def nmi_multiclass(a: LabelMap3D, b: LabelMap3D) -> float:
    """NMI over the full joint label histogram, background included."""
    check_same_grid(a, b)
    return _nmi(JointLabelHistogram.from_arrays(a.labels, b.labels))


def fd_or_flag(mask: BinaryMask, flags: list[str], tag: str) -> float | None:
    if mask.empty:
        return None
    try:
        return fractal_dimension(mask).fd
    except (InsufficientVoxels, ScaleRangeTooNarrow) as exc:
        flags.append(f"fd_unavailable_{tag}:{type(exc).__name__}")
        return None


def compare_masks(ref: BinaryMask, cand: BinaryMask, connectivity: str = "face6",
                  *, fd: bool = False, **meta) -> MetricRecord:
    """All quality metrics plus candidate volume (and optionally FD) for one mask pair."""
    flags: list[str] = []
    if ref.empty:
        flags.append("empty_reference")
    if cand.empty:
        flags.append("empty_candidate")
    hd = None if (ref.empty or cand.empty) else hd95(ref, cand, connectivity)
    return MetricRecord(
        dice=dice(ref, cand),
        iou=iou(ref, cand),
        hd95_mm=hd,
        nmi=nmi_binary(ref, cand),
        volume_ml=volume_ml(cand),
        fd=fd_or_flag(cand, flags, "candidate") if fd else None,
        flags=tuple(flags),
        **meta,
    )


def evaluate_pair(ref: LabelMap3D, cand: LabelMap3D, dictionary: LabelDictionary,
                  connectivity: str = "face6", *, csf_ids: Iterable[int] = (), fd: bool = False,
                  subject_id: str = "", method_name: str = "") -> list[MetricRecord]:
    """One record per dictionary structure, then a whole-brain record.

    The whole-brain record compares nonzero-vs-nonzero masks after removing
    ``csf_ids`` and carries the multi-class NMI of the full maps.
    """
    check_same_grid(ref, cand)
    for name, m in (("reference", ref), ("candidate", cand)):
        extra = dictionary.uncovered(m.present_labels)
        if extra:
            log.warning("%s %s: labels not in dictionary: %s", subject_id, name, extra)

    records = []
    for entry in dictionary.entries:
        records.append(compare_masks(
            extract_mask(ref, {entry.label_id}), extract_mask(cand, {entry.label_id}), connectivity,
            fd=fd, subject_id=subject_id, structure_name=entry.name, method_name=method_name,
            label_id=entry.label_id,
        ))

    csf = list(csf_ids)
    wb = compare_masks(
        nonzero_mask(subtract_labels(ref, csf)), nonzero_mask(subtract_labels(cand, csf)),
        connectivity, fd=fd, subject_id=subject_id, structure_name=WHOLE_BRAIN,
        method_name=method_name,
    )
    records.append(MetricRecord(**{**wb.__dict__, "nmi": nmi_multiclass(ref, cand)}))
    return records
