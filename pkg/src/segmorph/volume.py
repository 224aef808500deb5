"""Label maps, binary masks and label-set manipulation.

Arrays are stored with shape ``(nx, ny, nz)`` and indexed ``[x, y, z]``.  The
on-disk ordering is x-fastest, i.e. numpy Fortran order.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import DictionaryInvalid, GridMismatch, UncoveredLabel

Connectivity = Literal["face6", "full26"]
CONNECTIVITIES = ("face6", "full26")
HEMISPHERES = ("left", "right", "midline")


def _as_spacing(spacing: Sequence[float]) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3 or not all(s > 0 for s in sp):
        raise ValueError(f"spacing must be 3 positive reals, got {spacing!r}")
    return sp  # type: ignore[return-value]


SPACING_RTOL = 1e-6  # float32 headers carry about 7 significant digits


def _same_grid(a, b) -> bool:
    return a.dims == b.dims and bool(np.allclose(a.spacing, b.spacing, rtol=SPACING_RTOL, atol=0.0))


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LabelMap3D:
    """Integer-labelled voxel grid with physical spacing in mm."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    provenance: str = ""

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3 or min(labels.shape) < 1:
            raise ValueError(f"labels must be a non-empty 3D array, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise TypeError(f"labels must have an integer dtype, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.labels.shape)  # type: ignore[return-value]

    @cached_property
    def present_labels(self) -> frozenset[int]:
        """Nonzero label ids present in the map."""
        return frozenset(int(v) for v in np.unique(self.labels) if v != 0)

    def same_grid(self, other: "LabelMap3D | BinaryMask") -> bool:
        return _same_grid(self, other)

    def __eq__(self, other):
        if not isinstance(other, LabelMap3D):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(self.labels, other.labels)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Single-structure mask; ``source_labels`` records the merged label ids."""

    bits: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    source_labels: frozenset[int] = frozenset()

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 3:
            raise ValueError(f"mask must be 3D, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits))
        object.__setattr__(self, "spacing", _as_spacing(self.spacing))
        object.__setattr__(self, "source_labels", frozenset(int(v) for v in self.source_labels))

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(d) for d in self.bits.shape)  # type: ignore[return-value]

    @cached_property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    @property
    def empty(self) -> bool:
        return self.voxel_count == 0

    def same_grid(self, other: "LabelMap3D | BinaryMask") -> bool:
        return _same_grid(self, other)

    def with_bits(self, bits: np.ndarray) -> "BinaryMask":
        return BinaryMask(bits, self.spacing, self.source_labels)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(self.bits, other.bits)


def check_same_grid(a, b) -> None:
    if not _same_grid(a, b):
        raise GridMismatch(
            f"grids differ: dims {a.dims} vs {b.dims}, spacing {a.spacing} vs {b.spacing}"
        )


@dataclass(frozen=True)
class BoundarySet:
    """Boundary voxel coordinates, one ``(x, y, z)`` row per voxel, in flat-index order."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    coords: np.ndarray

    def __len__(self) -> int:
        return int(self.coords.shape[0])

    def to_mask(self) -> BinaryMask:
        bits = np.zeros(self.dims, dtype=bool)
        if len(self):
            bits[tuple(self.coords.T)] = True
        return BinaryMask(bits, self.spacing)


# -- label dictionary ---------------------------------------------------------

@dataclass(frozen=True)
class LabelEntry:
    label_id: int
    name: str
    hemisphere: str = "midline"
    pool_partner: int | None = None


_SIDE_PREFIX = re.compile(r"^(left|right|lh|rh)[-_ ]", re.IGNORECASE)


def pooled_name(name: str) -> str:
    """Strip a leading hemisphere prefix: ``Left-Hippocampus`` -> ``Hippocampus``."""
    return _SIDE_PREFIX.sub("", name)


@dataclass(frozen=True)
class LabelDictionary:
    entries: tuple[LabelEntry, ...]

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        ids = [e.label_id for e in entries]
        if len(set(ids)) != len(ids):
            raise DictionaryInvalid("duplicate label_id in dictionary")
        by_id = {e.label_id: e for e in entries}
        for e in entries:
            if e.label_id <= 0:
                raise DictionaryInvalid(f"label_id must be positive: {e.label_id}")
            if e.hemisphere not in HEMISPHERES:
                raise DictionaryInvalid(f"bad hemisphere {e.hemisphere!r} for {e.name}")
            if e.pool_partner is None:
                continue
            partner = by_id.get(e.pool_partner)
            if partner is None or partner.pool_partner != e.label_id:
                raise DictionaryInvalid(f"pool_partner of {e.name} is not symmetric")
            if {e.hemisphere, partner.hemisphere} != {"left", "right"}:
                raise DictionaryInvalid(f"pool pair {e.name}/{partner.name} must cross hemispheres")

    @cached_property
    def by_id(self) -> dict[int, LabelEntry]:
        return {e.label_id: e for e in self.entries}

    @property
    def ids(self) -> frozenset[int]:
        return frozenset(self.by_id)

    def uncovered(self, labels: Iterable[int]) -> list[int]:
        return sorted(int(v) for v in labels if v != 0 and int(v) not in self.by_id)

    def pairs(self) -> list[tuple[LabelEntry, LabelEntry]]:
        """(left, right) entry pairs, ordered by left label id."""
        out = []
        for e in self.entries:
            if e.pool_partner is not None and e.hemisphere == "left":
                out.append((e, self.by_id[e.pool_partner]))
        return sorted(out, key=lambda p: p[0].label_id)

    @classmethod
    def from_records(cls, records: Iterable[Mapping]) -> "LabelDictionary":
        try:
            entries = [
                LabelEntry(
                    label_id=int(r["label_id"]),
                    name=str(r["name"]),
                    hemisphere=str(r.get("hemisphere", "midline")),
                    pool_partner=None if r.get("pool_partner") is None else int(r["pool_partner"]),
                )
                for r in records
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise DictionaryInvalid(f"malformed dictionary entry: {exc}") from exc
        return cls(tuple(entries))

    def to_records(self) -> list[dict]:
        return [
            {"label_id": e.label_id, "name": e.name, "hemisphere": e.hemisphere,
             "pool_partner": e.pool_partner}
            for e in self.entries
        ]


def load_label_dictionary(path) -> LabelDictionary:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DictionaryInvalid(f"{path}: {exc}") from exc
    if isinstance(data, Mapping):
        data = data.get("labels", data.get("entries"))
    if not isinstance(data, list):
        raise DictionaryInvalid(f"{path}: expected a list of label entries")
    return LabelDictionary.from_records(data)


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    session_id: str = ""
    age_months: float | None = None
    sex: str = "unknown"
    reference_path: str = ""
    candidate_paths: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.sex not in ("f", "m", "unknown"):
            raise ValueError(f"sex must be f, m or unknown, got {self.sex!r}")
        if self.age_months is not None and self.age_months < 0:
            raise ValueError("age_months must be non-negative")


# -- operations ---------------------------------------------------------------

def extract_mask(labelmap: LabelMap3D, label_ids: Iterable[int]) -> BinaryMask:
    ids = frozenset(int(i) for i in label_ids)
    if not ids:
        raise ValueError("label_ids must be non-empty")
    if 0 in ids:
        raise ValueError("label 0 is background and cannot be extracted")
    bits = np.isin(labelmap.labels, np.fromiter(ids, dtype=np.int64))
    return BinaryMask(bits, labelmap.spacing, ids)


def nonzero_mask(labelmap: LabelMap3D) -> BinaryMask:
    return BinaryMask(labelmap.labels != 0, labelmap.spacing, labelmap.present_labels)


def subtract_labels(labelmap: LabelMap3D, remove_ids: Iterable[int]) -> LabelMap3D:
    """Zero every voxel whose label is in ``remove_ids``."""
    ids = [int(i) for i in remove_ids]
    if 0 in ids:
        raise ValueError("cannot remove background label 0")
    if not ids:
        return labelmap
    labels = np.where(np.isin(labelmap.labels, ids), 0, labelmap.labels).astype(labelmap.labels.dtype)
    return LabelMap3D(labels, labelmap.spacing, labelmap.provenance)


def pool_hemispheres(labelmap: LabelMap3D, dictionary: LabelDictionary
                     ) -> tuple[LabelMap3D, LabelDictionary]:
    """Merge each right-hemisphere label into its left partner.

    The returned dictionary holds one entry per merged pair (named without the
    side prefix, under the left id) plus every unpaired entry.
    """
    missing = dictionary.uncovered(labelmap.present_labels)
    if missing:
        raise UncoveredLabel(f"labels not in dictionary: {missing}")
    lut_size = max(max(dictionary.ids, default=0), int(labelmap.labels.max())) + 1
    lut = np.arange(lut_size, dtype=np.int64)
    entries = []
    for e in dictionary.entries:
        if e.pool_partner is None:
            entries.append(e)
        elif e.hemisphere == "right":
            lut[e.label_id] = e.pool_partner
        else:
            entries.append(LabelEntry(e.label_id, pooled_name(e.name), "midline", None))
    labels = lut[labelmap.labels].astype(labelmap.labels.dtype)
    return LabelMap3D(labels, labelmap.spacing, labelmap.provenance), LabelDictionary(tuple(entries))


def structuring_element(connectivity: Connectivity) -> np.ndarray:
    if connectivity == "face6":
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == "full26":
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be one of {CONNECTIVITIES}, got {connectivity!r}")


def boundary_bits(bits: np.ndarray, connectivity: Connectivity = "face6") -> np.ndarray:
    # border_value=0: voxels outside the grid count as false
    interior = ndimage.binary_erosion(bits, structure=structuring_element(connectivity), border_value=0)
    return bits & ~interior


def boundary_voxels(mask: BinaryMask, connectivity: Connectivity = "face6") -> BoundarySet:
    """True voxels with at least one false neighbour under ``connectivity``."""
    edge = boundary_bits(mask.bits, connectivity)
    # transpose so rows follow x-fastest flat order
    coords = np.argwhere(edge.transpose(2, 1, 0))[:, ::-1]
    return BoundarySet(mask.dims, mask.spacing, np.ascontiguousarray(coords))
