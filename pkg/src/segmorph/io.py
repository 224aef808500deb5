"""Reading and writing label maps: a NIfTI-1 subset and a raw + JSON sidecar format.

Only ``dim`` and ``pixdim`` are used from NIfTI headers; qform/sform are not
interpreted since reference and candidate maps must share a grid anyway.
"""
from __future__ import annotations

import gzip
import io
import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import (
    HeaderCorrupt,
    LengthMismatch,
    NonIntegralLabels,
    ScalingUnsupported,
    SidecarInvalid,
    UnsupportedDatatype,
)
from .volume import LabelMap3D

NIFTI_HEADER_SIZE = 348
NIFTI_MAGIC = b"n+1\x00"

# NIfTI datatype code -> numpy dtype (byte order applied at read time)
NIFTI_DTYPES = {
    2: np.dtype("u1"),
    4: np.dtype("i2"),
    8: np.dtype("i4"),
    16: np.dtype("f4"),
    512: np.dtype("u2"),
}
_DTYPE_CODES = {np.dtype("u1"): 2, np.dtype("i2"): 4, np.dtype("i4"): 8, np.dtype("u2"): 512}

RAW_DTYPES = {"u8": np.dtype("<u1"), "u16": np.dtype("<u2"), "i16": np.dtype("<i2"), "i32": np.dtype("<i4")}
RAW_ORDER = "x-fastest little-endian"


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    return data


def _integral_labels(arr: np.ndarray, source: str) -> np.ndarray:
    if np.issubdtype(arr.dtype, np.integer):
        if arr.size and arr.min() < 0:
            raise NonIntegralLabels(f"{source}: negative labels")
        return arr
    if not np.all(np.isfinite(arr)):
        raise NonIntegralLabels(f"{source}: non-finite voxel values")
    rounded = np.rint(arr)
    if np.max(np.abs(arr - rounded), initial=0.0) > 1e-6:
        raise NonIntegralLabels(f"{source}: float voxel data is not integral")
    if rounded.size and rounded.min() < 0:
        raise NonIntegralLabels(f"{source}: negative labels")
    return rounded.astype(np.int32)


def parse_nifti(data: bytes, source: str = "<bytes>") -> LabelMap3D:
    if len(data) < NIFTI_HEADER_SIZE:
        raise HeaderCorrupt(f"{source}: file shorter than a NIfTI-1 header")
    for endian in "<>":
        if struct.unpack(endian + "i", data[:4])[0] == NIFTI_HEADER_SIZE:
            break
    else:
        raise HeaderCorrupt(f"{source}: sizeof_hdr is not 348")
    if data[344:348] != NIFTI_MAGIC:
        raise HeaderCorrupt(f"{source}: magic {data[344:348]!r} is not 'n+1\\0'")

    dim = struct.unpack(endian + "8h", data[40:56])
    datatype, bitpix = struct.unpack(endian + "2h", data[70:74])
    pixdim = struct.unpack(endian + "8f", data[76:108])
    vox_offset = struct.unpack(endian + "f", data[108:112])[0]
    scl_slope, scl_inter = struct.unpack(endian + "2f", data[112:120])

    ndim = dim[0]
    if not 3 <= ndim <= 7 or any(d < 1 for d in dim[1:4]):
        raise HeaderCorrupt(f"{source}: unsupported dim {dim}")
    if any(d != 1 for d in dim[4:ndim + 1]):
        raise HeaderCorrupt(f"{source}: only 3D volumes are supported, dim={dim}")
    if datatype not in NIFTI_DTYPES:
        raise UnsupportedDatatype(f"{source}: datatype code {datatype}")
    dtype = NIFTI_DTYPES[datatype].newbyteorder(endian)
    if bitpix != dtype.itemsize * 8:
        raise HeaderCorrupt(f"{source}: bitpix {bitpix} disagrees with datatype {datatype}")
    # scl_slope == 0 means "no scaling" per the format definition
    if not (scl_slope in (0.0, 1.0) or np.isnan(scl_slope)) or not (scl_inter == 0.0 or np.isnan(scl_inter)):
        raise ScalingUnsupported(f"{source}: scl_slope={scl_slope}, scl_inter={scl_inter}")

    shape = tuple(int(d) for d in dim[1:4])
    # pixdim is float32 on disk; take its shortest decimal form so 0.8 reads back as 0.8
    spacing = tuple(abs(float(str(np.float32(p)))) for p in pixdim[1:4])
    if not all(p > 0 for p in spacing):
        raise HeaderCorrupt(f"{source}: non-positive pixdim {pixdim[1:4]}")
    offset = int(vox_offset)
    if offset < NIFTI_HEADER_SIZE:
        raise HeaderCorrupt(f"{source}: vox_offset {vox_offset} inside the header")
    nbytes = int(np.prod(shape)) * dtype.itemsize
    if len(data) < offset + nbytes:
        raise HeaderCorrupt(f"{source}: voxel data truncated ({len(data) - offset} < {nbytes} bytes)")

    flat = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)), offset=offset)
    arr = flat.reshape(shape, order="F").astype(dtype.newbyteorder("="))
    labels = _integral_labels(arr, source)
    return LabelMap3D(labels, spacing, provenance=source)


def load_nifti(path) -> LabelMap3D:
    return parse_nifti(_read_bytes(path), source=str(path))


def _label_dtype(labels: np.ndarray) -> np.dtype:
    dt = np.dtype(labels.dtype)
    if dt in _DTYPE_CODES:
        return dt
    hi = int(labels.max()) if labels.size else 0
    for cand in (np.dtype("u1"), np.dtype("u2"), np.dtype("i4")):
        if hi <= np.iinfo(cand).max:
            return cand
    raise UnsupportedDatatype(f"label values up to {hi} do not fit int32")


def nifti_bytes(labelmap: LabelMap3D) -> bytes:
    dtype = _label_dtype(labelmap.labels)
    hdr = bytearray(NIFTI_HEADER_SIZE)
    struct.pack_into("<i", hdr, 0, NIFTI_HEADER_SIZE)
    struct.pack_into("<8h", hdr, 40, 3, *labelmap.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, _DTYPE_CODES[dtype], dtype.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *labelmap.spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<2f", hdr, 112, 1.0, 0.0)
    hdr[123] = 2  # xyzt_units: mm
    hdr[344:348] = NIFTI_MAGIC
    body = np.asarray(labelmap.labels, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    return bytes(hdr) + b"\x00" * 4 + body


def save_nifti(labelmap: LabelMap3D, path) -> None:
    data = nifti_bytes(labelmap)
    if str(path).endswith(".gz"):
        buf = io.BytesIO()
        # mtime=0 keeps the output byte-deterministic
        with gzip.GzipFile(fileobj=buf, mode="wb", mtime=0) as gz:
            gz.write(data)
        data = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(data)


def _sidecar_for(raw_path) -> Path:
    return Path(raw_path).with_suffix(".json")


def load_raw(raw_path, sidecar_path=None) -> LabelMap3D:
    sidecar_path = _sidecar_for(raw_path) if sidecar_path is None else Path(sidecar_path)
    try:
        with open(sidecar_path, encoding="utf-8") as fh:
            meta = json.load(fh)
        dims = [int(d) for d in meta["dims"]]
        spacing = [float(s) for s in meta["spacing_mm"]]
        dtype_name = meta["dtype"]
        order = meta.get("order", RAW_ORDER)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SidecarInvalid(f"{sidecar_path}: {exc}") from exc
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise SidecarInvalid(f"{sidecar_path}: dims must be 3 positive integers")
    if len(spacing) != 3 or any(s <= 0 for s in spacing):
        raise SidecarInvalid(f"{sidecar_path}: spacing_mm must be 3 positive reals")
    if dtype_name not in RAW_DTYPES:
        raise SidecarInvalid(f"{sidecar_path}: dtype {dtype_name!r} not in {sorted(RAW_DTYPES)}")
    if order != RAW_ORDER:
        raise SidecarInvalid(f"{sidecar_path}: order must be {RAW_ORDER!r}")

    dtype = RAW_DTYPES[dtype_name]
    with open(raw_path, "rb") as fh:
        data = fh.read()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(data) != expected:
        raise LengthMismatch(f"{raw_path}: {len(data)} bytes, expected {expected}")
    arr = np.frombuffer(data, dtype=dtype).reshape(dims, order="F").astype(dtype.newbyteorder("="))
    if arr.size and arr.min() < 0:
        raise NonIntegralLabels(f"{raw_path}: negative labels")
    return LabelMap3D(arr, tuple(spacing), provenance=str(raw_path))


def raw_dtype_name(labels: np.ndarray) -> str:
    dt = np.dtype(labels.dtype).newbyteorder("<")
    for name, cand in RAW_DTYPES.items():
        if cand == dt:
            return name
    hi = int(labels.max()) if labels.size else 0
    for name in ("u8", "u16", "i32"):
        if hi <= np.iinfo(RAW_DTYPES[name]).max:
            return name
    raise UnsupportedDatatype(f"label values up to {hi} do not fit int32")


def save_raw(labelmap: LabelMap3D, raw_path, sidecar_path=None, dtype: str | None = None) -> None:
    sidecar_path = _sidecar_for(raw_path) if sidecar_path is None else Path(sidecar_path)
    name = dtype or raw_dtype_name(labelmap.labels)
    body = np.asarray(labelmap.labels, dtype=RAW_DTYPES[name]).tobytes(order="F")
    meta = {
        "dims": list(labelmap.dims),
        "spacing_mm": list(labelmap.spacing),
        "dtype": name,
        "order": RAW_ORDER,
    }
    with open(raw_path, "wb") as fh:
        fh.write(body)
    with open(sidecar_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(meta, indent=2) + "\n")


def load_labelmap(path) -> LabelMap3D:
    """Load by extension: ``.raw`` (with ``.json`` sidecar) or NIfTI (``.nii``/``.nii.gz``)."""
    p = str(path)
    if p.endswith(".raw"):
        return load_raw(p)
    if p.endswith(".json") and os.path.exists(p[:-5] + ".raw"):
        return load_raw(p[:-5] + ".raw", p)
    return load_nifti(p)


def save_labelmap(labelmap: LabelMap3D, path) -> None:
    if str(path).endswith(".raw"):
        save_raw(labelmap, path)
    else:
        save_nifti(labelmap, path)
