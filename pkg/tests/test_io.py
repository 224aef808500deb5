import gzip
import json
import struct

import numpy as np
import pytest

from segmorph.errors import (
    HeaderCorrupt,
    LengthMismatch,
    NonIntegralLabels,
    ScalingUnsupported,
    SidecarInvalid,
    UnsupportedDatatype,
)
from segmorph.io import (
    load_labelmap,
    load_raw,
    nifti_bytes,
    parse_nifti,
    save_labelmap,
    save_nifti,
    save_raw,
)
from segmorph.volume import LabelMap3D


def _labelmap(dtype=np.uint8, spacing=(0.8, 1.0, 1.25)):
    rng = np.random.default_rng(11)
    return LabelMap3D(rng.integers(0, 50, size=(5, 4, 3)).astype(dtype), spacing)


def _header(shape=(2, 3, 4), datatype=2, bitpix=8, endian="<", slope=1.0, inter=0.0,
            pixdim=(1.0, 1.0, 1.0), magic=b"n+1\x00"):
    hdr = bytearray(348)
    struct.pack_into(endian + "i", hdr, 0, 348)
    struct.pack_into(endian + "8h", hdr, 40, 3, *shape, 1, 1, 1, 1)
    struct.pack_into(endian + "2h", hdr, 70, datatype, bitpix)
    struct.pack_into(endian + "8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into(endian + "f", hdr, 108, 352.0)
    struct.pack_into(endian + "2f", hdr, 112, slope, inter)
    hdr[344:348] = magic
    return bytes(hdr) + b"\x00" * 4


@pytest.mark.parametrize("dtype", [np.uint8, np.int16, np.int32, np.uint16])
@pytest.mark.parametrize("suffix", [".nii", ".nii.gz", ".raw"])
def test_round_trip(tmp_path, dtype, suffix):
    lm = _labelmap(dtype)
    path = tmp_path / f"map{suffix}"
    save_labelmap(lm, path)
    back = load_labelmap(path)
    assert back == lm
    assert back.spacing == pytest.approx(lm.spacing)


def test_voxel_order_is_x_fastest():
    lm = LabelMap3D(np.arange(24, dtype=np.uint8).reshape((2, 3, 4), order="F"))
    body = nifti_bytes(lm)[352:]
    assert list(body) == list(range(24))


def test_big_endian_header_and_float_labels():
    data = np.array([0, 1, 2, 3, 4, 5], dtype=">f4")
    raw = _header((1, 2, 3), datatype=16, bitpix=32, endian=">") + data.tobytes()
    lm = parse_nifti(raw)
    assert lm.labels.dtype.kind == "i"
    assert lm.labels.reshape(-1, order="F").tolist() == [0, 1, 2, 3, 4, 5]


def test_gzip_output_is_deterministic(tmp_path):
    lm = _labelmap()
    save_nifti(lm, tmp_path / "a.nii.gz")
    save_nifti(lm, tmp_path / "b.nii.gz")
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()
    assert gzip.decompress((tmp_path / "a.nii.gz").read_bytes()) == nifti_bytes(lm)


def test_header_errors():
    body = bytes(24)
    with pytest.raises(HeaderCorrupt):
        parse_nifti(b"short")
    with pytest.raises(HeaderCorrupt):
        parse_nifti(_header(magic=b"ni1\x00") + body)
    with pytest.raises(HeaderCorrupt):
        parse_nifti(b"\x00" * 352 + body)
    with pytest.raises(HeaderCorrupt):
        parse_nifti(_header() + body[:10])
    with pytest.raises(HeaderCorrupt):
        parse_nifti(_header(bitpix=16) + body)
    with pytest.raises(UnsupportedDatatype):
        parse_nifti(_header(datatype=64, bitpix=64) + bytes(24 * 8))
    with pytest.raises(ScalingUnsupported):
        parse_nifti(_header(slope=2.0) + body)
    with pytest.raises(ScalingUnsupported):
        parse_nifti(_header(inter=1.0) + body)
    # slope 0 means unscaled
    assert parse_nifti(_header(slope=0.0) + body).dims == (2, 3, 4)


def test_float_labels_must_be_integral():
    data = np.full(24, 1.5, dtype="<f4")
    with pytest.raises(NonIntegralLabels):
        parse_nifti(_header(datatype=16, bitpix=32) + data.tobytes())
    data = np.full(24, -1.0, dtype="<f4")
    with pytest.raises(NonIntegralLabels):
        parse_nifti(_header(datatype=16, bitpix=32) + data.tobytes())


def test_raw_sidecar_format(tmp_path):
    lm = _labelmap(np.uint16)
    save_raw(lm, tmp_path / "m.raw")
    meta = json.loads((tmp_path / "m.json").read_text())
    assert meta == {"dims": [5, 4, 3], "spacing_mm": [0.8, 1.0, 1.25], "dtype": "u16",
                    "order": "x-fastest little-endian"}
    assert (tmp_path / "m.raw").stat().st_size == 5 * 4 * 3 * 2


def test_raw_errors(tmp_path):
    lm = _labelmap()
    save_raw(lm, tmp_path / "m.raw")
    (tmp_path / "m.raw").write_bytes(b"\x00" * 7)
    with pytest.raises(LengthMismatch):
        load_raw(tmp_path / "m.raw")
    (tmp_path / "m.json").write_text(json.dumps({"dims": [1, 1], "spacing_mm": [1, 1, 1], "dtype": "u8"}))
    with pytest.raises(SidecarInvalid):
        load_raw(tmp_path / "m.raw")
    (tmp_path / "m.json").write_text(json.dumps({"dims": [1, 1, 7], "spacing_mm": [1, 1, 1], "dtype": "f32"}))
    with pytest.raises(SidecarInvalid):
        load_raw(tmp_path / "m.raw")
    (tmp_path / "m.json").write_text("{not json")
    with pytest.raises(SidecarInvalid):
        load_raw(tmp_path / "m.raw")


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        load_labelmap(tmp_path / "nope.nii")
