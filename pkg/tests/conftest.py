import json
import sys

import numpy as np
import pytest

from segmorph.io import save_labelmap
from segmorph.volume import BinaryMask, LabelDictionary, LabelMap3D

GRID = (28, 24, 20)

DICTIONARY_RECORDS = [
    {"label_id": 2, "name": "Left-White-Matter", "hemisphere": "left", "pool_partner": 41},
    {"label_id": 41, "name": "Right-White-Matter", "hemisphere": "right", "pool_partner": 2},
    {"label_id": 17, "name": "Left-Hippocampus", "hemisphere": "left", "pool_partner": 53},
    {"label_id": 53, "name": "Right-Hippocampus", "hemisphere": "right", "pool_partner": 17},
    {"label_id": 14, "name": "3rd-Ventricle", "hemisphere": "midline", "pool_partner": None},
    {"label_id": 24, "name": "CSF", "hemisphere": "midline", "pool_partner": None},
]
CSF_IDS = [24]


def mask(bits, spacing=(1.0, 1.0, 1.0)) -> BinaryMask:
    return BinaryMask(np.asarray(bits, dtype=bool), spacing)


def random_pair(rng, max_side=20, density=None):
    dims = tuple(int(d) for d in rng.integers(2, max_side + 1, size=3))
    p = density if density is not None else rng.uniform(0.05, 0.6)
    a = rng.random(dims) < p
    b = rng.random(dims) < p
    return a, b


def _ball(shape, centre, radius):
    x, y, z = np.indices(shape)
    return (x - centre[0]) ** 2 + (y - centre[1]) ** 2 + (z - centre[2]) ** 2 <= radius ** 2


def synthetic_head(index: int, grow: int = 0, right_grow: int = 0) -> LabelMap3D:
    """Small two-hemisphere label map whose structure sizes vary with ``index``."""
    lab = np.zeros(GRID, dtype=np.uint8)
    j = index % 3
    k = index % 2
    g, rg = grow, grow + right_grow
    lab[3 - g:11 + j + g, 4 - g:18 + g, 4 - g:14 + k + g] = 2
    lab[16 - rg:24 + rg, 4 - rg:18 + j + rg, 4 - rg:15 + rg] = 41
    lab[_ball(GRID, (7, 11, 9), 2.3 + 0.4 * j + g)] = 17
    lab[_ball(GRID, (20, 11, 9), 2.5 + 0.3 * k + rg)] = 53
    lab[13:15, 8:12 + k, 8 - g:11 + j + g] = 14
    lab[12:16, 19:21, 4:14 + j] = 24
    return LabelMap3D(lab, (1.0, 1.0, 1.0), f"synthetic:{index}")


@pytest.fixture
def dictionary() -> LabelDictionary:
    return LabelDictionary.from_records(DICTIONARY_RECORDS)


def write_cohort(root, n_subjects=5, methods=None, ages=None, ext=".nii.gz", options=None,
                 subject_order=None):
    """Write label maps, dictionary and manifest for a synthetic cohort; returns the manifest path.

    ``methods`` maps method name -> callable(index) -> LabelMap3D; the
    reference is ``synthetic_head(index)``.
    """
    methods = methods if methods is not None else {"same": lambda i: synthetic_head(i)}
    root.mkdir(parents=True, exist_ok=True)
    (root / "labels.json").write_text(json.dumps({"labels": DICTIONARY_RECORDS}), encoding="utf-8")
    subjects = []
    for i in range(n_subjects):
        sid = f"sub-{i + 1:02d}"
        ref_path = f"{sid}_ref{ext}"
        save_labelmap(synthetic_head(i), root / ref_path)
        cands = {}
        for name, fn in methods.items():
            path = f"{sid}_{name}{ext}"
            save_labelmap(fn(i), root / path)
            cands[name] = path
        subjects.append({
            "subject_id": sid,
            "session_id": "",
            "age_months": None if ages is None else float(ages[i]),
            "sex": "f" if i % 2 else "m",
            "reference": ref_path,
            "candidates": cands,
        })
    if subject_order is not None:
        subjects = [subjects[i] for i in subject_order]
    manifest = {
        "schema_version": 1,
        "label_dictionary": "labels.json",
        "csf_label_ids": CSF_IDS,
        "methods": list(methods),
        "subjects": subjects,
        "options": {"connectivity": "face6", "fd_enabled": True, **(options or {})},
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
