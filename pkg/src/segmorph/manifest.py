"""Study manifest: cohort, label dictionary and analysis options, read from JSON."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ManifestInvalid
from .volume import CONNECTIVITIES, SubjectRecord

MANIFEST_SCHEMA_VERSION = 1


def load_schema(name: str) -> dict:
    return json.loads(resources.files("segmorph.schemas").joinpath(name).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class StudyManifest:
    label_dictionary_path: str
    subjects: tuple[SubjectRecord, ...]
    methods: tuple[str, ...]
    csf_label_ids: frozenset[int] = frozenset()
    connectivity: str = "face6"
    pool_hemispheres: bool = False
    fd_enabled: bool = True
    alpha: float = 0.05
    primary_method: str | None = None
    reference_name: str = "reference"
    base_dir: str = "."

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ManifestInvalid(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.connectivity not in CONNECTIVITIES:
            raise ManifestInvalid(f"connectivity must be one of {CONNECTIVITIES}")
        if len(set(self.methods)) != len(self.methods):
            raise ManifestInvalid("duplicate method names")
        if self.reference_name in self.methods:
            raise ManifestInvalid(f"method name {self.reference_name!r} is reserved for the reference")
        if self.primary_method is not None and self.primary_method not in self.methods:
            raise ManifestInvalid(f"primary_method {self.primary_method!r} is not a listed method")
        for s in self.subjects:
            unknown = set(s.candidate_paths) - set(self.methods)
            if unknown:
                raise ManifestInvalid(f"subject {s.subject_id}: unknown methods {sorted(unknown)}")
        ids = [(s.subject_id, s.session_id) for s in self.subjects]
        if len(set(ids)) != len(ids):
            raise ManifestInvalid("duplicate subject/session entries")

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def replace(self, **changes) -> "StudyManifest":
        return StudyManifest(**{**self.__dict__, **changes})


def _subject(raw: dict) -> SubjectRecord:
    return SubjectRecord(
        subject_id=str(raw["subject_id"]),
        session_id=str(raw.get("session_id", "")),
        age_months=None if raw.get("age_months") is None else float(raw["age_months"]),
        sex=raw.get("sex", "unknown"),
        reference_path=raw.get("reference", raw.get("reference_path")),
        candidate_paths=dict(raw.get("candidates", raw.get("candidate_paths", {}))),
    )


def manifest_from_dict(data: dict, base_dir=".") -> StudyManifest:
    try:
        jsonschema.validate(data, load_schema("manifest.schema.json"))
    except jsonschema.ValidationError as exc:
        raise ManifestInvalid(f"manifest does not match schema: {exc.message}") from exc
    opts = data.get("options", {})
    try:
        subjects = tuple(_subject(s) for s in data["subjects"])
    except ValueError as exc:
        raise ManifestInvalid(str(exc)) from exc
    return StudyManifest(
        label_dictionary_path=data["label_dictionary"],
        subjects=subjects,
        methods=tuple(data["methods"]),
        csf_label_ids=frozenset(int(i) for i in data.get("csf_label_ids", [])),
        connectivity=opts.get("connectivity", "face6"),
        pool_hemispheres=bool(opts.get("pool_hemispheres", False)),
        fd_enabled=bool(opts.get("fd_enabled", True)),
        alpha=float(opts.get("alpha", 0.05)),
        primary_method=opts.get("primary_method"),
        base_dir=str(base_dir),
    )


def load_manifest(path) -> StudyManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestInvalid(f"{path}: {exc}") from exc
    return manifest_from_dict(data, base_dir=path.parent)


def manifest_to_dict(m: StudyManifest) -> dict:
    return {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "label_dictionary": m.label_dictionary_path,
        "csf_label_ids": sorted(m.csf_label_ids),
        "methods": list(m.methods),
        "subjects": [
            {
                "subject_id": s.subject_id,
                "session_id": s.session_id,
                "age_months": s.age_months,
                "sex": s.sex,
                "reference": s.reference_path,
                "candidates": dict(s.candidate_paths),
            }
            for s in m.subjects
        ],
        "options": {
            "connectivity": m.connectivity,
            "pool_hemispheres": m.pool_hemispheres,
            "fd_enabled": m.fd_enabled,
            "alpha": m.alpha,
            "primary_method": m.primary_method,
        },
    }
