"""Manifest-driven cohort evaluation: per-subject metrics, then the cohort statistics tables."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .analysis import QUALITY_METRICS, Table
from .errors import SegmorphError
from .io import load_labelmap
from .manifest import StudyManifest
from .metrics import WHOLE_BRAIN, MetricRecord, fd_or_flag, evaluate_pair
from .morphometry import volume_ml
from .volume import (
    LabelDictionary,
    LabelMap3D,
    SubjectRecord,
    check_same_grid,
    extract_mask,
    load_label_dictionary,
    nonzero_mask,
    pool_hemispheres,
    subtract_labels,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_PARTIAL = 2

TABLE_ORDER = ("metrics", "volume_comparison", "fd_comparison", "agreement", "age_correlation",
               "hemispheric", "coupling")


@dataclass(frozen=True)
class SubjectFailure:
    subject_id: str
    session_id: str
    error: str


@dataclass
class StudyReport:
    reference_name: str
    methods: tuple[str, ...]
    primary_method: str | None
    records: list[MetricRecord]
    tables: dict[str, Table]
    failures: list[SubjectFailure] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    n_subjects: int = 0

    @property
    def exit_code(self) -> int:
        if self.failures or self.n_subjects == 0:
            return EXIT_PARTIAL
        return EXIT_OK


def subject_key(s: SubjectRecord) -> str:
    return f"{s.subject_id}/{s.session_id}" if s.session_id else s.subject_id


def reference_records(ref: LabelMap3D, dictionary: LabelDictionary, *, csf_ids=(), fd: bool = False,
                      subject_id: str = "", name: str = "reference") -> list[MetricRecord]:
    """Volume (and FD) of each reference structure plus the CSF-subtracted whole brain."""
    masks = [(e.name, e.label_id, extract_mask(ref, {e.label_id})) for e in dictionary.entries]
    masks.append((WHOLE_BRAIN, None, nonzero_mask(subtract_labels(ref, list(csf_ids)))))
    out = []
    for structure, label_id, mask in masks:
        flags: list[str] = []
        if mask.empty:
            flags.append("empty_reference")
        out.append(MetricRecord(
            subject_id=subject_id, structure_name=structure, method_name=name,
            volume_ml=volume_ml(mask), fd=fd_or_flag(mask, flags, "reference") if fd else None,
            label_id=label_id, flags=tuple(flags),
        ))
    return out


@dataclass
class _SubjectResult:
    key: str
    records: list[MetricRecord]
    side_records: list[MetricRecord]  # unpooled, for the hemispheric check


def _evaluate_subject(m: StudyManifest, s: SubjectRecord, dictionary: LabelDictionary) -> _SubjectResult:
    key = subject_key(s)
    ref = load_labelmap(m.resolve(s.reference_path))
    cands = {}
    for method in m.methods:
        if method in s.candidate_paths:
            cand = load_labelmap(m.resolve(s.candidate_paths[method]))
            check_same_grid(ref, cand)
            cands[method] = cand

    def run(ref_map, cand_maps, dct):
        recs = reference_records(ref_map, dct, csf_ids=m.csf_label_ids, fd=m.fd_enabled,
                                 subject_id=key, name=m.reference_name)
        for method, cand in cand_maps.items():
            recs += evaluate_pair(ref_map, cand, dct, m.connectivity, csf_ids=m.csf_label_ids,
                                  fd=m.fd_enabled, subject_id=key, method_name=method)
        return recs

    side = run(ref, cands, dictionary)
    if not m.pool_hemispheres:
        return _SubjectResult(key, side, side)
    pooled_ref, pooled_dict = pool_hemispheres(ref, dictionary)
    pooled_cands = {k: pool_hemispheres(v, dictionary)[0] for k, v in cands.items()}
    return _SubjectResult(key, run(pooled_ref, pooled_cands, pooled_dict), side)


def _sort(records):
    return sorted(records, key=lambda r: (r.structure_name, r.subject_id, r.method_name))


def choose_primary(records: list[MetricRecord], methods, requested: str | None) -> str | None:
    """The requested method, else the one with the highest mean whole-brain Dice (ties: listed order)."""
    if requested is not None:
        return requested
    best, best_score = None, -np.inf
    for method in methods:
        scores = [r.dice for r in records
                  if r.method_name == method and r.structure_name == WHOLE_BRAIN and r.dice is not None]
        if scores and float(np.mean(scores)) > best_score:
            best, best_score = method, float(np.mean(scores))
    return best


def build_tables(records: list[MetricRecord], side_records: list[MetricRecord], dictionary: LabelDictionary,
                 m: StudyManifest, ages: dict[str, float], primary: str | None) -> dict[str, Table]:
    ref = m.reference_name
    groups = [ref, *m.methods]
    tables = {
        "metrics": analysis.metrics_table(records),
        "volume_comparison": analysis.volume_comparison(records, groups, m.alpha),
    }
    # with no usable primary the tables stay empty but keep their headers
    versus = primary or (m.methods[0] if m.methods else "candidate")
    tables["fd_comparison"] = analysis.fd_comparison(records, ref, versus)
    tables["agreement"] = analysis.agreement_table(records, ref, versus)
    age = Table("age_correlation", analysis.AGE_COLUMNS)
    for method in m.methods:
        for metric in QUALITY_METRICS:
            analysis.age_correlation(records, metric, ages, method=method, table=age)
    tables["age_correlation"] = age
    tables["hemispheric"] = analysis.hemispheric_check(side_records, dictionary, ref, primary)
    deltas = analysis.coupling_deltas(records, ref, primary) if primary and m.fd_enabled else []
    tables["coupling"] = analysis.fd_volume_coupling(deltas)
    return {name: tables[name] for name in TABLE_ORDER}


def run_study(m: StudyManifest, threads: int = 1) -> StudyReport:
    """Evaluate every subject, then assemble the cohort tables.

    A subject whose files fail to load or whose grids disagree is skipped and
    listed in ``failures``. Output ordering does not depend on ``threads`` or
    on the order subjects appear in the manifest.
    """
    dictionary = load_label_dictionary(m.resolve(m.label_dictionary_path))
    subjects = sorted(m.subjects, key=lambda s: (s.subject_id, s.session_id))

    def job(s):
        try:
            return _evaluate_subject(m, s, dictionary)
        except (SegmorphError, OSError) as exc:
            log.error("subject %s failed: %s", subject_key(s), exc)
            return SubjectFailure(s.subject_id, s.session_id, f"{type(exc).__name__}: {exc}")

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(job, subjects))
    else:
        results = [job(s) for s in subjects]

    done = [r for r in results if isinstance(r, _SubjectResult)]
    failures = [r for r in results if isinstance(r, SubjectFailure)]
    records = _sort(r for res in done for r in res.records)
    side = _sort(r for res in done for r in res.side_records)
    ages = {subject_key(s): s.age_months for s in subjects if s.age_months is not None}
    primary = choose_primary(records, m.methods, m.primary_method)
    tables = build_tables(records, side, dictionary, m, ages, primary)
    notes = [n for name in TABLE_ORDER for n in tables[name].notes]
    if not done:
        notes.append("no subjects evaluated")
    return StudyReport(m.reference_name, tuple(m.methods), primary, records, tables, failures, notes,
                       n_subjects=len(done))
