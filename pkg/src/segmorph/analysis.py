"""Cohort-level statistical tables built from per-subject metric records."""
from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateX, ZeroVariance
from .metrics import MetricRecord
from .stats import (
    bland_altman,
    bonferroni,
    mad_outliers,
    paired_ttest,
    pearson_r,
    rm_anova,
    spearman_rho,
    theil_sen,
)
from .volume import LabelDictionary, pooled_name

QUALITY_METRICS = ("dice", "iou", "hd95_mm", "nmi")
POOLED_ALL = "ALL"


@dataclass
class Table:
    name: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, **values) -> None:
        unknown = set(values) - set(self.columns)
        if unknown:
            raise KeyError(f"{self.name}: unknown columns {sorted(unknown)}")
        self.rows.append(tuple(values.get(c) for c in self.columns))

    def as_dicts(self) -> list[dict]:
        return [dict(zip(self.columns, r)) for r in self.rows]


def _flags(*parts) -> str:
    return ";".join(p for p in parts if p)


def _index(records: Iterable[MetricRecord]) -> dict[tuple[str, str], dict[str, MetricRecord]]:
    """(structure, method) -> {subject: record}."""
    out: dict[tuple[str, str], dict[str, MetricRecord]] = defaultdict(dict)
    for r in records:
        out[(r.structure_name, r.method_name)][r.subject_id] = r
    return out


def _structures(records: Iterable[MetricRecord]) -> list[str]:
    return sorted({r.structure_name for r in records})


def _present(r: MetricRecord | None) -> bool:
    return r is not None and r.volume_ml is not None and r.volume_ml > 0


# -- metrics table ------------------------------------------------------------

METRIC_COLUMNS = ("subject_id", "structure", "method", "label_id", "dice", "iou", "hd95_mm",
                  "nmi", "volume_ml", "fd", "flags")


def metrics_table(records: Sequence[MetricRecord]) -> Table:
    t = Table("metrics", METRIC_COLUMNS)
    for r in sorted(records, key=lambda r: (r.structure_name, r.subject_id, r.method_name)):
        t.add(subject_id=r.subject_id, structure=r.structure_name, method=r.method_name,
              label_id=r.label_id, dice=r.dice, iou=r.iou, hd95_mm=r.hd95_mm, nmi=r.nmi,
              volume_ml=r.volume_ml, fd=r.fd, flags=_flags(*r.flags))
    return t


# -- method comparison (volume) -----------------------------------------------

def volume_comparison(records: Sequence[MetricRecord], groups: Sequence[str], alpha: float = 0.05) -> Table:
    """Group means ± SD, RM-ANOVA across groups and Bonferroni-corrected pairwise paired t-tests.

    Only subjects in which the structure is non-empty in every group contribute.
    """
    pairs = list(itertools.combinations(groups, 2))
    cols = ["structure", "n"]
    for g in groups:
        cols += [f"{g}_mean", f"{g}_sd"]
    cols += ["anova_F", "anova_p", "anova_significant"]
    for a, b in pairs:
        cols += [f"p_{a}-{b}", f"d_{a}-{b}", f"effect_{a}-{b}"]
    cols.append("flags")
    table = Table("volume_comparison", tuple(cols))
    idx = _index(records)
    for s in _structures(records):
        by_group = [idx.get((s, g), {}) for g in groups]
        subjects = sorted(set.intersection(*(set(m) for m in by_group)) if by_group else set())
        subjects = [sub for sub in subjects if all(_present(m[sub]) for m in by_group)]
        row: dict = {"structure": s, "n": len(subjects)}
        mat = np.array([[m[sub].volume_ml for m in by_group] for sub in subjects], dtype=float)
        flags = []
        if len(subjects) >= 2:
            for j, g in enumerate(groups):
                row[f"{g}_mean"] = float(mat[:, j].mean())
                row[f"{g}_sd"] = float(mat[:, j].std(ddof=1))
        if len(subjects) < 3:
            flags.append("too_few_subjects")
        else:
            anova = rm_anova(mat)
            row.update(anova_F=anova.statistic, anova_p=anova.p_value,
                       anova_significant=anova.p_value < alpha)
            flags += anova.flags
            tests = [paired_ttest(mat[:, groups.index(a)], mat[:, groups.index(b)]) for a, b in pairs]
            adj = bonferroni([t.p_value for t in tests], len(pairs))
            for (a, b), t, p in zip(pairs, tests, adj):
                row[f"p_{a}-{b}"] = p
                row[f"d_{a}-{b}"] = t.effect_size
                row[f"effect_{a}-{b}"] = t.effect_label
        row["flags"] = _flags(*sorted(set(flags)))
        table.add(**row)
    return table


# -- reference vs primary method ----------------------------------------------

def _paired_values(idx, structure: str, ref: str, cand: str, attr: str):
    r, c = idx.get((structure, ref), {}), idx.get((structure, cand), {})
    subjects = sorted(set(r) & set(c))
    keep = [s for s in subjects
            if getattr(r[s], attr) is not None and getattr(c[s], attr) is not None
            and _present(r[s]) and _present(c[s])]
    x = np.array([getattr(r[s], attr) for s in keep], dtype=float)
    y = np.array([getattr(c[s], attr) for s in keep], dtype=float)
    return keep, x, y


def fd_comparison(records: Sequence[MetricRecord], reference: str, method: str) -> Table:
    table = Table("fd_comparison", ("structure", "n", f"{reference}_mean", f"{reference}_sd",
                                    f"{method}_mean", f"{method}_sd", "t", "p", "d", "effect", "flags"))
    idx = _index(records)
    for s in _structures(records):
        subjects, x, y = _paired_values(idx, s, reference, method, "fd")
        row = {"structure": s, "n": len(subjects)}
        if len(subjects) >= 2:
            row.update({f"{reference}_mean": float(x.mean()), f"{reference}_sd": float(x.std(ddof=1)),
                        f"{method}_mean": float(y.mean()), f"{method}_sd": float(y.std(ddof=1))})
        if len(subjects) < 3:
            row["flags"] = "too_few_subjects"
        else:
            t = paired_ttest(x, y)
            row.update(t=t.statistic, p=t.p_value, d=t.effect_size, effect=t.effect_label,
                       flags=_flags(*t.flags))
        table.add(**row)
    return table


AGREEMENT_COLUMNS = ("structure", "quantity", "n", "bias", "sd_diff", "loa_halfwidth", "loa_low",
                     "loa_high", "bias_pct", "loa_pct", "flags")


def agreement_table(records: Sequence[MetricRecord], reference: str, method: str) -> Table:
    """Bland–Altman per structure, differences taken as method − reference.

    Percent columns: mean and 1.96·SD of per-subject 100·(method − reference)/reference.
    """
    table = Table("agreement", AGREEMENT_COLUMNS)
    table.notes.append("bias_pct/loa_pct: mean and 1.96*SD of per-subject 100*(method-reference)/reference")
    idx = _index(records)
    for s in _structures(records):
        for quantity, attr in (("volume_ml", "volume_ml"), ("fd", "fd")):
            subjects, ref, test = _paired_values(idx, s, reference, method, attr)
            row = {"structure": s, "quantity": quantity, "n": len(subjects)}
            if len(subjects) < 3:
                row["flags"] = "too_few_subjects"
            else:
                ba = bland_altman(ref, test)
                row.update(bias=ba.bias, sd_diff=ba.sd_diff, loa_halfwidth=ba.loa_halfwidth,
                           loa_low=ba.loa_low, loa_high=ba.loa_high, bias_pct=ba.bias_pct,
                           loa_pct=ba.loa_pct, flags=_flags(*ba.flags))
            table.add(**row)
    return table


AGE_COLUMNS = ("structure", "method", "metric", "n", "r", "p", "flags")


def age_correlation(records: Sequence[MetricRecord], metric_name: str, ages: Mapping[str, float],
                    method: str | None = None, table: Table | None = None) -> Table:
    """Pearson r between age and one quality metric, per structure.

    Expected sign for a quality-improves-with-age effect: positive for
    dice/iou/nmi (higher is better), negative for hd95_mm. Structures with
    fewer than 3 usable subjects are left out and noted.
    """
    if metric_name not in QUALITY_METRICS:
        raise ValueError(f"metric must be one of {QUALITY_METRICS}")
    table = table or Table("age_correlation", AGE_COLUMNS)
    selected = [r for r in records if method is None or r.method_name == method]
    label = method or "all"
    for s in _structures(selected):
        pts = [(ages[r.subject_id], getattr(r, metric_name)) for r in selected
               if r.structure_name == s and ages.get(r.subject_id) is not None
               and getattr(r, metric_name) is not None]
        if len(pts) < 3:
            table.notes.append(f"age_correlation {s}/{label}/{metric_name}: fewer than 3 subjects, row omitted")
            continue
        row = {"structure": s, "method": label, "metric": metric_name, "n": len(pts)}
        x, y = np.array(pts, dtype=float).T
        try:
            res = pearson_r(x, y)
            row.update(r=res.statistic, p=res.p_value)
        except ZeroVariance:
            row["flags"] = "zero_variance"
        table.add(**row)
    return table


# -- hemispheric symmetry -----------------------------------------------------

HEMI_COLUMNS = ("structure", "left", "right", "quantity", "n", "lr_mean_diff", "lr_pct", "t", "p",
                "d", "effect", "seg_abs_bias", "side_exceeds_seg", "flags")


def hemispheric_check(records: Sequence[MetricRecord], dictionary: LabelDictionary,
                      reference: str = "reference", method: str | None = None) -> Table:
    """Within-subject left − right differences on the reference, set against segmentation error.

    ``seg_abs_bias`` is the mean over both sides of |mean(method − reference)|;
    a structure is flagged when |mean left − right| exceeds it.
    """
    table = Table("hemispheric", HEMI_COLUMNS)
    idx = _index(records)
    for e in dictionary.entries:
        if e.hemisphere in ("left", "right") and e.pool_partner is None:
            table.notes.append(f"hemispheric: {e.name} has no partner, skipped")
    for left, right in dictionary.pairs():
        if not idx.get((right.name, reference)) or not idx.get((left.name, reference)):
            table.notes.append(f"hemispheric: {pooled_name(left.name)} missing from the reference records, skipped")
            continue
        for quantity in ("volume_ml", "fd"):
            L, R = idx[(left.name, reference)], idx[(right.name, reference)]
            subjects = [s for s in sorted(set(L) & set(R))
                        if _present(L[s]) and _present(R[s])
                        and getattr(L[s], quantity) is not None and getattr(R[s], quantity) is not None]
            row = {"structure": pooled_name(left.name), "left": left.name, "right": right.name,
                   "quantity": quantity, "n": len(subjects)}
            if len(subjects) < 3:
                row["flags"] = "too_few_subjects"
                table.add(**row)
                continue
            lv = np.array([getattr(L[s], quantity) for s in subjects])
            rv = np.array([getattr(R[s], quantity) for s in subjects])
            t = paired_ttest(lv, rv)
            diff = float((lv - rv).mean())
            size = float(((lv + rv) / 2).mean())
            row.update(lr_mean_diff=diff, lr_pct=100.0 * diff / size if size else None,
                       t=t.statistic, p=t.p_value, d=t.effect_size, effect=t.effect_label)
            flags = list(t.flags)
            if method is not None:
                biases = []
                for entry in (left, right):
                    _, ref_v, cand_v = _paired_values(idx, entry.name, reference, method, quantity)
                    if ref_v.size:
                        biases.append(abs(float(cand_v.mean() - ref_v.mean())))
                if biases:
                    seg = float(np.mean(biases))
                    row.update(seg_abs_bias=seg, side_exceeds_seg=abs(diff) > seg)
                else:
                    flags.append("no_segmentation_pairs")
            row["flags"] = _flags(*flags)
            table.add(**row)
    return table


# -- FD vs volume coupling ----------------------------------------------------

@dataclass(frozen=True)
class CouplingDelta:
    structure: str
    delta_volume_ml: float
    delta_fd: float
    subject_id: str = ""


def coupling_deltas(records: Sequence[MetricRecord], reference: str, method: str) -> list[CouplingDelta]:
    """Signed method − reference differences in volume and FD, per subject and structure."""
    idx = _index(records)
    out = []
    for s in _structures(records):
        r, c = idx.get((s, reference), {}), idx.get((s, method), {})
        for sub in sorted(set(r) & set(c)):
            a, b = r[sub], c[sub]
            if a.fd is None or b.fd is None or not (_present(a) and _present(b)):
                continue
            out.append(CouplingDelta(s, b.volume_ml - a.volume_ml, b.fd - a.fd, sub))
    return out


COUPLING_COLUMNS = ("structure", "n", "rho", "p", "theil_sen_slope", "theil_sen_intercept",
                    "n_outliers", "flags")


def fd_volume_coupling(deltas: Iterable, include_pooled: bool = True) -> Table:
    """Spearman ρ and Theil–Sen fit of ΔFD on ΔV per structure, plus an ``ALL`` row over every point.

    Outliers (|modified z| > 3.5 in ΔV or ΔFD) are counted but kept in both fits.
    """
    groups: dict[str, list[tuple[float, float]]] = defaultdict(list)
    for d in deltas:
        groups[d.structure].append((float(d.delta_volume_ml), float(d.delta_fd)))
    names = sorted(groups)
    if include_pooled and groups:
        groups[POOLED_ALL] = [pt for s in names for pt in groups[s]]
        names.append(POOLED_ALL)
    table = Table("coupling", COUPLING_COLUMNS)
    for s in names:
        pts = groups[s]
        row = {"structure": s, "n": len(pts)}
        flags = []
        if len(pts) < 3:
            flags.append("too_few_samples")
        else:
            dv, dfd = np.array(pts, dtype=float).T
            try:
                rho = spearman_rho(dv, dfd)
                row.update(rho=rho.statistic, p=rho.p_value)
            except ZeroVariance:
                flags.append("degenerate")
            try:
                fit = theil_sen(dv, dfd)
                row.update(theil_sen_slope=fit.slope, theil_sen_intercept=fit.intercept)
            except DegenerateX:
                if "degenerate" not in flags:
                    flags.append("degenerate")
            out_v, out_f = mad_outliers(dv), mad_outliers(dfd)
            row["n_outliers"] = sum(a or b for a, b in zip(out_v.flagged, out_f.flagged))
        row["flags"] = _flags(*flags)
        table.add(**row)
    return table


__all__ = [
    "Table", "metrics_table", "volume_comparison", "fd_comparison", "agreement_table",
    "age_correlation", "hemispheric_check", "coupling_deltas", "fd_volume_coupling",
    "CouplingDelta",
]
