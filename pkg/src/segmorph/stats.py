"""Hypothesis tests, effect sizes, robust regression and agreement analysis for paired measurements."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateX,
    IncompleteMatrix,
    LengthMismatch,
    TooFewSamples,
    ZeroVariance,
)
from .special import f_sf, t_sf2

LOA_Z = 1.96
MAD_SCALE = 0.6745
MEANAD_SCALE = 1.2533
MAD_THRESHOLD = 3.5


@dataclass(frozen=True)
class StatResult:
    statistic: float
    df: tuple[float, ...]
    p_value: float
    n: int
    effect_size: float | None = None
    effect_label: str | None = None
    flags: tuple[str, ...] = field(default=())


@dataclass(frozen=True)
class AgreementResult:
    bias: float
    sd_diff: float
    loa_low: float
    loa_high: float
    n: int
    bias_pct: float | None = None
    loa_pct: float | None = None  # half-width, 1.96·SD of the percent differences
    flags: tuple[str, ...] = field(default=())

    @property
    def loa_halfwidth(self) -> float:
        return LOA_Z * self.sd_diff


@dataclass(frozen=True)
class RegressionFit:
    slope: float
    intercept: float
    method: str = "theil_sen"


@dataclass(frozen=True)
class OutlierFlags:
    z_scores: tuple[float, ...]
    flagged: tuple[bool, ...]

    @property
    def count(self) -> int:
        return sum(self.flagged)


def effect_label(d: float | None) -> str | None:
    """Cohen's conventional bands on |d|: 0.2 small, 0.5 medium, 0.8 large."""
    if d is None or math.isnan(d):
        return None
    ad = abs(d)
    if ad < 0.2:
        return "negligible"
    if ad < 0.5:
        return "small"
    if ad < 0.8:
        return "medium"
    return "large"


def _pair(x, y, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"paired samples differ in length: {x.shape} vs {y.shape}")
    if x.size < min_n:
        raise TooFewSamples(f"need at least {min_n} pairs, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("samples contain undefined values")
    return x, y


def _constant(v: np.ndarray) -> bool:
    # exact test: the mean of repeated values need not equal them, so var can be ~1e-33
    return bool(v.size == 0 or np.all(v == v[0]))


def cohens_d_pooled(x, y) -> float:
    """(mean(x) − mean(y)) / sqrt((sd(x)² + sd(y)²) / 2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or y.size < 2:
        raise TooFewSamples("Cohen's d needs at least 2 values per group")
    if _constant(x) and _constant(y):
        if x[0] == y[0]:
            return 0.0
        raise ZeroVariance("both groups have zero variance")
    return float(x.mean() - y.mean()) / math.sqrt((x.var(ddof=1) + y.var(ddof=1)) / 2.0)


def cohens_d_paired(x, y) -> float:
    """Mean difference over the SD of the differences (d_z)."""
    x, y = _pair(x, y, 2)
    d = x - y
    if _constant(d):
        if d[0] == 0.0:
            return 0.0
        raise ZeroVariance("all paired differences are identical")
    return float(d.mean() / d.std(ddof=1))


def paired_ttest(x, y, effect: str = "pooled") -> StatResult:
    """Two-sided paired t-test on d = x − y, with Cohen's d attached.

    Constant nonzero differences give t = ±inf, p = 0 and the ``zero_variance``
    flag; all-zero differences give t = 0, p = 1.
    """
    x, y = _pair(x, y, 3)
    n = x.size
    d = x - y
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    flags = []
    if _constant(d):
        flags.append("zero_variance")
        if d[0] == 0.0:
            t, p = 0.0, 1.0
        else:
            t, p = math.copysign(math.inf, float(d[0])), 0.0
    else:
        t = mean / (sd / math.sqrt(n))
        p = t_sf2(t, n - 1)
    try:
        es = cohens_d_pooled(x, y) if effect == "pooled" else cohens_d_paired(x, y)
    except ZeroVariance:
        es = None
        flags.append("effect_size_undefined")
    return StatResult(t, (float(n - 1),), min(max(p, 0.0), 1.0), n, es, effect_label(es), tuple(flags))


def rm_anova(values) -> StatResult:
    """One-way repeated-measures ANOVA; rows are subjects, columns conditions. No sphericity correction."""
    m = np.asarray(values, dtype=float)
    if m.ndim != 2:
        raise IncompleteMatrix("values must be a subjects × conditions matrix")
    if not np.all(np.isfinite(m)):
        raise IncompleteMatrix("matrix has missing values; pass complete cases only")
    n, k = m.shape
    if k < 2:
        raise IncompleteMatrix("need at least 2 conditions")
    if n < 3:
        raise TooFewSamples(f"need at least 3 subjects, got {n}")
    grand = m.mean()
    ss_cond = n * float(((m.mean(axis=0) - grand) ** 2).sum())
    # residual taken directly, not as SS_total − SS_subj − SS_cond, to avoid cancellation
    resid = m - m.mean(axis=1, keepdims=True) - m.mean(axis=0, keepdims=True) + grand
    ss_err = float((resid ** 2).sum())
    df1, df2 = float(k - 1), float((k - 1) * (n - 1))
    flags = []
    ms_err = ss_err / df2
    if ms_err == 0.0:
        flags.append("zero_error_variance")
        if ss_cond == 0.0:
            return StatResult(0.0, (df1, df2), 1.0, n, flags=tuple(flags))
        return StatResult(math.inf, (df1, df2), 0.0, n, flags=tuple(flags))
    f = (ss_cond / df1) / ms_err
    return StatResult(f, (df1, df2), f_sf(f, df1, df2), n, flags=tuple(flags))


def bonferroni(p_values: Sequence[float], m: int | None = None) -> list[float]:
    m = len(p_values) if m is None else m
    if m < len(p_values):
        raise ValueError("m must be at least the number of tests")
    return [min(1.0, p * m) for p in p_values]


def pearson_r(x, y) -> StatResult:
    x, y = _pair(x, y, 3)
    n = x.size
    if _constant(x) or _constant(y):
        raise ZeroVariance("correlation undefined for constant input")
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    r = min(max(r, -1.0), 1.0)
    if abs(r) == 1.0:
        return StatResult(r, (float(n - 2),), 0.0, n)
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return StatResult(r, (float(n - 2),), t_sf2(t, n - 2), n)


def midranks(x) -> np.ndarray:
    """1-based ranks, ties get the average of the ranks they span."""
    return rankdata(np.asarray(x, dtype=float), method="average")


def spearman_rho(x, y) -> StatResult:
    x, y = _pair(x, y, 3)
    return pearson_r(midranks(x), midranks(y))


def _median(v: np.ndarray) -> float:
    return float(np.median(v))


def theil_sen(x, y) -> RegressionFit:
    """Median of pairwise slopes over pairs with distinct x; intercept = median(y − slope·x)."""
    x, y = _pair(x, y, 2)
    i, j = np.triu_indices(x.size, k=1)
    dx = x[j] - x[i]
    keep = dx != 0
    if not keep.any():
        raise DegenerateX("all x values are equal")
    slope = _median((y[j] - y[i])[keep] / dx[keep])
    return RegressionFit(slope, _median(y - slope * x), "theil_sen")


def ols(x, y) -> RegressionFit:
    x, y = _pair(x, y, 2)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateX("all x values are equal")
    slope = float(dx @ (y - y.mean())) / sxx
    return RegressionFit(slope, float(y.mean() - slope * x.mean()), "ols")


def mad_outliers(x, threshold: float = MAD_THRESHOLD) -> OutlierFlags:
    """Modified z = 0.6745·(x − median)/MAD, flagging |z| > threshold.

    With MAD = 0 the mean absolute deviation from the median (×1.2533) is
    used instead; if that is also 0 nothing is flagged.
    """
    v = np.asarray(x, dtype=float)
    if v.size < 3:
        raise TooFewSamples("MAD outlier rule needs at least 3 values")
    med = np.median(v)
    dev = v - med
    mad = float(np.median(np.abs(dev)))
    if mad > 0:
        z = MAD_SCALE * dev / mad
    else:
        mean_ad = float(np.mean(np.abs(dev)))
        if mean_ad == 0:
            z = np.zeros_like(v)
        else:
            z = dev / (MEANAD_SCALE * mean_ad)
    return OutlierFlags(tuple(float(t) for t in z), tuple(bool(abs(t) > threshold) for t in z))


def bland_altman(ref, test) -> AgreementResult:
    """Bias (mean of test − ref) with 95% limits of agreement bias ± 1.96·SD.

    Percent columns are the mean and 1.96·SD of per-subject 100·(test − ref)/ref;
    they are left undefined (``zero_reference`` flag) if any reference value is 0.
    """
    ref, test = _pair(ref, test, 3)
    d = test - ref
    # difference of means equals mean difference algebraically; this form makes it exact
    bias = float(test.mean() - ref.mean())
    sd = float(d.std(ddof=1))
    half = LOA_Z * sd
    flags = []
    if np.any(ref == 0):
        flags.append("zero_reference")
        bias_pct = loa_pct = None
    else:
        pct = 100.0 * d / ref
        bias_pct = float(pct.mean())
        loa_pct = LOA_Z * float(pct.std(ddof=1))
    return AgreementResult(bias, sd, bias - half, bias + half, int(ref.size), bias_pct, loa_pct, tuple(flags))
