"""One-way repeated-measures ANOVA and the F-distribution tail it needs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = float(np.finfo(float).eps)
_CF_TOL = 1e-15
_TINY = 1e-300


def _betacf(a: float, b: float, x: float, max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def f_sf(f: float, df1: float, df2: float) -> float:
    """Upper tail P(F > f) of the F distribution."""
    if math.isnan(f):
        return math.nan
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f))


def t_sf_two_sided(t: float, df: float) -> float:
    return betainc(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class AnovaResult:
    F: float
    df: tuple[int, int]
    p: float
    ss_total: float
    ss_subjects: float
    ss_conditions: float
    ss_error: float
    degenerate: bool = False

    @property
    def ms_conditions(self) -> float:
        return self.ss_conditions / self.df[0]

    @property
    def ms_error(self) -> float:
        return self.ss_error / self.df[1]

    def summary(self) -> str:
        """``F(df1,df2)=<value>, p=<value>``."""
        p = f"<{_EPS:.1e}" if self.degenerate and self.p == 0.0 else f"{self.p:.6g}"
        return f"F({self.df[0]},{self.df[1]})={self.F:.6g}, p={p}"

    def table(self) -> str:
        k = self.df[0] + 1
        n = self.df[1] // self.df[0] + 1 if self.df[0] else 0
        rows = [
            ("conditions", self.ss_conditions, self.df[0]),
            ("subjects", self.ss_subjects, n - 1),
            ("error", self.ss_error, self.df[1]),
            ("total", self.ss_total, n * k - 1),
        ]
        out = [f"{'source':<11} {'SS':>14} {'df':>4} {'MS':>14}"]
        for name, ss, df in rows:
            ms = f"{ss / df:>14.6g}" if df and name != "total" else " " * 14
            out.append(f"{name:<11} {ss:>14.6g} {df:>4d} {ms}")
        out.append(self.summary())
        if self.degenerate:
            out.append("warning: degenerate design (zero error sum of squares)")
        return "\n".join(out) + "\n"


def rm_anova(data) -> AnovaResult:
    """One-way repeated-measures ANOVA on a subjects x conditions matrix."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise ValueError("data must be a 2-D subjects x conditions matrix")
    n, k = x.shape
    if n < 2 or k < 2:
        raise ValueError("need at least 2 subjects and 2 conditions")
    if not np.all(np.isfinite(x)):
        raise ValueError("data matrix must be complete and finite")

    grand = x.mean()
    subj = x.mean(axis=1)
    cond = x.mean(axis=0)
    ss_total = float(np.sum((x - grand) ** 2))
    ss_subjects = float(k * np.sum((subj - grand) ** 2))
    ss_conditions = float(n * np.sum((cond - grand) ** 2))
    resid = x - subj[:, None] - cond[None, :] + grand
    ss_error = float(np.sum(resid ** 2))
    df1, df2 = k - 1, (k - 1) * (n - 1)

    scale = max(ss_total, _TINY)
    if ss_error <= 1e-12 * scale:
        if ss_conditions <= 1e-12 * scale:
            return AnovaResult(0.0, (df1, df2), 1.0, ss_total, ss_subjects, ss_conditions, ss_error, True)
        return AnovaResult(math.inf, (df1, df2), 0.0, ss_total, ss_subjects, ss_conditions, ss_error, True)
    F = (ss_conditions / df1) / (ss_error / df2)
    p = min(1.0, max(0.0, f_sf(F, df1, df2)))
    return AnovaResult(F, (df1, df2), p, ss_total, ss_subjects, ss_conditions, ss_error)


def paired_t(a, b) -> tuple[float, int, float]:
    """Paired t statistic, degrees of freedom and two-sided p."""
    d = np.asarray(a, float) - np.asarray(b, float)
    n = d.size
    sd = d.std(ddof=1)
    t = d.mean() / (sd / math.sqrt(n))
    return float(t), n - 1, t_sf_two_sided(float(t), n - 1)
