"""Pearson correlation with exact two-sided significance, simple OLS, and
leave-one-out influence analysis.

The p-value uses the exact Student t distribution, evaluated through the
regularized incomplete beta function (continued fraction, modified Lentz
method). At the sample sizes this pipeline sees (n around 14) the normal
approximation is materially wrong, so it is not offered.

All accumulations go through math.fsum (error-free transformation), which
makes results independent of summation order and thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InsufficientDataError, UndefinedStatisticError

#: Flag a leave-one-out row when |r_without - r_with| exceeds this.
DEFAULT_INFLUENCE_THRESHOLD = 0.1


@dataclass(frozen=True)
class CorrelationResult:
    r: float
    p_value: float
    n: int


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    r_squared: float
    n: int

    def predict(self, x: float) -> float:
        return self.slope * x + self.intercept


@dataclass(frozen=True)
class InfluenceRow:
    excluded: str
    r_with: float
    r_without: float | None
    delta: float | None
    flagged: bool

    @property
    def undefined(self) -> bool:
        return self.r_without is None


@dataclass(frozen=True)
class InfluenceReport:
    rows: tuple[InfluenceRow, ...]
    r_with: float
    threshold: float

    @property
    def flagged(self) -> tuple[str, ...]:
        return tuple(row.excluded for row in self.rows if row.flagged)

    def max_abs_delta(self) -> float:
        deltas = [abs(row.delta) for row in self.rows if row.delta is not None]
        return max(deltas) if deltas else 0.0


# ── regularized incomplete beta ──────────────────────────────────────


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function, evaluated with
    the modified Lentz method."""
    max_iter = 500
    eps = 1e-16
    tiny = 1e-300
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction failed for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x={x} outside [0, 1]")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    # continued fraction converges fast only below the distribution bulk;
    # use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the other side
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """P(|T_df| >= |t|) for the Student t distribution."""
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


# ── correlation and regression ───────────────────────────────────────


def _moments(x, y):
    n = len(x)
    if len(y) != n:
        raise ValueError(f"length mismatch: {n} vs {len(y)}")
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxx = math.fsum((xi - mx) * (xi - mx) for xi in x)
    syy = math.fsum((yi - my) * (yi - my) for yi in y)
    sxy = math.fsum((xi - mx) * (yi - my) for xi, yi in zip(x, y))
    return n, mx, my, sxx, syy, sxy


def pearson(x, y) -> CorrelationResult:
    """Product-moment correlation with its exact two-sided p-value.

    p comes from t = r * sqrt((n-2) / (1-r^2)) under Student t with n-2
    degrees of freedom. |r| = 1 yields p = 0 (degenerate case).

    Raises InsufficientDataError for n < 3 and UndefinedStatisticError
    when either vector is constant.
    """
    n, _, _, sxx, syy, sxy = _moments(x, y)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 observations, got {n}")
    if sxx == 0.0:
        raise UndefinedStatisticError("x is constant; correlation undefined")
    if syy == 0.0:
        raise UndefinedStatisticError("y is constant; correlation undefined")
    r = sxy / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt(df / (1.0 - r * r))
        p = student_t_two_sided_p(t, df)
    return CorrelationResult(r, p, n)


def ols_fit(x, y) -> LinearModel:
    """Simple least-squares line y = slope * x + intercept.

    r_squared is the squared correlation (0 when y is constant).
    Raises UndefinedStatisticError for constant x (singular design).
    """
    n, mx, my, sxx, syy, sxy = _moments(x, y)
    if n < 2:
        raise InsufficientDataError(f"need at least 2 observations, got {n}")
    if sxx == 0.0:
        raise UndefinedStatisticError("x is constant; design is singular")
    slope = sxy / sxx
    intercept = my - slope * mx
    r_squared = 0.0 if syy == 0.0 else min(1.0, (sxy * sxy) / (sxx * syy))
    return LinearModel(slope, intercept, r_squared, n)


def loo_influence(x, y, labels, threshold: float = DEFAULT_INFLUENCE_THRESHOLD) -> InfluenceReport:
    """Leave-one-out sensitivity of the correlation.

    For each observation k, recomputes Pearson r on the remaining n-1
    pairs; delta = r_without - r_with. Rows whose |delta| exceeds the
    threshold are flagged. An observation whose removal leaves a constant
    sub-vector gets an undefined row rather than failing the report.
    """
    n = len(x)
    if len(y) != n or len(labels) != n:
        raise ValueError("x, y, and labels must have equal length")
    if n < 4:
        raise InsufficientDataError(f"need at least 4 observations, got {n}")
    r_with = pearson(x, y).r
    rows = []
    for k in range(n):
        xs = [v for i, v in enumerate(x) if i != k]
        ys = [v for i, v in enumerate(y) if i != k]
        try:
            r_without = pearson(xs, ys).r
        except UndefinedStatisticError:
            rows.append(InfluenceRow(labels[k], r_with, None, None, False))
            continue
        delta = r_without - r_with
        rows.append(InfluenceRow(labels[k], r_with, r_without, delta,
                                 abs(delta) > threshold))
    return InfluenceReport(tuple(rows), r_with, threshold)
