"""Two-sample tests with asymptotic p-values, plus the special functions they need.

Every test exists in one implementation that operates row-wise on batches of
windows; the scalar API wraps single-row batches. All row computations are
strictly element-local, so a p-value does not depend on which batch it was
computed in.

Degenerate windows (all values tied / zero variance) yield p = 1 rather than
an error: sliding-window featurization must never abort on constant data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

TINY_P = math.nextafter(0.0, 1.0)  # smallest positive double

_SQRT2 = math.sqrt(2.0)
_BETA_EPS = 1e-15
_BETA_FPMIN = 1e-300
_BETA_MAX_ITER = 600
_KOLMOGOROV_TERM_EPS = 1e-16

_erfc = np.vectorize(math.erfc, otypes=[float])
_lgamma = np.vectorize(math.lgamma, otypes=[float])


class TestKind(Enum):
    """Two-sample tests; the value is the short code used in indicator ids."""

    MANN_WHITNEY_U = "u"
    KOLMOGOROV_SMIRNOV = "ks"
    F_VARIANCE = "f"
    T_POOLED = "tp"
    T_WELCH = "tw"
    SLOPE_SHIFT = "ss"
    SLOPE_CHANGE = "sc"


@dataclass(frozen=True)
class TestOutcome:
    statistic: float
    p_value: float
    degenerate: bool = False


# ---------------------------------------------------------------------------
# special functions


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF via the complementary error function; |err| <= 1e-12."""
    return 0.5 * math.erfc(-z / _SQRT2)


def kolmogorov_q(lam: float) -> float:
    """Tail function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).

    Terms below 1e-16 are truncated; the result is clamped to [0, 1] and
    Q(0) is defined as 1.
    """
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return float(_kolmogorov_q_many(np.asarray([lam], dtype=float))[0])


def _kolmogorov_q_many(lam: np.ndarray) -> np.ndarray:
    out = np.ones_like(lam)
    active = lam > 0
    if not active.any():
        return out
    x2 = lam[active] ** 2
    total = np.zeros_like(x2)
    live = np.ones(x2.shape, dtype=bool)
    sign = 1.0
    k = 1
    while live.any():
        term = np.exp(-2.0 * (k * k) * x2)
        add = live & (term >= _KOLMOGOROV_TERM_EPS)
        total[add] += sign * term[add]
        live &= term >= _KOLMOGOROV_TERM_EPS
        sign = -sign
        k += 1
    out[active] = 2.0 * total
    return np.clip(out, 0.0, 1.0)


def reg_incomplete_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b); absolute error <= 1e-12.

    Continued-fraction evaluation with the usual symmetry switch at
    x > (a+1)/(a+b+2).
    """
    if not (a > 0.0 and b > 0.0):
        raise ValueError("a and b must be > 0")
    if not (0.0 <= x <= 1.0):
        raise ValueError("x must be in [0, 1]")
    return float(_betainc_many(a, b, np.asarray([x], dtype=float))[0])


def _betainc_many(a, b, x: np.ndarray) -> np.ndarray:
    """I_x(a, b) elementwise; a and b broadcast against x."""
    x = np.asarray(x, dtype=float)
    a = np.broadcast_to(np.asarray(a, dtype=float), x.shape).copy()
    b = np.broadcast_to(np.asarray(b, dtype=float), x.shape).copy()
    out = np.empty_like(x)
    out[x <= 0.0] = 0.0
    out[x >= 1.0] = 1.0
    inner = (x > 0.0) & (x < 1.0)
    if not inner.any():
        return out
    xi, ai, bi = x[inner], a[inner], b[inner]
    swap = xi > (ai + 1.0) / (ai + bi + 2.0)
    res = np.empty_like(xi)
    if (~swap).any():
        res[~swap] = _betainc_cf(ai[~swap], bi[~swap], xi[~swap])
    if swap.any():
        res[swap] = 1.0 - _betainc_cf(bi[swap], ai[swap], 1.0 - xi[swap])
    out[inner] = res
    return out


def _betainc_cf(a: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Lentz continued fraction for I_x(a,b), valid for x <= (a+1)/(a+b+2).

    Elements are frozen as soon as their own fraction converges, so results
    are identical whatever batch an element arrives in.
    """
    front = np.exp(
        a * np.log(x)
        + b * np.log1p(-x)
        - (_lgamma(a) + _lgamma(b) - _lgamma(a + b))
    ) / a
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones_like(x)
    d = 1.0 - qab * x / qap
    np.copyto(d, _BETA_FPMIN, where=np.abs(d) < _BETA_FPMIN)
    d = 1.0 / d
    h = d.copy()
    live = np.ones(x.shape, dtype=bool)
    for m in range(1, _BETA_MAX_ITER + 1):
        idx = np.flatnonzero(live)
        if idx.size == 0:
            break  # all elements converged
        la, lb, lx = a[idx], b[idx], x[idx]
        ld, lc, lh = d[idx], c[idx], h[idx]
        m2 = 2 * m
        aa = m * (lb - m) * lx / ((qam[idx] + m2) * (la + m2))
        ld = 1.0 + aa * ld
        np.copyto(ld, _BETA_FPMIN, where=np.abs(ld) < _BETA_FPMIN)
        ld = 1.0 / ld
        lc = 1.0 + aa / lc
        np.copyto(lc, _BETA_FPMIN, where=np.abs(lc) < _BETA_FPMIN)
        lh = lh * ld * lc
        aa = -(la + m) * (qab[idx] + m) * lx / ((la + m2) * (qap[idx] + m2))
        ld = 1.0 + aa * ld
        np.copyto(ld, _BETA_FPMIN, where=np.abs(ld) < _BETA_FPMIN)
        ld = 1.0 / ld
        lc = 1.0 + aa / lc
        np.copyto(lc, _BETA_FPMIN, where=np.abs(lc) < _BETA_FPMIN)
        delta = ld * lc
        lh = lh * delta
        d[idx], c[idx], h[idx] = ld, lc, lh
        live[idx[np.abs(delta - 1.0) < _BETA_EPS]] = False
    if live.any():
        raise RuntimeError("incomplete beta continued fraction did not converge")
    return front * h


def _t_sf_two_sided(t: np.ndarray, df) -> np.ndarray:
    """Two-sided p for a t statistic: I_{df/(df+t^2)}(df/2, 1/2)."""
    df = np.asarray(df, dtype=float)
    x = df / (df + t * t)
    return np.clip(_betainc_many(df / 2.0, 0.5, x), TINY_P, 1.0)


# ---------------------------------------------------------------------------
# batched kernels (rows = windows)


def _midranks_and_ties(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row midranks (1-based) and tie corrections sum(t^3 - t)."""
    m, n = x.shape
    order = np.argsort(x, axis=1, kind="stable")
    s = np.take_along_axis(x, order, axis=1)
    pos = np.arange(n, dtype=float)
    new_run = np.ones((m, n), dtype=bool)
    new_run[:, 1:] = s[:, 1:] != s[:, :-1]
    start = np.maximum.accumulate(np.where(new_run, pos, 0.0), axis=1)
    last = np.ones((m, n), dtype=bool)
    last[:, :-1] = new_run[:, 1:]
    end = np.where(last, pos, n - 1.0)
    end = np.minimum.accumulate(end[:, ::-1], axis=1)[:, ::-1]
    mid_sorted = 0.5 * (start + end) + 1.0
    ranks = np.empty((m, n))
    np.put_along_axis(ranks, order, mid_sorted, axis=1)
    run_len = end - start + 1.0
    ties = np.where(new_run, run_len**3 - run_len, 0.0).sum(axis=1)
    return ranks, ties


def _u_batch(left: np.ndarray, right: np.ndarray):
    nl, nr = left.shape[1], right.shape[1]
    n = nl + nr
    ranks, ties = _midranks_and_ties(np.concatenate([left, right], axis=1))
    u = ranks[:, :nl].sum(axis=1) - nl * (nl + 1) / 2.0
    mean = nl * nr / 2.0
    var = nl * nr / 12.0 * ((n + 1) - ties / (n * (n - 1.0)))
    degenerate = var <= 0.0
    p = np.ones_like(u)
    ok = ~degenerate
    z = np.maximum(np.abs(u[ok] - mean) - 0.5, 0.0) / np.sqrt(var[ok])
    p[ok] = np.minimum(_erfc(z / _SQRT2), 1.0)
    return u, p, degenerate


def _ks_batch(left: np.ndarray, right: np.ndarray):
    nl, nr = left.shape[1], right.shape[1]
    n = nl + nr
    x = np.concatenate([left, right], axis=1)
    order = np.argsort(x, axis=1, kind="stable")
    s = np.take_along_axis(x, order, axis=1)
    from_right = (order >= nl).astype(float)
    cum_r = np.cumsum(from_right, axis=1) / nr
    cum_l = (np.arange(1, n + 1, dtype=float) - np.cumsum(from_right, axis=1)) / nl
    # the empirical CDFs may only be compared after a full tie run
    last = np.ones(s.shape, dtype=bool)
    last[:, :-1] = s[:, 1:] != s[:, :-1]
    diff = np.where(last, np.abs(cum_l - cum_r), 0.0)
    d = diff.max(axis=1)
    ne = nl * nr / float(n)
    lam = (math.sqrt(ne) + 0.12 + 0.11 / math.sqrt(ne)) * d
    p = _kolmogorov_q_many(lam)
    degenerate = s[:, -1] == s[:, 0]
    p[degenerate] = 1.0
    return d, p, degenerate


def _center(left: np.ndarray, right: np.ndarray):
    """Shift both windows by the left window's first value.

    Exact-zero semantics: a constant window becomes exactly zero, so
    variance/mean comparisons detect degeneracy without rounding noise.
    """
    c = left[:, :1]
    return left - c, right - c


def _f_batch(left: np.ndarray, right: np.ndarray):
    nl, nr = left.shape[1], right.shape[1]
    lc, rc = _center(left, right)
    s2l = lc.var(axis=1, ddof=1)
    s2r = rc.var(axis=1, ddof=1)
    s2l[left.max(axis=1) == left.min(axis=1)] = 0.0
    s2r[right.max(axis=1) == right.min(axis=1)] = 0.0
    degenerate = (s2l == 0.0) & (s2r == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = s2l / s2r
    d1, d2 = nl - 1.0, nr - 1.0
    p = np.ones_like(s2l)
    ok = ~degenerate
    x = d1 * s2l[ok] / (d1 * s2l[ok] + d2 * s2r[ok])
    cdf = _betainc_many(d1 / 2.0, d2 / 2.0, x)
    p[ok] = np.clip(2.0 * np.minimum(cdf, 1.0 - cdf), TINY_P, 1.0)
    stat[degenerate] = np.nan
    return stat, p, degenerate


def _t_core(left, right, pooled: bool):
    nl, nr = left.shape[1], right.shape[1]
    lc, rc = _center(left, right)
    diff = lc.mean(axis=1) - rc.mean(axis=1)
    s2l = lc.var(axis=1, ddof=1)
    s2r = rc.var(axis=1, ddof=1)
    s2l[left.max(axis=1) == left.min(axis=1)] = 0.0
    s2r[right.max(axis=1) == right.min(axis=1)] = 0.0
    if pooled:
        df_all = np.full(diff.shape, nl + nr - 2.0)
        se2 = ((nl - 1) * s2l + (nr - 1) * s2r) / (nl + nr - 2.0) * (1.0 / nl + 1.0 / nr)
    else:
        vl, vr = s2l / nl, s2r / nr
        se2 = vl + vr
        with np.errstate(divide="ignore", invalid="ignore"):
            df_all = se2**2 / (vl**2 / (nl - 1.0) + vr**2 / (nr - 1.0))
    degenerate = (se2 == 0.0) & (diff == 0.0)
    inf_case = (se2 == 0.0) & (diff != 0.0)
    stat = np.full(diff.shape, np.nan)
    p = np.ones_like(diff)
    ok = ~degenerate & ~inf_case
    stat[ok] = diff[ok] / np.sqrt(se2[ok])
    p[ok] = _t_sf_two_sided(stat[ok], df_all[ok])
    stat[inf_case] = np.sign(diff[inf_case]) * np.inf
    p[inf_case] = TINY_P
    return stat, p, degenerate


def _t_pooled_batch(left, right):
    return _t_core(left, right, pooled=True)


def _t_welch_batch(left, right):
    return _t_core(left, right, pooled=False)


def _ols_slope(w: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row OLS slope against the local index and its squared standard error."""
    k = w.shape[1]
    wc = w - w[:, :1]
    t = np.arange(k, dtype=float) - (k - 1) / 2.0
    sxx = k * (k * k - 1) / 12.0
    slope = wc @ t / sxx
    sstot = ((wc - wc.mean(axis=1, keepdims=True)) ** 2).sum(axis=1)
    ssr = np.maximum(sstot - slope * slope * sxx, 0.0)
    var_slope = ssr / (k - 2.0) / sxx
    return slope, var_slope


def _slope_shift_batch(left, right):
    nl, nr = left.shape[1], right.shape[1]
    bl, vl = _ols_slope(left)
    br, vr = _ols_slope(right)
    se2 = vl + vr
    diff = br - bl
    degenerate = (se2 == 0.0) & (diff == 0.0)
    inf_case = (se2 == 0.0) & (diff != 0.0)
    stat = np.zeros_like(diff)
    p = np.ones_like(diff)
    ok = ~degenerate & ~inf_case
    stat[ok] = diff[ok] / np.sqrt(se2[ok])
    with np.errstate(divide="ignore", invalid="ignore"):
        df = se2[ok] ** 2 / (vl[ok] ** 2 / (nl - 2.0) + vr[ok] ** 2 / (nr - 2.0))
    p[ok] = _t_sf_two_sided(stat[ok], df)
    stat[inf_case] = np.sign(diff[inf_case]) * np.inf
    p[inf_case] = TINY_P
    return stat, p, degenerate


def _slope_change_batch(left, right):
    nr = right.shape[1]
    br, vr = _ols_slope(right)
    degenerate = (vr == 0.0) & (br == 0.0)
    inf_case = (vr == 0.0) & (br != 0.0)
    stat = np.zeros_like(br)
    p = np.ones_like(br)
    ok = ~degenerate & ~inf_case
    stat[ok] = br[ok] / np.sqrt(vr[ok])
    p[ok] = _t_sf_two_sided(stat[ok], nr - 2.0)
    stat[inf_case] = np.sign(br[inf_case]) * np.inf
    p[inf_case] = TINY_P
    return stat, p, degenerate


_BATCH_KERNELS = {
    TestKind.MANN_WHITNEY_U: (_u_batch, 1, 1),
    TestKind.KOLMOGOROV_SMIRNOV: (_ks_batch, 1, 1),
    TestKind.F_VARIANCE: (_f_batch, 2, 2),
    TestKind.T_POOLED: (_t_pooled_batch, 2, 2),
    TestKind.T_WELCH: (_t_welch_batch, 2, 2),
    TestKind.SLOPE_SHIFT: (_slope_shift_batch, 3, 3),
    TestKind.SLOPE_CHANGE: (_slope_change_batch, 0, 3),
}


def batch_pvalues(kind: TestKind, left: np.ndarray, right: np.ndarray):
    """Run one test on a batch of window pairs.

    left is (m, n_left), right is (m, n_right); returns (statistics,
    p-values, degenerate flags), each of shape (m,).
    """
    kernel, min_left, min_right = _BATCH_KERNELS[kind]
    if left.shape[1] < min_left or right.shape[1] < min_right:
        raise ValueError(
            f"{kind.value} test needs at least {min_left}+{min_right} points, "
            f"got {left.shape[1]}+{right.shape[1]}"
        )
    return kernel(np.asarray(left, dtype=float), np.asarray(right, dtype=float))


def _scalar(kind: TestKind, left, right) -> TestOutcome:
    left = np.atleast_2d(np.asarray(left, dtype=float))
    right = np.atleast_2d(np.asarray(right, dtype=float))
    if kind is not TestKind.SLOPE_CHANGE and left.shape[1] == 0:
        raise ValueError("empty sample")
    if right.shape[1] == 0:
        raise ValueError("empty sample")
    stat, p, degen = batch_pvalues(kind, left, right)
    return TestOutcome(float(stat[0]), float(p[0]), bool(degen[0]))


def mann_whitney_u(left, right) -> TestOutcome:
    """Rank-sum test for a location shift; two-sided normal approximation.

    Midranks handle ties; the variance is tie-corrected and a continuity
    correction of 0.5 is applied. All-tied windows are degenerate (p = 1).
    """
    return _scalar(TestKind.MANN_WHITNEY_U, left, right)


def mann_whitney_exact(left, right) -> TestOutcome:
    """Exact two-sided rank-sum p-value by full enumeration.

    Oracle for the asymptotic path: at most 16 pooled values, no ties.
    """
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.size == 0 or right.size == 0:
        raise ValueError("empty sample")
    nl, nr = left.size, right.size
    n = nl + nr
    if n > 16:
        raise ValueError("exact enumeration limited to 16 pooled values")
    pooled = np.concatenate([left, right])
    if np.unique(pooled).size != n:
        raise ValueError("exact enumeration requires tie-free samples")
    ranks = np.empty(n)
    ranks[np.argsort(pooled, kind="stable")] = np.arange(1, n + 1)
    u_obs = ranks[:nl].sum() - nl * (nl + 1) / 2.0
    mean = nl * nr / 2.0
    base = nl * (nl + 1) / 2.0
    extreme = 0
    total = 0
    for combo in itertools.combinations(range(1, n + 1), nl):
        u = sum(combo) - base
        if abs(u - mean) >= abs(u_obs - mean):
            extreme += 1
        total += 1
    return TestOutcome(float(u_obs), extreme / total, False)


def ks_two_sample(left, right) -> TestOutcome:
    """Two-sample Kolmogorov-Smirnov test, asymptotic p-value.

    p = Q(lambda) with lambda = (sqrt(ne) + 0.12 + 0.11/sqrt(ne)) * D and
    ne the effective sample size.
    """
    return _scalar(TestKind.KOLMOGOROV_SMIRNOV, left, right)


def f_variance(left, right) -> TestOutcome:
    """F-test for equality of variances, two-sided via 2*min(tail, 1-tail)."""
    return _scalar(TestKind.F_VARIANCE, left, right)


def t_pooled(left, right) -> TestOutcome:
    """Two-sample t-test with pooled variance, df = n_l + n_r - 2."""
    return _scalar(TestKind.T_POOLED, left, right)


def t_welch(left, right) -> TestOutcome:
    """Two-sample t-test with Welch-Satterthwaite degrees of freedom."""
    return _scalar(TestKind.T_WELCH, left, right)


def slope_shift(left, right) -> TestOutcome:
    """Difference between the OLS slopes of the two windows.

    t = (b_right - b_left) / sqrt(SE_left^2 + SE_right^2), with
    Welch-Satterthwaite-style df from the two slope variances.
    """
    return _scalar(TestKind.SLOPE_SHIFT, left, right)


def slope_change(left, right) -> TestOutcome:
    """OLS slope of the right window against zero; the left window is ignored."""
    return _scalar(TestKind.SLOPE_CHANGE, left, right)


_SCALAR_OPS = {
    TestKind.MANN_WHITNEY_U: mann_whitney_u,
    TestKind.KOLMOGOROV_SMIRNOV: ks_two_sample,
    TestKind.F_VARIANCE: f_variance,
    TestKind.T_POOLED: t_pooled,
    TestKind.T_WELCH: t_welch,
    TestKind.SLOPE_SHIFT: slope_shift,
    TestKind.SLOPE_CHANGE: slope_change,
}


def run_test(kind: TestKind, left, right) -> TestOutcome:
    """Scalar dispatcher over the seven test kinds."""
    return _SCALAR_OPS[kind](left, right)
