"""Two-sample, calibration and resampling statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy import special
from scipy.special import ndtr, ndtri
from scipy.spatial.distance import pdist

from .noise import derived_rng


class SingularDesignError(ValueError):
    """Regression predictor has zero variance."""


class BootstrapError(RuntimeError):
    """An estimator raised on one bootstrap resample."""

    def __init__(self, index: int, cause: Exception):
        super().__init__(f"estimator failed on bootstrap resample {index}: {cause!r}")
        self.index = index
        self.cause = cause


@dataclass
class TestResult:
    statistic: float
    p_value: float
    critical_value: float = float("nan")
    n_effective: tuple = ()
    method: str = ""
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.statistic = float(self.statistic)
        self.p_value = float(min(max(self.p_value, 0.0), 1.0))
        if not math.isfinite(self.statistic):
            raise ValueError(f"{self.method}: statistic is not finite")


TestResult.__test__ = False  # keep pytest from collecting the class


def _sample(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError(f"{name}: sample is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: sample contains non-finite values")
    return arr


# ---------------------------------------------------------------------------
# Kolmogorov law
# ---------------------------------------------------------------------------


def kolmogorov_cdf(x: float) -> float:
    """Limiting Kolmogorov distribution function."""
    return 1.0 - kolmogorov_sf(x)


def kolmogorov_sf(x: float) -> float:
    return float(special.kolmogorov(max(x, 0.0)))


def kolmogorov_quantile(alpha: float) -> float:
    """c_alpha with K(c_alpha) = 1 - alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(special.kolmogi(alpha))


# ---------------------------------------------------------------------------
# Two-sample distances
# ---------------------------------------------------------------------------


def ks_statistic(xs, ys) -> float:
    """sup |F_x - F_y| over pooled values, computed as max|i m - j n| / (n m)."""
    x = np.sort(_sample(xs, "xs"))
    y = np.sort(_sample(ys, "ys"))
    n, m = x.size, y.size
    pts = np.unique(np.concatenate([x, y]))
    i = np.searchsorted(x, pts, side="right").astype(np.int64)
    j = np.searchsorted(y, pts, side="right").astype(np.int64)
    return float(np.max(np.abs(i * m - j * n))) / float(n * m)


def ks_two_sample(xs, ys, alpha: Optional[float] = None) -> TestResult:
    """Two-sample KS with the asymptotic Kolmogorov p-value.

    When ``alpha`` is given, ``critical_value`` is c_alpha * sqrt((n+m)/(n m)).
    """
    x = _sample(xs, "xs")
    y = _sample(ys, "ys")
    stat = ks_statistic(x, y)
    n, m = x.size, y.size
    en = math.sqrt(n * m / (n + m))
    crit = float("nan") if alpha is None else kolmogorov_quantile(alpha) / en
    return TestResult(stat, kolmogorov_sf(en * stat), crit, (n, m), "ks")


def _abs_pair_sum(sorted_x: np.ndarray) -> float:
    """sum_{i,j} |x_i - x_j| for a sorted sample."""
    n = sorted_x.size
    w = 2.0 * np.arange(n) - n + 1.0
    return 2.0 * float(np.dot(w, sorted_x))


def energy_distance(xs, ys) -> float:
    """2E|X-Y| - E|X-X'| - E|Y-Y'| from full pairwise averages (V-statistic)."""
    x = np.sort(_sample(xs, "xs"))
    y = np.sort(_sample(ys, "ys"))
    n, m = x.size, y.size
    sxx = _abs_pair_sum(x)
    syy = _abs_pair_sum(y)
    sxy = 0.5 * (_abs_pair_sum(np.sort(np.concatenate([x, y]))) - sxx - syy)
    e = 2.0 * sxy / (n * m) - sxx / n**2 - syy / m**2
    scale = max(float(np.max(np.abs(np.concatenate([x, y])))), 1.0)
    return 0.0 if abs(e) < 1e-12 * scale else max(e, 0.0)


def _perm_pvalue(observed: float, null: np.ndarray) -> float:
    # Small relative slack so exact ties from float rounding count as ties.
    tol = 1e-12 * max(abs(observed), 1e-300)
    return (1.0 + np.count_nonzero(null >= observed - tol)) / (null.size + 1.0)


def _permutations(n_total: int, n_perm: int, seed: int, key: int) -> np.ndarray:
    rng = derived_rng(seed, key)
    return np.argsort(rng.random((n_perm, n_total)), axis=1)


def energy_test(xs, ys, n_perm: int = 999, seed: int = 0) -> TestResult:
    """Energy distance with a permutation p-value."""
    x = _sample(xs, "xs")
    y = _sample(ys, "ys")
    stat = energy_distance(x, y)
    pooled = np.concatenate([x, y])
    n = x.size
    null = np.empty(n_perm)
    for b, perm in enumerate(_permutations(pooled.size, n_perm, seed, 11)):
        z = pooled[perm]
        null[b] = energy_distance(z[:n], z[n:])
    return TestResult(stat, _perm_pvalue(stat, null), float(np.quantile(null, 0.95)), (n, y.size), "energy")


def _ad_statistics(pooled_sorted_groups: np.ndarray, labels: np.ndarray, n1: int) -> np.ndarray:
    """Midrank two-sample Anderson-Darling A^2 for each row of ``labels``.

    ``labels`` is (P, N) with 1 marking sample-one membership, columns in
    pooled sorted order; ``pooled_sorted_groups`` holds the end index of each
    run of tied values.
    """
    ends = pooled_sorted_groups
    N = labels.shape[1]
    n2 = N - n1
    l = np.diff(np.concatenate([[0], ends]))
    B = ends.astype(float)
    Ba = B - l / 2.0
    denom = Ba * (N - Ba) - N * l / 4.0
    keep = denom > 0
    c = np.cumsum(labels, axis=1)[:, ends - 1].astype(float)
    f = np.diff(np.concatenate([np.zeros((labels.shape[0], 1)), c], axis=1), axis=1)
    M1a = c - f / 2.0
    M2a = Ba[None, :] - M1a
    t1 = (N * M1a - n1 * Ba) ** 2
    t2 = (N * M2a - n2 * Ba) ** 2
    terms = (l * (t1 / n1 + t2 / n2))[:, keep] / denom[keep]
    return (N - 1.0) / N**2 * terms.sum(axis=1)


def anderson_darling_two_sample(xs, ys, n_perm: int = 999, seed: int = 0) -> TestResult:
    """Two-sample Anderson-Darling (midrank form, robust to ties) with a permutation p-value."""
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    x = _sample(xs, "xs")
    y = _sample(ys, "ys")
    pooled = np.concatenate([x, y])
    order = np.argsort(pooled, kind="stable")
    z = pooled[order]
    ends = np.flatnonzero(np.concatenate([z[1:] != z[:-1], [True]])) + 1
    lab = (order < x.size).astype(np.int8)[None, :]
    stat = float(_ad_statistics(ends, lab, x.size)[0])
    null = np.empty(n_perm)
    base = np.zeros(pooled.size, dtype=np.int8)
    base[: x.size] = 1
    perms = _permutations(pooled.size, n_perm, seed, 13)
    chunk = max(1, 2_000_000 // pooled.size)
    for s in range(0, n_perm, chunk):
        null[s : s + chunk] = _ad_statistics(ends, base[perms[s : s + chunk]], x.size)
    return TestResult(stat, _perm_pvalue(stat, null), float(np.quantile(null, 0.95)), (x.size, y.size), "anderson_darling")


# ---------------------------------------------------------------------------
# Conditional MMD on joint (x, y) points
# ---------------------------------------------------------------------------


def _joint(pairs, name: str) -> np.ndarray:
    x, y = pairs
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    x = x.reshape(y.size, -1)
    if y.size < 2:
        raise ValueError(f"{name}: at least two points required")
    return np.column_stack([x, y])


def resolve_bandwidth(points: np.ndarray, bandwidth: Union[float, str]) -> float:
    if isinstance(bandwidth, str):
        if bandwidth != "median":
            raise ValueError(f"bandwidth must be positive or 'median', got {bandwidth!r}")
        h = float(np.median(pdist(points)))
    else:
        h = float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    return h


def _mmd_parts(pairs_a, pairs_b, bandwidth):
    a = _joint(pairs_a, "pairs_a")
    b = _joint(pairs_b, "pairs_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError("pairs_a and pairs_b differ in covariate dimension")
    z = np.vstack([a, b])
    h = resolve_bandwidth(z, bandwidth)
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    K = np.exp(-d2 / (2.0 * h * h))
    w = np.concatenate([np.full(len(a), 1.0 / len(a)), np.full(len(b), -1.0 / len(b))])
    return K, w, h


def conditional_mmd(pairs_a, pairs_b, bandwidth: Union[float, str] = "median") -> float:
    """Squared MMD (V-statistic) between joint laws of (x, y) under a Gaussian kernel."""
    K, w, _ = _mmd_parts(pairs_a, pairs_b, bandwidth)
    val = float(w @ K @ w)
    return 0.0 if val < 1e-14 else val


def conditional_mmd_test(pairs_a, pairs_b, bandwidth: Union[float, str] = "median",
                         n_perm: int = 499, seed: int = 0) -> TestResult:
    K, w, h = _mmd_parts(pairs_a, pairs_b, bandwidth)
    stat = max(float(w @ K @ w), 0.0)
    perms = _permutations(len(w), n_perm, seed, 17)
    null = np.empty(n_perm)
    chunk = max(1, 4_000_000 // (len(w) ** 2) + 1)
    for s in range(0, n_perm, chunk):
        W = w[perms[s : s + chunk]]
        null[s : s + chunk] = np.einsum("pi,pi->p", W @ K, W)
    n_a = int(np.sum(w > 0))
    return TestResult(stat, _perm_pvalue(stat, null), float(np.quantile(null, 0.95)), (n_a, len(w) - n_a),
                      "cmmd", {"bandwidth": h})


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------


class CalibrationFit(NamedTuple):
    """OLS of observed on predicted plus residual summaries.

    ``rmspe``/``mape`` summarize e = observed - predicted. ``fit_rmse`` is the
    root mean square of the regression residuals.
    """

    beta0: float
    beta1: float
    se0: float
    se1: float
    rmspe: float
    mape: float
    fit_rmse: float = 0.0
    n: int = 0


def calibration_regression(predicted, observed, robust: bool = False) -> CalibrationFit:
    """Regress observed on predicted.

    Standard errors are classical, or HC1 sandwich when ``robust`` is set.
    """
    x = np.asarray(predicted, dtype=float).ravel()
    y = np.asarray(observed, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("predicted and observed must have equal length")
    n = x.size
    if n < 3:
        raise ValueError("at least three points are required")
    xbar, ybar = x.mean(), y.mean()
    dx = x - xbar
    sxx = float(dx @ dx)
    if sxx <= 1e-300 or np.ptp(x) == 0:
        raise SingularDesignError("predictor has zero variance")
    b1 = float(dx @ (y - ybar)) / sxx
    b0 = ybar - b1 * xbar
    resid = y - b0 - b1 * x
    if robust:
        Xd = np.column_stack([np.ones(n), x])
        bread = np.linalg.inv(Xd.T @ Xd)
        meat = (Xd * (resid**2)[:, None]).T @ Xd
        cov = bread @ meat @ bread * n / (n - 2)
        se0, se1 = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    else:
        s2 = float(resid @ resid) / (n - 2)
        se1 = math.sqrt(s2 / sxx)
        se0 = math.sqrt(s2 * (1.0 / n + xbar**2 / sxx))
    e = y - x
    return CalibrationFit(
        beta0=float(b0),
        beta1=float(b1),
        se0=se0,
        se1=se1,
        rmspe=float(np.sqrt(np.mean(e * e))),
        mape=float(np.mean(np.abs(e))),
        fit_rmse=float(np.sqrt(np.mean(resid * resid))),
        n=n,
    )


@dataclass
class CoverageResult:
    rate: float
    by_stratum: dict = field(default_factory=dict)


def interval_coverage(intervals, observed, strata=None) -> CoverageResult:
    """Share of observations inside their closed interval [lo, hi]."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    y = np.asarray(observed, dtype=float).ravel()
    if iv.shape[0] != y.size:
        raise ValueError("intervals and observed must have equal length")
    lo, hi = iv[:, 0], iv[:, 1]
    bad = np.flatnonzero(lo > hi)
    if bad.size:
        raise ValueError(f"lo > hi for units at positions {bad[:10].tolist()}")
    inside = (y >= lo) & (y <= hi)
    by = {}
    if strata is not None:
        s = np.asarray(strata)
        for k in np.unique(s):
            by[k.item() if hasattr(k, "item") else k] = float(inside[s == k].mean())
    return CoverageResult(float(inside.mean()) if y.size else float("nan"), by)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------


def bootstrap_indices(n: int, B: int, seed: int, strata=None) -> np.ndarray:
    """(B, n) resample indices; with ``strata`` each group is resampled within itself."""
    rng = derived_rng(seed, 19)
    if strata is None:
        return rng.integers(0, n, size=(B, n))
    s = np.asarray(strata)
    out = np.empty((B, n), dtype=np.int64)
    for k in np.unique(s):
        idx = np.flatnonzero(s == k)
        out[:, idx] = idx[rng.integers(0, idx.size, size=(B, idx.size))]
    return out


def bootstrap_se(estimator: Callable[[np.ndarray], float], n: int, B: int = 1000,
                 seed: int = 0, strata=None) -> float:
    """Standard deviation of ``estimator(indices)`` over B nonparametric resamples.

    The estimator receives an index array into the caller's data.
    """
    if B < 100:
        raise ValueError(f"B must be >= 100, got {B}")
    if n < 1:
        raise ValueError("n must be >= 1")
    vals = np.empty(B)
    for b, idx in enumerate(bootstrap_indices(n, B, seed, strata)):
        try:
            vals[b] = estimator(idx)
        except Exception as exc:  # noqa: BLE001
            raise BootstrapError(b, exc) from exc
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------------------
# Correlation comparison
# ---------------------------------------------------------------------------


def fisher_z_test(rho_sim: float, rho_obs: float, n_cross: int) -> TestResult:
    """Z = (atanh rho_sim - atanh rho_obs) sqrt(n_cross - 3), two-sided normal p-value."""
    for name, r in (("rho_sim", rho_sim), ("rho_obs", rho_obs)):
        if not -1.0 < r < 1.0:
            raise ValueError(f"{name} must lie in (-1, 1), got {r}")
    if n_cross < 4:
        raise ValueError(f"n_cross must be >= 4, got {n_cross}")
    z = (math.atanh(rho_sim) - math.atanh(rho_obs)) * math.sqrt(n_cross - 3)
    return TestResult(z, 2.0 * ndtr(-abs(z)), float(ndtri(0.975)), (n_cross,), "fisher_z")


def normal_quantile(p: float) -> float:
    return float(ndtri(p))
