"""Partial identification of coupling-dependent quantities.

Bounds come from the Frechet-Hoeffding extremes or from structural
constraints. Copula sensitivity curves and a Bayesian posterior over a
Gaussian coupling parameter fill the space between them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .copulas import COMONOTONE, INDEPENDENCE, PARAMETRIC, CopulaSpec, sample_from_uniforms
from .model import Marginal
from .noise import derived_rng, uniforms
from .stats import ks_statistic

THETAS = ("ate", "var_tau", "pbenefit", "pharm", "g_tau_at_t")
REGIMES = ("frechet", "pqd_constrained", "monotone_constrained", "rank_invariant")
DEFAULT_GRID = tuple(np.round(np.arange(-0.9, 0.91, 0.2), 10))


@dataclass
class BoundsResult:
    estimand: str
    lower: float
    upper: float
    regime: str
    attaining_copulas: tuple = ()
    feasible: bool = True
    note: str = ""

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}")
        if self.feasible and not self.lower <= self.upper:
            raise ValueError(f"bounds out of order: {self.lower} > {self.upper}")

    @property
    def interval(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    def to_dict(self) -> dict:
        return {
            "estimand": self.estimand,
            "lower": None if not self.feasible else self.lower,
            "upper": None if not self.feasible else self.upper,
            "regime": self.regime,
            "attaining_copulas": list(self.attaining_copulas),
            "feasible": self.feasible,
            "note": self.note,
        }


class EmpiricalMarginal:
    """Quantile function of an observed or simulated sample."""

    family = "empirical"

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=float).ravel())
        if v.size == 0:
            raise ValueError("empirical marginal needs at least one value")
        self.values = v

    def ppf(self, u):
        return np.quantile(self.values, np.asarray(u, dtype=float), method="inverted_cdf")

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    @property
    def sd(self) -> float:
        return float(self.values.std())


# ---------------------------------------------------------------------------
# Frechet-Hoeffding bounds
# ---------------------------------------------------------------------------


def fh_var_bounds(sigma1: float, sigma0: float) -> BoundsResult:
    """Effect variance over all couplings: [(s1 - s0)^2, (s1 + s0)^2]."""
    if sigma1 < 0 or sigma0 < 0:
        raise ValueError("standard deviations must be >= 0")
    return BoundsResult("var_tau", (sigma1 - sigma0) ** 2, (sigma1 + sigma0) ** 2, "frechet",
                        ("comonotone", "countermonotone"))


def _quantile_grid(f1_quantile: Callable, f0_quantile: Callable, grid_n: int) -> tuple[np.ndarray, np.ndarray]:
    if grid_n < 1000:
        raise ValueError("grid_n must be >= 1000")
    u = (np.arange(grid_n) + 0.5) / grid_n
    q1 = np.asarray(f1_quantile(u), dtype=float)
    q0 = np.asarray(f0_quantile(u), dtype=float)
    for name, q in (("F1", q1), ("F0", q0)):
        if np.any(np.diff(q) < -1e-12 * max(1.0, float(np.max(np.abs(q))))):
            raise ValueError(f"{name} quantile function is not monotone on the grid")
    return q1, q0


def _makarov(q1: np.ndarray, q0: np.ndarray) -> tuple[float, float]:
    # sharp over all couplings: [sup(F0 - F1)+, 1 - sup(F1 - F0)+]
    n = q1.size
    y = np.concatenate([q1, q0])
    gap = (np.searchsorted(q0, y, side="right") - np.searchsorted(q1, y, side="right")) / n
    return max(float(gap.max()), 0.0), 1.0 - max(float(-gap.min()), 0.0)


def fh_pbenefit_bounds(f1_quantile: Callable, f0_quantile: Callable, grid_n: int = 10000) -> BoundsResult:
    """Benefit probability under the comonotone and countermonotone couplings.

    Midpoint quadrature of the indicator integrals over u in (0, 1). These
    extremes bracket the Gaussian, Frank and Clayton families for location
    shifts but need not bracket every coupling; when the sharp interval over
    all couplings is wider, the note reports it.
    """
    q1, q0 = _quantile_grid(f1_quantile, f0_quantile, grid_n)
    pm = float(np.mean(q1 > q0))
    pw = float(np.mean(q1 > q0[::-1]))
    lo, hi = _makarov(q1, q0)
    tol = 2.0 / grid_n
    note = ""
    if lo < min(pm, pw) - tol or hi > max(pm, pw) + tol:
        note = f"extreme-coupling values; sharp bounds over all couplings are [{lo:.4g}, {hi:.4g}]"
    if pm <= pw:
        return BoundsResult("pbenefit", pm, pw, "frechet", ("comonotone", "countermonotone"), note=note)
    return BoundsResult("pbenefit", pw, pm, "frechet", ("countermonotone", "comonotone"), note=note)


def makarov_pbenefit_bounds(f1_quantile: Callable, f0_quantile: Callable, grid_n: int = 10000) -> BoundsResult:
    """Sharp bounds on P(Y(1) > Y(0)) over every coupling of the two marginals."""
    lo, hi = _makarov(*_quantile_grid(f1_quantile, f0_quantile, grid_n))
    return BoundsResult("pbenefit", lo, hi, "frechet", (), note="sharp over all couplings")


# ---------------------------------------------------------------------------
# Monte Carlo coupling
# ---------------------------------------------------------------------------


def _theta_value(theta: str, tau: np.ndarray, t: float = 0.0) -> tuple[float, float]:
    """(value, Monte Carlo standard error) of a functional of effect draws."""
    n = tau.size
    if theta == "ate":
        return math.fsum(tau.tolist()) / n, float(np.std(tau) / math.sqrt(n))
    if theta == "var_tau":
        c = tau - tau.mean()
        v = float(np.mean(c * c))
        m4 = float(np.mean(c**4))
        return v, math.sqrt(max(m4 - v * v, 0.0) / n)
    if theta in ("pbenefit", "pharm", "g_tau_at_t"):
        hit = tau > t if theta == "pbenefit" else (tau < t if theta == "pharm" else tau <= t)
        p = float(np.count_nonzero(hit)) / n
        return p, math.sqrt(p * (1 - p) / n)
    raise ValueError(f"unknown functional {theta!r}; expected one of {THETAS}")


class CouplingSampler:
    """Effect draws under arbitrary couplings of two fixed marginals.

    Every coupling reuses the same underlying uniforms, and uniforms are
    replaced by their normalized ranks before the quantile transform. The
    treated-arm values are then the same fixed nodes under every coupling and
    the control-arm values are a permutation of fixed nodes, so quantities
    that depend only on the marginals do not move across couplings.
    """

    def __init__(self, m1, m0, mc_n: int = 100_000, seed: int = 0):
        if mc_n < 2:
            raise ValueError("mc_n must be >= 2")
        self.m1, self.m0 = m1, m0
        self.mc_n = mc_n
        ids = np.arange(mc_n, dtype=np.int64)
        self.w1 = uniforms(seed, ids, 0, 0, "sensitivity")
        self.w2 = uniforms(seed, ids, 0, 1, "sensitivity")
        nodes = (np.arange(mc_n) + 0.5) / mc_n
        self.q1 = np.asarray(m1.ppf(nodes), dtype=float)
        self.q0 = np.asarray(m0.ppf(nodes), dtype=float)
        self._y1 = self.q1[rankdata(self.w1, method="ordinal").astype(np.int64) - 1]

    def tau(self, copula: CopulaSpec) -> np.ndarray:
        _, v = sample_from_uniforms(copula, self.w1, self.w2)
        if copula.family == "comonotone":
            y0 = self.q0[rankdata(self.w1, method="ordinal").astype(np.int64) - 1]
        elif copula.family == "countermonotone":
            y0 = self.q0[self.q0.size - rankdata(self.w1, method="ordinal").astype(np.int64)]
        else:
            y0 = self.q0[rankdata(v, method="ordinal").astype(np.int64) - 1]
        return self._y1 - y0

    def value(self, copula: CopulaSpec, theta: str, t: float = 0.0) -> tuple[float, float]:
        return _theta_value(theta, self.tau(copula), t)


def _spec(family: str, parameter: float) -> CopulaSpec:
    return CopulaSpec(family, float(parameter))


@dataclass
class SensitivityCurve:
    family: str
    theta: str
    grid: list
    values: list
    mc_se: list
    csi: float
    reference: Optional[float] = None
    csi_by_parameter: list = field(default_factory=list)

    @property
    def value_range(self) -> float:
        return max(self.values) - min(self.values)

    @property
    def copula_robust(self) -> bool:
        """Flat to within three Monte Carlo standard errors."""
        return self.value_range <= 3.0 * max(self.mc_se)

    def csv_rows(self) -> list[tuple[float, float]]:
        return list(zip(self.grid, self.values))

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "theta": self.theta,
            "grid": list(self.grid),
            "values": list(self.values),
            "mc_se": list(self.mc_se),
            "range": self.value_range,
            "copula_robust": self.copula_robust,
            "csi": self.csi,
            "csi_reference": self.reference,
            "csi_by_parameter": list(self.csi_by_parameter),
        }


def sensitivity_curve(
    marginals,
    family: str = "gaussian",
    grid: Sequence[float] = DEFAULT_GRID,
    theta: str = "var_tau",
    mc_n: int = 100_000,
    seed: int = 0,
    t: float = 0.0,
    reference: Optional[float] = None,
) -> SensitivityCurve:
    """Functional ``theta`` of the effect distribution across a copula family.

    ``marginals`` is a (treated, control) pair of objects with ``ppf``. The
    CSI is the KS distance between effect draws at ``reference`` and under
    independence; without a reference it is the largest such distance over
    the grid.
    """
    family = family.lower()
    if family not in PARAMETRIC:
        raise ValueError(f"sensitivity family must be parametric, got {family!r}")
    if theta not in THETAS:
        raise ValueError(f"unknown functional {theta!r}; expected one of {THETAS}")
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    specs = [_spec(family, g) for g in grid]  # raises on out-of-range points

    sampler = CouplingSampler(marginals[0], marginals[1], mc_n, seed)
    tau_ind = np.sort(sampler.tau(INDEPENDENCE))
    values, ses, csis = [], [], []
    for spec in specs:
        tau = sampler.tau(spec)
        v, s = _theta_value(theta, tau, t)
        values.append(v)
        ses.append(s)
        csis.append(ks_statistic(tau, tau_ind))
    if reference is None:
        csi = max(csis)
    else:
        csi = ks_statistic(sampler.tau(_spec(family, reference)), tau_ind)
    return SensitivityCurve(family, theta, grid, values, ses, csi, reference, csis)


# ---------------------------------------------------------------------------
# Constrained bounds
# ---------------------------------------------------------------------------


def _is_normal(m) -> bool:
    return isinstance(m, Marginal) and m.family == "normal"


def comonotone_value(m1, m0, theta: str, t: float = 0.0, grid_n: int = 100_000) -> float:
    """Functional under rank invariance; closed form for two normal marginals."""
    if _is_normal(m1) and _is_normal(m0):
        delta = m1.mean - m0.mean
        s = m1.scale - m0.scale
        if theta == "ate":
            return delta
        if theta == "var_tau":
            return s * s
        if s == 0:
            if theta == "pbenefit":
                return float(delta > t)
            if theta == "pharm":
                return float(delta < t)
            return float(delta <= t)
        z = (t - delta) / abs(s)
        below = float(ndtr(z))
        return {"pbenefit": 1 - below, "pharm": below, "g_tau_at_t": below}[theta]
    u = (np.arange(grid_n) + 0.5) / grid_n
    tau = np.asarray(m1.ppf(u), dtype=float) - np.asarray(m0.ppf(u), dtype=float)
    return _theta_value(theta, tau, t)[0]


def constrained_bounds(
    marginals,
    constraint: str,
    theta: str = "var_tau",
    mc_n: int = 100_000,
    seed: int = 0,
    t: float = 0.0,
    rho_grid: Optional[Sequence[float]] = None,
    max_violation: float = 0.0,
) -> BoundsResult:
    """Bounds under a structural restriction on the coupling.

    * ``pqd``: positive quadrant dependence; closed form for ``var_tau`` and
      ``ate``.
    * ``monotone``: Y(1) >= Y(0) for every unit. Candidate couplings are the
      Gaussian family on rho >= 0 plus the comonotone coupling; a candidate is
      kept when the share of sampled pairs with Y(1) < Y(0) is at most
      ``max_violation``.
    * ``rank_invariance``: the comonotone coupling, a single point.
    """
    m1, m0 = marginals
    if theta not in THETAS:
        raise ValueError(f"unknown functional {theta!r}; expected one of {THETAS}")
    if constraint == "rank_invariance":
        v = comonotone_value(m1, m0, theta, t)
        return BoundsResult(theta, v, v, "rank_invariant", ("comonotone",))
    if constraint == "pqd":
        if theta == "var_tau":
            s1, s0 = m1.sd, m0.sd
            return BoundsResult(theta, (s1 - s0) ** 2, s1 * s1 + s0 * s0, "pqd_constrained",
                                ("comonotone", "independence"))
        if theta == "ate":
            v = m1.mean - m0.mean
            return BoundsResult(theta, v, v, "pqd_constrained", ("any",))
        raise ValueError(f"pqd bounds are available for var_tau and ate, not {theta!r}")
    if constraint != "monotone":
        raise ValueError(f"unknown constraint {constraint!r}; expected pqd, monotone or rank_invariance")

    u = (np.arange(4096) + 0.5) / 4096
    crossing = np.asarray(m1.ppf(u)) < np.asarray(m0.ppf(u))
    if crossing.any():
        return BoundsResult(theta, float("nan"), float("nan"), "monotone_constrained", (), False,
                            f"infeasible: treated quantiles fall below control quantiles at "
                            f"{int(crossing.sum())} of 4096 levels, so no coupling has Y(1) >= Y(0)")

    sampler = CouplingSampler(m1, m0, mc_n, seed)
    grid = np.round(np.arange(0.0, 0.96, 0.05), 10) if rho_grid is None else np.asarray(rho_grid, dtype=float)
    cands = [(f"gaussian({r:g})", _spec("gaussian", r)) for r in grid if 0 <= r < 1] + [("comonotone", COMONOTONE)]
    kept = []
    for label, spec in cands:
        tau = sampler.tau(spec)
        if np.mean(tau < 0) <= max_violation:
            kept.append((label, _theta_value(theta, tau, t)[0]))
    if not kept:
        return BoundsResult(theta, float("nan"), float("nan"), "monotone_constrained", (), False,
                            "infeasible: no candidate coupling satisfied Y(1) >= Y(0)")
    lo = min(kept, key=lambda kv: kv[1])
    hi = max(kept, key=lambda kv: kv[1])
    return BoundsResult(theta, lo[1], hi[1], "monotone_constrained", (lo[0], hi[0]),
                        note=f"{len(kept)} of {len(cands)} candidate couplings kept")


# ---------------------------------------------------------------------------
# Proxy-joint checks
# ---------------------------------------------------------------------------


def concordance_discrepancy(r_sim, r_obs) -> float:
    """Frobenius norm of the difference of two correlation matrices."""
    a = np.asarray(r_sim, dtype=float)
    b = np.asarray(r_obs, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    for name, m in (("R_sim", a), ("R_obs", b)):
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"{name} must be square")
        if not np.allclose(m, m.T, atol=1e-10):
            raise ValueError(f"{name} must be symmetric")
        if not np.allclose(np.diag(m), 1.0, atol=1e-10):
            raise ValueError(f"{name} must have unit diagonal")
    return float(np.linalg.norm(a - b, "fro"))


# ---------------------------------------------------------------------------
# Posterior over a Gaussian coupling parameter
# ---------------------------------------------------------------------------


@dataclass
class CopulaPosterior:
    grid: np.ndarray
    prior: np.ndarray
    evidence: list
    posterior: np.ndarray
    rho_interval: tuple
    credible_interval: Optional[tuple] = None
    theta: Optional[str] = None
    level: float = 0.95

    @property
    def mode(self) -> float:
        return float(self.grid[int(np.argmax(self.posterior))])

    def quantile(self, q: float) -> float:
        cdf = np.cumsum(self.posterior)
        return float(self.grid[min(int(np.searchsorted(cdf, q * cdf[-1])), self.grid.size - 1)])

    @property
    def median(self) -> float:
        return self.quantile(0.5)

    def to_dict(self) -> dict:
        return {
            "evidence": [list(e) for e in self.evidence],
            "mode": self.mode,
            "median": self.median,
            "rho_interval": list(self.rho_interval),
            "theta": self.theta,
            "credible_interval": None if self.credible_interval is None else list(self.credible_interval),
            "level": self.level,
        }


def default_rho_grid(points: int = 2001) -> np.ndarray:
    return np.linspace(-1.0, 1.0, points + 2)[1:-1]


def copula_posterior(
    prior=None,
    evidence: Sequence[tuple[float, int]] = (),
    theta: Optional[str] = None,
    marginals=None,
    grid: Optional[np.ndarray] = None,
    level: float = 0.95,
    mc_n: int = 50_000,
    n_draws: int = 4000,
    n_nodes: int = 41,
    seed: int = 0,
    t: float = 0.0,
) -> CopulaPosterior:
    """Grid posterior for a Gaussian coupling parameter from proxy correlations.

    Each evidence pair (rho_obs, n_cross) contributes a normal likelihood in
    Fisher-z space with variance 1 / (n_cross - 3). ``prior`` is a density
    on ``grid`` or a callable of rho; ``None`` means uniform. When ``theta``
    and ``marginals`` are given, the credible interval for the functional is
    read off posterior draws pushed through Monte Carlo evaluations at
    ``n_nodes`` parameter values.
    """
    g = default_rho_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(np.abs(g) >= 1):
        raise ValueError("grid must lie strictly inside (-1, 1)")
    if prior is None:
        p = np.ones_like(g)
    elif callable(prior):
        p = np.asarray(prior(g), dtype=float)
    else:
        p = np.asarray(prior, dtype=float)
    if p.shape != g.shape:
        raise ValueError("prior must have one density value per grid point")
    if np.any(p < 0) or not np.any(p > 0):
        raise ValueError("prior must be nonnegative and positive somewhere")

    logpost = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
    zg = np.arctanh(g)
    ev = []
    for rho_obs, n_cross in evidence:
        if not -1 < rho_obs < 1:
            raise ValueError(f"evidence correlation must lie in (-1, 1), got {rho_obs}")
        if n_cross < 4:
            raise ValueError(f"n_cross must be >= 4, got {n_cross}")
        ev.append((float(rho_obs), int(n_cross)))
        logpost = logpost - 0.5 * (n_cross - 3) * (math.atanh(rho_obs) - zg) ** 2
    post = np.exp(logpost - np.max(logpost))
    post = post / post.sum()

    out = CopulaPosterior(g, p / p.sum(), ev, post, (0.0, 0.0), None, theta, level)
    lo_q, hi_q = (1 - level) / 2, (1 + level) / 2
    out.rho_interval = (out.quantile(lo_q), out.quantile(hi_q))

    if theta is not None:
        if marginals is None:
            raise ValueError("marginals are required to push the posterior through theta")
        rng = derived_rng(seed, 23)
        draws = rng.choice(g, size=n_draws, p=post)
        sampler = CouplingSampler(marginals[0], marginals[1], mc_n, seed)
        lo, hi = float(draws.min()), float(draws.max())
        nodes = np.array([lo]) if hi == lo else np.linspace(lo, hi, n_nodes)
        vals = np.array([sampler.value(_spec("gaussian", r), theta, t)[0] for r in nodes])
        psi = np.interp(draws, nodes, vals) if nodes.size > 1 else np.full(n_draws, vals[0])
        out.credible_interval = (float(np.quantile(psi, lo_q)), float(np.quantile(psi, hi_q)))
    return out


# ---------------------------------------------------------------------------
# Informativeness hierarchy
# ---------------------------------------------------------------------------


@dataclass
class HierarchyVerdict:
    holds: bool
    violated: Optional[str]
    links: dict


def hierarchy_check(point: float, bayes_ci, constrained, frechet, tol: float = 1e-12) -> HierarchyVerdict:
    """Check {point} in Bayes CI in constrained interval in Frechet interval, innermost first."""
    for name, iv in (("bayes_ci", bayes_ci), ("constrained", constrained), ("frechet", frechet)):
        if len(iv) != 2 or not iv[0] <= iv[1]:
            raise ValueError(f"{name} is not a well-formed interval: {iv}")

    def inside(inner, outer) -> bool:
        return outer[0] - tol <= inner[0] and inner[1] <= outer[1] + tol

    links = {
        "point_in_bayes": inside((point, point), bayes_ci),
        "bayes_in_constrained": inside(bayes_ci, constrained),
        "constrained_in_frechet": inside(constrained, frechet),
    }
    violated = next((k for k, ok in links.items() if not ok), None)
    return HierarchyVerdict(violated is None, violated, links)
