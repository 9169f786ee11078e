"""Causal estimands computed from simulated twin draws.

Every result carries the fidelity level it presupposes and whether it
depends on the unidentifiable coupling between the two potential outcomes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence, Union

import numpy as np
from scipy.stats import gaussian_kde, skew

from .model import Dataset, SimulatorSpec, SpecError, TwinDraws
from .simulation import mediator_law, outcome_law, run_regime, structural_noise

FIDELITY = ("marginal", "joint", "structural", "sequential")

# name -> (catalog family, fidelity required, copula dependent)
CATALOG: dict[str, tuple[str, str, bool]] = {
    "ate": ("I", "marginal", False),
    "att": ("I", "marginal", False),
    "atu": ("I", "marginal", False),
    "cate": ("II", "marginal", False),
    "qte": ("II", "marginal", False),
    "gates": ("II", "marginal", True),
    "ite_distribution": ("III", "joint", True),
    "pbenefit": ("III", "joint", True),
    "pharm": ("III", "joint", True),
    "pc": ("III", "joint", True),
    "nde": ("IV", "structural", False),
    "nie": ("IV", "structural", False),
    "cde": ("IV", "structural", False),
    "regime_value": ("V", "sequential", False),
    "rmst": ("V", "sequential", False),
}


class UndefinedEstimandError(ValueError):
    """The estimand's denominator is empty for these draws."""


@dataclass
class EstimandResult:
    name: str
    value: Any
    fidelity_required: str
    copula_dependent: bool
    mc_se: Optional[float] = None
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _result(name: str, value, mc_se=None, **details) -> EstimandResult:
    _, fid, cop = CATALOG[name]
    return EstimandResult(name, value, fid, cop, mc_se, details)


def _mean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / values.size


def _se(values: np.ndarray) -> float:
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


def unit_effects(draws: TwinDraws) -> np.ndarray:
    """Per-unit effect averaged over replicates."""
    return draws.tau.mean(axis=1)


# ---------------------------------------------------------------------------
# Family I
# ---------------------------------------------------------------------------


def ate(draws: TwinDraws) -> EstimandResult:
    if draws.n == 0:
        raise ValueError("draws are empty")
    t = unit_effects(draws)
    return _result("ate", _mean(t), _se(t))


def att_atu(draws: TwinDraws, data: Dataset, which: str = "treated") -> EstimandResult:
    if which not in ("treated", "untreated"):
        raise ValueError("which must be 'treated' or 'untreated'")
    draws = draws.aligned_to(data)
    arm = 1 if which == "treated" else 0
    t = unit_effects(draws)[data.d == arm]
    if t.size == 0:
        raise ValueError(f"no {which} units")
    return _result("att" if arm else "atu", _mean(t), _se(t), n=int(t.size))


# ---------------------------------------------------------------------------
# Family II
# ---------------------------------------------------------------------------


def silverman_bandwidth(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1)
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


def cate(
    draws: TwinDraws,
    data: Dataset,
    mode: str = "stratified",
    bandwidth: Union[float, str] = "rule",
    coordinate: int = 0,
    grid: Optional[Sequence[float]] = None,
    labels: Optional[Sequence] = None,
) -> EstimandResult:
    """Conditional effects by stratum or as a Nadaraya-Watson curve over one covariate.

    Strata with no units are reported as ``None`` rather than zero.
    """
    draws = draws.aligned_to(data)
    t = unit_effects(draws)
    if mode == "stratified":
        if labels is not None:
            codes = np.asarray(labels)
            keys = sorted(set(codes.tolist()))
        elif data.strata is not None:
            codes = data.stratum
            keys = list(range(data.K))
        else:
            raise SpecError("cate: stratified mode requires a strata partition")
        values, ses, counts = {}, {}, {}
        for k in keys:
            sel = t[codes == k]
            counts[k] = int(sel.size)
            values[k] = _mean(sel) if sel.size else None
            ses[k] = _se(sel) if sel.size else None
        return _result("cate", values, ses, mode="stratified", counts=counts)
    if mode != "kernel":
        raise ValueError("mode must be 'stratified' or 'kernel'")
    if coordinate >= data.p:
        raise SpecError(f"cate: covariate coordinate {coordinate} not present (p={data.p})")
    x = data.X[:, coordinate]
    h = silverman_bandwidth(x) if bandwidth == "rule" else float(bandwidth)
    if not h > 0:
        raise ValueError("bandwidth must be positive")
    g = np.linspace(x.min(), x.max(), 50) if grid is None else np.asarray(grid, dtype=float)
    est = np.empty(g.size)
    se = np.empty(g.size)
    for i, x0 in enumerate(g):
        w = np.exp(-0.5 * ((x - x0) / h) ** 2)
        sw = w.sum()
        if sw <= 0:
            est[i] = se[i] = np.nan
            continue
        est[i] = float(w @ t) / sw
        resid = t - est[i]
        se[i] = math.sqrt(float((w * w) @ (resid * resid))) / sw
    curve = [(float(a), None if np.isnan(b) else float(b)) for a, b in zip(g, est)]
    return _result("cate", curve, se.tolist(), mode="kernel", bandwidth=h, coordinate=coordinate)


def qte(draws: TwinDraws, q_grid: Sequence[float]) -> EstimandResult:
    q = np.asarray(q_grid, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile levels must lie in (0, 1)")
    diff = np.quantile(draws.y1, q) - np.quantile(draws.y0, q)
    return _result("qte", [(float(a), float(b)) for a, b in zip(q, diff)])


def gates(draws: TwinDraws, J: int) -> EstimandResult:
    """Units sorted by replicate-averaged effect, split into J near-equal groups."""
    t = unit_effects(draws)
    if J < 1:
        raise ValueError("J must be >= 1")
    if J > t.size:
        raise ValueError(f"J = {J} exceeds the number of units ({t.size})")
    groups = np.array_split(np.sort(t, kind="stable"), J)
    means = [_mean(g) for g in groups]
    ses = [_se(g) for g in groups]
    return _result("gates", means, ses, ranking_copula_dependent=True, sizes=[int(g.size) for g in groups])


# ---------------------------------------------------------------------------
# Family III
# ---------------------------------------------------------------------------


@dataclass
class ITESummary:
    values: np.ndarray  # sorted effect draws
    variance: float
    skewness: float
    mode_count: int

    def cdf(self, t) -> np.ndarray:
        """G(t) = share of effect draws <= t."""
        return np.searchsorted(self.values, np.asarray(t, dtype=float), side="right") / self.values.size

    def curve(self, points: int = 101) -> list[tuple[float, float]]:
        grid = np.quantile(self.values, np.linspace(0, 1, points))
        return [(float(g), float(c)) for g, c in zip(grid, self.cdf(grid))]


def kde_mode_count(x: np.ndarray, grid_n: int = 512, max_points: int = 5000, floor: float = 0.01) -> int:
    """Local maxima of a Gaussian KDE above ``floor`` times the peak height."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    if x.size < 2 or np.ptp(x) == 0:
        return 1
    if x.size > max_points:
        x = x[np.linspace(0, x.size - 1, max_points).astype(int)]
    try:
        kde = gaussian_kde(x)
    except np.linalg.LinAlgError:
        return 1
    pad = 3 * math.sqrt(float(kde.covariance[0, 0]))
    g = np.linspace(x[0] - pad, x[-1] + pad, grid_n)
    f = kde(g)
    peak = (f[1:-1] > f[:-2]) & (f[1:-1] >= f[2:]) & (f[1:-1] > floor * f.max())
    return max(int(peak.sum()), 1)


def ite_summary(draws: TwinDraws) -> ITESummary:
    tau = np.sort(draws.tau.ravel())
    if tau.size == 0:
        raise ValueError("draws are empty")
    var = float(np.var(tau))
    sk = float(skew(tau)) if var > 0 else 0.0
    return ITESummary(tau, var, sk, kde_mode_count(tau))


@dataclass
class BenefitHarm:
    pi_plus: float
    pi_minus: float
    mc_se_plus: float
    mc_se_minus: float


def prob_benefit_harm(draws: TwinDraws, threshold: float = 0.0) -> BenefitHarm:
    """Shares of effect draws strictly above and strictly below ``threshold``."""
    tau = draws.tau
    if tau.size == 0:
        raise ValueError("draws are empty")
    above = (tau > threshold).mean(axis=1)
    below = (tau < threshold).mean(axis=1)
    n_all = tau.size
    return BenefitHarm(
        np.count_nonzero(tau > threshold) / n_all,
        np.count_nonzero(tau < threshold) / n_all,
        _se(above),
        _se(below),
    )


def prob_causation(draws: TwinDraws) -> EstimandResult:
    """Pr(Y(0) = 0 | Y(1) = 1) for binary draws, with the marginal-only bounds as a check."""
    y1, y0 = draws.y1, draws.y0
    if not (np.isin(y1, (0.0, 1.0)).all() and np.isin(y0, (0.0, 1.0)).all()):
        raise ValueError("probability of causation needs binary draws")
    denom = int(np.count_nonzero(y1 == 1))
    if denom == 0:
        raise UndefinedEstimandError("no draws with y1 = 1")
    num = int(np.count_nonzero((y1 == 1) & (y0 == 0)))
    pc = num / denom
    p1, p0 = float(y1.mean()), float(y0.mean())
    lo = max(0.0, p1 - p0) / p1
    hi = min(p1, 1.0 - p0) / p1
    tol = 1e-12
    return _result(
        "pc",
        pc,
        math.sqrt(pc * (1 - pc) / denom),
        bounds=[lo, hi],
        within_bounds=bool(lo - tol <= pc <= hi + tol),
    )


# ---------------------------------------------------------------------------
# Family IV: mediation
# ---------------------------------------------------------------------------


@dataclass
class MediationResult:
    nde: float
    nie: float
    ate: float
    cde: Optional[float]
    mc_se: dict

    def results(self) -> list[EstimandResult]:
        out = [
            _result("nde", self.nde, self.mc_se["nde"]),
            _result("nie", self.nie, self.mc_se["nie"]),
        ]
        if self.cde is not None:
            out.append(_result("cde", self.cde, self.mc_se["cde"]))
        return out


def mediation(sim: SimulatorSpec, data: Dataset, R: int = 1, seed: int = 0,
              m_value: Optional[float] = None) -> MediationResult:
    """Natural direct and indirect effects by composing the mediator and outcome laws.

    All four cross-world outcomes share one noise draw per (unit, replicate).
    """
    if sim.kind != "structural":
        raise SpecError(f"mediation requires a structural simulator, got kind {sim.kind!r}")
    noise = structural_noise(sim, data, R, seed)
    m1 = mediator_law(sim, noise, 1)
    m0 = mediator_law(sim, noise, 0)
    y1m1 = outcome_law(sim, noise, 1, m1)
    y1m0 = outcome_law(sim, noise, 1, m0)
    y0m0 = outcome_law(sim, noise, 0, m0)
    nde_i = (y1m0 - y0m0).mean(axis=1)
    nie_i = (y1m1 - y1m0).mean(axis=1)
    ate_i = (y1m1 - y0m0).mean(axis=1)
    se = {"nde": _se(nde_i), "nie": _se(nie_i), "ate": _se(ate_i)}
    cde = None
    if m_value is not None:
        cde_i = (outcome_law(sim, noise, 1, m_value) - outcome_law(sim, noise, 0, m_value)).mean(axis=1)
        cde = _mean(cde_i)
        se["cde"] = _se(cde_i)
    nde, nie = _mean(nde_i), _mean(nie_i)
    return MediationResult(nde, nie, _mean(ate_i), cde, se)


# ---------------------------------------------------------------------------
# Family V: sequential and survival
# ---------------------------------------------------------------------------


@dataclass
class SequentialResult:
    values: dict
    mc_se: dict
    best_regime: tuple
    trajectories: dict
    effect_curve: list

    def results(self) -> list[EstimandResult]:
        return [
            _result("regime_value", v, self.mc_se[g], regime=list(g))
            for g, v in self.values.items()
        ]


def sequential(sim: SimulatorSpec, data: Dataset, regimes: Sequence[Sequence[int]],
               R: int = 1, seed: int = 0) -> SequentialResult:
    """Mean terminal outcome under each treatment sequence, all regimes on common noise.

    ``effect_curve`` is the per-period mean of Y_t(always treat) - Y_t(never treat).
    """
    if sim.kind != "sequential":
        raise SpecError(f"sequential requires a sequential simulator, got kind {sim.kind!r}")
    regimes = [tuple(int(g) for g in r) for r in regimes]
    if not regimes:
        raise ValueError("at least one regime is required")
    for r in regimes:
        if len(r) != sim.horizon:
            raise ValueError(f"regime {r} has length {len(r)}, horizon is {sim.horizon}")
    values, ses, traj = {}, {}, {}
    for r in regimes:
        if r in values:
            continue
        path = run_regime(sim, data, r, R, seed)
        terminal = path[:, :, -1].mean(axis=1)
        values[r] = _mean(terminal)
        ses[r] = _se(terminal)
        traj[r] = path.mean(axis=(0, 1)).tolist()
    always = run_regime(sim, data, (1,) * sim.horizon, R, seed)
    never = run_regime(sim, data, (0,) * sim.horizon, R, seed)
    curve = (always - never).mean(axis=(0, 1)).tolist()
    best = max(values, key=lambda g: values[g])
    return SequentialResult(values, ses, best, traj, curve)


@dataclass
class SurvivalResult:
    grid: np.ndarray
    surv1: np.ndarray
    surv0: np.ndarray
    rmst1: float
    rmst0: float
    rmst_diff: float
    mc_se: float

    def result(self) -> EstimandResult:
        return _result("rmst", self.rmst_diff, self.mc_se, rmst1=self.rmst1, rmst0=self.rmst0)


def survival(times1, times0, t_star: float) -> SurvivalResult:
    """Empirical survivor curves and the restricted-mean difference up to ``t_star``.

    The survivor functions are step functions, so their integral up to t* is
    exactly the mean of min(T, t*).
    """
    if isinstance(times1, TwinDraws):
        times1, times0 = times1.y1, times1.y0
    t1 = np.asarray(times1, dtype=float)
    t0 = np.asarray(times0, dtype=float)
    if t1.size == 0 or t0.size == 0:
        raise ValueError("event times are empty")
    if (t1 < 0).any() or (t0 < 0).any():
        raise ValueError("event times must be >= 0")
    if not t_star > 0:
        raise ValueError("t_star must be positive")
    s1, s0 = np.sort(t1.ravel()), np.sort(t0.ravel())
    grid = np.unique(np.concatenate([[0.0], s1[s1 <= t_star], s0[s0 <= t_star], [t_star]]))
    surv1 = 1.0 - np.searchsorted(s1, grid, side="right") / s1.size
    surv0 = 1.0 - np.searchsorted(s0, grid, side="right") / s0.size
    c1, c0 = np.minimum(t1, t_star), np.minimum(t0, t_star)
    r1, r0 = _mean(c1.ravel()), _mean(c0.ravel())
    if c1.shape == c0.shape:
        d = (c1 - c0).reshape(c1.shape[0], -1).mean(axis=1)
        se = _se(d)
    else:
        se = math.sqrt(np.var(c1) / c1.size + np.var(c0) / c0.size)
    return SurvivalResult(grid, surv1, surv0, r1, r0, r1 - r0, se)
