"""Validation levels 0-4, the integrated protocol, transport diagnostics and sample sizes."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .estimands import CATALOG
from .model import Dataset, SimulatorSpec, StrataPartition, TwinDraws
from .noise import derived_rng
from .sensitivity import EmpiricalMarginal, fh_pbenefit_bounds, fh_var_bounds
from .simulation import simulate_twins
from .stats import (
    anderson_darling_two_sample,
    bootstrap_se,
    calibration_regression,
    conditional_mmd_test,
    energy_test,
    interval_coverage,
    kolmogorov_quantile,
    ks_statistic,
    ks_two_sample,
)

PASS, FAIL, REPORT = "pass", "fail", "report-only"
ARM_NAME = {1: "treated", 0: "control"}


class CannotValidateError(ValueError):
    """The data do not support the requested validation level."""


class InfiniteSampleSizeError(ValueError):
    """Zero effect size makes the required sample size unbounded."""


@dataclass
class LevelConfig:
    """Protocol settings.

    ``eps0_bar``/``eps1_bar`` are KS tolerances. ``rmspe_threshold`` turns the
    RMSPE row into a pass/fail test. ``placebo_arm`` names the arm whose law
    both arms of the placebo simulator share. ``monotonicity_pairs`` lists
    (lower dose, higher dose) arm pairs expected to increase the outcome.
    """

    alpha: float = 0.05
    eps0_bar: float = 0.1
    eps1_bar: float = 0.1
    strata: Optional[StrataPartition] = None
    min_stratum_n: int = 50
    bootstrap_B: int = 500
    placebo_arm: Optional[int] = None
    monotonicity_pairs: Optional[list] = None
    rmspe_threshold: Optional[float] = None
    supplementary: bool = True
    n_perm: int = 199
    cmmd: bool = False
    coverage_level: float = 0.90
    R: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        for name in ("eps0_bar", "eps1_bar"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.min_stratum_n < 1:
            raise ValueError("min_stratum_n must be >= 1")
        if self.bootstrap_B < 100:
            raise ValueError("bootstrap_B must be >= 100")
        if self.placebo_arm not in (None, 0, 1):
            raise ValueError("placebo_arm must be 0 or 1")

    @classmethod
    def from_dict(cls, d: dict) -> "LevelConfig":
        known = {f for f in cls.__dataclass_fields__ if f != "strata"}
        unknown = set(d) - known - {"strata"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {k: v for k, v in d.items() if k in known}
        if kwargs.get("monotonicity_pairs") is not None:
            kwargs["monotonicity_pairs"] = [tuple(int(a) for a in p) for p in kwargs["monotonicity_pairs"]]
        if d.get("strata"):
            s = d["strata"]
            kwargs["strata"] = StrataPartition.from_edges(s["coordinate"], s["edges"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "strata"}
        out["strata"] = None if self.strata is None else self.strata.to_dict()
        if out["monotonicity_pairs"] is not None:
            out["monotonicity_pairs"] = [list(p) for p in out["monotonicity_pairs"]]
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Row:
    level: int
    test: str
    statistic: str
    value: Any
    threshold: Any
    status: str
    details: dict = field(default_factory=dict)

    @property
    def mandatory(self) -> bool:
        return self.status in (PASS, FAIL)


@dataclass
class LevelResult:
    level: int
    rows: list
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> Optional[bool]:
        """True/False over pass/fail rows; None when the level had none."""
        mand = [r for r in self.rows if r.mandatory]
        if not mand:
            return None
        return all(r.status == PASS for r in mand)


def _status(ok: bool) -> str:
    return PASS if ok else FAIL


def _arm_samples(draws: TwinDraws, data: Dataset, d: int, mask=None):
    sel = data.d == d
    if mask is not None:
        sel = sel & mask
    return data.y[sel], draws.arm(d)[sel].ravel(), sel


# ---------------------------------------------------------------------------
# Level 0
# ---------------------------------------------------------------------------


def level0(draws: TwinDraws, data: Dataset, config: LevelConfig = LevelConfig()) -> LevelResult:
    """Per-arm marginal KS against the simulated draws of the same units.

    Each arm's KS test runs at alpha / 2 so the two arms together hold the
    level. The tolerance rows compare the raw distance with ``eps0_bar``.
    """
    draws = draws.aligned_to(data)
    rows, stats = [], {}
    a_arm = config.alpha / 2
    for d in (1, 0):
        obs, sim, _ = _arm_samples(draws, data, d)
        if obs.size == 0:
            raise CannotValidateError(f"no observed {ARM_NAME[d]} units")
        res = ks_two_sample(obs, sim, alpha=a_arm)
        stats[d] = res
        sym = f"T_{d}^(0)"
        rows.append(Row(0, f"Marginal KS ({ARM_NAME[d]})", sym, res.statistic, config.eps0_bar,
                        _status(res.statistic <= config.eps0_bar)))
        rows.append(Row(0, f"KS test ({ARM_NAME[d]})", sym, res.statistic, res.critical_value,
                        _status(res.statistic <= res.critical_value),
                        {"p_value": res.p_value, "alpha": a_arm, "n_obs": int(obs.size), "n_sim": int(sim.size)}))
    if config.supplementary:
        for d in (1, 0):
            obs, _, sel = _arm_samples(draws, data, d)
            sim1 = draws.arm(d)[sel][:, 0]
            e = energy_test(obs, sim1, config.n_perm, config.seed)
            ad = anderson_darling_two_sample(obs, sim1, config.n_perm, config.seed)
            rows.append(Row(0, f"Energy distance ({ARM_NAME[d]})", f"E_{d}", e.statistic, "report only", REPORT,
                            {"p_value": e.p_value}))
            rows.append(Row(0, f"Anderson-Darling ({ARM_NAME[d]})", f"A2_{d}", ad.statistic, "report only", REPORT,
                            {"p_value": ad.p_value}))
    eps0 = max(stats[1].statistic, stats[0].statistic)
    return LevelResult(0, rows, {"eps0": eps0, "T1": stats[1].statistic, "T0": stats[0].statistic,
                                 "p1": stats[1].p_value, "p0": stats[0].p_value})


# ---------------------------------------------------------------------------
# Level 1
# ---------------------------------------------------------------------------


def _strata_codes(data: Dataset, config: LevelConfig) -> tuple[np.ndarray, int]:
    if config.strata is not None:
        codes = config.strata.assign(data.X)
        return codes, config.strata.K
    return data.stratum, data.K


def level1(draws: TwinDraws, data: Dataset, config: LevelConfig = LevelConfig()) -> LevelResult:
    """Within-stratum KS per (arm, stratum), Bonferroni-corrected over the cells tested.

    Cells with fewer than ``min_stratum_n`` observed units are left out and
    listed.
    """
    draws = draws.aligned_to(data)
    codes, K = _strata_codes(data, config)
    cells, excluded = [], []
    for d in (1, 0):
        for k in range(K):
            mask = codes == k
            obs, sim, _ = _arm_samples(draws, data, d, mask)
            if obs.size < config.min_stratum_n:
                excluded.append({"arm": d, "stratum": k, "n": int(obs.size)})
            else:
                cells.append((d, k, obs, sim))
    if not cells:
        raise CannotValidateError(f"every (arm, stratum) cell has fewer than {config.min_stratum_n} observed units")
    a_cell = config.alpha / len(cells)
    results = []
    for d, k, obs, sim in cells:
        res = ks_two_sample(obs, sim, alpha=a_cell)
        results.append({
            "arm": d, "stratum": k, "statistic": res.statistic, "critical_value": res.critical_value,
            "p_value": res.p_value, "n_obs": int(obs.size), "flagged": bool(res.statistic > res.critical_value),
        })
    eps1 = max(r["statistic"] for r in results)
    eps_arm = {d: max((r["statistic"] for r in results if r["arm"] == d), default=float("nan")) for d in (1, 0)}
    flagged = [(r["arm"], r["stratum"]) for r in results if r["flagged"]]
    rows = [
        Row(1, "Conditional KS (max)", "eps_1", eps1, config.eps1_bar, _status(eps1 <= config.eps1_bar),
            {"K": K, "excluded": excluded}),
        Row(1, "Conditional KS tests (Bonferroni)", "T^(1)", eps1, f"alpha/{len(cells)}", _status(not flagged),
            {"alpha_per_cell": a_cell, "flagged": flagged, "cells": results}),
    ]
    if config.cmmd and data.p > 0:
        rng = derived_rng(config.seed, 29)
        for d in (1, 0):
            idx = np.flatnonzero(data.d == d)
            if idx.size < 2:
                continue
            if idx.size > 1000:
                idx = np.sort(rng.choice(idx, 1000, replace=False))
            res = conditional_mmd_test((data.X[idx], data.y[idx]), (data.X[idx], draws.arm(d)[idx, 0]),
                                       n_perm=config.n_perm, seed=config.seed)
            rows.append(Row(1, f"Conditional MMD ({ARM_NAME[d]})", f"CMMD_{d}^2", res.statistic, "report only",
                            REPORT, {"p_value": res.p_value, **res.details}))
    return LevelResult(1, rows, {"eps1": eps1, "eps_arm": eps_arm, "excluded": excluded, "cells": results,
                                 "flagged": flagged})


# ---------------------------------------------------------------------------
# Level 2
# ---------------------------------------------------------------------------


def _iv_slope(y: np.ndarray, a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """Slope of y on ``a`` using the independent replicate mean ``b`` as instrument.

    Returns (intercept, slope, heteroskedasticity-robust slope se).
    """
    n = y.size
    bc = b - b.mean()
    den = float(bc @ (a - a.mean()))
    if abs(den) < 1e-300:
        return float("nan"), float("nan"), float("nan")
    b1 = float(bc @ (y - y.mean())) / den
    b0 = float(y.mean() - b1 * a.mean())
    u = y - b0 - b1 * a
    se = math.sqrt(float((bc * bc) @ (u * u)) * n / (n - 2)) / abs(den)
    return b0, b1, se


def level2(draws: TwinDraws, data: Dataset, config: LevelConfig = LevelConfig()) -> LevelResult:
    """Factual prediction accuracy using each unit's assigned-arm draws.

    RMSPE and MAPE average over units and replicates. The regression of
    observed outcomes on replicate-averaged predictions is reported as is.
    The slope test needs R >= 2: replicate 1 is the regressor and the mean
    of the other replicates its instrument, which removes the attenuation
    that simulator noise would otherwise cause.
    """
    draws = draws.aligned_to(data)
    P = np.where(data.d[:, None] == 1, draws.y1, draws.y0)
    missing = ~np.all(np.isfinite(P), axis=1)
    if missing.any():
        raise ValueError(f"missing assigned-arm draws for units {list(data.unit_ids[missing][:20])}")
    y = data.y
    e = y[:, None] - P
    rmspe = float(np.sqrt(np.mean(e * e)))
    mape = float(np.mean(np.abs(e)))
    pbar = P.mean(axis=1)
    rows = []
    extras: dict = {"rmspe": rmspe, "mape": mape}

    if config.rmspe_threshold is None:
        rows.append(Row(2, "RMSPE", "RMSPE", rmspe, "domain-specific", REPORT))
    else:
        rows.append(Row(2, "RMSPE", "RMSPE", rmspe, config.rmspe_threshold,
                        _status(rmspe <= config.rmspe_threshold)))
    rows.append(Row(2, "MAPE", "MAPE", mape, "report only", REPORT))

    try:
        fit = calibration_regression(pbar, y)
        extras["ols"] = fit._asdict()
        rows.append(Row(2, "Calibration intercept (OLS)", "beta_0", fit.beta0, "~ 0", REPORT, {"se": fit.se0}))
        rows.append(Row(2, "Calibration slope (OLS)", "beta_1", fit.beta1, "~ 1", REPORT, {"se": fit.se1}))
    except ValueError as exc:
        extras["ols"] = None
        rows.append(Row(2, "Calibration slope (OLS)", "beta_1", None, "~ 1", f"skipped: {exc}"))

    z = float(ndtri(1 - config.alpha / 2))
    if draws.R >= 2:
        b0, b1, se = _iv_slope(y, P[:, 0], P[:, 1:].mean(axis=1))
        if math.isfinite(b1) and se > 0:
            ok = abs(b1 - 1.0) <= z * se
            rows.append(Row(2, "Calibration slope", "beta_1", b1, f"|beta_1 - 1| <= {z:.3f} se", _status(ok),
                            {"se": se, "intercept": b0, "z": (b1 - 1.0) / se}))
            extras["slope"] = {"beta0": b0, "beta1": b1, "se": se}
        else:
            rows.append(Row(2, "Calibration slope", "beta_1", None, "~ 1", "skipped: predictions carry no signal"))
    else:
        rows.append(Row(2, "Calibration slope", "beta_1", extras["ols"] and extras["ols"]["beta1"], "~ 1",
                        "skipped: slope test needs R >= 2"))

    if draws.R >= 20:
        lo_q = (1 - config.coverage_level) / 2
        # Plotting positions p(R+1) give nominal expected coverage for small R.
        iv = np.column_stack([np.quantile(P, lo_q, axis=1, method="weibull"),
                              np.quantile(P, 1 - lo_q, axis=1, method="weibull")])
        cov = interval_coverage(iv, y, data.stratum if data.K > 1 else None)
        rows.append(Row(2, "Interval coverage", "coverage", cov.rate, config.coverage_level, REPORT,
                        {"by_stratum": cov.by_stratum}))
        extras["coverage"] = cov.rate
    else:
        rows.append(Row(2, "Interval coverage", "coverage", None, config.coverage_level,
                        "skipped: coverage needs R >= 20"))
    return LevelResult(2, rows, extras)


# ---------------------------------------------------------------------------
# Level 3
# ---------------------------------------------------------------------------


def level3(draws: TwinDraws, data: Dataset, config: LevelConfig = LevelConfig()) -> LevelResult:
    """Simulated versus randomized-subset ATE with a bootstrap z-test."""
    if data.rct is None:
        row = Row(3, "ATE discrepancy", "T^(3)", None, "z-test", "skipped: no RCT subset")
        return LevelResult(3, [row], {"skipped": True})
    draws = draws.aligned_to(data)
    idx = np.flatnonzero(data.rct)
    tau = draws.tau.mean(axis=1)[idx]
    y = data.y[idx]
    d = data.d[idx]

    def discrepancy(sel: np.ndarray) -> float:
        dd = d[sel]
        yy = y[sel]
        return float(tau[sel].mean() - (yy[dd == 1].mean() - yy[dd == 0].mean()))

    full = np.arange(idx.size)
    t3 = discrepancy(full)
    se = bootstrap_se(discrepancy, idx.size, config.bootstrap_B, config.seed, strata=d)
    if se > 0:
        z3 = t3 / se
    else:
        z3 = 0.0 if t3 == 0 else math.copysign(math.inf, t3)
    zc = float(ndtri(1 - config.alpha / 2))
    rows = [Row(3, "ATE discrepancy", "T^(3)", t3, f"|Z| <= {zc:.3f}", _status(abs(z3) <= zc),
                {"Z": z3, "se": se, "n_rct": int(idx.size)})]

    pairs = []
    codes = data.stratum[idx]
    for k in np.unique(codes):
        m = codes == k
        if (d[m] == 1).any() and (d[m] == 0).any():
            pairs.append({
                "stratum": int(k),
                "cate_sim": float(tau[m].mean()),
                "cate_rct": float(y[m & (d == 1)].mean() - y[m & (d == 0)].mean()),
                "n": int(m.sum()),
            })
    return LevelResult(3, rows, {"T3": t3, "Z3": z3, "se": se, "cate_pairs": pairs})


# ---------------------------------------------------------------------------
# Level 4
# ---------------------------------------------------------------------------


def _independent_draws(draws: TwinDraws, data: Dataset, sim: Optional[SimulatorSpec], config: LevelConfig):
    """Draws with the within-unit dependence removed.

    Marginal simulator kinds are re-run with independent noise. Otherwise the
    control draws are shuffled across units within each stratum, which keeps
    the per-stratum marginals and breaks the pairing.
    """
    seed = int(draws.meta.get("seed", config.seed))
    if sim is not None and sim.kind in ("oracle", "perturbed", "miscoupled", "independent_coupling"):
        return simulate_twins(replace(sim, kind="independent_coupling"), data, draws.R, seed), "rerun"
    rng = derived_rng(seed, 31)
    y0 = draws.y0.copy()
    for k in np.unique(data.stratum):
        rows = np.flatnonzero(data.stratum == k)
        y0[rows] = y0[rng.permutation(rows)]
    return TwinDraws(draws.unit_ids, draws.y1, y0, "independent_noise", dict(draws.meta)), "shuffle"


def level4(draws: TwinDraws, data: Dataset, sim: Optional[SimulatorSpec] = None,
           config: LevelConfig = LevelConfig()) -> LevelResult:
    """Copula sensitivity, Frechet-Hoeffding bounds, monotonicity and placebo checks; all report-only."""
    draws = draws.aligned_to(data)
    rows, extras = [], {}

    ind, how = _independent_draws(draws, data, sim, config)
    csi = ks_statistic(draws.tau.ravel(), ind.tau.ravel())
    rows.append(Row(4, "Copula sensitivity", "CSI", csi, "report only", REPORT, {"independent_draws": how}))
    extras["csi"] = csi

    s1, s0 = float(np.std(draws.y1)), float(np.std(draws.y0))
    vb = fh_var_bounds(s1, s0)
    rows.append(Row(4, "ITE variance bounds", "[(s1-s0)^2, (s1+s0)^2]", [vb.lower, vb.upper], "report only", REPORT))
    pb = fh_pbenefit_bounds(EmpiricalMarginal(draws.y1).ppf, EmpiricalMarginal(draws.y0).ppf)
    rows.append(Row(4, "Benefit probability bounds", "[pi+^W, pi+^M]", [pb.lower, pb.upper], "report only", REPORT))
    extras["var_bounds"] = (vb.lower, vb.upper)
    extras["pbenefit_bounds"] = (pb.lower, pb.upper)

    for lo, hi in config.monotonicity_pairs or []:
        v = float(np.mean(draws.arm(lo) > draws.arm(hi)))
        rows.append(Row(4, f"Monotonicity ({lo} -> {hi})", "v_hat", v, "report only", REPORT))
        extras.setdefault("monotonicity", {})[(lo, hi)] = v

    if config.placebo_arm is not None:
        if sim is None or not sim.marginals:
            rows.append(Row(4, "Placebo effect", "mean tau", None, "report only",
                            "skipped: placebo needs a simulator with marginal laws"))
        else:
            extras["placebo"] = placebo_test(sim, data, config.placebo_arm, draws.R,
                                             int(draws.meta.get("seed", config.seed)), config.alpha)
            p = extras["placebo"]
            rows.append(Row(4, "Placebo effect", "mean tau", p["effect"], f"|Z| <= {p['z_crit']:.3f}", REPORT,
                            {"Z": p["z"], "mc_se": p["mc_se"], "rejects": p["rejects"]}))
    return LevelResult(4, rows, extras)


def placebo_test(sim: SimulatorSpec, data: Dataset, arm: int, R: int, seed: int, alpha: float = 0.05) -> dict:
    """Re-run ``sim`` with both arms set to ``arm``'s law on independent noise and z-test the mean effect."""
    same = [{1: m[arm], 0: m[arm]} for m in sim.marginals]
    placebo = replace(sim, kind="independent_coupling", marginals=same, perturbation=None)
    dr = simulate_twins(placebo, data, R, seed)
    t = dr.tau.mean(axis=1)
    effect = float(t.mean())
    se = float(np.std(t, ddof=1) / math.sqrt(t.size)) if t.size > 1 else float("nan")
    z = effect / se if se > 0 else 0.0
    zc = float(ndtri(1 - alpha / 2))
    return {"effect": effect, "mc_se": se, "z": z, "z_crit": zc, "rejects": bool(abs(z) > zc)}


# ---------------------------------------------------------------------------
# Protocol and scorecard
# ---------------------------------------------------------------------------

MARGINAL_ESTIMANDS = ("ate", "att", "atu", "cate", "qte")


def licensed_estimands(pattern: dict) -> tuple[list, dict]:
    """Map a per-level pass pattern to (licensed, not licensed with reason).

    ``pattern`` maps level -> True / False / None (not run or no pass/fail rows).
    """
    base_ok = pattern.get(0) is True and pattern.get(1) is True
    licensed, withheld = [], {}
    for name, (family, fidelity, copula_dep) in CATALOG.items():
        if copula_dep:
            withheld[name] = "copula-dependent: never licensed by observable data; report with bounds and CSI"
        elif fidelity == "marginal":
            if base_ok:
                licensed.append(name)
            else:
                withheld[name] = "requires Levels 0 and 1 to pass"
        else:
            withheld[name] = f"requires {fidelity} fidelity, which Levels 0-3 do not test"
    return licensed, withheld


@dataclass
class Scorecard:
    rows: list
    level_verdicts: dict
    eps0: Optional[float]
    eps1: Optional[float]
    licensed: list
    withheld: dict
    stopped: bool = False
    stop_reason: str = ""
    header: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def complete(self) -> bool:
        return not self.stopped

    @property
    def all_mandatory_pass(self) -> bool:
        return not self.stopped and all(r.status == PASS for r in self.rows if r.mandatory)

    def levels_present(self) -> set:
        return {r.level for r in self.rows}


def run_protocol(draws: Optional[TwinDraws], data: Dataset, sim: Optional[SimulatorSpec] = None,
                 config: LevelConfig = LevelConfig()) -> Scorecard:
    """Run Levels 0-4 in order; stop after Level 0 when eps_0 exceeds its tolerance."""
    if draws is None:
        if sim is None:
            raise ValueError("either draws or a simulator is required")
        draws = simulate_twins(sim, data, config.R, config.seed)
    header = {
        "alpha": config.alpha,
        "eps0_bar": config.eps0_bar,
        "eps1_bar": config.eps1_bar,
        "seed": int(draws.meta.get("seed", config.seed)),
        "config_hash": config.digest(),
        "n": data.n,
        "R": draws.R,
        "coupling": draws.coupling,
    }
    results = [level0(draws, data, config)]
    eps0 = results[0].extras["eps0"]
    stopped, reason = False, ""
    if eps0 > config.eps0_bar:
        stopped, reason = True, f"STOP at Level 0: eps_0 = {eps0:.4f} exceeds tolerance {config.eps0_bar}"
    else:
        results.append(level1(draws, data, config))
        results.append(level2(draws, data, config))
        results.append(level3(draws, data, config))
        results.append(level4(draws, data, sim, config))
    verdicts = {r.level: r.passed for r in results}
    for lv in range(5):
        verdicts.setdefault(lv, None)
    licensed, withheld = licensed_estimands(verdicts)
    rows = [row for r in results for row in r.rows]
    eps1 = results[1].extras["eps1"] if len(results) > 1 else None
    return Scorecard(rows, verdicts, eps0, eps1, licensed, withheld, stopped, reason, header,
                     {r.level: r.extras for r in results})


# ---------------------------------------------------------------------------
# Transport
# ---------------------------------------------------------------------------


@dataclass
class TransportReport:
    eps_arm: dict
    discrepancy: float
    t3: Optional[float]
    delta: dict
    width: float
    width_source: str
    widened_bound: float
    placebo: Optional[dict] = None


def transport_diagnostics(draws: TwinDraws, data: Dataset, config: LevelConfig = LevelConfig(),
                          delta: Sequence[float] = (0.0, 0.0), placebo_groups=None) -> TransportReport:
    """Arm-specific fidelity and the ATE error bound widened by user penalties.

    ``delta`` is (delta_1, delta_0). The bound is
    (eps_1 + delta_1)(b - a) + (eps_0 + delta_0)(b - a); when the data
    declare no bounds the observed range stands in for b - a.
    ``placebo_groups`` is a pair of boolean masks over units that received
    equivalent treatments.
    """
    draws = draws.aligned_to(data)
    for d in (1, 0):
        if not (data.d == d).any():
            raise CannotValidateError(f"no observed {ARM_NAME[d]} units")
    l1 = level1(draws, data, config)
    eps = l1.extras["eps_arm"]
    t3 = level3(draws, data, config).extras.get("T3") if data.rct is not None else None
    if data.outcome_bounds is not None:
        width = data.outcome_bounds[1] - data.outcome_bounds[0]
        source = "declared"
    else:
        allv = np.concatenate([data.y, draws.y1.ravel(), draws.y0.ravel()])
        width = float(allv.max() - allv.min())
        source = "empirical"
    d1, d0 = float(delta[0]), float(delta[1])
    if d1 < 0 or d0 < 0:
        raise ValueError("delta penalties must be >= 0")
    bound = (eps[1] + d1) * width + (eps[0] + d0) * width
    placebo = None
    if placebo_groups is not None:
        ga, gb = (np.asarray(g, dtype=bool) for g in placebo_groups)
        out = {}
        for name, g in (("a", ga), ("b", gb)):
            sims = np.concatenate([draws.arm(d)[g & (data.d == d)].ravel() for d in (1, 0)])
            out[f"eps_{name}"] = ks_statistic(data.y[g], sims)
        obs_test = ks_two_sample(data.y[ga], data.y[gb], alpha=config.alpha)
        out["discrepancy"] = abs(out["eps_a"] - out["eps_b"])
        out["observed_ks"] = obs_test.statistic
        out["observed_p"] = obs_test.p_value
        placebo = out
    return TransportReport(eps, abs(eps[1] - eps[0]), t3, {1: d1, 0: d0}, width, source, bound, placebo)


# ---------------------------------------------------------------------------
# Sample size
# ---------------------------------------------------------------------------


def sample_size(level: int, eps: Optional[float] = None, alpha: float = 0.05, power: float = 0.8,
                K: int = 1, delta: Optional[float] = None, sigma: Optional[float] = None) -> int:
    """Units per arm (levels 0, 1; per stratum for 1) or randomized units (level 3)."""
    if not 0 < power < 1:
        raise ValueError("power must lie in (0, 1)")
    zb = float(ndtri(power))
    if level in (0, 1):
        if eps is None:
            raise ValueError("eps is required for levels 0 and 1")
        if eps == 0:
            raise InfiniteSampleSizeError("eps = 0 needs infinitely many units")
        a = alpha if level == 0 else alpha / (2 * K)
        n = (kolmogorov_quantile(a) + zb) ** 2 / (2 * eps * eps)
    elif level == 3:
        if delta is None or sigma is None:
            raise ValueError("delta and sigma are required for level 3")
        if delta == 0:
            raise InfiniteSampleSizeError("delta = 0 needs infinitely many units")
        n = 4 * sigma**2 * (float(ndtri(1 - alpha / 2)) + zb) ** 2 / delta**2
    else:
        raise ValueError(f"sample size is defined for levels 0, 1 and 3, not {level}")
    return int(math.ceil(n - 1e-9))
