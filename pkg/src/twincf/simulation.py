"""Synthetic world generation and the built-in parametric twin simulators."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .copulas import sample_from_uniforms
from .model import (
    Dataset,
    HiddenTruth,
    Marginal,
    SimulatorSpec,
    SpecError,
    TwinDraws,
    WorldSpec,
)
from .noise import stream_ids, uniforms

# Noise components within the "sim" domain.
_C_FIRST, _C_SECOND = 0, 1
_C_MEDIATOR, _C_OUTCOME = 2, 3
_C_PERIOD = 100


class CalibrationError(RuntimeError):
    """Every grid point produced degenerate simulated variance."""


def _unit_ids(n: int) -> np.ndarray:
    return np.array([f"u{i}" for i in range(n)])


def _apply_bounds(y: np.ndarray, bounds) -> np.ndarray:
    if bounds is None:
        return y
    return np.clip(y, bounds[0], bounds[1])


def _coupled(copula, marg1: Marginal, marg0: Marginal, w1, w2):
    u, v = sample_from_uniforms(copula, w1, w2)
    return marg1.ppf(u), marg0.ppf(v)


def generate_world(spec: WorldSpec, n: int, seed: int) -> tuple[Dataset, HiddenTruth]:
    """Draw ``n`` units from ``spec``; the true potential outcomes come back separately."""
    if n < 1:
        raise SpecError(f"n: must be >= 1, got {n}")
    ids = _unit_ids(n)
    streams = stream_ids(ids)

    X = np.zeros((n, len(spec.covariates)))
    for j, rule in enumerate(spec.covariates):
        X[:, j] = rule.ppf(uniforms(seed, streams, 0, j, "covariate"))
    strata = spec.strata.assign(X) if spec.strata is not None else np.zeros(n, dtype=np.int64)

    in_rct = uniforms(seed, streams, 0, 0, "rct") < spec.rct_fraction
    p = np.array([spec.treat_prob(k) for k in range(spec.K)])[strata]
    p = np.where(in_rct, 0.5, p)
    d = (uniforms(seed, streams, 0, 0, "assign") < p).astype(np.int64)

    w1 = uniforms(seed, streams, 0, _C_FIRST, "world")
    w2 = uniforms(seed, streams, 0, _C_SECOND, "world")
    y1 = np.empty(n)
    y0 = np.empty(n)
    for k in range(spec.K):
        m = strata == k
        y1[m], y0[m] = _coupled(spec.copula, spec.marginal(k, 1), spec.marginal(k, 0), w1[m], w2[m])
    y1 = _apply_bounds(y1, spec.outcome_bounds)
    y0 = _apply_bounds(y0, spec.outcome_bounds)

    y = np.where(d == 1, y1, y0)
    rct = in_rct if spec.rct_fraction > 0 else None
    if rct is not None and len(np.unique(d[rct])) < 2:
        rct = None
    data = Dataset(ids, X, d, y, outcome_bounds=spec.outcome_bounds,
                   strata=None if spec.strata is None else replace(spec.strata), rct=rct)
    return data, HiddenTruth(ids, y1, y0)


def _check_strata(sim: SimulatorSpec, data: Dataset):
    if sim.kind == "structural" and not sim.marginals:
        return
    if len(sim.marginals) == 1:
        return
    bad = data.stratum >= len(sim.marginals)
    if bad.any():
        raise SpecError(
            f"simulator defines {len(sim.marginals)} strata; no marginals for units {list(data.unit_ids[bad][:20])}"
        )


def _arm_laws(sim: SimulatorSpec, data: Dataset, k: int) -> tuple[Marginal, Marginal]:
    m1 = sim.marginal(k, 1).dispersed(sim.dispersion_scale)
    m0 = sim.marginal(k, 0).dispersed(sim.dispersion_scale)
    if sim.perturbation is not None:
        p = sim.perturbation
        width = p.scale
        if width is None:
            if data.outcome_bounds is None:
                raise SpecError("perturbation.scale: required when the dataset declares no outcome bounds")
            width = data.outcome_bounds[1] - data.outcome_bounds[0]
        s = p.shifts(width)
        m1, m0 = m1.shifted(s[1]), m0.shifted(s[0])
    return m1, m0


def simulate_twins(sim: SimulatorSpec, data: Dataset, R: int, seed: int) -> TwinDraws:
    """Paired potential-outcome draws for every unit and replicate.

    Shared-noise kinds derive both arms from one noise record per
    (unit, replicate). ``independent_coupling`` keeps the treated-arm draw
    identical to the shared kinds and takes the control arm from a separate
    stream.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    _check_strata(sim, data)
    streams = stream_ids(data.unit_ids)[:, None]
    reps = np.arange(R)[None, :]

    if sim.kind == "structural":
        y1, y0 = _structural_outcomes(sim, data, streams, reps, seed)
        coupling = "shared_noise"
    elif sim.kind == "sequential":
        g1 = (1,) * sim.horizon
        g0 = (0,) * sim.horizon
        y1 = run_regime(sim, data, g1, R, seed)[:, :, -1]
        y0 = run_regime(sim, data, g0, R, seed)[:, :, -1]
        coupling = "shared_noise"
    else:
        w1 = uniforms(seed, streams, reps, _C_FIRST, "sim")
        if sim.kind == "independent_coupling":
            w2 = uniforms(seed, streams, reps, _C_FIRST, "sim_independent")
            coupling = "independent_noise"
        else:
            w2 = uniforms(seed, streams, reps, _C_SECOND, "sim")
            coupling = "shared_noise"
        y1 = np.empty(w1.shape)
        y0 = np.empty(w1.shape)
        for k in np.unique(data.stratum):
            m = data.stratum == k
            m1, m0 = _arm_laws(sim, data, int(k))
            if sim.kind == "independent_coupling":
                y1[m], y0[m] = m1.ppf(w1[m]), m0.ppf(w2[m])
            else:
                y1[m], y0[m] = _coupled(sim.copula, m1, m0, w1[m], w2[m])

    y1 = _apply_bounds(y1, data.outcome_bounds)
    y0 = _apply_bounds(y0, data.outcome_bounds)
    return TwinDraws(data.unit_ids, y1, y0, coupling, {"seed": seed, "kind": sim.kind})


# ---------------------------------------------------------------------------
# Structural (mediation) simulator
# ---------------------------------------------------------------------------


def _dot(coefs: Sequence[float], X: np.ndarray) -> np.ndarray:
    if not coefs:
        return np.zeros(X.shape[0])
    if len(coefs) > X.shape[1]:
        raise SpecError(f"structural: {len(coefs)} covariate coefficients but data has p={X.shape[1]}")
    return X[:, : len(coefs)] @ np.asarray(coefs, dtype=float)


@dataclass
class StructuralNoise:
    """Per-(unit, replicate) latent inputs of the structural laws."""

    z_m: np.ndarray
    z_y: np.ndarray
    xm: np.ndarray
    xy: np.ndarray


def structural_noise(sim: SimulatorSpec, data: Dataset, R: int, seed: int) -> StructuralNoise:
    streams = stream_ids(data.unit_ids)[:, None]
    reps = np.arange(R)[None, :]
    sp = sim.structural
    return StructuralNoise(
        z_m=ndtri(uniforms(seed, streams, reps, _C_MEDIATOR, "sim")),
        z_y=ndtri(uniforms(seed, streams, reps, _C_OUTCOME, "sim")),
        xm=_dot(sp.m_x, data.X)[:, None],
        xy=_dot(sp.y_x, data.X)[:, None],
    )


def mediator_law(sim: SimulatorSpec, noise: StructuralNoise, d: int) -> np.ndarray:
    sp = sim.structural
    lin = sp.m_intercept + sp.m_d * d + noise.xm
    if sp.m_family == "bernoulli":
        return (lin + noise.z_m > 0).astype(float)
    return lin + sp.m_sd * noise.z_m


def outcome_law(sim: SimulatorSpec, noise: StructuralNoise, d: int, m) -> np.ndarray:
    sp = sim.structural
    return sp.y_intercept + sp.y_d * d + sp.y_m * m + sp.y_dm * d * m + noise.xy + sp.y_sd * noise.z_y


def _structural_outcomes(sim, data, streams, reps, seed):
    noise = structural_noise(sim, data, reps.shape[1], seed)
    y1 = outcome_law(sim, noise, 1, mediator_law(sim, noise, 1))
    y0 = outcome_law(sim, noise, 0, mediator_law(sim, noise, 0))
    return y1, y0


# ---------------------------------------------------------------------------
# Sequential simulator
# ---------------------------------------------------------------------------


def run_regime(sim: SimulatorSpec, data: Dataset, regime: Sequence[int], R: int, seed: int) -> np.ndarray:
    """Roll every unit forward under ``regime``; returns Y_1..Y_T with shape (n, R, T).

    The baseline state and the per-period shocks depend only on the unit,
    replicate and period, so every regime sees the same noise.
    """
    if sim.kind != "sequential":
        raise SpecError("run_regime: simulator kind must be sequential")
    regime = tuple(int(g) for g in regime)
    if len(regime) != sim.horizon:
        raise ValueError(f"regime length {len(regime)} does not match horizon {sim.horizon}")
    if any(g not in (0, 1) for g in regime):
        raise ValueError("regime entries must be 0 or 1")
    _check_strata(sim, data)
    streams = stream_ids(data.unit_ids)[:, None]
    reps = np.arange(R)[None, :]
    sp = sim.sequential

    state = np.empty((data.n, R))
    w0 = uniforms(seed, streams, reps, _C_FIRST, "sim")
    for k in np.unique(data.stratum):
        m = data.stratum == k
        state[m] = sim.marginal(int(k), 0).dispersed(sim.dispersion_scale).ppf(w0[m])

    out = np.empty((data.n, R, sim.horizon))
    for t, g in enumerate(regime):
        shock = ndtri(uniforms(seed, streams, reps, _C_PERIOD + t, "sim")) if sp.noise_sd > 0 else 0.0
        state = sp.persistence * state + sp.effect * g + sp.noise_sd * shock
        out[:, :, t] = state
    return out


# ---------------------------------------------------------------------------
# Dispersion (temperature analog) calibration
# ---------------------------------------------------------------------------


@dataclass
class DispersionCalibration:
    best_scale: float
    objective: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)


def calibrate_dispersion(
    sim: SimulatorSpec,
    data: Dataset,
    grid: Sequence[float],
    R: int = 50,
    seed: int = 0,
) -> DispersionCalibration:
    """Pick the spread multiplier whose simulated per-(arm, stratum) variances best match the data.

    Cells with fewer than two units or zero observed variance are left out of
    the objective; their count triggers a warning. All grid points reuse the
    same noise so the objective is smooth in the multiplier.
    """
    grid = [float(t) for t in grid]
    if not grid:
        raise ValueError("grid must be nonempty")
    if any(t <= 0 for t in grid):
        raise ValueError("grid values must be positive")

    cells, excluded = [], []
    for d in (0, 1):
        for k in np.unique(data.stratum):
            m = (data.d == d) & (data.stratum == k)
            if m.sum() < 2 or np.var(data.y[m], ddof=1) == 0:
                excluded.append((d, int(k)))
            else:
                cells.append((d, int(k), m, float(np.var(data.y[m], ddof=1))))
    if excluded:
        warnings.warn(f"calibrate_dispersion: {len(excluded)} (arm, stratum) cells excluded", stacklevel=2)
    if not cells:
        return DispersionCalibration(grid[0] if len(grid) == 1 else 1.0, {}, excluded)

    objective = {}
    degenerate = 0
    for t in grid:
        draws = simulate_twins(replace(sim, dispersion_scale=sim.dispersion_scale * t), data, R, seed)
        total = 0.0
        sim_vars = []
        for d, k, m, obs_var in cells:
            v = float(np.var(draws.arm(d)[m], ddof=1))
            sim_vars.append(v)
            total += (v - obs_var) ** 2
        if max(sim_vars) == 0:
            degenerate += 1
        objective[t] = total
    if degenerate == len(grid):
        raise CalibrationError("every grid point produced zero simulated variance")
    best = min(grid, key=lambda t: (objective[t], abs(t - 1.0)))
    return DispersionCalibration(best, objective, excluded)
