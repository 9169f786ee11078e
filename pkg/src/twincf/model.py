"""Data model for observed and simulated worlds.

Observed data lives in :class:`Dataset`; simulated potential outcomes in
:class:`TwinDraws`. Ground truth from a synthetic world is returned as a
separate :class:`HiddenTruth` object that no validation code accepts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .copulas import CopulaSpec, CopulaDomainError

MARGINAL_FAMILIES = ("normal", "lognormal", "bernoulli")
SIMULATOR_KINDS = ("oracle", "perturbed", "miscoupled", "independent_coupling", "structural", "sequential")
COUPLINGS = ("shared_noise", "independent_noise")


class SpecError(ValueError):
    """Invalid world or simulator specification; the message names the field."""


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise SpecError(f"{where}.{key}: missing")
    return d[key]


def _finite(value, where: str) -> float:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise SpecError(f"{where}: expected a number, got {value!r}") from None
    if not math.isfinite(x):
        raise SpecError(f"{where}: must be finite")
    return x


# ---------------------------------------------------------------------------
# Marginal laws
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Marginal:
    """Parametric outcome law.

    ``loc``/``scale`` are the mean and standard deviation for ``normal`` and
    the log-scale mean and standard deviation for ``lognormal``. ``p`` is the
    success probability for ``bernoulli``. ``shift`` is added to every draw.
    """

    family: str
    loc: float = 0.0
    scale: float = 1.0
    p: float = 0.5
    shift: float = 0.0

    def __post_init__(self):
        if self.family not in MARGINAL_FAMILIES:
            raise SpecError(f"family: unknown marginal family {self.family!r}")
        if self.family != "bernoulli" and not self.scale >= 0:
            raise SpecError(f"{'sd' if self.family == 'normal' else 'sigma'}: must be >= 0, got {self.scale}")
        if self.family == "bernoulli" and not 0.0 <= self.p <= 1.0:
            raise SpecError(f"p: must lie in [0, 1], got {self.p}")

    @classmethod
    def normal(cls, mean: float, sd: float) -> "Marginal":
        return cls("normal", loc=mean, scale=sd)

    @classmethod
    def from_dict(cls, d: dict, where: str = "marginal") -> "Marginal":
        fam = _need(d, "family", where)
        shift = _finite(d.get("shift", 0.0), f"{where}.shift")
        try:
            if fam == "normal":
                return cls(fam, _finite(_need(d, "mean", where), f"{where}.mean"),
                           _finite(_need(d, "sd", where), f"{where}.sd"), shift=shift)
            if fam == "lognormal":
                return cls(fam, _finite(_need(d, "mu", where), f"{where}.mu"),
                           _finite(_need(d, "sigma", where), f"{where}.sigma"), shift=shift)
            if fam == "bernoulli":
                return cls(fam, p=_finite(_need(d, "p", where), f"{where}.p"), shift=shift)
        except SpecError as exc:
            msg = str(exc)
            raise SpecError(msg if msg.startswith(where) else f"{where}.{msg}") from None
        raise SpecError(f"{where}.family: unknown marginal family {fam!r}")

    def to_dict(self) -> dict:
        if self.family == "normal":
            d = {"family": "normal", "mean": self.loc, "sd": self.scale}
        elif self.family == "lognormal":
            d = {"family": "lognormal", "mu": self.loc, "sigma": self.scale}
        else:
            d = {"family": "bernoulli", "p": self.p}
        if self.shift:
            d["shift"] = self.shift
        return d

    def ppf(self, u):
        u = np.asarray(u, dtype=float)
        if self.family == "normal":
            out = self.loc + self.scale * ndtri(u) if self.scale > 0 else np.full(u.shape, self.loc)
        elif self.family == "lognormal":
            out = np.exp(self.loc + self.scale * ndtri(u)) if self.scale > 0 else np.full(u.shape, math.exp(self.loc))
        else:
            out = (u > 1.0 - self.p).astype(float)
        return out + self.shift

    def cdf(self, y):
        y = np.asarray(y, dtype=float) - self.shift
        if self.family == "normal":
            if self.scale == 0:
                return (y >= self.loc).astype(float)
            return ndtr((y - self.loc) / self.scale)
        if self.family == "lognormal":
            with np.errstate(divide="ignore"):
                z = (np.log(np.maximum(y, 0.0)) - self.loc) / self.scale if self.scale > 0 else None
            if z is None:
                return (y >= math.exp(self.loc)).astype(float)
            return np.where(y > 0, ndtr(z), 0.0)
        return np.where(y < 0, 0.0, np.where(y < 1, 1.0 - self.p, 1.0))

    @property
    def mean(self) -> float:
        if self.family == "normal":
            return self.loc + self.shift
        if self.family == "lognormal":
            return math.exp(self.loc + self.scale**2 / 2) + self.shift
        return self.p + self.shift

    @property
    def var(self) -> float:
        if self.family == "normal":
            return self.scale**2
        if self.family == "lognormal":
            s2 = self.scale**2
            return math.expm1(s2) * math.exp(2 * self.loc + s2)
        return self.p * (1 - self.p)

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    def dispersed(self, factor: float) -> "Marginal":
        """Spread multiplied by ``factor``; Bernoulli laws have no spread knob."""
        if self.family == "bernoulli":
            return self
        return replace(self, scale=self.scale * factor)

    def shifted(self, delta: float) -> "Marginal":
        return replace(self, shift=self.shift + delta)


ArmMarginals = dict  # {1: Marginal, 0: Marginal}


def _parse_arm_marginals(entries, where: str) -> list[ArmMarginals]:
    if isinstance(entries, dict):
        entries = [entries]
    if not isinstance(entries, list) or not entries:
        raise SpecError(f"{where}: expected a non-empty list of per-stratum arm laws")
    out = []
    for k, entry in enumerate(entries):
        arms = {}
        for arm in (1, 0):
            key = str(arm)
            if key not in entry:
                raise SpecError(f"{where}[{k}].{key}: missing arm")
            arms[arm] = Marginal.from_dict(entry[key], f"{where}[{k}].{key}")
        out.append(arms)
    return out


def _dump_arm_marginals(marginals: Sequence[ArmMarginals]) -> list[dict]:
    return [{"1": m[1].to_dict(), "0": m[0].to_dict()} for m in marginals]


# ---------------------------------------------------------------------------
# Observed data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Unit:
    unit_id: Any
    covariates: tuple
    treatment: int
    observed_outcome: float


@dataclass
class StrataPartition:
    """Either explicit per-unit labels or bin edges over one covariate.

    ``edges`` give K = len(edges) + 1 bins; a value equal to an edge goes to
    the upper bin.
    """

    coordinate: Optional[int] = None
    edges: Optional[tuple] = None
    labels: Optional[np.ndarray] = None
    names: Optional[list] = None

    @classmethod
    def from_edges(cls, coordinate: int, edges: Sequence[float]) -> "StrataPartition":
        edges = tuple(float(e) for e in edges)
        if list(edges) != sorted(edges):
            raise SpecError("strata.edges: must be increasing")
        return cls(coordinate=int(coordinate), edges=edges)

    @classmethod
    def from_labels(cls, labels: Sequence) -> "StrataPartition":
        raw = np.asarray(labels).astype(str)
        names = sorted(set(raw.tolist()))
        try:
            names = sorted(names, key=int)  # integer-like labels keep numeric order
        except ValueError:
            pass
        index = {name: i for i, name in enumerate(names)}
        return cls(labels=np.array([index[v] for v in raw], dtype=np.int64), names=names)

    @property
    def K(self) -> int:
        if self.edges is not None:
            return len(self.edges) + 1
        return len(self.names)

    def assign(self, X: np.ndarray) -> np.ndarray:
        if self.edges is not None:
            if self.coordinate >= X.shape[1]:
                raise SpecError(f"strata.coordinate: {self.coordinate} out of range for p={X.shape[1]}")
            return np.searchsorted(np.asarray(self.edges), X[:, self.coordinate], side="right").astype(np.int64)
        if len(self.labels) != X.shape[0]:
            raise SpecError("strata: label count does not match unit count")
        return self.labels

    def to_dict(self) -> Optional[dict]:
        if self.edges is not None:
            return {"coordinate": self.coordinate, "edges": list(self.edges)}
        return None


@dataclass
class Dataset:
    """Observed units stored column-wise.

    ``rct`` is a boolean mask marking the randomized subset, if any.
    """

    unit_ids: np.ndarray
    X: np.ndarray
    d: np.ndarray
    y: np.ndarray
    outcome_bounds: Optional[tuple[float, float]] = None
    strata: Optional[StrataPartition] = None
    rct: Optional[np.ndarray] = None
    stratum: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.unit_ids = np.asarray(self.unit_ids).astype(str)
        n = len(self.unit_ids)
        self.X = np.asarray(self.X, dtype=float).reshape(n, -1)
        self.d = np.asarray(self.d).astype(np.int64)
        self.y = np.asarray(self.y, dtype=float)
        if self.d.shape != (n,) or self.y.shape != (n,):
            raise ValueError("treatment and outcome arrays must have one entry per unit")
        if len(np.unique(self.unit_ids)) != n:
            raise ValueError("unit_ids must be unique")
        if not np.isin(self.d, (0, 1)).all():
            raise ValueError("treatment must be 0 or 1")
        if self.outcome_bounds is not None:
            a, b = map(float, self.outcome_bounds)
            if not a < b:
                raise ValueError("outcome_bounds must satisfy a < b")
            self.outcome_bounds = (a, b)
            bad = (self.y < a) | (self.y > b)
            if bad.any():
                raise ValueError(f"observed outcomes outside bounds for units {list(self.unit_ids[bad][:10])}")
        if self.strata is None:
            self.stratum = np.zeros(n, dtype=np.int64)
        else:
            self.stratum = self.strata.assign(self.X)
            empty = sorted(set(range(self.strata.K)) - set(np.unique(self.stratum).tolist()))
            if empty:
                raise ValueError(f"strata {empty} contain no units")
        if self.rct is not None:
            self.rct = np.asarray(self.rct, dtype=bool)
            if self.rct.shape != (n,):
                raise ValueError("rct mask must have one entry per unit")
            if self.rct.any():
                arms = set(np.unique(self.d[self.rct]).tolist())
                if arms != {0, 1}:
                    raise ValueError("rct subset must contain both treated and control units")
            else:
                self.rct = None

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return 1 if self.strata is None else self.strata.K

    @property
    def rct_subset(self) -> Optional[set]:
        return None if self.rct is None else set(self.unit_ids[self.rct].tolist())

    @property
    def units(self) -> list[Unit]:
        return [Unit(u, tuple(x), int(d), float(y)) for u, x, d, y in zip(self.unit_ids, self.X, self.d, self.y)]

    @classmethod
    def from_units(cls, units: Sequence[Unit], **kwargs) -> "Dataset":
        p = len(units[0].covariates) if units else 0
        for u in units:
            if len(u.covariates) != p:
                raise ValueError(f"unit {u.unit_id}: covariate length {len(u.covariates)} != {p}")
        return cls(
            unit_ids=[u.unit_id for u in units],
            X=np.array([u.covariates for u in units], dtype=float).reshape(len(units), p),
            d=[u.treatment for u in units],
            y=[u.observed_outcome for u in units],
            **kwargs,
        )

    def subset(self, mask: np.ndarray) -> "Dataset":
        mask = np.asarray(mask)
        strata = self.strata
        if strata is not None and strata.labels is not None:
            strata = replace(strata, labels=strata.labels[mask])
        out = Dataset.__new__(Dataset)
        out.unit_ids = self.unit_ids[mask]
        out.X = self.X[mask]
        out.d = self.d[mask]
        out.y = self.y[mask]
        out.outcome_bounds = self.outcome_bounds
        out.strata = strata
        out.rct = None if self.rct is None else self.rct[mask]
        out.stratum = self.stratum[mask]
        return out


@dataclass
class HiddenTruth:
    """True potential outcomes of a synthetic world; for test oracles only."""

    unit_ids: np.ndarray
    y1: np.ndarray
    y0: np.ndarray

    @property
    def tau(self) -> np.ndarray:
        return self.y1 - self.y0


@dataclass
class TwinDraws:
    """Paired simulated potential outcomes, shape (units, replicates)."""

    unit_ids: np.ndarray
    y1: np.ndarray
    y0: np.ndarray
    coupling: str = "shared_noise"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.unit_ids = np.asarray(self.unit_ids).astype(str)
        n = len(self.unit_ids)
        self.y1 = np.asarray(self.y1, dtype=float).reshape(n, -1)
        self.y0 = np.asarray(self.y0, dtype=float).reshape(n, -1)
        if self.y1.shape != self.y0.shape:
            raise ValueError("y1 and y0 draws must have the same shape")
        if self.y1.shape[1] < 1:
            raise ValueError("at least one replicate is required")
        if self.coupling not in COUPLINGS:
            raise ValueError(f"coupling must be one of {COUPLINGS}")

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    @property
    def R(self) -> int:
        return self.y1.shape[1]

    @property
    def tau(self) -> np.ndarray:
        return self.y1 - self.y0

    def arm(self, d: int) -> np.ndarray:
        return self.y1 if d == 1 else self.y0

    def aligned_to(self, data: Dataset) -> "TwinDraws":
        """Reorder rows to follow ``data.unit_ids``; every unit must be present."""
        if np.array_equal(self.unit_ids, data.unit_ids):
            return self
        index = {u: i for i, u in enumerate(self.unit_ids)}
        missing = [u for u in data.unit_ids if u not in index]
        if missing:
            raise ValueError(f"draws missing for units {missing[:10]}")
        order = np.array([index[u] for u in data.unit_ids])
        return TwinDraws(self.unit_ids[order], self.y1[order], self.y0[order], self.coupling, dict(self.meta))


# ---------------------------------------------------------------------------
# Specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateRule:
    dist: str
    params: tuple = ()

    @classmethod
    def from_dict(cls, d: dict, where: str) -> "CovariateRule":
        dist = _need(d, "dist", where)
        if dist == "uniform":
            lo, hi = _finite(_need(d, "low", where), f"{where}.low"), _finite(_need(d, "high", where), f"{where}.high")
            if not lo < hi:
                raise SpecError(f"{where}.high: must exceed low")
            return cls(dist, (lo, hi))
        if dist == "normal":
            sd = _finite(_need(d, "sd", where), f"{where}.sd")
            if sd <= 0:
                raise SpecError(f"{where}.sd: must be > 0")
            return cls(dist, (_finite(_need(d, "mean", where), f"{where}.mean"), sd))
        if dist == "categorical":
            values = [float(v) for v in _need(d, "values", where)]
            probs = [float(p) for p in d.get("probs", [1.0 / len(values)] * len(values))]
            if len(probs) != len(values) or min(probs) < 0 or abs(sum(probs) - 1) > 1e-9:
                raise SpecError(f"{where}.probs: must be a probability vector matching values")
            return cls(dist, (tuple(values), tuple(probs)))
        raise SpecError(f"{where}.dist: unknown covariate law {dist!r}")

    def to_dict(self) -> dict:
        if self.dist == "uniform":
            return {"dist": "uniform", "low": self.params[0], "high": self.params[1]}
        if self.dist == "normal":
            return {"dist": "normal", "mean": self.params[0], "sd": self.params[1]}
        return {"dist": "categorical", "values": list(self.params[0]), "probs": list(self.params[1])}

    def ppf(self, u: np.ndarray) -> np.ndarray:
        if self.dist == "uniform":
            lo, hi = self.params
            return lo + (hi - lo) * u
        if self.dist == "normal":
            return self.params[0] + self.params[1] * ndtri(u)
        values, probs = self.params
        idx = np.searchsorted(np.cumsum(probs)[:-1], u, side="right")
        return np.asarray(values)[idx]


def _parse_bounds(value, where: str):
    if value is None:
        return None
    if len(value) != 2:
        raise SpecError(f"{where}: expected [a, b]")
    a, b = _finite(value[0], f"{where}[0]"), _finite(value[1], f"{where}[1]")
    if not a < b:
        raise SpecError(f"{where}: requires a < b")
    return (a, b)


def _parse_copula(d, where: str) -> CopulaSpec:
    try:
        return CopulaSpec.from_dict(d)
    except (CopulaDomainError, KeyError, TypeError) as exc:
        raise SpecError(f"{where}: {exc}") from None


@dataclass
class WorldSpec:
    """Ground-truth generative law for a synthetic observed world."""

    marginals: list
    copula: CopulaSpec
    covariates: list = field(default_factory=list)
    strata: Optional[StrataPartition] = None
    p_treat: list = field(default_factory=lambda: [0.5])
    outcome_bounds: Optional[tuple] = None
    rct_fraction: float = 0.0

    def __post_init__(self):
        K = 1 if self.strata is None else self.strata.K
        if len(self.marginals) not in (1, K):
            raise SpecError(f"marginals: expected 1 or {K} strata entries, got {len(self.marginals)}")
        if isinstance(self.p_treat, (int, float)):
            self.p_treat = [float(self.p_treat)]
        if len(self.p_treat) not in (1, K):
            raise SpecError(f"p_treat: expected 1 or {K} entries")
        for i, p in enumerate(self.p_treat):
            if not 0.0 < p < 1.0:
                raise SpecError(f"p_treat[{i}]: must lie in (0, 1), got {p}")
        if not 0.0 <= self.rct_fraction <= 1.0:
            raise SpecError("rct_fraction: must lie in [0, 1]")
        if self.strata is not None and self.strata.coordinate >= len(self.covariates):
            raise SpecError("strata.coordinate: no such covariate")

    @property
    def K(self) -> int:
        return 1 if self.strata is None else self.strata.K

    def marginal(self, k: int, arm: int) -> Marginal:
        return self.marginals[k if len(self.marginals) > 1 else 0][arm]

    def treat_prob(self, k: int) -> float:
        return self.p_treat[k if len(self.p_treat) > 1 else 0]

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        covs = [CovariateRule.from_dict(c, f"covariates[{j}]") for j, c in enumerate(d.get("covariates", []))]
        strata = None
        if d.get("strata"):
            s = d["strata"]
            strata = StrataPartition.from_edges(_need(s, "coordinate", "strata"), _need(s, "edges", "strata"))
        p_treat = d.get("p_treat", 0.5)
        p_treat = [_finite(p, f"p_treat[{i}]") for i, p in enumerate(p_treat)] if isinstance(p_treat, list) else [_finite(p_treat, "p_treat")]
        return cls(
            marginals=_parse_arm_marginals(_need(d, "marginals", "world"), "marginals"),
            copula=_parse_copula(_need(d, "copula", "world"), "copula"),
            covariates=covs,
            strata=strata,
            p_treat=p_treat,
            outcome_bounds=_parse_bounds(d.get("outcome_bounds"), "outcome_bounds"),
            rct_fraction=_finite(d.get("rct_fraction", 0.0), "rct_fraction"),
        )

    def to_dict(self) -> dict:
        out = {
            "covariates": [c.to_dict() for c in self.covariates],
            "strata": None if self.strata is None else self.strata.to_dict(),
            "marginals": _dump_arm_marginals(self.marginals),
            "copula": self.copula.to_dict(),
            "p_treat": list(self.p_treat),
            "rct_fraction": self.rct_fraction,
        }
        if self.outcome_bounds is not None:
            out["outcome_bounds"] = list(self.outcome_bounds)
        return out


@dataclass(frozen=True)
class Perturbation:
    """Location shift of ``epsilon * (b - a)`` on one or both arms.

    With ``arm="both"`` the treated arm moves up and the control arm moves
    down, so the two biases add in the treatment effect. ``direction`` flips
    the sign. ``scale`` replaces (b - a) when the data declare no bounds.
    """

    epsilon: float
    arm: str = "treated"
    direction: int = 1
    scale: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon < 1.0:
            raise SpecError(f"perturbation.epsilon: must lie in [0, 1), got {self.epsilon}")
        if self.arm not in ("treated", "control", "both"):
            raise SpecError(f"perturbation.arm: must be treated, control or both, got {self.arm!r}")
        if self.direction not in (1, -1):
            raise SpecError("perturbation.direction: must be 1 or -1")

    def shifts(self, width: float) -> dict:
        s = self.direction * self.epsilon * width
        return {
            1: s if self.arm in ("treated", "both") else 0.0,
            0: (-s if self.arm == "both" else s) if self.arm in ("control", "both") else 0.0,
        }


@dataclass(frozen=True)
class StructuralParts:
    """Linear mediator and outcome laws driven by shared per-unit noise.

    mediator: M = m_intercept + m_d * d + m_x . x + m_sd * z_M (normal), or
              1(m_intercept + m_d * d + m_x . x + z_M > 0) (bernoulli)
    outcome:  Y = y_intercept + y_d * d + y_m * m + y_dm * d * m + y_x . x + y_sd * z_Y
    """

    m_intercept: float = 0.0
    m_d: float = 0.0
    m_x: tuple = ()
    m_sd: float = 0.0
    m_family: str = "normal"
    y_intercept: float = 0.0
    y_d: float = 0.0
    y_m: float = 0.0
    y_dm: float = 0.0
    y_x: tuple = ()
    y_sd: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "StructuralParts":
        med = _need(d, "mediator", "structural")
        out = _need(d, "outcome", "structural")
        fam = med.get("family", "normal")
        if fam not in ("normal", "bernoulli"):
            raise SpecError(f"structural.mediator.family: must be normal or bernoulli, got {fam!r}")
        parts = cls(
            m_intercept=_finite(med.get("intercept", 0.0), "structural.mediator.intercept"),
            m_d=_finite(med.get("d", 0.0), "structural.mediator.d"),
            m_x=tuple(_finite(v, "structural.mediator.x") for v in med.get("x", [])),
            m_sd=_finite(med.get("sd", 0.0), "structural.mediator.sd"),
            m_family=fam,
            y_intercept=_finite(out.get("intercept", 0.0), "structural.outcome.intercept"),
            y_d=_finite(out.get("d", 0.0), "structural.outcome.d"),
            y_m=_finite(out.get("m", 0.0), "structural.outcome.m"),
            y_dm=_finite(out.get("dm", 0.0), "structural.outcome.dm"),
            y_x=tuple(_finite(v, "structural.outcome.x") for v in out.get("x", [])),
            y_sd=_finite(out.get("sd", 0.0), "structural.outcome.sd"),
        )
        if parts.m_sd < 0 or parts.y_sd < 0:
            raise SpecError("structural: sd values must be >= 0")
        return parts

    def to_dict(self) -> dict:
        return {
            "mediator": {"intercept": self.m_intercept, "d": self.m_d, "x": list(self.m_x),
                         "sd": self.m_sd, "family": self.m_family},
            "outcome": {"intercept": self.y_intercept, "d": self.y_d, "m": self.y_m, "dm": self.y_dm,
                        "x": list(self.y_x), "sd": self.y_sd},
        }


@dataclass(frozen=True)
class SequentialParts:
    """One-step dynamics: Y_t = persistence * Y_{t-1} + effect * g_t + noise_sd * z_t.

    Y_0 is drawn from the unit's control-arm marginal.
    """

    persistence: float = 1.0
    effect: float = 1.0
    noise_sd: float = 0.0

    @classmethod
    def from_dict(cls, d: dict) -> "SequentialParts":
        parts = cls(
            persistence=_finite(d.get("persistence", 1.0), "sequential.persistence"),
            effect=_finite(d.get("effect", 1.0), "sequential.effect"),
            noise_sd=_finite(d.get("noise_sd", 0.0), "sequential.noise_sd"),
        )
        if parts.noise_sd < 0:
            raise SpecError("sequential.noise_sd: must be >= 0")
        return parts

    def to_dict(self) -> dict:
        return {"persistence": self.persistence, "effect": self.effect, "noise_sd": self.noise_sd}


@dataclass
class SimulatorSpec:
    """Parametric twin simulator.

    ``marginals`` holds one ``{1: Marginal, 0: Marginal}`` entry per stratum
    of the dataset it runs on (a single entry applies to every stratum).
    """

    kind: str
    marginals: list
    copula: CopulaSpec = field(default_factory=lambda: CopulaSpec("independence"))
    perturbation: Optional[Perturbation] = None
    dispersion_scale: float = 1.0
    structural: Optional[StructuralParts] = None
    horizon: Optional[int] = None
    sequential: Optional[SequentialParts] = None

    def __post_init__(self):
        if self.kind not in SIMULATOR_KINDS:
            raise SpecError(f"kind: unknown simulator kind {self.kind!r}; expected one of {SIMULATOR_KINDS}")
        if not self.dispersion_scale > 0:
            raise SpecError(f"dispersion_scale: must be > 0, got {self.dispersion_scale}")
        if (self.structural is not None) != (self.kind == "structural"):
            raise SpecError("structural: required exactly when kind = structural")
        if (self.horizon is not None) != (self.kind == "sequential"):
            raise SpecError("horizon: required exactly when kind = sequential")
        if self.horizon is not None and self.horizon < 1:
            raise SpecError("horizon: must be >= 1")
        if self.kind == "sequential" and self.sequential is None:
            self.sequential = SequentialParts()
        if self.kind == "perturbed" and self.perturbation is None:
            raise SpecError("perturbation: required when kind = perturbed")
        if not self.marginals and self.kind not in ("structural",):
            raise SpecError("marginals: at least one stratum entry is required")

    def marginal(self, k: int, arm: int) -> Marginal:
        return self.marginals[k if len(self.marginals) > 1 else 0][arm]

    @classmethod
    def from_world(cls, world: WorldSpec, kind: str = "oracle", **overrides) -> "SimulatorSpec":
        """Simulator that reproduces ``world``'s marginals and copula."""
        base = dict(kind=kind, marginals=[dict(m) for m in world.marginals], copula=world.copula)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulatorSpec":
        kind = _need(d, "kind", "simulator")
        pert = d.get("perturbation")
        if pert is not None:
            pert = Perturbation(
                epsilon=_finite(_need(pert, "epsilon", "perturbation"), "perturbation.epsilon"),
                arm=pert.get("arm", "treated"),
                direction=int(pert.get("direction", 1)),
                scale=None if pert.get("scale") is None else _finite(pert["scale"], "perturbation.scale"),
            )
        marg = d.get("marginals")
        return cls(
            kind=kind,
            marginals=_parse_arm_marginals(marg, "marginals") if marg else [],
            copula=_parse_copula(d.get("copula", {"family": "independence"}), "copula"),
            perturbation=pert,
            dispersion_scale=_finite(d.get("dispersion_scale", 1.0), "dispersion_scale"),
            structural=StructuralParts.from_dict(d["structural"]) if d.get("structural") else None,
            horizon=None if d.get("horizon") is None else int(d["horizon"]),
            sequential=SequentialParts.from_dict(d["sequential"]) if d.get("sequential") else None,
        )

    def to_dict(self) -> dict:
        out: dict = {
            "kind": self.kind,
            "marginals": _dump_arm_marginals(self.marginals),
            "copula": self.copula.to_dict(),
            "dispersion_scale": self.dispersion_scale,
        }
        if self.perturbation is not None:
            p = self.perturbation
            out["perturbation"] = {"epsilon": p.epsilon, "arm": p.arm, "direction": p.direction, "scale": p.scale}
        if self.structural is not None:
            out["structural"] = self.structural.to_dict()
        if self.horizon is not None:
            out["horizon"] = self.horizon
            out["sequential"] = self.sequential.to_dict()
        return out
