"""Bivariate copulas: CDF evaluation and exact conditional-inverse sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtr, ndtri, owens_t

from .noise import NoiseRecord

FAMILIES = ("gaussian", "frank", "clayton", "independence", "comonotone", "countermonotone")
PARAMETRIC = ("gaussian", "frank", "clayton")

# Gaussian parameters this close to +-1 use the Frechet formulas.
_RHO_EDGE = 1e-12


class CopulaDomainError(ValueError):
    """Copula parameter outside the family's legal range."""


@dataclass(frozen=True)
class CopulaSpec:
    family: str
    parameter: Optional[float] = None

    def __post_init__(self):
        fam = str(self.family).lower()
        object.__setattr__(self, "family", fam)
        if fam not in FAMILIES:
            raise CopulaDomainError(f"unknown copula family {self.family!r}; expected one of {FAMILIES}")
        p = self.parameter
        if fam in PARAMETRIC:
            if p is None or not np.isfinite(p):
                raise CopulaDomainError(f"{fam} copula requires a finite parameter")
            p = float(p)
            object.__setattr__(self, "parameter", p)
            if fam == "gaussian" and not -1.0 < p < 1.0:
                raise CopulaDomainError(f"gaussian rho must lie in (-1, 1), got {p}")
            if fam == "frank" and p == 0.0:
                raise CopulaDomainError("frank alpha must be nonzero")
            if fam == "clayton" and p <= 0.0:
                raise CopulaDomainError(f"clayton theta must be > 0, got {p}")
        elif p is not None:
            raise CopulaDomainError(f"{fam} copula takes no parameter")

    @classmethod
    def from_dict(cls, d: dict) -> "CopulaSpec":
        return cls(d["family"], d.get("parameter"))

    def to_dict(self) -> dict:
        return {"family": self.family, "parameter": self.parameter}

    @property
    def label(self) -> str:
        if self.parameter is None:
            return self.family
        return f"{self.family}({self.parameter:g})"


INDEPENDENCE = CopulaSpec("independence")
COMONOTONE = CopulaSpec("comonotone")
COUNTERMONOTONE = CopulaSpec("countermonotone")


def bvn_cdf(h, k, rho: float):
    """Standard bivariate normal CDF Phi2(h, k; rho) via Owen's T function."""
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    if rho >= 1.0 - _RHO_EDGE:
        return ndtr(np.minimum(h, k))
    if rho <= -1.0 + _RHO_EDGE:
        return np.maximum(ndtr(h) + ndtr(k) - 1.0, 0.0)

    out = np.empty(h.shape)
    s = np.sqrt((1.0 - rho) * (1.0 + rho))
    both_zero = (h == 0) & (k == 0)
    out[both_zero] = 0.25 + np.arcsin(rho) / (2 * np.pi)

    m = ~both_zero
    hm, km = h[m], k[m]
    with np.errstate(divide="ignore", invalid="ignore"):
        a_h = (km - rho * hm) / (hm * s)
        a_k = (hm - rho * km) / (km * s)
        t_h = np.where(hm == 0, 0.25 * np.sign(km - rho * hm), owens_t(hm, np.nan_to_num(a_h)))
        t_k = np.where(km == 0, 0.25 * np.sign(hm - rho * km), owens_t(km, np.nan_to_num(a_k)))
        beta = np.where((hm * km > 0) | ((hm * km == 0) & (hm + km >= 0)), 0.0, 0.5)
    out[m] = 0.5 * ndtr(hm) + 0.5 * ndtr(km) - t_h - t_k - beta

    # Infinite arguments reduce to the univariate margins.
    out = np.where(np.isneginf(h) | np.isneginf(k), 0.0, out)
    out = np.where(np.isposinf(h), ndtr(k), out)
    out = np.where(np.isposinf(k), ndtr(h), out)
    return np.clip(out, 0.0, 1.0)


def copula_cdf(spec: CopulaSpec, u, v):
    """C(u, v) for the given family; accepts scalars or arrays in [0, 1]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if np.any((u < 0) | (u > 1) | (v < 0) | (v > 1)):
        raise CopulaDomainError("copula arguments must lie in [0, 1]")
    u, v = np.broadcast_arrays(u, v)
    fam, p = spec.family, spec.parameter

    if fam == "independence":
        out = u * v
    elif fam == "comonotone":
        out = np.minimum(u, v)
    elif fam == "countermonotone":
        out = np.maximum(u + v - 1.0, 0.0)
    elif fam == "gaussian":
        with np.errstate(divide="ignore"):
            out = bvn_cdf(ndtri(u), ndtri(v), p)
    elif fam == "frank":
        num = np.expm1(-p * u) * np.expm1(-p * v)
        out = -np.log1p(num / np.expm1(-p)) / p
    else:  # clayton
        with np.errstate(divide="ignore", over="ignore"):
            core = u ** -p + v ** -p - 1.0
            out = np.where((u == 0) | (v == 0), 0.0, core ** (-1.0 / p))

    # Exact boundary behaviour regardless of rounding inside the formulas.
    out = np.where((u == 0) | (v == 0), 0.0, out)
    out = np.where(u == 1, v, out)
    out = np.where(v == 1, u, out)
    out = np.clip(out, np.maximum(u + v - 1.0, 0.0), np.minimum(u, v))
    return out if out.ndim else float(out)


def sample_from_uniforms(spec: CopulaSpec, w1, w2):
    """Map independent uniforms (w1, w2) to a pair with copula ``spec``.

    ``u`` is ``w1`` (up to one rounding step for the countermonotone case); ``v`` is the conditional inverse of C(. | u) at w2.
    """
    u = np.asarray(w1, dtype=float)
    w2 = np.asarray(w2, dtype=float)
    fam, p = spec.family, spec.parameter
    if fam == "independence":
        v = w2
    elif fam == "comonotone":
        v = u.copy()
    elif fam == "countermonotone":
        # Snap u so that u == 1 - v holds exactly in floating point.
        u = 1.0 - (1.0 - u)
        v = 1.0 - u
    elif fam == "gaussian":
        z = p * ndtri(u) + np.sqrt(1.0 - p * p) * ndtri(w2)
        v = ndtr(z)
    elif fam == "frank":
        v = -np.log1p(w2 * np.expm1(-p) / (w2 + (1.0 - w2) * np.exp(-p * u))) / p
    else:  # clayton
        v = ((w2 ** (-p / (1.0 + p)) - 1.0) * u ** -p + 1.0) ** (-1.0 / p)
    return u, np.clip(v, 0.0, 1.0)


def sample_pair(spec: CopulaSpec, noise: NoiseRecord, domain: str = "sim") -> tuple[float, float]:
    w = noise.uniforms(2, domain)
    u, v = sample_from_uniforms(spec, w[0], w[1])
    return float(u), float(v)
