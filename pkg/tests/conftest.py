from __future__ import annotations

import numpy as np
import pytest

from twincf.copulas import CopulaSpec
from twincf.model import Marginal, SimulatorSpec, StrataPartition, WorldSpec


def normal_arms(m1=6.0, s1=2.0, m0=5.0, s0=2.0) -> dict:
    return {1: Marginal("normal", m1, s1), 0: Marginal("normal", m0, s0)}


def example_world(rho: float = 0.9, rct_fraction: float = 0.0, strata: bool = False, bounds=None) -> WorldSpec:
    kwargs = {}
    if strata:
        from twincf.model import CovariateRule

        kwargs["covariates"] = [CovariateRule("uniform", (0.0, 1.0))]
        kwargs["strata"] = StrataPartition.from_edges(0, [0.5])
    return WorldSpec(
        marginals=[normal_arms()],
        copula=CopulaSpec("gaussian", rho),
        rct_fraction=rct_fraction,
        outcome_bounds=bounds,
        **kwargs,
    )


def oracle_sim(world: WorldSpec, kind: str = "oracle", **overrides) -> SimulatorSpec:
    return SimulatorSpec.from_world(world, kind, **overrides)


@pytest.fixture
def world():
    return example_world()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def gaussian_pipeline(seed: int, mc_n: int = 20_000) -> dict:
    """Point value, Bayes interval, PQD and Frechet intervals for Var(tau) on a random Gaussian world.

    The coupling is Gaussian with rho* in [0.3, 0.8]; one proxy correlation
    with n_cross in [200, 1000] updates a uniform prior on [0, 1). The point
    value is the functional at the posterior median.
    """
    from twincf.sensitivity import CouplingSampler, constrained_bounds, copula_posterior, fh_var_bounds

    rng = np.random.default_rng(seed)
    s1, s0 = rng.uniform(0.5, 3.0, 2)
    mu1, mu0 = rng.normal(0.0, 2.0, 2)
    m1, m0 = Marginal("normal", mu1, s1), Marginal("normal", mu0, s0)
    rho_star = rng.uniform(0.3, 0.8)
    n_cross = int(rng.integers(200, 1001))
    rho_obs = float(np.tanh(np.arctanh(rho_star) + rng.normal() / np.sqrt(n_cross - 3)))
    post = copula_posterior(lambda g: (g >= 0).astype(float), [(rho_obs, n_cross)], theta="var_tau",
                            marginals=(m1, m0), mc_n=mc_n, seed=seed)
    point = CouplingSampler(m1, m0, mc_n, seed).value(CopulaSpec("gaussian", post.median), "var_tau")[0]
    return {
        "point": point,
        "bayes_ci": post.credible_interval,
        "pqd": constrained_bounds((m1, m0), "pqd").interval,
        "frechet": fh_var_bounds(s1, s0).interval,
        "rho_star": rho_star,
    }
