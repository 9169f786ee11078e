from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import optimize, stats

from conftest import example_world, oracle_sim
from twincf.copulas import CopulaSpec
from twincf.estimands import CATALOG
from twincf.model import Dataset, Perturbation, StrataPartition, TwinDraws
from twincf.simulation import generate_world, simulate_twins
from twincf.validation import (
    FAIL,
    PASS,
    CannotValidateError,
    InfiniteSampleSizeError,
    LevelConfig,
    level0,
    level1,
    level2,
    level3,
    level4,
    licensed_estimands,
    run_protocol,
    sample_size,
    transport_diagnostics,
)

FAST = LevelConfig(supplementary=False)


def ks_shift(target: float, sd: float = 2.0) -> float:
    """Location shift between two equal-sd normals whose KS distance is ``target``."""
    return 2.0 * sd * stats.norm.ppf((1.0 + target) / 2.0)


def closed_form_ks(var_a: float, var_b: float) -> float:
    """sup_x |Phi(x/sa) - Phi(x/sb)| for two centred normals."""
    sa, sb = math.sqrt(var_a), math.sqrt(var_b)
    f = lambda x: -abs(stats.norm.cdf(x / sa) - stats.norm.cdf(x / sb))
    res = optimize.minimize_scalar(f, bounds=(0.0, 10.0 * max(sa, sb)), method="bounded")
    return -res.fun


def world_and_draws(world, sim, n, seed, R=1):
    data, truth = generate_world(world, n, seed)
    return data, simulate_twins(sim, data, R, 10_000 + seed)


def replay_draws(data: Dataset, R: int = 1) -> TwinDraws:
    """Draws whose assigned-arm values equal the observed outcomes."""
    y = np.repeat(data.y[:, None], R, axis=1)
    return TwinDraws(data.unit_ids, y.copy(), y.copy())


class TestLevelConfig:
    @pytest.mark.parametrize("kwargs", [
        {"alpha": 0.0}, {"alpha": 1.0}, {"eps0_bar": -0.1}, {"eps1_bar": 1.5},
        {"min_stratum_n": 0}, {"bootstrap_B": 10}, {"placebo_arm": 2},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LevelConfig(**kwargs)

    def test_round_trip_and_digest(self):
        cfg = LevelConfig(alpha=0.1, strata=StrataPartition.from_edges(0, [0.5]), monotonicity_pairs=[(0, 1)])
        back = LevelConfig.from_dict(cfg.to_dict())
        assert back.to_dict() == cfg.to_dict()
        assert back.digest() == cfg.digest()
        assert LevelConfig().digest() != cfg.digest()

    def test_unknown_key(self):
        with pytest.raises(ValueError, match="unknown"):
            LevelConfig.from_dict({"alpah": 0.05})

    def test_default_tolerances(self):
        cfg = LevelConfig()
        assert (cfg.eps0_bar, cfg.eps1_bar) == (0.1, 0.1)


class TestLevel0:
    def test_oracle_null_pass_rate(self):
        world = example_world()
        sim = oracle_sim(world)
        passes = 0
        for seed in range(100):
            data, dr = world_and_draws(world, sim, 5000, seed)
            passes += level0(dr, data, FAST).passed
        assert passes >= 94

    def test_perturbed_fails(self):
        world = example_world()
        eps = ks_shift(0.2) / 10.0
        sim = oracle_sim(world, "perturbed", perturbation=Perturbation(eps, "treated", scale=10.0))
        fails = 0
        for seed in range(100):
            data, dr = world_and_draws(world, sim, 5000, seed)
            res = level0(dr, data, FAST)
            fails += not res.passed
            assert res.extras["T1"] == pytest.approx(0.2, abs=0.05)
        assert fails >= 99

    def test_identical_draws_zero(self, world):
        data, _ = generate_world(world, 500, 1)
        res = level0(replay_draws(data, 3), data, FAST)
        assert res.extras["eps0"] == 0.0
        assert res.passed

    def test_eps0_is_max_arm(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 1000, 2)
        ex = level0(dr, data, FAST).extras
        assert ex["eps0"] == max(ex["T1"], ex["T0"])

    def test_empty_arm(self, world):
        data, _ = generate_world(world, 200, 3)
        only_control = Dataset(data.unit_ids, data.X, np.zeros(data.n, dtype=int), data.y)
        with pytest.raises(CannotValidateError, match="treated"):
            level0(replay_draws(only_control), only_control, FAST)

    def test_supplementary_rows_report_only(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 400, 4)
        rows = level0(dr, data, LevelConfig(n_perm=99)).rows
        names = [r.test for r in rows]
        for arm in ("treated", "control"):
            assert f"Marginal KS ({arm})" in names
            assert f"Energy distance ({arm})" in names
            assert f"Anderson-Darling ({arm})" in names
        assert all(not r.mandatory for r in rows if r.test.startswith(("Energy", "Anderson")))


class TestLevel1:
    K4 = StrataPartition.from_edges(0, [0.25, 0.5, 0.75])

    def test_oracle_null_pass_rate(self):
        world = example_world(strata=True)
        sim = oracle_sim(world)
        cfg = LevelConfig(strata=self.K4, supplementary=False)
        passes = 0
        for seed in range(100):
            data, dr = world_and_draws(world, sim, 8000, seed)
            passes += level1(dr, data, cfg).passed
        assert passes >= 90

    def test_one_wrong_stratum_flagged(self):
        world = example_world(strata=True)
        sim = oracle_sim(world)
        cfg = LevelConfig(strata=self.K4, supplementary=False)
        hits = false_alarms = 0
        for seed in range(100):
            data, dr = world_and_draws(world, sim, 2000, seed)
            wrong = self.K4.assign(data.X) == 2
            bad = TwinDraws(dr.unit_ids, dr.y1 + 2.0 * wrong[:, None], dr.y0 + 2.0 * wrong[:, None])
            flagged = level1(bad, data, cfg).extras["flagged"]
            hits += any(k == 2 for _, k in flagged)
            false_alarms += any(k != 2 for _, k in flagged)
        assert hits >= 95
        assert false_alarms <= 12

    def test_single_stratum_equals_level0(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 3000, 5)
        l0 = level0(dr, data, FAST).extras
        l1 = level1(dr, data, FAST).extras
        assert l1["eps1"] == l0["eps0"]
        assert l1["eps_arm"] == {1: l0["T1"], 0: l0["T0"]}

    def test_underpowered_cells_excluded(self):
        world = example_world(strata=True)
        data, dr = world_and_draws(world, oracle_sim(world), 600, 6)
        cfg = LevelConfig(strata=StrataPartition.from_edges(0, [0.05, 0.5]), supplementary=False)
        ex = level1(dr, data, cfg).extras
        assert {e["stratum"] for e in ex["excluded"]} == {0}
        assert {c["stratum"] for c in ex["cells"]} == {1, 2}

    def test_all_underpowered(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 100, 7)
        with pytest.raises(CannotValidateError):
            level1(dr, data, LevelConfig(min_stratum_n=1000))

    def test_bonferroni_threshold(self):
        world = example_world(strata=True)
        data, dr = world_and_draws(world, oracle_sim(world), 4000, 8)
        rows = level1(dr, data, LevelConfig(strata=self.K4, supplementary=False)).rows
        bonf = next(r for r in rows if r.test == "Conditional KS tests (Bonferroni)")
        assert bonf.details["alpha_per_cell"] == pytest.approx(0.05 / 8)

    def test_cmmd_rows(self):
        world = example_world(strata=True)
        data, dr = world_and_draws(world, oracle_sim(world), 300, 9)
        rows = level1(dr, data, LevelConfig(cmmd=True, n_perm=49)).rows
        assert {r.test for r in rows} >= {"Conditional MMD (treated)", "Conditional MMD (control)"}


class TestLevel2:
    def test_perfect_draws(self, world):
        data, _ = generate_world(world, 1000, 10)
        res = level2(replay_draws(data, 20), data, FAST)
        assert res.extras["rmspe"] == 0.0
        assert res.extras["mape"] == 0.0
        assert res.extras["ols"]["beta0"] == pytest.approx(0.0, abs=1e-10)
        assert res.extras["ols"]["beta1"] == pytest.approx(1.0, abs=1e-12)

    def test_pure_noise_slope(self, world):
        data, _ = generate_world(world, 5000, 11)
        rng = np.random.default_rng(11)
        noise = TwinDraws(data.unit_ids, rng.normal(size=(data.n, 20)), rng.normal(size=(data.n, 20)))
        ols = level2(noise, data, FAST).extras["ols"]
        assert abs(ols["beta1"]) <= 2 * ols["se1"]

    def test_oracle_rmspe(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 5000, 12, R=5)
        rmspe = level2(dr, data, FAST).extras["rmspe"]
        assert rmspe == pytest.approx(2.0 * math.sqrt(2.0), rel=0.10)

    def test_oracle_slope_and_coverage(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 4000, 13, R=20)
        res = level2(dr, data, FAST)
        assert res.extras["slope"]["beta1"] == pytest.approx(1.0, abs=4 * res.extras["slope"]["se"])
        assert res.extras["coverage"] == pytest.approx(0.90, abs=0.03)
        slope = next(r for r in res.rows if r.test == "Calibration slope")
        assert slope.status == PASS

    def test_missing_draws(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 50, 14)
        y1 = dr.y1.copy()
        i = int(np.flatnonzero(data.d == 1)[0])
        y1[i, 0] = np.nan
        with pytest.raises(ValueError, match=str(data.unit_ids[i])):
            level2(TwinDraws(dr.unit_ids, y1, dr.y0), data, FAST)

    def test_missing_units(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 50, 15)
        short = TwinDraws(dr.unit_ids[1:], dr.y1[1:], dr.y0[1:])
        with pytest.raises(ValueError, match="missing"):
            level2(short, data, FAST)

    def test_rmspe_threshold_mandatory(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 500, 16, R=2)
        rows = level2(dr, data, LevelConfig(rmspe_threshold=1.0, supplementary=False)).rows
        assert next(r for r in rows if r.test == "RMSPE").status == FAIL
        rows = level2(dr, data, FAST).rows
        assert not next(r for r in rows if r.test == "RMSPE").mandatory

    def test_small_R_skips(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 200, 17, R=1)
        rows = {r.test: r for r in level2(dr, data, FAST).rows}
        assert rows["Calibration slope"].status.startswith("skipped")
        assert rows["Interval coverage"].status.startswith("skipped")


class TestLevel3:
    def test_oracle_null_pass_rate(self):
        world = example_world(rct_fraction=0.4)
        sim = oracle_sim(world)
        cfg = LevelConfig(bootstrap_B=200)
        passes = 0
        for seed in range(100):
            data, dr = world_and_draws(world, sim, 5000, seed)
            passes += level3(dr, data, cfg).passed
        assert passes >= 93

    def test_biased_ate_fails(self):
        world = example_world(rct_fraction=0.4)
        sim = oracle_sim(world, "perturbed", perturbation=Perturbation(0.1, "treated", scale=10.0))
        cfg = LevelConfig(bootstrap_B=200)
        fails = 0
        for seed in range(100):
            data, dr = world_and_draws(world, sim, 5000, seed)
            fails += not level3(dr, data, cfg).passed
        assert fails >= 99

    def test_replay_zero(self):
        world = example_world(rct_fraction=0.5)
        data, _ = generate_world(world, 1000, 18)
        idx = np.flatnonzero(data.rct)
        dd, yy = data.d[idx], data.y[idx]
        ate_rct = yy[dd == 1].mean() - yy[dd == 0].mean()
        y0 = np.zeros((data.n, 1))
        y1 = np.full((data.n, 1), ate_rct)
        ex = level3(TwinDraws(data.unit_ids, y1, y0), data, LevelConfig()).extras
        assert ex["T3"] == pytest.approx(0.0, abs=1e-12)
        assert ex["Z3"] == pytest.approx(0.0, abs=1e-9)

    def test_no_rct_skipped(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 100, 19)
        res = level3(dr, data, LevelConfig())
        assert res.rows[0].status == "skipped: no RCT subset"
        assert res.passed is None

    def test_cate_pairs(self):
        world = example_world(rct_fraction=0.5, strata=True)
        data, dr = world_and_draws(world, oracle_sim(world), 2000, 20)
        pairs = level3(dr, data, LevelConfig(bootstrap_B=100)).extras["cate_pairs"]
        assert [p["stratum"] for p in pairs] == [0, 1]
        for p in pairs:
            assert p["cate_sim"] == pytest.approx(1.0, abs=0.15)


class TestLevel4:
    def band(self, m: int) -> float:
        return 1.95 * math.sqrt(2.0 / m)

    def test_independent_sim_self_comparison(self, world):
        sim = oracle_sim(world, "independent_coupling")
        data, dr = world_and_draws(world, sim, 5000, 21)
        csi = level4(dr, data, sim, LevelConfig()).extras["csi"]
        assert csi <= self.band(5000)

    def test_example1_csi(self, world):
        sim = oracle_sim(world)
        data, dr = world_and_draws(world, sim, 20000, 22)
        csi = level4(dr, data, sim, LevelConfig()).extras["csi"]
        assert csi == pytest.approx(closed_form_ks(0.8, 8.0), abs=self.band(20000))

    def test_shuffle_without_sim(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 20000, 23)
        res = level4(dr, data, None, LevelConfig())
        assert res.rows[0].details["independent_draws"] == "shuffle"
        assert res.extras["csi"] == pytest.approx(closed_form_ks(0.8, 8.0), abs=self.band(20000))

    def test_bounds_rows(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 20000, 24)
        ex = level4(dr, data, None, LevelConfig()).extras
        lo, hi = ex["var_bounds"]
        assert lo == pytest.approx(0.0, abs=0.1)
        assert hi == pytest.approx(16.0, rel=0.03)
        assert ex["pbenefit_bounds"][0] == pytest.approx(0.5987, abs=0.01)
        assert ex["pbenefit_bounds"][1] == pytest.approx(1.0, abs=0.005)

    def test_placebo_zero(self, world):
        sim = oracle_sim(world)
        data, dr = world_and_draws(world, sim, 5000, 25)
        p = level4(dr, data, sim, LevelConfig(placebo_arm=1)).extras["placebo"]
        assert abs(p["effect"]) <= 3 * p["mc_se"]

    def test_monotonicity_rate(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 20000, 26)
        v = level4(dr, data, None, LevelConfig(monotonicity_pairs=[(0, 1)])).extras["monotonicity"][(0, 1)]
        # P(Y0 > Y1) = P(tau < 0) with tau ~ N(1, 0.8).
        assert v == pytest.approx(stats.norm.cdf(-1 / math.sqrt(0.8)), abs=0.01)

    def test_all_report_only(self, world):
        sim = oracle_sim(world)
        data, dr = world_and_draws(world, sim, 500, 27)
        res = level4(dr, data, sim, LevelConfig(placebo_arm=0, monotonicity_pairs=[(0, 1)]))
        assert not any(r.mandatory for r in res.rows)
        assert res.passed is None


class TestLicensing:
    MARGINAL = {k for k, v in CATALOG.items() if v[1] == "marginal" and not v[2]}

    @pytest.mark.parametrize("l0,l1,licensed", [
        (True, True, True), (True, False, False), (False, True, False), (True, None, False), (None, None, False),
    ])
    def test_marginal_family(self, l0, l1, licensed):
        names, withheld = licensed_estimands({0: l0, 1: l1, 2: True, 3: True})
        assert (set(names) == self.MARGINAL) is licensed
        if not licensed:
            assert names == []

    @pytest.mark.parametrize("pattern", [{0: True, 1: True, 2: True, 3: True, 4: None}, {0: False}])
    def test_copula_dependent_never_licensed(self, pattern):
        names, withheld = licensed_estimands(pattern)
        for name, (_, _, copula) in CATALOG.items():
            if copula:
                assert name not in names
                assert "copula-dependent" in withheld[name]

    def test_partition(self):
        names, withheld = licensed_estimands({0: True, 1: True})
        assert set(names) | set(withheld) == set(CATALOG)
        assert not set(names) & set(withheld)

    def test_pure_function(self):
        p = {0: True, 1: True, 2: False, 3: None}
        assert licensed_estimands(p) == licensed_estimands(dict(p))


class TestProtocol:
    def test_oracle_end_to_end(self):
        world = example_world(rct_fraction=0.3, strata=True)
        sim = oracle_sim(world)
        data, _ = generate_world(world, 6000, 30)
        card = run_protocol(None, data, sim, LevelConfig(R=20, seed=31, bootstrap_B=200, n_perm=99))
        assert card.complete
        assert card.all_mandatory_pass
        assert card.eps1 <= card.header["eps1_bar"]
        assert card.levels_present() == {0, 1, 2, 3, 4}
        assert set(card.licensed) == TestLicensing.MARGINAL
        assert card.header["seed"] == 31
        assert card.header["config_hash"] == LevelConfig(R=20, seed=31, bootstrap_B=200, n_perm=99).digest()

    def test_perturbed_stops(self):
        world = example_world(rct_fraction=0.3)
        sim = oracle_sim(world, "perturbed", perturbation=Perturbation(ks_shift(0.2) / 10.0, "both", scale=10.0))
        data, _ = generate_world(world, 5000, 32)
        card = run_protocol(None, data, sim, LevelConfig(R=2, supplementary=False))
        assert card.stopped and not card.complete
        assert card.levels_present() == {0}
        assert card.eps1 is None
        assert "STOP" in card.stop_reason
        assert card.licensed == []
        assert not card.all_mandatory_pass

    def test_miscoupled_signature(self):
        world = example_world(rho=0.9, rct_fraction=0.3)
        data, _ = generate_world(world, 6000, 33)
        cfg = LevelConfig(R=2, seed=34, bootstrap_B=200, supplementary=False)
        right = run_protocol(None, data, oracle_sim(world), cfg)
        wrong_sim = oracle_sim(world, "miscoupled", copula=CopulaSpec("gaussian", -0.5))
        wrong = run_protocol(None, data, wrong_sim, cfg)
        for card in (right, wrong):
            assert all(card.level_verdicts[lv] in (True, None) for lv in range(4))
        assert abs(right.extras[4]["csi"] - wrong.extras[4]["csi"]) > 0.2

    def test_draws_or_sim_required(self, world):
        data, _ = generate_world(world, 50, 35)
        with pytest.raises(ValueError):
            run_protocol(None, data, None)


class TestTransport:
    def test_zero_delta_reduces(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 2000, 40)
        rep = transport_diagnostics(dr, data, FAST)
        assert rep.widened_bound == rep.eps_arm[1] * rep.width + rep.eps_arm[0] * rep.width
        eps = max(rep.eps_arm.values())
        assert rep.widened_bound <= 2 * eps * rep.width

    def test_widened_formula(self):
        world = example_world(bounds=(-5.0, 15.0))
        data, dr = world_and_draws(world, oracle_sim(world), 2000, 41)
        rep = transport_diagnostics(dr, data, FAST, delta=(0.03, 0.07))
        e1, e0 = rep.eps_arm[1], rep.eps_arm[0]
        assert rep.width_source == "declared"
        assert rep.widened_bound == (e1 + 0.03) * 20.0 + (e0 + 0.07) * 20.0

    def test_symmetric_oracle(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 4000, 42)
        rep = transport_diagnostics(dr, data, FAST)
        assert rep.discrepancy <= 1.95 * math.sqrt(2 / 2000)

    def test_treated_shift(self, world):
        sim = oracle_sim(world, "perturbed", perturbation=Perturbation(ks_shift(0.2) / 10.0, "treated", scale=10.0))
        data, dr = world_and_draws(world, sim, 4000, 43)
        rep = transport_diagnostics(dr, data, FAST)
        assert rep.discrepancy >= 0.2 - 1.95 * math.sqrt(2 / 2000)

    def test_negative_delta(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 300, 44)
        with pytest.raises(ValueError):
            transport_diagnostics(dr, data, FAST, delta=(-0.1, 0.0))

    def test_placebo_groups(self, world):
        data, dr = world_and_draws(world, oracle_sim(world), 2000, 45)
        ga = np.arange(data.n) % 2 == 0
        rep = transport_diagnostics(dr, data, FAST, placebo_groups=(ga, ~ga))
        assert set(rep.placebo) >= {"eps_a", "eps_b", "discrepancy", "observed_ks", "observed_p"}
        assert rep.placebo["discrepancy"] == abs(rep.placebo["eps_a"] - rep.placebo["eps_b"])


class TestSampleSize:
    def test_level0(self):
        assert sample_size(0, eps=0.05, alpha=0.05, power=0.8) == 968

    def test_level3(self):
        assert sample_size(3, delta=1.0, sigma=1.0, alpha=0.05, power=0.8) == 32

    @pytest.mark.parametrize("eps", [0.02, 0.05, 0.1])
    def test_eps_doubling(self, eps):
        n1, n2 = sample_size(0, eps=eps), sample_size(0, eps=2 * eps)
        assert abs(n1 / 4 - n2) <= 1

    def test_level1_bonferroni_larger(self):
        assert sample_size(1, eps=0.05, K=4) > sample_size(0, eps=0.05)

    @pytest.mark.parametrize("kwargs", [{"level": 0, "eps": 0.0}, {"level": 3, "delta": 0.0, "sigma": 1.0}])
    def test_infinite(self, kwargs):
        with pytest.raises(InfiniteSampleSizeError):
            sample_size(**kwargs)

    @pytest.mark.parametrize("kwargs", [{"level": 2, "eps": 0.1}, {"level": 0}, {"level": 3, "delta": 1.0},
                                        {"level": 0, "eps": 0.1, "power": 1.0}])
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ValueError):
            sample_size(**kwargs)
