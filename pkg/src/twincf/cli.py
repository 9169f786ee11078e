"""Command-line front end.

Subcommands: simulate-world, simulate-twins, validate, estimate, bounds,
sensitivity, power. ``validate`` exits 0 only when every pass/fail row of
the scorecard passes.
"""

from __future__ import annotations

import argparse
import itertools
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import estimands as est
from .io import (
    FormatError,
    load_json,
    load_simulator,
    load_world,
    read_dataset,
    read_draws,
    spec_hash,
    write_dataset,
    write_draws,
    write_json,
    write_truth,
)
from .model import Dataset, SimulatorSpec, SpecError, TwinDraws
from .report import (
    results_document,
    results_markdown,
    scorecard_csv,
    scorecard_dict,
    scorecard_markdown,
    scorecard_text,
)
from .sensitivity import (
    DEFAULT_GRID,
    EmpiricalMarginal,
    constrained_bounds,
    fh_pbenefit_bounds,
    fh_var_bounds,
    sensitivity_curve,
)
from .simulation import generate_world, simulate_twins
from .stats import ks_statistic
from .validation import (
    CannotValidateError,
    LevelConfig,
    _independent_draws,
    level0,
    level1,
    run_protocol,
    sample_size,
)

FORMATS = ("json", "markdown", "csv")
CATALOG_ORDER = ("ate", "att", "atu", "cate", "qte", "gates", "ite_distribution", "pbenefit", "pharm", "pc",
                 "nde", "nie", "cde", "regime_value", "rmst")


class CliError(Exception):
    """User-facing failure; printed without a traceback."""


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------


def _formats(value: str) -> list[str]:
    fmts = [f.strip() for f in value.split(",") if f.strip()]
    bad = [f for f in fmts if f not in FORMATS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown format(s) {bad}; choose from {FORMATS}")
    return fmts


def _load_config(path: Optional[str]) -> tuple[LevelConfig, dict]:
    """Protocol config plus the dataset-level keys ``outcome_bounds``."""
    if not path:
        return LevelConfig(), {}
    doc = load_json(path)
    extra = {k: doc.pop(k) for k in ("outcome_bounds",) if k in doc}
    try:
        return LevelConfig.from_dict(doc), extra
    except (TypeError, ValueError, KeyError) as exc:
        raise CliError(f"{path}: {exc}") from None


def _load_data(args, config: LevelConfig, extra: dict) -> Dataset:
    bounds = extra.get("outcome_bounds")
    return read_dataset(args.data, outcome_bounds=tuple(bounds) if bounds else None, strata=config.strata)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(args, config: LevelConfig, **more) -> dict:
    h = {"command": args.command, "seed": args.seed, "config_hash": config.digest()}
    h.update(more)
    return h


def _measured_eps(draws: TwinDraws, data: Optional[Dataset], config: LevelConfig) -> dict:
    if data is None:
        return {"eps0": None, "eps1": None, "note": "no observed data supplied"}
    quiet = replace(config, supplementary=False, cmmd=False)
    out = {"eps0": level0(draws, data, quiet).extras["eps0"]}
    try:
        out["eps1"] = level1(draws, data, quiet).extras["eps1"]
    except CannotValidateError as exc:
        out["eps1"] = None
        out["note"] = str(exc)
    return out


# ---------------------------------------------------------------------------
# simulate-world / simulate-twins
# ---------------------------------------------------------------------------


def cmd_simulate_world(args) -> int:
    if args.n < 1:
        raise CliError(f"--n must be >= 1, got {args.n}")
    doc = load_json(args.world)
    world = load_world(args.world)
    data, truth = generate_world(world, args.n, args.seed)
    out = _out_dir(args)
    write_dataset(data, out / "dataset.csv")
    write_truth(truth, out / "hidden_truth.csv")
    write_json({"seed": args.seed, "n": args.n, "world_hash": spec_hash(doc), "world": doc,
                "files": ["dataset.csv", "hidden_truth.csv"]}, out / "manifest.json")
    print(f"wrote {args.n} units to {out / 'dataset.csv'}")
    return 0


def cmd_simulate_twins(args) -> int:
    config, extra = _load_config(args.config)
    data = _load_data(args, config, extra)
    sim = load_simulator(args.sim)
    draws = simulate_twins(sim, data, args.R, args.seed)
    out = _out_dir(args)
    write_draws(draws, out / "draws.csv")
    print(f"wrote {draws.n} units x {draws.R} replicates to {out / 'draws.csv'}")
    return 0


def _draws_and_sim(args, data: Optional[Dataset], R: int) -> tuple[TwinDraws, Optional[SimulatorSpec]]:
    if bool(args.draws) == bool(args.sim):
        raise CliError("give exactly one of --draws or --sim")
    if args.draws:
        draws = read_draws(args.draws)
        return (draws.aligned_to(data) if data is not None else draws), None
    if data is None:
        raise CliError("--sim requires --data")
    sim = load_simulator(args.sim)
    return simulate_twins(sim, data, R, args.seed), sim


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    config, extra = _load_config(args.config)
    config = replace(config, seed=args.seed)
    data = _load_data(args, config, extra)
    draws, sim = _draws_and_sim(args, data, args.R or config.R)
    card = run_protocol(draws, data, sim, config)
    card.header["seed"] = args.seed
    out = _out_dir(args)
    if "json" in args.format:
        write_json(scorecard_dict(card), out / "scorecard.json")
    if "markdown" in args.format:
        (out / "scorecard.md").write_text(scorecard_markdown(card))
    if "csv" in args.format:
        (out / "scorecard.csv").write_text(scorecard_csv(card))
    sys.stdout.write(scorecard_text(card))
    return 0 if card.all_mandatory_pass else 1


# ---------------------------------------------------------------------------
# estimate
# ---------------------------------------------------------------------------


def _independent(draws: TwinDraws, data: Optional[Dataset], sim: Optional[SimulatorSpec], seed: int) -> TwinDraws:
    if data is not None:
        return _independent_draws(draws, data, sim, replace(LevelConfig(), seed=seed))[0]
    rng = np.random.default_rng(seed)
    return TwinDraws(draws.unit_ids, draws.y1, draws.y0[rng.permutation(draws.n)], "independent_noise")


def _gates_extremes(draws: TwinDraws, J: int) -> dict:
    """Spread between the top and bottom 1/J effect slices under the two extreme couplings."""
    q1, q0 = np.sort(draws.y1.ravel()), np.sort(draws.y0.ravel())
    out = {}
    for name, tau in (("comonotone", q1 - q0), ("countermonotone", q1 - q0[::-1])):
        s = np.sort(tau)
        m = max(1, s.size // J)
        out[name] = float(s[-m:].mean() - s[:m].mean())
    lo, hi = sorted(out.values())
    return {"lower": lo, "upper": hi, "regime": "frechet", "quantity": "top minus bottom group mean",
            "attaining_copulas": sorted(out, key=out.get), "note": "values at the two extreme couplings"}


def _regimes(arg: Optional[str], horizon: int) -> list[tuple]:
    if arg:
        return [tuple(int(c) for c in part.split(",")) for part in arg.split(";") if part.strip()]
    if horizon > 6:
        return [(0,) * horizon, (1,) * horizon]
    return list(itertools.product((0, 1), repeat=horizon))


def cmd_estimate(args) -> int:
    config, extra = _load_config(args.config)
    data = _load_data(args, config, extra) if args.data else None
    draws, sim = _draws_and_sim(args, data, args.R or config.R)
    names = [n.strip() for n in args.estimands.split(",") if n.strip()] if args.estimands else list(CATALOG_ORDER)
    unknown = [n for n in names if n not in est.CATALOG]
    if unknown:
        raise CliError(f"unknown estimand(s) {unknown}; catalog: {', '.join(CATALOG_ORDER)}")

    results, skipped, bounds = [], {}, {}
    ind = _independent(draws, data, sim, args.seed)
    csi = ks_statistic(draws.tau.ravel(), ind.tau.ravel())
    m1, m0 = EmpiricalMarginal(draws.y1), EmpiricalMarginal(draws.y0)
    vb = fh_var_bounds(m1.sd, m0.sd).to_dict()
    pb = fh_pbenefit_bounds(m1.ppf, m0.ppf).to_dict()
    ph = fh_pbenefit_bounds(m0.ppf, m1.ppf).to_dict()
    ph["estimand"] = "pharm"
    mediation = None

    for name in names:
        try:
            if name == "ate":
                results.append(est.ate(draws))
            elif name in ("att", "atu"):
                if data is None:
                    raise CliError("needs --data")
                results.append(est.att_atu(draws, data, "treated" if name == "att" else "untreated"))
            elif name == "cate":
                if data is None:
                    raise CliError("needs --data")
                if data.strata is not None:
                    results.append(est.cate(draws, data, "stratified"))
                elif data.p >= 1:
                    results.append(est.cate(draws, data, "kernel", coordinate=args.coordinate))
                else:
                    raise CliError("needs strata or at least one covariate")
            elif name == "qte":
                grid = [float(q) for q in args.q_grid.split(",")]
                results.append(est.qte(draws, grid))
            elif name == "gates":
                results.append(est.gates(draws, args.gates_j))
                bounds["gates"] = _gates_extremes(draws, args.gates_j)
            elif name == "ite_distribution":
                s = est.ite_summary(draws)
                r = est._result("ite_distribution", {"variance": s.variance, "skewness": s.skewness,
                                                     "mode_count": s.mode_count, "cdf": s.curve(21)})
                results.append(r)
                bounds[name] = vb
            elif name in ("pbenefit", "pharm"):
                bh = est.prob_benefit_harm(draws)
                v, se = (bh.pi_plus, bh.mc_se_plus) if name == "pbenefit" else (bh.pi_minus, bh.mc_se_minus)
                results.append(est._result(name, v, se))
                bounds[name] = pb if name == "pbenefit" else ph
            elif name == "pc":
                r = est.prob_causation(draws)
                results.append(r)
                lo, hi = r.details["bounds"]
                bounds["pc"] = {"lower": lo, "upper": hi, "regime": "frechet",
                                "note": "bounds from the two marginal success rates"}
            elif name in ("nde", "nie", "cde"):
                if sim is None or sim.kind != "structural":
                    raise CliError("needs a structural --sim")
                if name == "cde" and args.m_value is None:
                    raise CliError("needs --m-value")
                if mediation is None:
                    mediation = est.mediation(sim, data, args.R or config.R, args.seed, args.m_value)
                results += [r for r in mediation.results() if r.name == name]
            elif name == "regime_value":
                if sim is None or sim.kind != "sequential":
                    raise CliError("needs a sequential --sim")
                seq = est.sequential(sim, data, _regimes(args.regimes, sim.horizon), args.R or config.R, args.seed)
                results += seq.results()
            elif name == "rmst":
                if args.t_star is None:
                    raise CliError("needs --t-star")
                results.append(est.survival(draws, None, args.t_star).result())
        except (CliError, ValueError) as exc:
            skipped[name] = str(exc)

    header = _header(args, config, n_units=draws.n, R=draws.R, coupling=draws.coupling,
                     **_measured_eps(draws, data, config))
    doc = results_document(results, header, bounds, csi, skipped)
    out = _out_dir(args)
    if "json" in args.format or "csv" in args.format:
        write_json(doc, out / "estimates.json")
    if "markdown" in args.format:
        (out / "estimates.md").write_text(results_markdown(doc))
    sys.stdout.write(results_markdown(doc))
    return 0


# ---------------------------------------------------------------------------
# bounds / sensitivity / power
# ---------------------------------------------------------------------------


def _marginal_pair(args, config: LevelConfig, extra: dict):
    """(treated, control) laws from --sim (one stratum), --draws, or --sigma1/--sigma0."""
    if args.sim:
        sim = load_simulator(args.sim)
        if not sim.marginals:
            raise CliError("simulator has no marginal laws")
        k = min(args.stratum, len(sim.marginals) - 1)
        return sim.marginal(k, 1), sim.marginal(k, 0)
    if args.draws:
        d = read_draws(args.draws)
        return EmpiricalMarginal(d.y1), EmpiricalMarginal(d.y0)
    return None


def cmd_bounds(args) -> int:
    config, extra = _load_config(args.config)
    entries = []
    pair = _marginal_pair(args, config, extra)
    if pair is None:
        if args.sigma1 is None or args.sigma0 is None:
            raise CliError("give --sim, --draws, or both --sigma1 and --sigma0")
        entries.append(fh_var_bounds(args.sigma1, args.sigma0).to_dict())
        if args.constraint == "pqd":
            s1, s0 = args.sigma1, args.sigma0
            entries.append({"estimand": "var_tau", "lower": (s1 - s0) ** 2, "upper": s1 * s1 + s0 * s0,
                            "regime": "pqd_constrained", "attaining_copulas": ["comonotone", "independence"]})
        elif args.constraint:
            raise CliError("with --sigma1/--sigma0 only the pqd constraint is available")
    else:
        m1, m0 = pair
        entries.append(fh_var_bounds(m1.sd, m0.sd).to_dict())
        entries.append(fh_pbenefit_bounds(m1.ppf, m0.ppf).to_dict())
        if args.constraint:
            theta = args.theta or ("var_tau" if args.constraint == "pqd" else "pbenefit")
            try:
                entries.append(constrained_bounds(pair, args.constraint, theta, args.mc_n, args.seed).to_dict())
            except ValueError as exc:
                raise CliError(str(exc)) from None
    header = _header(args, config, eps0=None, eps1=None, note="bounds use the supplied marginals as validated")
    doc = {"header": header, "bounds": entries}
    out = _out_dir(args)
    write_json(doc, out / "bounds.json")
    lines = ["| Estimand | Regime | Lower | Upper |", "|---|---|---|---|"]
    for e in entries:
        lines.append(f"| {e['estimand']} | {e['regime']} | {e['lower']} | {e['upper']} |")
    text = "\n".join(lines) + "\n"
    if "markdown" in args.format:
        (out / "bounds.md").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_sensitivity(args) -> int:
    config, extra = _load_config(args.config)
    pair = _marginal_pair(args, config, extra)
    if pair is None:
        raise CliError("give --sim or --draws")
    grid = [float(g) for g in args.grid.split(",")] if args.grid else list(DEFAULT_GRID)
    curve = sensitivity_curve(pair, args.family, grid, args.theta, args.mc_n, args.seed, args.t, args.reference)
    verdict = "copula-robust" if curve.copula_robust else "copula-sensitive"
    header = _header(args, config, eps0=None, eps1=None, copula_dependent=args.theta != "ate")
    doc = {"header": header, "curve": curve.to_dict(), "verdict": verdict}
    out = _out_dir(args)
    if "json" in args.format:
        write_json(doc, out / "sensitivity.json")
    if "csv" in args.format:
        lines = ["parameter,value"] + [f"{p!r},{v!r}" for p, v in curve.csv_rows()]
        (out / "sensitivity.csv").write_text("\n".join(lines) + "\n")
    if "markdown" in args.format:
        md = ["| parameter | value | mc_se |", "|---|---|---|"]
        md += [f"| {p:g} | {v:.6g} | {s:.2g} |" for p, v, s in zip(curve.grid, curve.values, curve.mc_se)]
        md += ["", f"range: {curve.value_range:.6g}; CSI: {curve.csi:.4f}; verdict: {verdict}"]
        (out / "sensitivity.md").write_text("\n".join(md) + "\n")
    print(f"{args.theta} over {args.family} grid: range {curve.value_range:.6g}, CSI {curve.csi:.4f}: {verdict}")
    return 0


def cmd_power(args) -> int:
    n = sample_size(args.level, eps=args.eps, alpha=args.alpha, power=args.power, K=args.K,
                    delta=args.delta, sigma=args.sigma)
    print(n)
    if args.out:
        doc = {"header": {"command": "power", "seed": args.seed, "config_hash": None, "eps0": None, "eps1": None},
               "level": args.level, "eps": args.eps, "alpha": args.alpha, "power": args.power, "K": args.K,
               "delta": args.delta, "sigma": args.sigma, "required_n": n}
        write_json(doc, _out_dir(args) / "power.json")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twincf", description="Twin counterfactual simulation, validation and bounds.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default="out"):
        sp.add_argument("--seed", type=int, default=0, help="random seed (recorded in every report)")
        sp.add_argument("--out", default=out_default, help="output directory")
        sp.add_argument("--format", type=_formats, default=["json", "markdown"],
                        help="comma-separated subset of json,markdown,csv")
        sp.add_argument("--config", help="protocol config JSON")

    sp = sub.add_parser("simulate-world", help="draw a synthetic dataset from a world spec")
    sp.add_argument("--world", required=True)
    sp.add_argument("--n", type=int, required=True)
    common(sp)
    sp.set_defaults(func=cmd_simulate_world)

    sp = sub.add_parser("simulate-twins", help="draw paired potential outcomes for a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--sim", required=True)
    sp.add_argument("--R", type=int, default=20)
    common(sp)
    sp.set_defaults(func=cmd_simulate_twins)

    sp = sub.add_parser("validate", help="run validation levels 0-4 and write the scorecard")
    sp.add_argument("--data", required=True)
    sp.add_argument("--draws")
    sp.add_argument("--sim")
    sp.add_argument("--R", type=int, default=None, help="replicates when simulating (default from config)")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("estimate", help="compute estimands with bounds for coupling-dependent ones")
    sp.add_argument("--data")
    sp.add_argument("--draws")
    sp.add_argument("--sim")
    sp.add_argument("--R", type=int, default=None)
    sp.add_argument("--estimands", default="", help="comma-separated names; empty runs the full catalog")
    sp.add_argument("--q-grid", default="0.1,0.25,0.5,0.75,0.9")
    sp.add_argument("--gates-j", type=int, default=5)
    sp.add_argument("--coordinate", type=int, default=0)
    sp.add_argument("--t-star", type=float, default=None)
    sp.add_argument("--m-value", type=float, default=None)
    sp.add_argument("--regimes", default=None, help="e.g. '1,1,0;0,0,0'")
    common(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("bounds", help="Frechet-Hoeffding and constrained bounds")
    sp.add_argument("--sim")
    sp.add_argument("--draws")
    sp.add_argument("--data")
    sp.add_argument("--sigma1", type=float)
    sp.add_argument("--sigma0", type=float)
    sp.add_argument("--stratum", type=int, default=0)
    sp.add_argument("--constraint", choices=("pqd", "monotone", "rank_invariance"))
    sp.add_argument("--theta", help="functional for --constraint (default var_tau for pqd, else pbenefit)")
    sp.add_argument("--mc-n", type=int, default=100_000)
    common(sp)
    sp.set_defaults(func=cmd_bounds)

    sp = sub.add_parser("sensitivity", help="copula sensitivity curve for one functional")
    sp.add_argument("--sim")
    sp.add_argument("--draws")
    sp.add_argument("--data")
    sp.add_argument("--stratum", type=int, default=0)
    sp.add_argument("--theta", default="var_tau", choices=("ate", "var_tau", "pbenefit", "pharm", "g_tau_at_t"))
    sp.add_argument("--family", default="gaussian", choices=("gaussian", "frank", "clayton"))
    sp.add_argument("--grid", default=None, help="comma-separated parameters")
    sp.add_argument("--t", type=float, default=0.0)
    sp.add_argument("--reference", type=float, default=None)
    sp.add_argument("--mc-n", type=int, default=100_000)
    common(sp)
    sp.set_defaults(func=cmd_sensitivity)

    sp = sub.add_parser("power", help="required sample size")
    sp.add_argument("--level", type=int, choices=(0, 1, 3), required=True)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--power", type=float, default=0.8)
    sp.add_argument("--K", type=int, default=1)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_power)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, FormatError, SpecError, CannotValidateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
