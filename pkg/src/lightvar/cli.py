"""Command-line front end.

Every subcommand writes its outputs and a ``manifest.json`` (inputs,
thresholds in effect, versions, internal checks, exit status) into the
output directory. The exit status is 0 only when every internal check
passes, 1 when a check fails and 2 on a precondition failure, which is
also reported as a one-line ``error [category]: message`` on stderr.
"""

import argparse
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .checks import COMPONENTS, adjoint_suite
from .covariance import ForecastPairSet, gaussian_vertical_covariance, nmc_vertical_covariance
from .errors import ConfigError, LightvarError
from .fileio import (ExperimentConfig, read_column, read_container, read_covariance,
                     read_grid_state, read_observations, write_container,
                     write_covariance, write_cvt, write_grid_state, write_observations,
                     write_pseudo_observations)
from .obs_operator import (alpha_linearity_test, extended_flash_rate,
                           flash_rate_from_cape, updraft_bracket)
from .osse import OsseScenario, generate_osse, unstable_fraction
from .soundings import make_sounding
from .thermo import G, compute_cape
from .toy_model import GridState, integrate
from .var1d import (LightningObservation, batch_retrieve, qc_filter,
                    retrieve_column, write_summary_table)
from .var_nd import (SCHEMES, AssimilationWindow, analyze_3dvar_direct, analyze_3dvar_pseudo,
                     analyze_4dvar, cycle)
from .verify import ScoreSeries, innovation_stats, regrid_average, rmse, write_scores

OUT_ENV = "LIGHTVAR_OUT"
DEFAULT_OUT_ROOT = "lightvar-runs"
ADJOINT_TOL = 1e-10
ALPHAS = 10.0 ** np.arange(-10.0, 0.01, 0.5)


@dataclass
class Run:
    """Bookkeeping for one subcommand invocation."""

    command: str
    out: Path
    config: ExperimentConfig
    seed: int
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    checks: Dict[str, dict] = field(default_factory=dict)
    results: Dict[str, object] = field(default_factory=dict)

    def path(self, name) -> Path:
        p = self.out / name
        self.outputs.append(str(name))
        return p

    def check(self, name, value, passed, threshold=None):
        self.checks[name] = {"value": _jsonable(value), "threshold": _jsonable(threshold),
                             "passed": bool(passed)}

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.checks.values())


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not np.isfinite(v):
        return str(v)
    return v


# ------------------------------------------------------------------ inputs


@dataclass
class Scenario:
    background: GridState
    observations: List[LightningObservation]
    bcov: object
    truth: List[GridState]
    samples: Optional[np.ndarray] = None


def _scenario(args, run: Run) -> Scenario:
    """Scenario files from ``--scenario`` or a fresh one from config and seed."""
    if args.scenario:
        d = Path(args.scenario)
        if not d.is_dir():
            raise ConfigError(f"scenario directory {d} does not exist")
        run.inputs["scenario"] = str(d)
        truth = [read_grid_state(p) for p in sorted(d.glob("truth_h*.lvb"))]
        samples = None
        if (d / "nmc_samples.lvb").exists():
            samples = read_container(d / "nmc_samples.lvb", "nmc")[1]["samples"]
        return Scenario(read_grid_state(d / "background.lvb"),
                        read_observations(d / "obs.csv", run.config.sigma0),
                        read_covariance(d / "bcov.lvb"), truth, samples)
    run.inputs["scenario"] = f"generated (seed {run.seed})"
    sc = generate_osse(run.config.osse_spec(run.seed), run.config.operator_params())
    return _from_osse(sc, run.config.sigma0)


def _from_osse(sc: OsseScenario, sigma0: float) -> Scenario:
    obs = [LightningObservation(o.cell, o.flash_rate, o.time, sigma0) for o in sc.observations]
    return Scenario(sc.background, obs, nmc_vertical_covariance(sc.forecast_pairs),
                    list(sc.truth), sc.forecast_pairs.samples)


def _column(args, run: Run):
    if args.column:
        run.inputs["column"] = args.column
        return read_column(args.column)
    run.inputs["column"] = f"idealized sounding t_sfc={args.t_sfc} rh_sfc={args.rh_sfc}"
    return make_sounding(t_sfc=args.t_sfc, rh_sfc=args.rh_sfc)


def _obs_at_hour(obs, hour):
    return [o for o in obs if abs(o.time - 60.0 * hour) < 1e-9]


# ------------------------------------------------------------------ subcommands


def cmd_cape(args, run: Run):
    col = _column(args, run)
    d = compute_cape(col)
    run.results.update(cape=d.cape, lcl_index=d.lcl_index, lfc_index=d.lfc_index,
                       el_index=d.el_index, lcl_pressure=d.lcl_pressure)
    print(f"CAPE {d.cape:.3f} J/kg  LCL {d.lcl_index}  LFC {d.lfc_index}  EL {d.el_index}")
    # the reported value must equal the discrete integral it claims to be
    z = col.geopotential_height
    recomputed = 0.0
    if d.lfc_index is not None:
        for k in range(d.lfc_index, d.el_index):
            b0, b1 = max(d.buoyancy[k], 0.0), max(d.buoyancy[k + 1], 0.0)
            recomputed += 0.5 * G * (b0 + b1) * (z[k + 1] - z[k])
    gap = abs(recomputed - d.cape) / max(d.cape, 1.0)
    run.check("integral_consistency", gap, gap <= 1e-9, 1e-9)
    ordered = d.lfc_index is None or d.lcl_index <= d.lfc_index < d.el_index
    run.check("level_ordering", ordered, ordered)
    with open(run.path("parcel.csv"), "w") as fh:
        fh.write("level,height_m,parcel_temperature_k,buoyancy,positive\n")
        for k in range(col.n_levels):
            fh.write(f"{k},{z[k]!r},{float(d.parcel_temperature[k])!r},"
                     f"{float(d.buoyancy[k])!r},{int(d.positive_mask[k])}\n")


def cmd_flashrate(args, run: Run):
    params = run.config.operator_params()
    if args.column:
        capes = [compute_cape(_column(args, run)).cape]
    elif args.cape:
        capes = list(args.cape)
        run.inputs["cape"] = capes
    else:
        raise ConfigError("give --cape values or a --column file")
    rates = [flash_rate_from_cape(c, params) for c in capes]
    with open(run.path("flashrate.csv"), "w") as fh:
        fh.write("cape,flash_rate\n")
        for c, r in zip(capes, rates):
            fh.write(f"{c!r},{r!r}\n")
            print(f"CAPE {c:.3f} J/kg -> {r:.6g} flashes (9 km)^-2 min^-1")
    run.results["flash_rate"] = rates
    at_min = flash_rate_from_cape(params.cape_min, params)
    bracket = abs(updraft_bracket(params.cape_min, params))
    run.check("zero_rate_at_cape_min", at_min, at_min <= 1e-12, 1e-12)
    run.check("bracket_zero_at_cape_min", bracket, bracket <= 1e-3, 1e-3)
    gap = abs(params.bracket_zero - params.cape_min)
    run.check("cape_min_self_consistency", gap, gap <= 1e-3, 1e-3)


def cmd_alpha_test(args, run: Run):
    col = _column(args, run)
    params = run.config.operator_params()
    if args.amplitude is not None:
        z = col.geopotential_height
        dt = np.exp(-z / 3000.0)
        dt *= args.amplitude / np.linalg.norm(dt)
        kind = f"surface-weighted perturbation, |dT| = {args.amplitude} K"
    else:
        bcov = gaussian_vertical_covariance(col.geopotential_height, 2.0, 1500.0, 0.05)
        h_b, _ = extended_flash_rate(col, params)
        obs = LightningObservation((0, 0), h_b + args.delta_flash, sigma0=run.config.sigma0)
        r = retrieve_column(col, obs, bcov, params, run.config.retrieval_config())
        if r.minimize_report is None or not r.minimize_report.converged:
            raise ConfigError(f"the retrieval used to build the increment ended {r.qc_status}")
        dt = r.temperature_increment
        kind = f"converged retrieval increment for +{args.delta_flash} flashes"
    res = alpha_linearity_test(col, dt, ALPHAS, params)
    res.write(run.path("alpha_test.csv"))
    run.results.update(direction=kind, increment_norm=float(np.linalg.norm(dt)),
                       min_log10=float(np.min(res.log10_error)),
                       log10_at_1=float(res.log10_error[-1]))
    print(f"{kind}; |dT| = {np.linalg.norm(dt):.3f} K")
    for a, e in zip(res.alphas, res.log10_error):
        print(f"  alpha {a:9.2e}  log10|1-F| {e:7.3f}")
    if args.amplitude is not None and args.amplitude >= 14.0:
        run.check("nonlinear_at_alpha_1", res.log10_error[-1], res.log10_error[-1] >= -1.0, -1.0)
    elif args.amplitude is None:
        m = float(np.min(res.log10_error))
        run.check("linear_regime_reached", m, m <= -3.0, -3.0)


def cmd_adjoint_check(args, run: Run):
    comps = COMPONENTS if args.component == "all" else (args.component,)
    errors = adjoint_suite(comps, args.cases, run.seed, run.config.operator_params())
    for name, errs in errors.items():
        worst = max(errs) if errs else float("nan")
        print(f"{name:8s} cases {len(errs):4d}  max relative dot-product error {worst:.3e}")
        run.check(f"adjoint_{name}", worst, bool(errs) and worst <= ADJOINT_TOL, ADJOINT_TOL)
        run.results[name] = {"cases": len(errs), "max_error": worst}


def cmd_nmc_stats(args, run: Run):
    if args.samples:
        run.inputs["samples"] = args.samples
        samples = np.loadtxt(args.samples, delimiter=",", ndmin=2)
    else:
        samples = _scenario(args, run).samples
        if samples is None:
            raise ConfigError("the scenario has no NMC samples; pass --samples")
    bcov = nmc_vertical_covariance(ForecastPairSet(samples))
    cvt = run.config.cvt(bcov)
    write_covariance(run.path("bcov.lvb"), bcov)
    write_cvt(run.path("cvt.lvb"), cvt)
    bcov.write_correlation(run.path("correlation.csv"))
    np.savetxt(run.path("eigenvalues.csv"), bcov.eigenvalues, delimiter=",", fmt="%.12e")
    corr = bcov.correlation
    diag_gap = float(np.max(np.abs(np.diag(corr) - 1.0)))
    run.check("unit_diagonal", diag_gap, diag_gap <= 1e-12, 1e-12)
    run.check("correlation_bounded", float(np.max(np.abs(corr))), np.all(np.abs(corr) <= 1.0), 1.0)
    w = np.linalg.eigvalsh(bcov.matrix)
    run.check("positive_semidefinite", float(w.min()), w.min() >= -1e-10 * max(w.max(), 1e-300))
    run.results.update(samples=int(samples.shape[0]), n_levels=bcov.n_levels,
                       n_modes=cvt.n_modes, std_k=np.sqrt(np.diag(bcov.matrix)).tolist())
    print(f"{samples.shape[0]} samples, {bcov.n_levels} levels, {cvt.n_modes} EOF modes kept")


def cmd_retrieve(args, run: Run):
    sc = _scenario(args, run)
    obs = _obs_at_hour(sc.observations, args.hour)
    bg = sc.background if args.hour == 0 else _advance(sc.background, args.hour, run.config)
    cfg = run.config.retrieval_config()
    results, summary = batch_retrieve(bg, obs, sc.bcov, run.config.operator_params(), cfg,
                                      threads=args.threads)
    write_summary_table(results, run.path("summary.csv"))
    pseudo = qc_filter(results, cfg.pseudo_obs_std, cfg.min_improvement)
    paths = write_pseudo_observations(run.out / "columns", list(pseudo.values()), bg)
    run.outputs.extend(str(p.relative_to(run.out)) for p in paths)
    traces = run.out / "traces"
    traces.mkdir(exist_ok=True)
    for r in results:
        if r.minimize_report is not None:
            i, j = r.cell
            name = f"traces/trace_{i}_{j}.csv"
            r.minimize_report.write_trace(run.path(name))
    run.results.update(counts=summary.counts, innovation_before_max=summary.innovation_before_max,
                       innovation_after_max=summary.innovation_after_max,
                       reduction_factor=summary.max_reduction_factor)
    total = sum(summary.counts.values())
    run.check("outcome_accounting", total, total == len(obs), len(obs))
    bad = [r.cell for r in results if r.accepted and (
        r.h_analysis - r.h_background < cfg.min_improvement or not r.minimize_report.converged)]
    run.check("accepted_pass_qc", len(bad), not bad, 0)
    print(" ".join(f"{k}={v}" for k, v in summary.counts.items() if v))
    if summary.max_reduction_factor:
        print(f"max innovation {summary.innovation_before_max:.3f} -> "
              f"{summary.innovation_after_max:.3f}")


def _advance(state, hours, config: ExperimentConfig):
    model = config.model()
    return integrate(state, int(round(hours * model.steps_per_hour)), model)[-1]


def cmd_assimilate(args, run: Run):
    sc = _scenario(args, run)
    scheme = args.scheme or run.config["scheme"]["name"]
    cfg = run.config
    params = cfg.operator_params()
    cvt = cfg.cvt(sc.bcov)
    settings = cfg.cycle_settings(args.threads)
    obs0 = _obs_at_hour(sc.observations, 0)
    if scheme == "3dvar_direct":
        result = analyze_3dvar_direct(sc.background, obs0, cvt, params,
                                      settings.innovation_cap, settings.analysis)
        presented = len(obs0)
    elif scheme == "1d3dvar":
        results, _ = batch_retrieve(sc.background, obs0, sc.bcov, params, settings.retrieval,
                                    threads=args.threads)
        pseudo = qc_filter(results, settings.pseudo_obs_std, settings.retrieval.min_improvement)
        result = analyze_3dvar_pseudo(sc.background, pseudo, cvt, settings.analysis)
        presented = len(pseudo)
    else:
        slots, bg = [], sc.background
        for k in range(settings.window_slots):
            if k:
                bg = _advance(bg, settings.cycle_hours, cfg)
            results, _ = batch_retrieve(bg, _obs_at_hour(sc.observations, k * settings.cycle_hours),
                                        sc.bcov, params, settings.retrieval, threads=args.threads)
            slots.append(list(qc_filter(results, settings.pseudo_obs_std,
                                        settings.retrieval.min_improvement).values()))
        model = cfg.model()
        window = AssimilationWindow(slots, model, 0.0,
                                    int(round(settings.cycle_hours * model.steps_per_hour)))
        result = analyze_4dvar(sc.background, window, cvt, params=params, config=settings.analysis)
        presented = sum(len(s) for s in slots)
    write_grid_state(run.path("analysis.lvb"), result.analysis)
    write_container(run.path("increment.lvb"), "incr", {"temperature": result.increment})
    with open(run.path("cost_history.csv"), "w") as fh:
        fh.write("iter,cost\n")
        for k, c in enumerate(result.cost_history):
            fh.write(f"{k},{c!r}\n")
    _write_innovations(run.path("innovation_stats.csv"), result)
    hist = result.cost_history
    ok = not hist or hist[-1] <= hist[0]
    run.check("cost_not_increased", hist[-1] if hist else None, ok)
    accounted = sum(result.exclusions.values())
    run.check("exclusion_accounting", accounted, accounted == presented, presented)
    run.results.update(scheme=scheme, status=result.status, exclusions=result.exclusions,
                       iterations=len(hist) - 1 if hist else 0,
                       max_increment_k=float(np.max(np.abs(result.increment))))
    print(f"{scheme}: {result.status}, {len(hist)} cost evaluations recorded, "
          f"max |increment| {np.max(np.abs(result.increment)):.3f} K")


def _write_innovations(path, result):
    with open(path, "w") as fh:
        fh.write("stage,count,max,mean\n")
        for stage, s in (("before", result.innovation_before), ("after", result.innovation_after)):
            fh.write(f"{stage},{s.count},{s.max!r},{s.mean!r}\n")


def cmd_cycle(args, run: Run):
    sc = _scenario(args, run)
    cfg = run.config
    scheme = args.scheme or cfg["scheme"]["name"]
    n_cycles = args.cycles or cfg["scheme"]["n_cycles"]
    settings = cfg.cycle_settings(args.threads)
    out = cycle(sc.background, sc.observations, scheme, n_cycles, cfg.cvt(sc.bcov), sc.bcov,
                cfg.model(), cfg.operator_params(), settings,
                forecast_hours=cfg["scheme"]["forecast_hours"])
    series = ScoreSeries(scheme)
    free = ScoreSeries("free")
    state = sc.background
    hours = out.hours
    window_better = []
    for k, rec in enumerate(out.records):
        if k:
            state = _advance(state, hours[k] - hours[k - 1], cfg)
        write_grid_state(run.path(f"analysis_h{int(rec.hour):02d}.lvb"), rec.analysis)
        truth_k = int(round(rec.hour))
        if truth_k < len(sc.truth):
            a = rmse(rec.analysis.temperature, sc.truth[truth_k].temperature)
            f = rmse(state.temperature, sc.truth[truth_k].temperature)
            series.append(rec.hour, a)
            free.append(rec.hour, f)
            window_better.append((a, f))
            print(f"hour {rec.hour:4.1f}  analysis RMSE {a:.4f}  free RMSE {f:.4f}  {rec.note}")
    write_scores([free, series], run.path("scores.csv"))
    run.results.update(scheme=scheme, n_cycles=n_cycles,
                       notes=[r.note for r in out.records])
    if window_better:
        a_mean = float(np.mean([a for a, _ in window_better]))
        f_mean = float(np.mean([f for _, f in window_better]))
        run.results.update(analysis_rmse_mean=a_mean, free_rmse_mean=f_mean)
        run.check("analysis_beats_free_run", a_mean, a_mean < f_mean, f_mean)
    else:
        print("no truth available for these times; skill not scored")


def cmd_verify(args, run: Run):
    field_state = read_grid_state(args.field)
    run.inputs["field"] = args.field
    if args.truth:
        truth = read_grid_state(args.truth)
        run.inputs["truth"] = args.truth
        a, b = field_state.temperature, truth.temperature
        if args.level is not None:
            a, b = a[:, :, args.level], b[:, :, args.level]
            if args.factor > 1:
                a, b = regrid_average(a, args.factor), regrid_average(b, args.factor)
        value = rmse(a, b)
        s = ScoreSeries(args.label)
        s.append(args.time, value)
        s.write(run.path("scores.csv"))
        run.results["rmse"] = value
        print(f"RMSE {value:.6f} K")
    if args.obs:
        run.inputs["obs"] = args.obs
        params = run.config.operator_params()
        obs = read_observations(args.obs, run.config.sigma0)
        hx = [extended_flash_rate(field_state.column(*o.cell), params)[0] for o in obs]
        stats = innovation_stats([o.flash_rate for o in obs], hx)
        with open(run.path("innovation_histogram.csv"), "w") as fh:
            fh.write("bin_lo,bin_hi,count\n")
            for lo, hi, n in zip(stats.bin_edges[:-1], stats.bin_edges[1:], stats.histogram):
                fh.write(f"{lo!r},{hi!r},{int(n)}\n")
        run.results.update(innovation_count=stats.count, innovation_max=stats.max,
                           innovation_mean=stats.mean)
        print(f"{stats.count} innovations, max {stats.max}, mean {stats.mean}")
    if not (args.truth or args.obs):
        raise ConfigError("give --truth and/or --obs to verify against")


def cmd_gen_osse(args, run: Run):
    spec = run.config.osse_spec(run.seed)
    sc = generate_osse(spec, run.config.operator_params())
    for k, state in enumerate(sc.truth):
        write_grid_state(run.path(f"truth_h{k:02d}.lvb"), state)
    write_grid_state(run.path("background.lvb"), sc.background)
    write_observations(run.path("obs.csv"), sc.observations)
    write_covariance(run.path("bcov.lvb"), nmc_vertical_covariance(sc.forecast_pairs))
    write_container(run.path("nmc_samples.lvb"), "nmc", {"samples": sc.forecast_pairs.samples})
    run.path("scenario.ini").write_text(run.config.to_text())
    frac = unstable_fraction(sc.truth[0], run.config.operator_params())
    target = spec.unstable_fraction
    run.check("unstable_fraction", frac, abs(frac - target) <= 0.05 * max(target, 1e-12), target)
    run.results.update(unstable_fraction=frac, n_observations=len(sc.observations),
                       n_truth_states=len(sc.truth))
    print(f"truth states {len(sc.truth)}, observations {len(sc.observations)}, "
          f"unstable fraction {frac:.4f} (target {target})")


# ------------------------------------------------------------------ parser


def _column_flags(p):
    p.add_argument("--column", help="column file (pressure_pa, temperature_k, ...)")
    p.add_argument("--t-sfc", type=float, default=300.0,
                   help="surface temperature of the idealized sounding used without --column")
    p.add_argument("--rh-sfc", type=float, default=0.75)


def _scenario_flag(p):
    p.add_argument("--scenario", help="directory written by gen-osse; generated from "
                                      "--config and --seed when omitted")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (INI)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or "
                                      f"./{DEFAULT_OUT_ROOT}, then <command>-seed<N>)")
    common.add_argument("--threads", type=int, default=1)

    parser = argparse.ArgumentParser(prog="lightvar", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"lightvar {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cape", parents=[common], help="surface-parcel CAPE of a column")
    _column_flags(p)
    p.set_defaults(func=cmd_cape)

    p = sub.add_parser("flashrate", parents=[common], help="flash rate from CAPE")
    p.add_argument("--cape", type=float, nargs="+")
    _column_flags(p)
    p.set_defaults(func=cmd_flashrate)

    p = sub.add_parser("alpha-test", parents=[common], help="operator linearity test")
    _column_flags(p)
    p.add_argument("--amplitude", type=float,
                   help="norm (K) of a surface-weighted perturbation; default is a "
                        "converged 1D-VAR increment")
    p.add_argument("--delta-flash", type=float, default=0.5,
                   help="flash-rate excess used to build the retrieval increment")
    p.set_defaults(func=cmd_alpha_test)

    p = sub.add_parser("adjoint-check", parents=[common], help="dot-product adjoint tests")
    p.add_argument("--component", choices=COMPONENTS + ("all",), default="all")
    p.add_argument("--cases", type=int, default=100)
    p.set_defaults(func=cmd_adjoint_check)

    p = sub.add_parser("nmc-stats", parents=[common], help="NMC vertical covariance")
    p.add_argument("--samples", help="CSV of forecast differences, one sample per row")
    _scenario_flag(p)
    p.set_defaults(func=cmd_nmc_stats)

    p = sub.add_parser("retrieve-1dvar", parents=[common], help="batch 1D-VAR retrieval")
    _scenario_flag(p)
    p.add_argument("--hour", type=int, default=0, help="observation hour to retrieve")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("assimilate", parents=[common], help="one analysis")
    _scenario_flag(p)
    p.add_argument("--scheme", choices=SCHEMES)
    p.set_defaults(func=cmd_assimilate)

    p = sub.add_parser("cycle", parents=[common], help="cycled assimilation and scoring")
    _scenario_flag(p)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--cycles", type=int)
    p.set_defaults(func=cmd_cycle)

    p = sub.add_parser("verify", parents=[common], help="RMSE and innovation statistics")
    p.add_argument("--field", required=True, help="grid container to score")
    p.add_argument("--truth", help="grid container of the reference state")
    p.add_argument("--obs", help="observation file for innovation statistics")
    p.add_argument("--level", type=int, help="score one level instead of the whole grid")
    p.add_argument("--factor", type=int, default=1, help="block-average factor (with --level)")
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--label", default="field")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-osse", parents=[common], help="write a synthetic scenario")
    p.set_defaults(func=cmd_gen_osse)
    return parser


def _default_out(args) -> Path:
    root = Path(os.environ.get(OUT_ENV) or DEFAULT_OUT_ROOT)
    name = f"{args.command}-seed{args.seed}"
    if getattr(args, "scheme", None):
        name += f"-{args.scheme}"
    return root / name


def _versions():
    import scipy
    return {"lightvar": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out) if args.out else _default_out(args)
    manifest = {"command": args.command, "argv": argv, "seed": args.seed,
                "versions": _versions()}
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        config = ExperimentConfig.load(args.config) if args.config else ExperimentConfig.defaults()
        out.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, out, config, args.seed)
        if args.config:
            run.inputs["config"] = args.config
        args.func(args, run)
    except (LightvarError, OSError) as exc:
        category = getattr(exc, "category", "io-error")
        print(f"error [{category}]: {exc}", file=sys.stderr)
        manifest.update(status="error", exit_code=2, error={"category": category,
                                                            "message": str(exc)})
        if out.is_dir():
            (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
        return 2

    code = 0 if run.passed else 1
    for name, c in run.checks.items():
        print(f"check {name}: {'pass' if c['passed'] else 'FAIL'} (value {c['value']}"
              + (f", threshold {c['threshold']})" if c["threshold"] is not None else ")"))
    manifest.update(inputs=run.inputs, thresholds=config.as_dict(), outputs=run.outputs,
                    checks=run.checks, results={k: _jsonable(v) for k, v in run.results.items()},
                    status="ok" if code == 0 else "checks_failed", exit_code=code)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_jsonable) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
