"""Command line entry point: ``orbistab {design,analyze,gains,simulate,report}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure. Errors are printed to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import ConfigError, OrbistabError
from .pipeline import (PipelineConfig, analyze, choose_gains, design_orbit, ltv_sim_config, matched_disturbance,
                       nonlinear_sim_config)
from .sim import OrbitDistance, b_zero_mask, random_ball, random_tube_start, simulate_ltv_batch, simulate_nonlinear

log = logging.getLogger("orbistab")


def _setup_logging():
    level = os.environ.get("ORBISTAB_LOG", "WARNING").upper()
    if level.isdigit():
        lvl = int(level)
    else:
        lvl = getattr(logging, level, None)
        if not isinstance(lvl, int):
            raise ConfigError(f"ORBISTAB_LOG={level!r} is not a logging level")
    logging.basicConfig(level=lvl, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _load_config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    data = cfg.data
    if args.model:
        data["model"]["key"] = args.model
        if not args.config:
            cfg = PipelineConfig({"model": {"key": args.model}})
            data = cfg.data
    if args.seed is not None:
        if not 0 <= args.seed < 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        data["seed"] = args.seed
    if args.out:
        data["out"] = args.out
    return cfg


# artifact writers --------------------------------------------------------

def _write_design(d, out):
    io.write_csv(out / "orbit.csv", "orbit", io.orbit_columns(d.orbit))
    io.write_csv(out / "curve.csv", "curve", io.curve_columns(d.curve))
    # the output location is excluded so relocated reruns compare equal
    config = {k: v for k, v in d.config.data.items() if k != "out"}
    doc = {"config": config, "orbit": d.summary()["orbit"],
           "constraint_residuals": list(d.orbit.constraint_residuals())}
    io.write_json(out / "design.json", doc, "design")


def _write_analysis(d, out):
    io.write_csv(out / "linearization.csv", "linearization", io.linearization_columns(d.lin))
    io.write_json(out / "linearization.json", d.lin.meta, "linearization")
    io.write_csv(out / "normal.csv", "normal", io.normal_columns(d.sub))
    s = d.summary()
    doc = {"floquet": s["floquet"], "b_zeros": s["b_zeros"], "max_abs_b": d.sub.max_abs_b,
           "warnings": list(d.mono.warnings)}
    io.write_json(out / "floquet.json", doc, "floquet")


def _write_gains(d, out):
    io.write_json(out / "gains.json", d.smc.as_dict(), "gains")


def _report_text(d, sim_summary=None):
    s = d.summary()
    lines = [f"model: {s['model']}"]
    if "orbit" in s:
        o = s["orbit"]
        lines += [f"orbit period: {o['period']:.10g} s", f"closure error: {o['closure_error']:.3e}",
                  f"phi range: [{o['phi_range'][0]:.6g}, {o['phi_range'][1]:.6g}]",
                  f"max |dphi|: {o['max_abs_dphi']:.6g} rad/s, max |dtheta|: {o['max_abs_dtheta']:.6g} rad/s"]
    if "pfl" in s:
        lines.append(f"PFL gains nu1={s['pfl']['nu1']:g} nu2={s['pfl']['nu2']:g}, certified alpha={s['pfl']['alpha']:.10g}")
    if "floquet" in s:
        lines.append("Floquet multipliers:")
        for (re, im), m in zip(s["floquet"]["multipliers"], s["floquet"]["moduli"]):
            lines.append(f"  {re: .12e} {im:+.12e}i   |mu| = {m:.12e}")
        lines.append(f"stable multipliers: {s['floquet']['stable_count']}, unit multipliers: {s['floquet']['unit_count']}")
    if "b_zeros" in s:
        zs = ", ".join(f"{z['tau']:.6f} (slope {z['slope']:+.4g})" for z in s["b_zeros"]) or "none"
        lines.append(f"b zeros: {zs}")
    if "smc" in s:
        g = s["smc"]
        lines += [f"k2 lower bound: {g['k2_lower_bound']:.10g}",
                  f"SMC gains k1={g['k1']:g} k2={g['k2']:.10g} eps_sigma={g['eps_sigma']:g} (margin {g['margin']:.6g})"]
    if sim_summary:
        for kind in ("ltv", "nonlinear"):
            if kind in sim_summary:
                agg = sim_summary[kind]["aggregate"]
                lines.append(f"{kind} runs: {agg['runs']}; " + ", ".join(
                    f"{k}={v:.6g}" for k, v in sorted(agg.items()) if isinstance(v, float)))
    return "\n".join(lines) + "\n"


def _stats(values):
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if not len(v):
        return None, None
    return float(v.max()), float(v.mean())


def _run_ltv(d, out, n_runs, rng):
    cfg = d.config
    sc = ltv_sim_config(cfg)
    s = cfg["sim"]["ltv"]
    X = random_ball(rng, n_runs, s["xi_max"])
    batch = simulate_ltv_batch(d.lin, d.sub, d.smc.gains, X, sc, steps_per_period=s["steps_per_period"])
    runs = []
    for i in range(n_runs):
        tr = batch.trace(i)
        io.write_csv(out / "traces" / f"ltv_{i:03d}.csv", "ltv_trace", tr.columns())
        m = dict(tr.metrics)
        m["xi0"] = X[i]
        m["initial_norm"] = float(np.linalg.norm(X[i]))
        m["final_norm_ratio"] = m["final_norm"] / max(m["initial_norm"], 1e-300)
        runs.append(m)
    ratios = [r for m in runs for r in m["contraction_per_period"]]
    rmax, rmean = _stats([m["reaching_time"] for m in runs])
    fmax, fmean = _stats([m["final_norm_ratio"] for m in runs])
    agg = {"runs": n_runs, "reaching_time_max": rmax, "reaching_time_mean": rmean,
           "final_norm_ratio_max": fmax, "final_norm_ratio_mean": fmean,
           "contraction_ratio_max": _stats(ratios)[0], "contraction_ratio_count": len(ratios),
           "tau0": batch.meta["tau0"], "T_tau": batch.meta["T_tau"]}
    return {"runs": runs, "aggregate": agg}, batch


def _run_nonlinear(d, out, rng):
    cfg = d.config
    s = cfg["sim"]["nonlinear"]
    dist_fn = matched_disturbance(d, s["disturbance_fraction"], s["disturbance_omega"])
    sc = nonlinear_sim_config(cfg, dist_fn)
    od = OrbitDistance(d.orbit)
    runs, traces = [], []
    for i in range(s["runs"]):
        x0 = d.orbit.state_at(0.0) if s["on_orbit"] else random_tube_start(d.chart, rng, s["xi_norm"])
        tr = simulate_nonlinear(d.model, d.curve, d.pfl, d.chart, d.sub, d.smc.gains, x0, sc, distance=od)
        io.write_csv(out / "traces" / f"nonlinear_{i:03d}.csv", "nonlinear_trace", tr.columns())
        m = dict(tr.metrics)
        post = (tr.t >= d.orbit.T) & ~b_zero_mask(tr.b, d.sub.max_abs_b)
        m["post_transient_max_abs_s"] = float(np.max(np.abs(tr.s[post]))) if post.any() else None
        m["x0"] = x0
        runs.append(m)
        traces.append(tr)
    agg = {"runs": len(runs),
           "orbital_dist_max": _stats([m["orbital_dist_max"] for m in runs])[0],
           "orbital_dist_final_max": _stats([m["orbital_dist_final"] for m in runs])[0],
           "disturbance_amplitude": 0.0 if dist_fn is None else dist_fn.amplitude}
    return {"runs": runs, "aggregate": agg}, traces


def _simulate(d, out, monte_carlo, plots):
    cfg = d.config
    rng = np.random.default_rng(cfg["seed"])
    summary = {}
    batch = traces = None
    if cfg["sim"]["ltv"]["enabled"]:
        n = monte_carlo if monte_carlo else cfg["sim"]["ltv"]["runs"]
        summary["ltv"], batch = _run_ltv(d, out, n, rng)
    if cfg["sim"]["nonlinear"]["enabled"]:
        summary["nonlinear"], traces = _run_nonlinear(d, out, rng)
    io.write_json(out / "summary.json", summary, "summary")
    if monte_carlo:
        io.write_json(out / "aggregate.json", summary["ltv"]["aggregate"], "aggregate")
    if plots:
        _plots(d, out, batch, traces)
    return summary


def _plots(d, out, batch=None, traces=None):
    from . import plotting
    from .pfl import certify_p
    p = out / "plots"
    plotting.plot_orbit(d.orbit, p / "orbit.svg")
    if d.sub is not None:
        plotting.plot_normal(d.sub, p / "normal.svg")
    if batch is not None:
        plotting.plot_transverse(batch.trace(0), p / "ltv_transverse.svg", d.sub.max_abs_b)
    if traces:
        plotting.plot_transverse(traces[0], p / "nonlinear_transverse.svg", d.sub.max_abs_b)
        plotting.plot_distance(traces[0], p / "nonlinear_distance.svg", certify_p(d.pfl)[1])


# commands ----------------------------------------------------------------

def cmd_design(cfg, args):
    out = Path(cfg["out"])
    d = design_orbit(cfg)
    _write_design(d, out)
    if args.plots:
        _plots(d, out)
    return d


def cmd_analyze(cfg, args):
    out = Path(cfg["out"])
    d = analyze(design_orbit(cfg))
    _write_design(d, out)
    _write_analysis(d, out)
    choose_gains(d)
    (out / "report.txt").write_text(_report_text(d))
    if args.plots:
        _plots(d, out)
    return d


def cmd_gains(cfg, args):
    out = Path(cfg["out"])
    d = choose_gains(analyze(design_orbit(cfg)))
    _write_gains(d, out)
    print(json.dumps(io._clean(d.smc.as_dict()), sort_keys=True))
    return d


def cmd_simulate(cfg, args):
    out = Path(cfg["out"])
    d = choose_gains(analyze(design_orbit(cfg)))
    _write_gains(d, out)
    _simulate(d, out, args.monte_carlo, args.plots)
    return d


def cmd_report(cfg, args):
    out = Path(cfg["out"])
    d = choose_gains(analyze(design_orbit(cfg)))
    _write_design(d, out)
    _write_analysis(d, out)
    _write_gains(d, out)
    summary = _simulate(d, out, args.monte_carlo, True)
    (out / "report.txt").write_text(_report_text(d, summary))
    return d


COMMANDS = {"design": cmd_design, "analyze": cmd_analyze, "gains": cmd_gains, "simulate": cmd_simulate,
            "report": cmd_report}


def build_parser():
    ap = argparse.ArgumentParser(prog="orbistab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", help="JSON pipeline config (defaults are used for missing keys)")
        p.add_argument("--model", help="shipped model key, overrides the config")
        p.add_argument("--out", help="output directory (default from config: out)")
        p.add_argument("--seed", type=int, help="seed for sampled initial conditions")
        p.add_argument("--monte-carlo", type=int, default=0, metavar="N", help="number of random LTV runs")
        p.add_argument("--plots", action="store_true", help="write SVG quick-look plots")
    return ap


cmd_design.__doc__ = "solve the constraint and the reduced dynamics; write the orbit"
cmd_analyze.__doc__ = "transverse linearization, Floquet analysis, stable normal and b-zeros"
cmd_gains.__doc__ = "validate k2 against its lower bound (or pick it with k2 = 'auto')"
cmd_simulate.__doc__ = "closed-loop LTV and nonlinear simulations"
cmd_report.__doc__ = "everything above plus plots and a text report"


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.monte_carlo < 0:
            raise ConfigError("--monte-carlo must be non-negative")
        cfg = _load_config(args)
        COMMANDS[args.command](cfg, args)
    except OrbistabError as exc:
        _fail(exc, exc.exit_code)
        return exc.exit_code
    return 0


def _fail(exc, code):
    msg = {"error": type(exc).__name__, "exit_code": code, "detail": str(exc)}
    print(json.dumps(msg), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
