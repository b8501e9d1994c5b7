"""Command-line entry point.

Subcommands: ``simulate``, ``sweep``, ``bench`` and ``validate``. Output
goes to ``--out``, else ``$RENDEZVOUS_OUT``, else the scenario's
``run.output_dir``.

Exit codes: 0 mission landed, 1 mission ended in any other phase,
2 configuration or scenario error, 3 safety-monitor trip.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import statistics
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path as FsPath

import numpy as np

from .config import ConfigError, ScenarioConfig, load_scenario, set_option
from .gpr import KernelConfig, benchmark_fit
from .logs import write_csv
from .mission import MissionResult, run_convergence_trial, run_mission
from .numerics import integrate

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_TRIP = 0, 1, 2, 3
OUT_ENV = "RENDEZVOUS_OUT"

SWEEP_COLUMNS = ("run", "seed", "vary_key", "vary_value", "chosen_path", "final_phase", "delivered",
                 "jettisoned", "verdict", "decision_t", "final_rho_d", "secondary_rho_d",
                 "min_energy_margin", "min_E_r", "final_E_r", "safety_trips")
TRACE_COLUMNS = ("run", "seed", "iter", "t", "path", "mu", "sigma")
CONVERGENCE_COLUMNS = ("run", "seed", "floor_iter", "reached_floor")
GP_BENCH_COLUMNS = ("M", "full_median_s", "full_std_s", "dtc_median_s", "dtc_std_s", "ratio")
QUAD_BENCH_COLUMNS = ("T", "value", "exact", "abs_error", "evaluations", "median_s", "std_s")


def _out_dir(arg: str | None, cfg: ScenarioConfig | None = None) -> FsPath:
    if arg:
        return FsPath(arg)
    if os.environ.get(OUT_ENV):
        return FsPath(os.environ[OUT_ENV])
    return FsPath(cfg.run.output_dir if cfg is not None else "runs")


def _parse_value(text: str):
    """JSON scalar if it parses, else the raw string (so ``inf`` and
    ``worst_first`` both work)."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_vary(spec: str) -> tuple[str, list]:
    """``key=a,b,c`` or ``key=lo:hi:n`` (n evenly spaced values)."""
    key, sep, values = spec.partition("=")
    if not sep or not key or not values:
        raise ConfigError(f"--vary expects key=values, got {spec!r}")
    parts = values.split(":")
    if len(parts) == 3:
        try:
            lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"--vary range {values!r}: {exc}") from exc
        if n < 1:
            raise ConfigError(f"--vary range {values!r}: need at least one value")
        return key, [float(v) for v in np.linspace(lo, hi, n)]
    return key, [_parse_value(v) for v in values.split(",")]


def _apply_sets(cfg: ScenarioConfig, sets) -> ScenarioConfig:
    for item in sets or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        cfg = set_option(cfg, key, _parse_value(value))
    return cfg


def _load(args) -> ScenarioConfig:
    return _apply_sets(load_scenario(args.config), getattr(args, "set", None))


def _exit_code(result: MissionResult) -> int:
    if result.safety_trips:
        return EXIT_TRIP
    return EXIT_OK if result.phase == "landed" else EXIT_FAILED


def summarize(result: MissionResult) -> dict:
    d = result.decision
    rho = d.get("rho_d") or {}
    worst = d.get("worst_path")
    return {
        "final_phase": result.phase,
        "delivered": result.delivered,
        "jettisoned": result.log.manifest.get("package_jettisoned", False),
        "chosen_path": result.log.manifest.get("chosen_path"),
        "verdict": result.verdict,
        "decision_t": d.get("t"),
        "final_rho_d": rho.get(str(worst)) if worst is not None else None,
        "secondary_rho_d": d.get("secondary_rho_d"),
        "min_energy_margin": result.min_margin,
        "min_E_r": result.min_E_r,
        "final_E_r": result.log.manifest.get("final_E_r"),
        "safety_trips": result.safety_trips,
    }


def cmd_simulate(args) -> int:
    cfg = _load(args)
    seed = cfg.run.seed if args.seed is None else args.seed
    result = run_mission(cfg, seed)
    out = result.log.write(_out_dir(args.out, cfg))
    s = summarize(result)
    print(f"phase={s['final_phase']} delivered={int(s['delivered'])} verdict={s['verdict']} "
          f"min_margin={s['min_energy_margin']:.1f} trips={s['safety_trips']} -> {out}")
    return _exit_code(result)


def _sweep_mission(job):
    cfg, seed, keep = job
    result = run_mission(cfg, seed)
    return summarize(result), (result.log if keep else None)


def _sweep_convergence(job):
    cfg, seed, _ = job
    return run_convergence_trial(cfg, seed), None


def floor_iteration(sigma: np.ndarray, lam: float, factor: float = 1.5) -> int | None:
    """First iteration at which every path's proposal spread is within
    ``factor * lam``; None if never."""
    hit = np.all(sigma <= factor * lam, axis=1)
    idx = np.flatnonzero(hit)
    return int(idx[0]) if idx.size else None


def _map(fn, jobs, workers: int):
    if workers <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if args.runs < 1:
        raise ConfigError("--runs must be at least 1")
    seed0 = cfg.run.seed if args.seed is None else args.seed
    if args.vary:
        key, values = parse_vary(args.vary)
        variants = [(key, v, set_option(cfg, key, v)) for v in values]
    else:
        variants = [("", "", cfg)]
    out = _out_dir(args.out, cfg)
    os.makedirs(out, exist_ok=True)
    jobs, labels = [], []
    for key, value, variant in variants:
        for i in range(args.runs):
            jobs.append((variant, seed0 + i, args.keep_logs))
            labels.append((key, value, seed0 + i))

    if cfg.run.mode == "convergence":
        trials = _map(_sweep_convergence, jobs, args.jobs)
        trace, summary = [], []
        for run, ((key, value, seed), (trial, _)) in enumerate(zip(labels, trials)):
            for it, (t, mu, sigma) in enumerate(zip(trial["t"], trial["mu"], trial["sigma"])):
                for k in range(len(mu)):
                    trace.append({"run": run, "seed": seed, "iter": it, "t": float(t), "path": k,
                                  "mu": float(mu[k]), "sigma": float(sigma[k])})
            hit = floor_iteration(trial["sigma"], cfg.sampler.lam)
            summary.append({"run": run, "seed": seed, "floor_iter": hit, "reached_floor": hit is not None})
        write_csv(out / "convergence_trace.csv", TRACE_COLUMNS, trace)
        write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, summary)
        reached = sum(r["reached_floor"] for r in summary)
        print(f"{reached}/{len(summary)} trials reached the sigma floor -> {out}")
        return EXIT_OK

    results = _map(_sweep_mission, jobs, args.jobs)
    rows, worst = [], EXIT_OK
    for run, ((key, value, seed), (s, log)) in enumerate(zip(labels, results)):
        rows.append({"run": run, "seed": seed, "vary_key": key, "vary_value": value, **s})
        if log is not None:
            log.write(out / f"run_{run:04d}")
        if s["safety_trips"]:
            worst = EXIT_TRIP
        elif s["final_phase"] != "landed" and worst == EXIT_OK:
            worst = EXIT_FAILED
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    delivered = sum(bool(r["delivered"]) for r in rows)
    print(f"{len(rows)} runs, {delivered} delivered -> {out / 'sweep.csv'}")
    return worst


def quadrature_bench(repetitions: int = 50, horizons=(10.0, 50.0, 100.0, 300.0)) -> list[dict]:
    """Adaptive quadrature of 8 + sin(t/10) over [0, T] against its closed form."""
    f = lambda t: 8.0 + np.sin(np.asarray(t) / 10.0)
    rows = []
    for T in horizons:
        exact = 8.0 * T + 10.0 * (1.0 - math.cos(T / 10.0))
        times = []
        for _ in range(repetitions):
            start = time.perf_counter()
            res = integrate(f, 0.0, T, abs_tol=1e-12, rel_tol=1e-12)
            times.append(time.perf_counter() - start)
        rows.append({"T": T, "value": res.value, "exact": exact, "abs_error": abs(res.value - exact),
                     "evaluations": res.evaluations, "median_s": statistics.median(times),
                     "std_s": statistics.pstdev(times)})
    return rows


def cmd_bench(args) -> int:
    out = _out_dir(args.out)
    os.makedirs(out, exist_ok=True)
    if args.gp:
        rows = benchmark_fit(repetitions=args.repeats, cfg=KernelConfig())
        write_csv(out / "bench_gp.csv", GP_BENCH_COLUMNS, rows)
        for r in rows:
            print(f"M={r['M']:4d} full={r['full_median_s'] * 1e6:9.1f}us "
                  f"dtc={r['dtc_median_s'] * 1e6:9.1f}us ratio={r['ratio']:.3f}")
    else:
        rows = quadrature_bench(args.repeats)
        write_csv(out / "bench_quadrature.csv", QUAD_BENCH_COLUMNS, rows)
        for r in rows:
            print(f"T={r['T']:6.1f} error={r['abs_error']:.2e} evals={r['evaluations']} "
                  f"median={r['median_s'] * 1e6:.1f}us")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(f"ok {args.config} sha256={cfg.digest()}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rendezvous", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p):
        p.add_argument("config", help="scenario JSON (bundled names are accepted)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a dotted config key, e.g. risk.kappa=-inf")

    p = sub.add_parser("simulate", help="run one mission")
    scenario_args(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="seeded Monte Carlo batch")
    scenario_args(p)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, help="first seed (default: run.seed)")
    p.add_argument("--vary", metavar="KEY=SPEC", help="a,b,c or lo:hi:n")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--keep-logs", action="store_true", help="also write every run's full log")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="timing tables")
    kind = p.add_mutually_exclusive_group(required=True)
    kind.add_argument("--gp", action="store_true")
    kind.add_argument("--quadrature", action="store_true")
    p.add_argument("--repeats", type=int, default=50)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("validate", help="lint a scenario")
    scenario_args(p)
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
