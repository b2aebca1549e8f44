"""Command-line front end.

Every command writes ``results.csv``, ``aggregate.json`` and ``manifest.json``
into the output directory.  Data artifacts depend only on the configuration,
never on the worker count or on timing.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np

from .config import COMMANDS, KNOWN_KEYS, ConfigError, RunConfig, effective_workers, parse_config
from .kernel import build_kernel, get_kernel, ratio_growth_check
from .model import ModelParams, fmt, replica_seed, sample_disorder, stream
from .partition import compute_tables, free_energy_estimate
from .phase import (DELOCALIZED, LOCALIZED, bound_delocalized, bound_localized, critical_h,
                    monotone_consistent, phase_scan, tail_fit)
from .sampler import endpoint_distribution, return_count_stats, sample_paths

EXIT_OK, EXIT_JOB, EXIT_CONFIG = 0, 1, 2


class JobFailure(RuntimeError):
    def __init__(self, seed, params, cause):
        super().__init__(f"job failed (seed={seed}, params={params}): {cause}")
        self.seed = seed
        self.params = params


def version() -> str:
    try:
        return metadata.version("heteropolymer")
    except metadata.PackageNotFoundError:
        return "unknown"


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def csv_text(header, rows) -> str:
    def cell(v):
        if isinstance(v, (bool, np.bool_)):
            return "true" if v else "false"
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        if isinstance(v, (float, np.floating)):
            return fmt(v)
        return str(v)
    lines = [",".join(header)] + [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _params(lam, h, p, d, n):
    return ModelParams(float(lam), float(h), float(p), int(d), int(n))


def _guard(seed, params, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # any failure inside a job is reported with its key
        raise JobFailure(seed, params, f"{type(exc).__name__}: {exc}") from exc


def run_kernel(cfg: RunConfig, workers: int):
    d = cfg.ds[0]
    kernel = build_kernel(d, cfg.n_max)
    growth = ratio_growth_check(kernel)
    agg = {"d": d, "n_max": cfg.n_max, "alpha": kernel.alpha, "alpha_error": kernel.alpha_error,
           "clamped": kernel.clamped, "c1": growth.c1, "ratio_slope": growth.slope}
    return kernel.to_csv(), agg, {}


def run_free_energy(cfg: RunConfig, workers: int):
    rows, agg = [], []
    grid = [(lam, h, p, d, n) for lam in cfg.lambdas for h in cfg.hs for p in cfg.ps
            for d in cfg.ds for n in cfg.ns]
    for i, point in enumerate(grid):
        params = _params(*point)
        seed = replica_seed(cfg.base_seed, i)
        est = _guard(seed, params, free_energy_estimate, params, cfg.replicas, seed, workers)
        for s, phi, pinned in zip(est.seeds, est.per_replica, est.pinned_per_replica):
            n = params.n
            rows.append([s, n, params.lam, params.h, params.p, params.d, phi * n,
                         pinned * (n - n % 2), phi - params.lam * params.h, phi])
        agg.append({"lambda": params.lam, "h": params.h, "p": params.p, "d": params.d, "n": params.n,
                    "seed": seed, "phi_hat": est.phi_hat, "stderr": est.stderr,
                    "psi_p_hat": est.psi_p_hat, "replicas": est.replicas})
    header = ["seed", "n", "lambda", "h", "p", "d", "log_z_n", "log_zhat_n", "psi_n", "phi_per_replica"]
    return csv_text(header, rows), {"points": agg}, {"grid_seeds": [replica_seed(cfg.base_seed, i)
                                                                      for i in range(len(grid))]}


def run_phase_scan(cfg: RunConfig, workers: int):
    p, d, n = cfg.ps[0], cfg.ds[0], cfg.ns[0]
    try:
        points = phase_scan(cfg.lambdas, cfg.hs, p, d, n, cfg.replicas, cfg.base_seed, cfg.kappa, workers)
    except Exception as exc:
        raise JobFailure(cfg.base_seed, {"lambdas": cfg.lambdas, "hs": cfg.hs, "p": p, "d": d, "n": n},
                         f"{type(exc).__name__}: {exc}") from exc
    violations, counts = [], {}
    for pt in points:
        counts[pt.verdict] = counts.get(pt.verdict, 0) + 1
        if pt.lam > 0 and pt.h < bound_localized(pt.lam, p, d) and pt.verdict != LOCALIZED:
            violations.append([pt.lam, pt.h, pt.verdict])
        if pt.lam > 0 and pt.h > bound_delocalized(pt.lam) and pt.verdict != DELOCALIZED:
            violations.append([pt.lam, pt.h, pt.verdict])
    header = ["lambda", "h", "p", "d", "n", "replicas", "psi_p_hat", "stderr", "verdict"]
    detail = [{"lambda": pt.lam, "h": pt.h, "psi_p_hat_2n": pt.psi_p_hat_2n, "stderr_2n": pt.stderr_2n,
               "shrink": pt.shrink, "shrink_se": pt.shrink_se, "seed": pt.base_seed} for pt in points]
    agg = {"verdict_counts": counts, "envelope_violations": violations, "points": detail}
    return csv_text(header, [pt.row() for pt in points]), agg, {"point_seeds": [pt.base_seed for pt in points]}


def run_critical_curve(cfg: RunConfig, workers: int):
    p, d, n = cfg.ps[0], cfg.ds[0], cfg.ns[0]
    curve = []
    for lam in cfg.lambdas:
        key = {"lambda": lam, "p": p, "d": d, "n": n}
        curve.append(_guard(cfg.base_seed, key, critical_h, lam, p, d, n, cfg.replicas, cfg.tol,
                            cfg.base_seed, cfg.kappa, workers))
    rows = [[c.lam, c.low, c.high, bound_localized(c.lam, p, d), bound_delocalized(c.lam),
             c.stopped_on_uncertain] for c in curve]
    header = ["lambda", "h_c_low", "h_c_high", "bound_localized", "bound_delocalized", "stopped_on_uncertain"]
    steps = [{"lambda": c.lam, "steps": [{"h": s.h, "verdict": s.verdict, "psi_p_hat": s.psi_p_hat,
                                          "stderr": s.stderr} for s in c.steps]} for c in curve]
    agg = {"monotone_consistent": monotone_consistent(curve), "bisection": steps}
    return csv_text(header, rows), agg, {}


def run_sample_paths(cfg: RunConfig, workers: int):
    params = _params(cfg.lambdas[0], cfg.hs[0], cfg.ps[0], cfg.ds[0], cfg.ns[0])
    seed = replica_seed(cfg.base_seed, 0)

    def job():
        kernel = get_kernel(params.d, params.n // 2 + 1)
        tab = compute_tables(sample_disorder(params, seed), params, kernel)
        return sample_paths(tab, kernel, cfg.samples, stream(seed, 0, "fill"))

    paths, stats = _guard(seed, params, job)
    header = ["sample", "time"] + [f"x{i + 1}" for i in range(params.d)]
    rows = []
    for s, ps in enumerate(paths):
        for t, pos in enumerate(ps.path):
            rows.append([s, t, *(int(x) for x in pos)])
    returns = np.array([ps.n_returns for ps in paths], dtype=float)
    agg = {"params": params.as_dict(), "disorder_seed": seed, "paths": len(paths),
           "rejection": stats, "mean_returns": float(returns.mean()),
           "mean_last_hit": float(np.mean([ps.last_hit for ps in paths]))}
    return csv_text(header, rows), agg, {"disorder_seed": seed}


def run_observables(cfg: RunConfig, workers: int):
    n_top = max(cfg.ns)
    params = _params(cfg.lambdas[0], cfg.hs[0], cfg.ps[0], cfg.ds[0], n_top)
    replicas = 1 if cfg.mode == "quenched" else cfg.replicas
    hist = _guard(cfg.base_seed, params, endpoint_distribution, params, n_top, replicas,
                  cfg.samples, cfg.mode, cfg.base_seed, workers)
    returns = _guard(cfg.base_seed, params, return_count_stats, params, cfg.ns, cfg.replicas,
                     cfg.samples, cfg.base_seed + 1, workers)
    agg = {"mode": hist.mode, "params": params.as_dict(), "reversed_time": hist.reversed_time,
           "samples": hist.samples, "histogram_seeds": hist.seeds,
           "returns": [{"n": r.n, "mean": r.mean, "stderr": r.stderr, "lower": r.lower, "upper": r.upper}
                       for r in returns]}
    try:
        fit = tail_fit(hist, cfg.min_count)
        agg["tail_fit"] = {"epsilon_hat": fit.epsilon_hat, "epsilon_se": fit.epsilon_se,
                           "ci": list(fit.ci), "c_hat": fit.c_hat, "onset": fit.onset,
                           "bins_used": fit.bins_used, "curvature_ratio": fit.curvature_ratio,
                           "linear": fit.linear, "reduced_chi2": fit.reduced_chi2}
    except ValueError as exc:
        agg["tail_fit"] = {"error": str(exc)}
    return hist.to_csv(), agg, {"histogram_seeds": hist.seeds}


def run_verify(cfg: RunConfig, workers: int):
    from .verify import run_all
    results = run_all(seed=cfg.base_seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}")
    rows = [[r.name, r.passed, r.detail.replace(",", ";")] for r in results]
    agg = {"all_passed": all(r.passed for r in results)}
    return csv_text(["property", "passed", "detail"], rows), agg, {}


RUNNERS = {
    "kernel": run_kernel,
    "free-energy": run_free_energy,
    "phase-scan": run_phase_scan,
    "critical-curve": run_critical_curve,
    "sample-paths": run_sample_paths,
    "observables": run_observables,
    "verify": run_verify,
}


def run(cfg: RunConfig, workers: int | None = None) -> int:
    """Execute a validated config and write its artifacts; returns the exit status."""
    workers = effective_workers(cfg) if workers is None else workers
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        csv_body, aggregate, seeds = RUNNERS[cfg.command](cfg, workers)
    except JobFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_JOB
    elapsed = time.perf_counter() - start
    (out / "results.csv").write_text(csv_body)
    write_json(out / "aggregate.json", aggregate)
    manifest = {"config": cfg.as_dict(), "config_text": cfg.to_text(), "version": version(),
                "base_seed": cfg.base_seed, "seeds": seeds,
                "timing": {"seconds": elapsed, "workers": workers}}
    write_json(out / "manifest.json", manifest)
    if cfg.command == "verify" and not aggregate["all_passed"]:
        return EXIT_JOB
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heteropolymer",
                                     description="Random heteropolymer near an interface with droplets.")
    parser.add_argument("command", nargs="?", choices=COMMANDS)
    parser.add_argument("--config", help="key = value file; repeated keys form grids")
    for key in KNOWN_KEYS:
        if key == "command":
            continue
        flag = "--" + key.replace("_", "-")
        parser.add_argument(flag, dest=key, action="append", metavar=key.upper(),
                            help=f"override '{key}' (repeat to form a grid)")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    flags = {k: v for k, v in vars(args).items() if k not in ("config", "command") and v}
    if args.command:
        flags["command"] = [args.command]
    try:
        cfg = parse_config(args.config, flags)
        workers = effective_workers(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg, workers)


if __name__ == "__main__":
    sys.exit(main())
