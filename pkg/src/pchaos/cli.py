"""Command-line entry point: simulate, solve, compare, certify.

Every subcommand takes --config (flat key=value text), --out (a directory it
will create), and an optional --seed overriding the config seed.  Outputs are
CSV/JSON plus a manifest recording the config hash and seed so any row can be
reproduced from the pair.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config
from .core import GridField, KernelSpec, TorusGrid, fourier_field
from .experiments import ExperimentConfig, run_bounds_report, run_rate_experiment
from .metrics import divergence_report_from_samples
from .particles import SimConfig, SnapshotSet, extract_marginal_samples, run_ensemble
from .pde import GTable, TimeGrid, solve_g_hierarchy, solve_mckean_vlasov

__all__ = ["main"]


def _density_from_config(cfg: Config, grid_key: str = "grid", default_grid: int = 64):
    grid = TorusGrid(cfg.get_int(grid_key, default_grid))
    sins = cfg.get_float_list("density_sin", [])
    return fourier_field(grid, cfg.get_float_list("density_cos"), sins or None)


def _seed(cfg: Config, override):
    return override if override is not None else cfg.get_int("seed", 0)


def _manifest(out: Path, cfg: Config, seed, extra=None):
    payload = {
        "config_sha256": hashlib.sha256(cfg.canonical_text().encode()).hexdigest(),
        "seed": seed,
    }
    if extra:
        payload.update(extra)
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def _time_grid(cfg: Config) -> TimeGrid:
    dt = cfg.get_float("dt")
    T = cfg.get_float("T")
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-12 * max(1, n):
        raise ConfigError("T must be a positive integer multiple of dt")
    store = cfg.get_int("store_every", 1)
    return TimeGrid(dt, n, store)


def _cmd_simulate(cfg: Config, out: Path, seed) -> int:
    kernel = KernelSpec.from_file(cfg.get_str("kernel"))
    density = _density_from_config(cfg, "sample_grid", 256)
    sim = SimConfig(
        N=cfg.get_int("N"),
        dt=cfg.get_float("dt"),
        T=cfg.get_float("T"),
        n_replicas=cfg.get_int("replicas", 1),
        base_seed=_seed(cfg, seed),
        kernel=kernel,
        initial_density=density,
        d=cfg.get_int("d", 1),
        self_interaction=cfg.get_bool("self_interaction", True),
        drift_method=cfg.get_str("drift_method", "auto"),
    )
    times = cfg.get_float_list("output_times", [sim.T])
    snaps = run_ensemble(sim, times)
    fmt = cfg.get_str("snapshot_format", "csv")
    if fmt == "csv":
        snaps.to_csv(out / "snapshots.csv")
    elif fmt == "raw":
        snaps.to_raw(out / "snapshots.raw")
    else:
        raise ConfigError("snapshot_format must be csv or raw")
    _manifest(out, cfg, sim.base_seed, {"n_replicas": sim.n_replicas, "N": sim.N})
    print(f"simulate: {sim.n_replicas} replicas of N={sim.N} to t={sim.T} -> {out}")
    return 0


def _cmd_solve_mv(cfg: Config, out: Path, seed) -> int:
    kernel = KernelSpec.from_file(cfg.get_str("kernel"))
    density = _density_from_config(cfg)
    tg = _time_grid(cfg)
    traj = solve_mckean_vlasov(density, kernel, tg)
    grid = traj.grid
    with open(out / "rho.csv", "w", encoding="utf-8") as fh:
        fh.write("t,x,value\n")
        for s, t in enumerate(traj.times):
            for x, v in zip(grid.points, traj.values[s]):
                fh.write(f"{float(t)!r},{float(x)!r},{float(v)!r}\n")
    drift = max(abs(grid.h * traj.values[s].sum() - 1.0) for s in range(len(traj.times)))
    _manifest(out, cfg, _seed(cfg, seed), {"max_mass_drift": drift})
    print(f"solve-mv: M={grid.M}, {tg.n_steps} steps, max mass drift {drift:.3e}")
    return 0


def _cmd_solve_hierarchy(cfg: Config, out: Path, seed) -> int:
    kernel = KernelSpec.from_file(cfg.get_str("kernel"))
    density = _density_from_config(cfg)
    tg = _time_grid(cfg)
    i_max = cfg.get_int("order", 1)
    gt = solve_g_hierarchy(i_max, density, kernel, tg)
    gt.save(out / "gtable")
    _manifest(out, cfg, _seed(cfg, seed), {"i_max": i_max, "entries": len(gt.entries)})
    print(f"solve-hierarchy: order {i_max}, {len(gt.entries)} entries -> {out / 'gtable'}")
    return 0


def _cmd_metrics(cfg: Config, out: Path, seed) -> int:
    snaps = SnapshotSet.from_raw(cfg.get_str("snapshots"))
    gt = GTable.load(cfg.get_str("gtable"))
    t = cfg.get_float("time", float(snaps.times[-1]))
    tidx = int(np.argmin(np.abs(snaps.times - t)))
    if abs(snaps.times[tidx] - t) > 1e-9:
        raise ConfigError(f"no snapshot at time {t}")
    sidx = int(np.argmin(np.abs(gt.times - t)))
    if abs(gt.times[sidx] - t) > 1e-9:
        raise ConfigError(f"no solved density at time {t}")
    rho = gt.field(0, 1, sidx)
    bins = cfg.get_int("bins", 32)
    base_seed = _seed(cfg, seed)
    results = {}
    for j in cfg.get_int_list("j", [1]):
        ref = rho if j == 1 else GridField(
            rho.grid, j, np.multiply.outer(rho.values, rho.values)
        )
        samples, rep = extract_marginal_samples(snaps.at_time(tidx), j, True)
        report = divergence_report_from_samples(
            samples, ref, bins if j == 1 else max(2, bins // 4), rep, seed=base_seed
        )
        path = out / f"divergence_j{j}.json"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
        results[f"j{j}"] = report.chi_squared
        print(
            f"metrics j={j}: chi2 {report.chi_squared:.4e} "
            f"(se {report.se_chi_squared:.2e}), tv {report.total_variation:.4e}"
        )
    _manifest(out, cfg, base_seed, {"time": t, "chi_squared": results})
    return 0


def _cmd_bounds(cfg: Config, out: Path, seed) -> int:
    report = run_bounds_report(
        j_list=cfg.get_int_list("j", [1, 4, 16]),
        ell_max=cfg.get_int("ell_max", 64),
        b_list=cfg.get_int_list("b", [1, 3, 7]),
        t_list=cfg.get_float_list("t", [0.1, 1.0, 3.0]),
        beta=cfg.get_float("beta", 1.0),
        out_csv=out / "bounds.csv",
        inject=cfg.get_float("inject", 0.0),
        residual_tol=cfg.get_float("residual_tol", 1e-6),
    )
    for line in report.summary:
        print(line)
    for v in report.violations[:20]:
        print("violation:", v)
    if len(report.violations) > 20:
        print(f"... and {len(report.violations) - 20} more")
    _manifest(out, cfg, _seed(cfg, seed), {"violations": len(report.violations)})
    return 0 if report.ok else 1


def _cmd_rates(cfg: Config, out: Path, seed) -> int:
    ecfg = ExperimentConfig.from_config(cfg, out_override=str(out), seed_override=seed)
    result = run_rate_experiment(ecfg)
    lo = cfg.get_float("slope_lo", -1.3)
    hi = cfg.get_float("slope_hi", -0.7)
    ok = True
    for name, fit in result.fits.items():
        inside = lo <= fit.slope <= hi
        ok = ok and inside
        print(
            f"rates {name}: slope {fit.slope:+.3f} +- {fit.slope_se:.3f} "
            f"({'PASS' if inside else 'FAIL'} for [{lo}, {hi}])"
        )
    for N in sorted(result.ratios):
        print(f"rates ratio at N={N}: {result.ratios[N]:+.3f}")
    print(f"rates: primary observable {result.primary}, rows -> {result.csv_path}")
    return 0 if ok else 1


_COMMANDS = {
    "simulate": _cmd_simulate,
    "solve-mv": _cmd_solve_mv,
    "solve-hierarchy": _cmd_solve_hierarchy,
    "metrics": _cmd_metrics,
    "bounds": _cmd_bounds,
    "rates": _cmd_rates,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pchaos",
        description="Interacting-particle simulation, mean-field solvers, and bound certification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return _COMMANDS[args.command](cfg, out, args.seed)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
