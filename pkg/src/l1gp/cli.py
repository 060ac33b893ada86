"""Command-line front end: run scenarios, searches, and bound checks.

Subcommands::

    l1gp simulate <config> -o <dir>
    l1gp margin <config> -o <dir> [--resolution s] [--horizon s] [--snapshot-time s]
    l1gp bound-check <config> -o <dir> [--n-train N] [--n-probe N]
    l1gp compare <configA> <configB> -o <dir>

Outputs are CSV time series (full round-trip float precision) and JSON
summaries. Exit codes: 0 success, 2 config error, 3 flagged-unstable
completion, 4 precondition failure. ``L1GP_THREADS`` caps the worker pool
used for independent candidate runs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, config as config_mod, gp, scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3
EXIT_PRECONDITION = 4

_CSV_FMT = "%.17g"


def _worker_count() -> int:
    env = os.environ.get("L1GP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise config_mod.ConfigError(f"L1GP_THREADS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def write_trace_csv(trace: scenario.SimulationTrace, path: str) -> None:
    header = ",".join(trace.columns)
    np.savetxt(path, trace.data, fmt=_CSV_FMT, delimiter=",", header=header, comments="")


def read_trace_csv(path: str) -> tuple[np.ndarray, list]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data, header


def write_events_csv(events: list, path: str) -> None:
    cols = ("t", "kind", "update_index", "e_f_hat", "n_data", "detail")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for ev in events:
            detail = {
                k: v
                for k, v in ev.items()
                if k not in ("t", "kind", "update_index", "e_f_hat", "n_data")
            }
            fh.write(
                ",".join(
                    [
                        _CSV_FMT % ev["t"],
                        str(ev["kind"]),
                        str(ev.get("update_index", "")),
                        "" if "e_f_hat" not in ev else _CSV_FMT % ev["e_f_hat"],
                        str(ev.get("n_data", "")),
                        json.dumps(detail).replace(",", ";") if detail else "",
                    ]
                )
                + "\n"
            )


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(out_dir, echo, seed, wall, events, flags) -> None:
    manifest = {
        "tool_version": __version__,
        "seed": seed,
        "config": echo,
        "wall_clock_s": wall,
        "events": events,
        "acceptance_flags": flags,
    }
    _write_json(manifest, os.path.join(out_dir, "manifest.json"))


def _load(config_path: str):
    flat = config_mod.parse_flat_file(config_path)
    return config_mod.resolve_scenario(flat)


def cmd_simulate(config_path: str, out_dir: str) -> int:
    t_start = time.perf_counter()
    cfg, echo = _load(config_path)
    os.makedirs(out_dir, exist_ok=True)
    trace = scenario.run(cfg)
    wall = time.perf_counter() - t_start

    write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
    write_events_csv(trace.events, os.path.join(out_dir, "events.csv"))
    windows = [(0.0, min(10.0, cfg.duration))]
    if cfg.duration > 10.0:
        windows.append((cfg.duration - 10.0, cfg.duration))
    summary = metrics_summary(trace, windows)
    _write_json(summary, os.path.join(out_dir, "summary.json"))
    _write_manifest(
        out_dir,
        echo,
        cfg.seed,
        wall,
        trace.events,
        {"stable": not trace.unstable},
    )
    return EXIT_UNSTABLE if trace.unstable else EXIT_OK


def metrics_summary(trace: scenario.SimulationTrace, windows) -> dict:
    m = scenario.metrics(trace, windows=windows)
    return {
        "stable": not trace.unstable,
        "rows": int(trace.data.shape[0]),
        "t_final": float(trace.t[-1]),
        "final_tracking_error_inf": m["final_tracking_error_inf"],
        "final_tracking_error_axes": m["final_tracking_error_axes"],
        "max_state_inf": m["max_state_inf"],
        "windows": m["windows"],
        "n_events": len(trace.events),
    }


def cmd_margin(
    config_path: str,
    out_dir: str,
    resolution: float = 0.001,
    horizon: float = 20.0,
    snapshot_time: float | None = None,
) -> int:
    t_start = time.perf_counter()
    cfg, echo = _load(config_path)
    os.makedirs(out_dir, exist_ok=True)
    try:
        result = scenario.delay_margin_search(
            cfg,
            resolution=resolution,
            horizon=horizon,
            snapshot_time=snapshot_time,
        )
    except scenario.UnstableAtZeroDelayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    wall = time.perf_counter() - t_start
    out = result.as_dict()
    out["resolution_s"] = resolution
    out["horizon_s"] = horizon
    if snapshot_time is not None:
        out["snapshot_time_s"] = snapshot_time
    _write_json(out, os.path.join(out_dir, "margin.json"))
    _write_manifest(
        out_dir, echo, cfg.seed, wall, [],
        {"open_bracket": result.open_bracket},
    )
    return EXIT_OK


def cmd_bound_check(
    config_path: str,
    out_dir: str,
    n_train: int = 50,
    n_probe: int = 500,
) -> int:
    t_start = time.perf_counter()
    cfg, echo = _load(config_path)
    if cfg.learner is None:
        print("error: bound-check needs learner/kernel/bound configuration",
              file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(out_dir, exist_ok=True)
    lcfg = cfg.learner
    rng = np.random.default_rng(cfg.seed)
    schedule = cfg.plant.uncertainty
    box = lcfg.kappa_op

    X_train = rng.uniform(-box, box, size=(n_train, 3))
    Y_train = np.array(
        [schedule.eval(0.0, x) for x in X_train], dtype=float
    ).reshape(n_train, 3)
    Y_train += rng.normal(0.0, lcfg.sigma_n, size=Y_train.shape)
    posterior = gp.fit(
        gp.GpDataset(X_train, Y_train, lcfg.sigma_n**2), lcfg.kernel
    )
    X_probe = rng.uniform(-box, box, size=(n_probe, 3))
    F_probe = np.array(
        [schedule.eval(0.0, x) for x in X_probe], dtype=float
    ).reshape(n_probe, 3)
    mean, std = posterior.predict_batch(X_probe)
    beta = gp.beta_value(lcfg.bound, posterior.n_outputs, 3)
    gamma = gp.gamma_value(posterior, lcfg.bound) if lcfg.bound.include_gamma else 0.0
    envelope = np.sqrt(beta) * np.max(std, axis=1) + gamma
    err = np.max(np.abs(F_probe - mean), axis=1)
    violations = err > envelope
    wall = time.perf_counter() - t_start
    coverage = {
        "n_train": n_train,
        "n_probe": n_probe,
        "beta": beta,
        "sqrt_beta": float(np.sqrt(beta)),
        "gamma": gamma,
        "delta": lcfg.bound.delta,
        "violation_fraction": float(np.mean(violations)),
        "n_violations": int(np.sum(violations)),
        "probe_box_halfwidth": box,
        "per_point_margin": (envelope - err).tolist(),
    }
    _write_json(coverage, os.path.join(out_dir, "coverage.json"))
    _write_manifest(
        out_dir, echo, cfg.seed, wall, [],
        {"coverage_ok": coverage["violation_fraction"] <= lcfg.bound.delta},
    )
    return EXIT_OK


def cmd_compare(config_a: str, config_b: str, out_dir: str) -> int:
    t_start = time.perf_counter()
    cfg_a, echo_a = _load(config_a)
    cfg_b, echo_b = _load(config_b)
    if abs(cfg_a.duration - cfg_b.duration) > 1e-12 or abs(
        cfg_a.step - cfg_b.step
    ) > 1e-15:
        print("error: compare requires matching duration and step", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(out_dir, exist_ok=True)
    with ThreadPoolExecutor(max_workers=min(2, _worker_count())) as pool:
        fut_a = pool.submit(scenario.run, cfg_a)
        fut_b = pool.submit(scenario.run, cfg_b)
        trace_a, trace_b = fut_a.result(), fut_b.result()
    wall = time.perf_counter() - t_start

    duration = cfg_a.duration
    windows = [(0.0, min(5.0, duration))]
    if duration > 10.0:
        windows.append((duration - 10.0, duration))
    windows.append((0.0, duration))

    def err_means(trace):
        t = trace.t
        err = np.linalg.norm(trace.block("x") - trace.block("xid"), axis=1)
        return {
            f"{t0:g}-{t1:g}": scenario.window_mean(t, err, t0, t1)
            for t0, t1 in windows
        }

    means_a, means_b = err_means(trace_a), err_means(trace_b)
    compare = {
        "config_a": config_a,
        "config_b": config_b,
        "err_ideal_mean_a": means_a,
        "err_ideal_mean_b": means_b,
        "ratio_b_over_a": {
            k: (means_b[k] / means_a[k] if means_a[k] != 0 else float("inf"))
            for k in means_a
        },
        "stable_a": not trace_a.unstable,
        "stable_b": not trace_b.unstable,
    }
    _write_json(compare, os.path.join(out_dir, "compare.json"))
    _write_manifest(
        out_dir, {"a": echo_a, "b": echo_b}, cfg_a.seed, wall, [],
        {"stable_a": not trace_a.unstable, "stable_b": not trace_b.unstable},
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="l1gp", description="adaptive-control learning simulation toolkit"
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one scenario")
    p_sim.add_argument("config")
    p_sim.add_argument("-o", "--out-dir", required=True)

    p_margin = sub.add_parser("margin", help="bisect the input-delay margin")
    p_margin.add_argument("config")
    p_margin.add_argument("-o", "--out-dir", required=True)
    p_margin.add_argument("--resolution", type=float, default=0.001)
    p_margin.add_argument("--horizon", type=float, default=20.0)
    p_margin.add_argument("--snapshot-time", type=float, default=None)

    p_bound = sub.add_parser("bound-check", help="empirical bound coverage")
    p_bound.add_argument("config")
    p_bound.add_argument("-o", "--out-dir", required=True)
    p_bound.add_argument("--n-train", type=int, default=50)
    p_bound.add_argument("--n-probe", type=int, default=500)

    p_cmp = sub.add_parser("compare", help="run two scenarios and compare")
    p_cmp.add_argument("config_a")
    p_cmp.add_argument("config_b")
    p_cmp.add_argument("-o", "--out-dir", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            code = cmd_simulate(args.config, args.out_dir)
        elif args.command == "margin":
            code = cmd_margin(
                args.config,
                args.out_dir,
                resolution=args.resolution,
                horizon=args.horizon,
                snapshot_time=args.snapshot_time,
            )
        elif args.command == "bound-check":
            code = cmd_bound_check(
                args.config, args.out_dir, n_train=args.n_train, n_probe=args.n_probe
            )
        else:
            code = cmd_compare(args.config_a, args.config_b, args.out_dir)
    except (config_mod.ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    if argv is None:
        sys.exit(code)
    return code


if __name__ == "__main__":
    main()
