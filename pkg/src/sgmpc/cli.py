"""Command-line interface: calibrate, propagate, mpc-run, compare, check.

Configuration is a flat key = value text file with strict unknown-key
rejection; flags override the file. All artifacts are deterministic for a
fixed (config, seed) pair and embed the config hash and seed.

Exit codes: 0 ok, 2 config/input error, 3 degenerate data, 4 acceptance
failure in check mode, 5 infeasible at t=0.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import report
from .bounds import (
    chebyshev_set,
    corollary_growth_bound,
    elliptical_radius_sq,
    g_inverse,
)
from .envs import mass_spring_damper, surgical_planning, with_noise_scales
from .harness import (
    calibrate_design,
    containment_metrics,
    empirical_quantile_curve,
    make_controller_factory,
    mpc_metrics,
    run_campaign,
    simulate_error_trajectories,
    state_error_sets,
    support_curves,
)
from .mpc import InfeasibleAtStartError
from .reachability import propagate_proxy
from .subgaussian import calibrate_details
from .tightening import EmptyTightenedError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DEGENERATE = 3
EXIT_ACCEPTANCE = 4
EXIT_INFEASIBLE = 5


class ConfigError(ValueError):
    """Schema violation or unreadable input (exit 2)."""


class DegenerateDataError(ValueError):
    """Readable but unusable data (exit 3)."""


# ---------------------------------------------------------------------------
# configuration schema


def _pos_int(raw: str) -> int:
    val = int(raw)
    if val < 1:
        raise ValueError("must be >= 1")
    return val


def _unit_open(raw: str) -> float:
    val = float(raw)
    if not 0.0 < val < 1.0:
        raise ValueError("must lie strictly in (0, 1)")
    return val


def _nonneg_float(raw: str) -> float:
    val = float(raw)
    if val < 0.0:
        raise ValueError("must be >= 0")
    return val


def _choice(options):
    def cast(raw: str) -> str:
        if raw not in options:
            raise ValueError(f"must be one of {sorted(options)}")
        return raw

    return cast


_SCHEMA = {
    "env": _choice({"msd", "sp"}),
    "delta": _unit_open,
    "horizon": _pos_int,
    "horizon_T": _pos_int,
    "trials": _pos_int,
    "n_traj": _pos_int,
    "steps": _pos_int,
    "method": _choice({"subgaussian", "dr", "robust"}),
    "dr_source": _choice({"empirical", "proxy"}),
    "w_scale": _nonneg_float,
    "eps_scale": _nonneg_float,
    "seed": int,
    "calib_samples": _pos_int,
    "calib_seed": int,
}

_DEFAULTS = {
    "env": "msd",
    "delta": 0.05,
    "trials": 100,
    "n_traj": 100_000,
    "steps": 40,
    "method": "subgaussian",
    "dr_source": "empirical",
    "w_scale": None,
    "eps_scale": None,
    "seed": 0,
    "calib_samples": 5000,
    "calib_seed": 12345,
}

_ENV_DEFAULTS = {
    "msd": {"horizon": 15, "horizon_T": 60},
    "sp": {"horizon": 20, "horizon_T": 40},
}


def parse_config(path=None, overrides=None) -> dict:
    """Read the key = value file, apply flag overrides, fill defaults."""
    cfg = dict(_DEFAULTS)
    if path is not None:
        try:
            with open(path) as fh:
                lines = fh.readlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        for lineno, line in enumerate(lines, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"line {lineno}: expected key = value")
            key, raw = (part.strip() for part in text.split("=", 1))
            if key not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                cfg[key] = _SCHEMA[key](raw)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        try:
            cfg[key] = _SCHEMA[key](str(val))
        except ValueError as exc:
            raise ConfigError(f"bad value for --{key}: {exc}") from exc
    for key, val in _ENV_DEFAULTS[cfg["env"]].items():
        cfg.setdefault(key, val)
    return cfg


def build_env(cfg: dict):
    env = mass_spring_damper() if cfg["env"] == "msd" else surgical_planning()
    if cfg["w_scale"] is not None or cfg["eps_scale"] is not None:
        env = with_noise_scales(env, cfg["w_scale"], cfg["eps_scale"])
    return env


def _meta(cfg: dict) -> dict:
    return {"config_hash": report.config_hash(cfg), "seed": cfg["seed"]}


def _outdir(path: str | None) -> str:
    out = path or "."
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# calibrate


def _load_samples_csv(path) -> np.ndarray:
    try:
        with open(path) as fh:
            lines = [ln.strip() for ln in fh]
    except OSError as exc:
        raise ConfigError(f"cannot read samples: {exc}") from exc
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines:
        raise ConfigError("samples CSV is empty")

    def parse(line):
        return [float(tok) for tok in line.split(",") if tok.strip() != ""]

    start = 0
    try:
        parse(lines[0])
    except ValueError:
        start = 1  # header row
    data = []
    for ln in lines[start:]:
        try:
            row = parse(ln)
        except ValueError as exc:
            raise ConfigError(f"malformed CSV row {ln[:60]!r}") from exc
        data.append(row)
    if not data:
        raise ConfigError("samples CSV has no data rows")
    if len({len(r) for r in data}) != 1:
        raise ConfigError("samples CSV has ragged rows")
    return np.array(data, dtype=float)


def cmd_calibrate(args) -> int:
    samples = _load_samples_csv(args.samples_csv)
    if samples.shape[0] < 2:
        raise DegenerateDataError("need at least two sample rows")
    if not np.all(np.isfinite(samples)):
        raise DegenerateDataError("samples contain non-finite values")
    try:
        result = calibrate_details(samples)
    except ValueError as exc:
        raise DegenerateDataError(str(exc)) from exc
    payload = {
        "sigma": result.sigma,
        "sigma_sq": result.sigma**2,
        "direction": result.direction,
        "scale": result.scale,
        "objective": result.objective,
        "n_samples": samples.shape[0],
        "dim": samples.shape[1],
    }
    if args.out:
        parent = os.path.dirname(os.path.abspath(args.out))
        os.makedirs(parent, exist_ok=True)
        report.write_json(args.out, payload)
    print(json.dumps(report._jsonable(payload), sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# propagate


def cmd_propagate(args) -> int:
    cfg = parse_config(args.config, {"seed": args.seed})
    env = build_env(cfg)
    bundle = calibrate_design(env, cfg["calib_samples"], cfg["calib_seed"])
    seq = propagate_proxy(bundle.err, bundle.noise_spec, cfg["steps"])
    out = _outdir(args.out)
    meta = _meta(cfg)
    dim = bundle.err.a_e.shape[0]
    header = ["step"] + [f"s{i}{j}" for i in range(dim) for j in range(dim)]
    rows = [[t] + list(s.flatten()) for t, s in enumerate(seq.per_step)]
    report.write_csv(f"{out}/proxies_{cfg['env']}.csv", header, rows, meta)
    report.write_json(
        f"{out}/propagate_{cfg['env']}.json",
        {
            **meta,
            "sigma0": bundle.noise_spec.sigma0.sigma,
            "sigma_w": bundle.noise_spec.sigma_w.sigma,
            "sigma_eps": bundle.noise_spec.sigma_eps.sigma,
            "spectral_radius": bundle.err.spectral_radius,
            "steady": seq.steady,
        },
    )
    print(f"wrote proxies_{cfg['env']}.csv and propagate_{cfg['env']}.json to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# mpc-run


def cmd_mpc_run(args) -> int:
    cfg = parse_config(
        args.config, {"seed": args.seed, "trials": args.trials, "method": args.method}
    )
    env = build_env(cfg)
    bundle = calibrate_design(env, cfg["calib_samples"], cfg["calib_seed"])
    factory = make_controller_factory(
        env, bundle, cfg["delta"], cfg["horizon"], cfg["method"], cfg["dr_source"]
    )
    sink = None
    if args.verbose:
        sink = lambda d: print(json.dumps(report._jsonable(d), sort_keys=True))
    records = run_campaign(
        env, factory, cfg["trials"], cfg["horizon_T"], cfg["seed"], diag_sink=sink
    )
    mcp, mean_cost, ci = mpc_metrics(records)
    out = _outdir(args.out)
    meta = _meta(cfg)
    sysd = env.system
    report.write_csv(
        f"{out}/mpc_{cfg['env']}_{cfg['method']}.csv",
        report.records_header(sysd.n_x, sysd.n_u, sysd.n_y),
        report.records_to_rows(records),
        meta,
    )
    summary = {
        **meta,
        "method": cfg["method"],
        "trials": cfg["trials"],
        "mcp_percent": mcp,
        "mean_cost": mean_cost,
        "cost_ci": list(ci),
        "fallbacks": sum(r.fallbacks for r in records),
    }
    report.write_json(f"{out}/mpc_{cfg['env']}_{cfg['method']}.json", summary)
    print(
        f"{cfg['env']}/{cfg['method']}: mcp={mcp:.2f}% cost={mean_cost:.4f} "
        f"ci=({ci[0]:.4f}, {ci[1]:.4f})"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare / check


def _compare_pipeline(cfg: dict):
    """Everything the figure and the metric tables need, as plain data."""
    env = build_env(cfg)
    bundle = calibrate_design(env, cfg["calib_samples"], cfg["calib_seed"])
    delta, steps = cfg["delta"], cfg["steps"]

    errors = simulate_error_trajectories(env, bundle, cfg["n_traj"], steps, cfg["seed"])
    direction = env.constraints.a[0, : env.system.n_x].copy()
    direction /= np.linalg.norm(direction)

    curves = {
        "quantile": empirical_quantile_curve(errors, direction, 1.0 - delta)
    }
    containment = {}
    for method in ("subgaussian", "dr", "robust"):
        sets = state_error_sets(bundle, env, delta, steps, method, cfg["dr_source"])
        curves[method] = support_curves(sets, direction)
        containment[method] = containment_metrics(errors, sets)

    campaigns = {}
    for method in ("subgaussian", "dr", "robust"):
        try:
            factory = make_controller_factory(
                env, bundle, delta, cfg["horizon"], method, cfg["dr_source"]
            )
        except (InfeasibleAtStartError, EmptyTightenedError) as exc:
            campaigns[method] = {"status": "infeasible_at_start", "detail": str(exc)}
            continue
        records = run_campaign(
            env, factory, cfg["trials"], cfg["horizon_T"], cfg["seed"]
        )
        mcp, mean_cost, ci = mpc_metrics(records)
        campaigns[method] = {
            "status": "ok",
            "mcp_percent": mcp,
            "mean_cost": mean_cost,
            "cost_ci": list(ci),
            "fallbacks": sum(r.fallbacks for r in records),
            "completion_fraction": float(
                np.mean(
                    [
                        float(np.max(r.states[:, 0]) >= 0.115 and not r.violations.any())
                        for r in records
                    ]
                )
            )
            if cfg["env"] == "sp"
            else None,
        }
    return env, curves, containment, campaigns


def _emit_compare(cfg, curves, containment, campaigns, out: str) -> None:
    meta = _meta(cfg)
    steps = np.arange(len(curves["quantile"]))
    series = [
        ("sample quantile", steps, curves["quantile"]),
        ("sub-Gaussian", steps, curves["subgaussian"]),
        ("DR", steps, curves["dr"]),
        ("robust", steps, curves["robust"]),
    ]
    report.svg_line_plot(
        f"{out}/bounds_{cfg['env']}.svg",
        series,
        title=f"95% confidence bound size, {cfg['env']}",
        x_label="time step",
        y_label="support along the constraint normal",
        meta=meta,
    )
    header = (
        ["t", "quantile"]
        + [f"support_{m}" for m in ("subgaussian", "dr", "robust")]
        + [f"containment_{m}" for m in ("subgaussian", "dr", "robust")]
    )
    rows = []
    for t in range(len(steps)):
        rows.append(
            [t, curves["quantile"][t]]
            + [curves[m][t] for m in ("subgaussian", "dr", "robust")]
            + [containment[m][1][t] for m in ("subgaussian", "dr", "robust")]
        )
    report.write_csv(f"{out}/containment_{cfg['env']}.csv", header, rows, meta)

    header = ["method", "status", "mcp_percent", "mean_cost", "ci_lo", "ci_hi", "fallbacks"]
    rows = []
    for method in ("subgaussian", "dr", "robust"):
        c = campaigns[method]
        if c["status"] != "ok":
            rows.append([method, c["status"], "", "", "", "", ""])
        else:
            rows.append(
                [
                    method,
                    "ok",
                    c["mcp_percent"],
                    c["mean_cost"],
                    c["cost_ci"][0],
                    c["cost_ci"][1],
                    c["fallbacks"],
                ]
            )
    report.write_csv(f"{out}/metrics_{cfg['env']}.csv", header, rows, meta)
    report.write_json(
        f"{out}/compare_{cfg['env']}.json",
        {
            **meta,
            "curves": {k: v for k, v in curves.items()},
            "containment": {k: v[1] for k, v in containment.items()},
            "min_containment": {k: v[0] for k, v in containment.items()},
            "campaigns": campaigns,
        },
    )


def _bound_numeric_criteria():
    tau_sq = elliptical_radius_sq(2, 0.05)
    cheb = chebyshev_set(np.zeros(2), np.eye(2), 0.05).radius_sq
    growth = corollary_growth_bound(2, 0.05)
    return [
        ("g_inverse(20) within 1e-3 of 4.7445", abs(g_inverse(20.0) - 4.7445) <= 1e-3),
        ("elliptical radius_sq(2, 0.05) within 0.01 of 11.489", abs(tau_sq - 11.489) <= 0.01),
        (
            "half-space factor sqrt(2 ln 20) within 1e-4 of 2.44775",
            abs(np.sqrt(2.0 * np.log(20.0)) - 2.44775) <= 1e-4,
        ),
        ("elliptical radius_sq below growth bound", tau_sq <= growth),
        ("elliptical radius_sq below Chebyshev radius_sq 40", tau_sq <= cheb and abs(cheb - 40.0) < 1e-9),
    ]


def _check_criteria(cfg, curves, containment, campaigns):
    checks = list(_bound_numeric_criteria())
    tol = 1e-9
    q, sg = curves["quantile"], curves["subgaussian"]
    dr, rb = curves["dr"], curves["robust"]
    if cfg["env"] == "msd":
        checks += [
            ("quantile <= sub-Gaussian at every step", bool(np.all(q <= sg + tol))),
            ("sub-Gaussian <= DR at every step", bool(np.all(sg <= dr + tol))),
            ("sub-Gaussian <= robust at every step", bool(np.all(sg <= rb + tol))),
            (
                "strict ordering at steady state",
                q[-1] < sg[-1] and sg[-1] < dr[-1] and sg[-1] < rb[-1],
            ),
            ("sub-Gaussian min containment >= 95%", containment["subgaussian"][0] >= 95.0),
            ("DR containment 100%", containment["dr"][0] >= 100.0 - 1e-9),
            ("robust containment 100%", containment["robust"][0] >= 100.0 - 1e-9),
            (
                "sub-Gaussian campaign MCP <= 5%",
                campaigns["subgaussian"]["status"] == "ok"
                and campaigns["subgaussian"]["mcp_percent"] <= 5.0,
            ),
            (
                "DR campaign MCP <= 5%",
                campaigns["dr"]["status"] == "ok"
                and campaigns["dr"]["mcp_percent"] <= 5.0,
            ),
            (
                "sub-Gaussian mean cost < DR mean cost",
                campaigns["subgaussian"]["status"] == "ok"
                and campaigns["dr"]["status"] == "ok"
                and campaigns["subgaussian"]["mean_cost"] < campaigns["dr"]["mean_cost"],
            ),
            (
                "robust MPC infeasible at t=0",
                campaigns["robust"]["status"] == "infeasible_at_start",
            ),
            (
                "no uncertified fallbacks (msd fallback count 0)",
                campaigns["subgaussian"]["status"] == "ok"
                and campaigns["subgaussian"]["fallbacks"] == 0,
            ),
        ]
    else:
        checks += [
            (
                "sub-Gaussian campaign MCP <= 5%",
                campaigns["subgaussian"]["status"] == "ok"
                and campaigns["subgaussian"]["mcp_percent"] <= 5.0,
            ),
            (
                "DR campaign MCP <= 5%",
                campaigns["dr"]["status"] == "ok"
                and campaigns["dr"]["mcp_percent"] <= 5.0,
            ),
            (
                "task completion (depth >= 0.115, funnel kept) in >= 95% of trials",
                campaigns["subgaussian"]["status"] == "ok"
                and campaigns["subgaussian"]["completion_fraction"] >= 0.95,
            ),
            (
                "fallback count 0 (every fallback is certificate-checked)",
                campaigns["subgaussian"]["status"] == "ok"
                and campaigns["subgaussian"]["fallbacks"] == 0,
            ),
        ]
    return checks


def cmd_compare(args, check_mode: bool = False) -> int:
    cfg = parse_config(args.config, {"seed": args.seed, "trials": args.trials})
    env, curves, containment, campaigns = _compare_pipeline(cfg)
    out = _outdir(args.out)
    _emit_compare(cfg, curves, containment, campaigns, out)
    print(f"wrote bounds/containment/metrics artifacts for {cfg['env']} to {out}")
    if not check_mode:
        return EXIT_OK
    failures = 0
    for label, ok in _check_criteria(cfg, curves, containment, campaigns):
        print(f"{'PASS' if ok else 'FAIL'}: {label}")
        failures += 0 if ok else 1
    if failures:
        print(f"{failures} acceptance check(s) failed")
        return EXIT_ACCEPTANCE
    print("all acceptance checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgmpc",
        description="Sub-Gaussian stochastic MPC: calibration, propagation, "
        "campaigns, and report generation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="fit a scalar variance proxy to CSV samples")
    cal.add_argument("samples_csv")
    cal.add_argument("--out", default=None, help="write the calibration JSON here")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", default=None, help="output directory (default .)")

    sub.add_parser("propagate", parents=[common], help="export proxy sequences to CSV")

    run = sub.add_parser("mpc-run", parents=[common], help="closed-loop campaign")
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--method", default=None, choices=["subgaussian", "dr", "robust"])
    run.add_argument("--verbose", action="store_true", help="per-step JSONL diagnostics")

    cmp_parser = sub.add_parser(
        "compare", parents=[common], help="4-curve bound figure plus metric tables"
    )
    cmp_parser.add_argument("--trials", type=int, default=None)

    chk = sub.add_parser("check", parents=[common], help="compare + acceptance gates")
    chk.add_argument("--trials", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "calibrate":
            return cmd_calibrate(args)
        if args.command == "propagate":
            return cmd_propagate(args)
        if args.command == "mpc-run":
            return cmd_mpc_run(args)
        if args.command == "compare":
            return cmd_compare(args, check_mode=False)
        if args.command == "check":
            return cmd_compare(args, check_mode=True)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DegenerateDataError as exc:
        print(f"degenerate data: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (InfeasibleAtStartError, EmptyTightenedError) as exc:
        print(f"infeasible at t=0: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
