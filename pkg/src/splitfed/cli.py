"""Command line entry points: optimize, simulate, bound, sweep.

Exit codes: 0 on success, 2 when the target accuracy is infeasible for
the requested configuration, 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from .bound import (BoundInputs, HyperParams, InfeasibleAccuracy,
                    convergence_bound, min_rounds, min_rounds_int)
from .network import sample_snapshot
from .optimizer import bcd
from .profile import cumulative_moment, load_profile
from .runner import (STRATEGIES, load_config, run_scenario, summarize, sweep,
                     write_csv)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", "--scenario", dest="config",
                   help="scenario config (YAML)")
    p.add_argument("--seed", type=int, default=None, help="override run seed")
    p.add_argument("--out-dir", default=None, help="output directory")
    p.add_argument("--no-figures", action="store_true",
                   help="skip PNG rendering next to the CSV output")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitfed",
        description="Split federated learning: planning, simulation, bounds.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_opt = sub.add_parser("optimize", help="plan interval and split points")
    _add_common(p_opt)
    p_opt.add_argument("--profile", help="profile CSV (overrides config)")
    p_opt.add_argument("--eps", type=float, default=None,
                       help="target accuracy (overrides config)")
    p_opt.add_argument("--out", default="trace.csv",
                       help="per-iteration trace CSV")
    p_opt.add_argument("--round", type=int, default=0,
                       help="network round index to plan against")

    p_sim = sub.add_parser("simulate", help="run one training scenario")
    _add_common(p_sim)

    p_bound = sub.add_parser("bound", help="evaluate the convergence bound")
    _add_common(p_bound)
    p_bound.add_argument("--profile", help="profile CSV (overrides config)")
    p_bound.add_argument("--interval", type=int, default=1)
    p_bound.add_argument("--cut", type=int, default=None,
                         help="deepest client cut (default: full depth)")
    p_bound.add_argument("--rounds", type=int, default=None,
                         help="rounds at which to evaluate the bound "
                              "(default: the derived minimum)")
    p_bound.add_argument("--eps", type=float, default=None)

    p_sweep = sub.add_parser("sweep", help="run a strategy/seed cross product")
    _add_common(p_sweep)
    p_sweep.add_argument("--strategies", default="adaptsfl,rma+rms",
                         help=f"comma list from {','.join(STRATEGIES)}")
    p_sweep.add_argument("--seeds", default="1,2,3",
                         help="comma list of run seeds")
    return parser


def _hyper_from_config(cfg, eps_override=None) -> HyperParams:
    beta = cfg.beta if cfg.beta > 0 else 1.0
    vartheta = cfg.vartheta if cfg.vartheta > 0 else 1.0
    return HyperParams(
        gamma=cfg.gamma, beta=beta, batch=cfg.batch, n_devices=cfg.n_devices,
        vartheta=vartheta,
        epsilon=eps_override if eps_override is not None else cfg.epsilon,
    )


def _cmd_optimize(args) -> int:
    if not args.config:
        raise ValueError("optimize needs --config/--scenario")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    profile = load_profile(args.profile or cfg.profile_path)
    h = _hyper_from_config(cfg, args.eps)
    snapshot = sample_snapshot(cfg.distribution, cfg.n_devices, args.round,
                               cfg.net_seed)
    sol = bcd(profile, snapshot, h,
              tol=cfg.eps_b if cfg.eps_b > 0 else None,
              dinkelbach_tol=cfg.eps_d if cfg.eps_d > 0 else None)
    rows = [{"iter": it.iteration, "interval": it.interval,
             "theta_s": it.theta, "lambda": it.lam} for it in sol.trace]
    out = Path(args.out)
    write_csv(out, ("iter", "interval", "theta_s", "lambda"), rows)
    writer = csv.writer(sys.stdout)
    writer.writerow(["i_star", "theta_s"]
                    + [f"cut_{i + 1}" for i in range(len(sol.split.cuts))])
    writer.writerow([sol.interval, sol.objective] + list(sol.split.cuts))
    if not args.no_figures:
        from .figures import trace_figure
        trace_figure([dict(r, reopt=0) for r in rows],
                     out.with_suffix(".png"))
    return 0


def _cmd_simulate(args) -> int:
    if not args.config:
        raise ValueError("simulate needs --config")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out_dir = Path(args.out_dir or "out")
    record = run_scenario(cfg, out_dir=out_dir)
    write_csv(out_dir / "record.csv", record.row().keys(), [record.row()])
    if not args.no_figures:
        from .figures import loss_figure, trace_figure
        with open(out_dir / "loss.csv") as fh:
            rows = list(csv.DictReader(fh))
        loss_figure([float(r["loss"]) for r in rows],
                    [float(r["wallclock_model_seconds"]) for r in rows],
                    out_dir / "loss.png",
                    drift=[float(r["drift_max"]) for r in rows])
        trace_path = out_dir / "trace.csv"
        if trace_path.exists():
            with open(trace_path) as fh:
                trace_figure(list(csv.DictReader(fh)), out_dir / "trace.png")
    writer = csv.writer(sys.stdout)
    writer.writerow(record.row().keys())
    writer.writerow(record.row().values())
    return 0


def _cmd_bound(args) -> int:
    if not args.config and not args.profile:
        raise ValueError("bound needs --config or --profile")
    if args.config:
        cfg = load_config(args.config)
        profile = load_profile(args.profile or cfg.profile_path)
        h = _hyper_from_config(cfg, args.eps)
    else:
        profile = load_profile(args.profile)
        cfg = None
        h = HyperParams(gamma=5e-4, beta=1.0, batch=16, n_devices=20,
                        vartheta=1.0,
                        epsilon=args.eps if args.eps is not None else 1.0)
    l_c = args.cut if args.cut is not None else profile.n_layers
    inputs = BoundInputs(interval=args.interval, l_c=l_c,
                         sigma_total=profile.sigma_total,
                         g_cum_lc=cumulative_moment(profile, l_c))
    r_real = min_rounds(h, inputs)
    r_int = min_rounds_int(h, inputs)
    rounds = args.rounds if args.rounds is not None else r_int
    init_term = 2.0 * h.vartheta / (h.gamma * rounds)
    noise_term = h.beta * h.gamma * inputs.sigma_total / h.n_devices
    drift_term = convergence_bound(h, inputs, rounds) - init_term - noise_term
    writer = csv.writer(sys.stdout)
    writer.writerow(["term", "value"])
    writer.writerow(["rounds_evaluated", rounds])
    writer.writerow(["init_term", init_term])
    writer.writerow(["noise_term", noise_term])
    writer.writerow(["drift_term", drift_term])
    writer.writerow(["bound", convergence_bound(h, inputs, rounds)])
    writer.writerow(["min_rounds", r_real])
    writer.writerow(["min_rounds_ceil", r_int])
    return 0


def _cmd_sweep(args) -> int:
    if not args.config:
        raise ValueError("sweep needs --config")
    base = load_config(args.config)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not strategies or not seeds:
        raise ValueError("sweep needs at least one strategy and one seed")
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    if args.seed is not None:  # --seed offsets every listed seed
        seeds = [s + args.seed for s in seeds]
    cfgs = [replace(base, strategy=s, seed=seed)
            for s in strategies for seed in seeds]
    out_dir = Path(args.out_dir or "sweep-out")
    records = sweep(cfgs, out_dir=out_dir)
    summary = summarize(records)
    if not args.no_figures:
        from .figures import summary_figure
        summary_figure(summary, out_dir / "summary.png")
    writer = csv.DictWriter(sys.stdout, fieldnames=list(summary[0].keys()))
    writer.writeheader()
    for row in summary:
        writer.writerow(row)
    failed = [r for r in records if r.error]
    for r in failed:
        print(f"# failed {r.scenario_id}: {r.error}", file=sys.stderr)
    return 0


_COMMANDS = {
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
    "bound": _cmd_bound,
    "sweep": _cmd_sweep,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses exit code 2 for usage errors; 2 is reserved for
        # infeasibility here, so remap.
        return 1 if exc.code else 0
    try:
        return _COMMANDS[args.command](args)
    except InfeasibleAccuracy as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
