"""Scenario orchestration: config ingestion, strategy loops, result persistence.

A scenario trains the toy model under one of four planning strategies:
the full planner for both blocks (``adaptsfl``), random interval with
planned splits (``rma+ms``), planned interval with random splits
(``ma+rms``), or both random (``rma+rms``). Random intervals draw
uniformly from 1..25 and random splits uniformly from the valid cut
range, both from the run seed. Every emitted byte is a function of
(config, seed).
"""

from __future__ import annotations

import csv
import math
import shutil
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .bound import HyperParams
from .engine import (averaged_layers, estimate_constants, init_state,
                     replay_timing, train)
from .latency import SplitDecision, breakdown_rows, ma_latency, split_round_latency
from .model import DataShards, LayeredModel, make_dataset, make_shards, substream
from .network import (FieldSpec, NetworkSnapshot, ResourceDistribution,
                      constant, sample_snapshot, uniform)
from .optimizer import bcd, dinkelbach, evaluate_split, solve_interval
from .profile import ModelProfile, load_profile, save_profile

STRATEGIES = ("adaptsfl", "rma+ms", "ma+rms", "rma+rms")
RMA_MAX_INTERVAL = 25
STREAM_RMA = 201
STREAM_RMS = 202
# Converged when the smoothed loss improves by less than 0.02% for 5 rounds.
CONVERGENCE_RELATIVE = 2e-4
CONVERGENCE_PATIENCE = 5
SMOOTH_WINDOW = 5


def _as_float(v) -> float:
    return float(v)


def parse_field_spec(value):
    """Parse a config value into a FieldSpec (or per-device list of them)."""
    if isinstance(value, (list, tuple)):
        return tuple(parse_field_spec(v) for v in value)
    if isinstance(value, dict):
        kind = value.get("dist", "uniform")
        if kind == "uniform":
            return uniform(_as_float(value["lo"]), _as_float(value["hi"]))
        if kind == "constant":
            return constant(_as_float(value["value"]))
        raise ValueError(f"unknown dist {kind!r}")
    return constant(_as_float(value))


@dataclass
class ScenarioConfig:
    strategy: str = "adaptsfl"
    rounds: int = 120
    seed: int = 1
    target_loss: float | None = None
    reopt_period: int = 0          # 0 -> re-plan every aggregation cycle
    profile_path: str = ""
    layer_sizes: tuple[int, ...] = (8, 16, 12, 10, 8, 6, 3)
    model_loss: str = "cross_entropy"
    samples: int = 480
    dim: int = 8
    classes: int = 3
    iid: bool = True
    data_seed: int = 11
    gamma: float = 0.05
    batch: int = 16
    epsilon: float = 2.0
    vartheta: float = 0.0          # 0 -> use the current loss (f* defaults to 0)
    beta: float = 0.0              # 0 -> estimate from probes
    eps_d: float = 0.0             # 0 -> solver default
    eps_b: float = 0.0
    probe_rounds: int = 4
    n_devices: int = 4
    net_seed: int = 7
    cv: float = 0.0
    distribution: ResourceDistribution = field(default_factory=ResourceDistribution)
    source_path: str | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


def config_from_dict(doc: dict, base_dir: Path | None = None) -> ScenarioConfig:
    base_dir = Path(base_dir) if base_dir else Path.cwd()
    run = doc.get("run", {})
    model = doc.get("model", {})
    data = doc.get("data", {})
    hyper = doc.get("hyper", {})
    net = doc.get("network", {})

    dist_kwargs = {}
    key_map = {"f_i": "compute", "f_s": "server_compute"}
    for key, value in net.items():
        if key in ("n_devices", "seed", "cv"):
            continue
        name = key_map.get(key, key)
        if name not in ResourceDistribution.__dataclass_fields__:
            raise ValueError(f"unknown network field {key!r}")
        spec = parse_field_spec(value)
        if name in ("server_compute", "to_fed", "from_fed") and not isinstance(spec, FieldSpec):
            raise ValueError(f"{key!r} cannot vary per device")
        dist_kwargs[name] = spec
    dist = ResourceDistribution(cv=_as_float(net.get("cv", 0.0)), **dist_kwargs)

    profile = doc.get("profile", "")
    if profile and not Path(profile).is_absolute():
        profile = str(base_dir / profile)

    seed = int(run.get("seed", 1))
    return ScenarioConfig(
        strategy=str(run.get("strategy", "adaptsfl")),
        rounds=int(run.get("rounds", 120)),
        seed=seed,
        target_loss=(None if run.get("target_loss") is None
                     else _as_float(run["target_loss"])),
        reopt_period=int(run.get("reopt_period", 0)),
        profile_path=profile,
        layer_sizes=tuple(int(d) for d in model.get("layer_sizes", (8, 16, 12, 10, 8, 6, 3))),
        model_loss=str(model.get("loss", "cross_entropy")),
        samples=int(data.get("samples", 480)),
        dim=int(data.get("dim", 8)),
        classes=int(data.get("classes", 3)),
        iid=bool(data.get("iid", True)),
        data_seed=int(data.get("seed", seed)),
        gamma=_as_float(hyper.get("gamma", 0.05)),
        batch=int(hyper.get("batch", 16)),
        epsilon=_as_float(hyper.get("epsilon", 2.0)),
        vartheta=_as_float(hyper.get("vartheta", 0.0)),
        beta=_as_float(hyper.get("beta", 0.0)),
        eps_d=_as_float(hyper.get("eps_d", 0.0)),
        eps_b=_as_float(hyper.get("eps_b", 0.0)),
        probe_rounds=int(hyper.get("probe_rounds", 4)),
        n_devices=int(net.get("n_devices", 4)),
        net_seed=int(net.get("seed", seed)),
        cv=_as_float(net.get("cv", 0.0)),
        distribution=dist,
    )


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    cfg = config_from_dict(doc, base_dir=path.parent)
    cfg.source_path = str(path)
    return cfg


@dataclass
class RunRecord:
    scenario_id: str
    seed: int
    strategy: str
    final_loss: float
    rounds: int
    rounds_to_target: int | None
    time_to_target: float | None   # model seconds; None when not reached
    total_model_time: float
    converged_round: int | None
    converged_time: float | None
    trace_path: str = ""
    error: str = ""

    def row(self) -> dict:
        def mark(v):
            return "not_reached" if v is None else v
        return {
            "scenario_id": self.scenario_id,
            "seed": self.seed,
            "strategy": self.strategy,
            "final_loss": self.final_loss,
            "rounds": self.rounds,
            "rounds_to_target": mark(self.rounds_to_target),
            "time_to_target_s": mark(self.time_to_target),
            "total_model_time_s": self.total_model_time,
            "converged_round": mark(self.converged_round),
            "converged_time_s": mark(self.converged_time),
            "trace_path": self.trace_path,
            "error": self.error,
        }


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


@dataclass
class _Plan:
    interval: int
    split: SplitDecision
    trace_rows: list[dict]


def _draw_interval(cfg: ScenarioConfig, reopt_idx: int) -> int:
    rng = substream(cfg.seed, STREAM_RMA, reopt_idx)
    return int(rng.integers(1, RMA_MAX_INTERVAL + 1))


def _draw_split(cfg: ScenarioConfig, n_layers: int, reopt_idx: int) -> SplitDecision:
    rng = substream(cfg.seed, STREAM_RMS, reopt_idx)
    return SplitDecision(cuts=tuple(int(c) for c in
                                    rng.integers(1, n_layers + 1, size=cfg.n_devices)))


def _plan(cfg: ScenarioConfig, profile: ModelProfile, model: LayeredModel,
          layers, shards: DataShards, snapshot: NetworkSnapshot,
          current_loss: float, reopt_idx: int) -> _Plan:
    """Pick (interval, split) for the next segment according to the strategy."""
    needs_solver = cfg.strategy != "rma+rms"
    h = None
    if needs_solver:
        est = estimate_constants(model, layers, shards, cfg, cfg.probe_rounds,
                                 seed=cfg.seed + reopt_idx)
        beta = cfg.beta if cfg.beta > 0 else est.beta_hat
        vartheta = cfg.vartheta if cfg.vartheta > 0 else max(current_loss, 0.0)
        profile = profile.with_statistics(est.sigma_sq, est.g_sq)
        h = HyperParams(gamma=cfg.gamma, beta=beta, batch=cfg.batch,
                        n_devices=cfg.n_devices, vartheta=vartheta,
                        epsilon=cfg.epsilon)
    eps_d = cfg.eps_d if cfg.eps_d > 0 else None
    eps_b = cfg.eps_b if cfg.eps_b > 0 else None

    rows: list[dict] = []
    if cfg.strategy == "adaptsfl":
        sol = bcd(profile, snapshot, h, tol=eps_b, dinkelbach_tol=eps_d)
        rows = [{"reopt": reopt_idx, "iter": it.iteration, "interval": it.interval,
                 "theta_s": it.theta, "lambda": it.lam} for it in sol.trace]
        return _Plan(sol.interval, sol.split, rows)
    if cfg.strategy == "rma+ms":
        interval = _draw_interval(cfg, reopt_idx)
        dk = dinkelbach(profile, snapshot, h, interval, tol=eps_d)
        rows = [{"reopt": reopt_idx, "iter": st.iteration, "interval": interval,
                 "theta_s": float("nan"), "lambda": st.lam} for st in dk.trace]
        return _Plan(interval, dk.split, rows)
    if cfg.strategy == "ma+rms":
        split = _draw_split(cfg, profile.n_layers, reopt_idx)
        ev = evaluate_split(profile, snapshot, h, 1, split)
        isol = solve_interval(ev.aux.t3 + ev.server_sum + ev.aux.t4,
                              ev.aux.t5 + ev.aux.t6,
                              h.epsilon - h.beta * h.gamma * profile.sigma_total / h.n_devices,
                              h.beta, h.gamma, ev.aux.t1, vartheta=h.vartheta)
        rows = [{"reopt": reopt_idx, "iter": 0, "interval": isol.i_star,
                 "theta_s": isol.objective_at_star, "lambda": float("nan")}]
        return _Plan(isol.i_star, split, rows)
    return _Plan(_draw_interval(cfg, reopt_idx),
                 _draw_split(cfg, profile.n_layers, reopt_idx), rows)


def _first_target_round(losses: np.ndarray, target: float | None) -> int | None:
    if target is None:
        return None
    hits = np.nonzero(losses <= target)[0]
    return int(hits[0]) + 1 if len(hits) else None


def _converged_round(losses: np.ndarray) -> int | None:
    """First round where the smoothed loss improvement stays below 0.02%."""
    if len(losses) < SMOOTH_WINDOW + CONVERGENCE_PATIENCE:
        return None
    kernel = np.ones(SMOOTH_WINDOW) / SMOOTH_WINDOW
    smooth = np.convolve(losses, kernel, mode="valid")
    streak = 0
    for k in range(1, len(smooth)):
        rel = (smooth[k - 1] - smooth[k]) / max(abs(smooth[k - 1]), 1e-12)
        streak = streak + 1 if rel < CONVERGENCE_RELATIVE else 0
        if streak >= CONVERGENCE_PATIENCE:
            return k + SMOOTH_WINDOW  # index in the unsmoothed trace, 1-based
    return None


def run_scenario(cfg: ScenarioConfig, out_dir=None,
                 scenario_id: str | None = None) -> RunRecord:
    """Train one scenario end to end and (optionally) persist its outputs."""
    if not cfg.profile_path:
        raise ValueError("scenario config needs a profile path")
    profile = load_profile(cfg.profile_path)
    model = LayeredModel(cfg.layer_sizes, loss=cfg.model_loss)
    if profile.n_layers != model.n_layers:
        raise ValueError(
            f"profile has {profile.n_layers} layers, model has {model.n_layers}"
        )
    x, y = make_dataset(cfg.samples, cfg.dim, cfg.classes, cfg.data_seed)
    shards = make_shards(x, y, cfg.n_devices, cfg.iid, cfg.data_seed)
    scenario_id = scenario_id or f"{cfg.strategy}-s{cfg.seed}"

    layers = model.init_params(cfg.seed)
    current_loss = model.loss(layers, x, y)
    losses, drifts, walls = [], [], []
    events_rows, trace_rows, latency_rows = [], [], []
    wall = 0.0
    round_idx = 0
    reopt_idx = 0
    state = None

    while round_idx < cfg.rounds:
        snapshot = sample_snapshot(cfg.distribution, cfg.n_devices, round_idx,
                                   cfg.net_seed)
        if state is not None:
            layers = averaged_layers(state)
        plan = _plan(cfg, profile, model, layers, shards, snapshot,
                     current_loss, reopt_idx)
        trace_rows.extend(plan.trace_rows)
        state = init_state(layers, plan.split, cfg.n_devices)
        state.round = round_idx

        period = cfg.reopt_period if cfg.reopt_period > 0 else plan.interval
        cycles = max(1, math.ceil(period / plan.interval))
        seg = min(cycles * plan.interval, cfg.rounds - round_idx)

        res = train(model, shards, plan.split, plan.interval, cfg, seg,
                    cfg.seed, state=state)
        state = res.state
        snaps = [sample_snapshot(cfg.distribution, cfg.n_devices, round_idx + k,
                                 cfg.net_seed) for k in range(seg)]
        timing = replay_timing(profile, snaps, plan.split, plan.interval,
                               cfg.batch, seg)
        for ev in timing.events:
            events_rows.append({
                "round": round_idx + ev.round, "step": ev.step,
                "device": ev.device, "start_s": wall + ev.start,
                "end_s": wall + ev.end,
            })
        latency_rows.extend(breakdown_rows(
            split_round_latency(profile, snaps[0], plan.split, cfg.batch),
            ma_latency(profile, snaps[0], plan.split),
            plan.split, cycle=reopt_idx,
        ))
        losses.extend(res.losses.tolist())
        drifts.extend(res.drifts.tolist())
        walls.extend((wall + timing.round_end).tolist())
        wall += timing.total
        current_loss = float(res.losses[-1])
        round_idx += seg
        reopt_idx += 1

    losses_arr = np.asarray(losses)
    walls_arr = np.asarray(walls)
    hit = _first_target_round(losses_arr, cfg.target_loss)
    conv = _converged_round(losses_arr)
    record = RunRecord(
        scenario_id=scenario_id, seed=cfg.seed, strategy=cfg.strategy,
        final_loss=float(losses_arr[-1]), rounds=cfg.rounds,
        rounds_to_target=hit,
        time_to_target=(None if hit is None else float(walls_arr[hit - 1])),
        total_model_time=wall,
        converged_round=conv,
        converged_time=(None if conv is None else float(walls_arr[conv - 1])),
    )

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        loss_rows = [
            {"round": r + 1, "loss": losses[r], "drift_max": drifts[r],
             "wallclock_model_seconds": walls[r]}
            for r in range(len(losses))
        ]
        write_csv(out / "loss.csv",
                  ("round", "loss", "drift_max", "wallclock_model_seconds"),
                  loss_rows)
        write_csv(out / "events.csv",
                  ("round", "step", "device", "start_s", "end_s"), events_rows)
        write_csv(out / "trace.csv",
                  ("reopt", "iter", "interval", "theta_s", "lambda"),
                  trace_rows)
        record.trace_path = "trace.csv"  # relative: bytes stay config-determined
        from .latency import BREAKDOWN_COLUMNS
        write_csv(out / "latency.csv", BREAKDOWN_COLUMNS, latency_rows)
        # Echo the inputs for provenance.
        save_profile(profile, out / "profile.csv")
        if cfg.source_path:
            shutil.copy(cfg.source_path, out / "config.yaml")
    return record


SUMMARY_COLUMNS = (
    "strategy", "runs", "reached_target", "mean_time_to_target_s",
    "std_time_to_target_s", "mean_rounds_to_target", "mean_final_loss",
)

RECORD_COLUMNS = tuple(RunRecord(
    scenario_id="", seed=0, strategy="adaptsfl", final_loss=0.0, rounds=0,
    rounds_to_target=None, time_to_target=None, total_model_time=0.0,
    converged_round=None, converged_time=None).row().keys())


def summarize(records: list[RunRecord]) -> list[dict]:
    """Per-strategy time-to-target statistics, not-reached censored at budget."""
    rows = []
    for strategy in sorted({r.strategy for r in records}):
        group = [r for r in records if r.strategy == strategy and not r.error]
        if not group:
            rows.append({"strategy": strategy, "runs": 0, "reached_target": 0,
                         "mean_time_to_target_s": "", "std_time_to_target_s": "",
                         "mean_rounds_to_target": "", "mean_final_loss": ""})
            continue
        times = np.array([
            r.time_to_target if r.time_to_target is not None else r.total_model_time
            for r in group
        ])
        reached = [r for r in group if r.rounds_to_target is not None]
        rounds_mean = (np.mean([r.rounds_to_target for r in reached])
                       if reached else "")
        rows.append({
            "strategy": strategy,
            "runs": len(group),
            "reached_target": len(reached),
            "mean_time_to_target_s": float(np.mean(times)),
            "std_time_to_target_s": float(np.std(times)),
            "mean_rounds_to_target": rounds_mean,
            "mean_final_loss": float(np.mean([r.final_loss for r in group])),
        })
    return rows


def sweep(cfgs: list[ScenarioConfig], out_dir=None) -> list[RunRecord]:
    """Run all scenarios; a failing run is recorded and the sweep continues."""
    if not cfgs:
        raise ValueError("sweep needs at least one scenario")
    records = []
    for k, cfg in enumerate(cfgs):
        sid = f"{cfg.strategy}-s{cfg.seed}-{k:03d}"
        run_out = Path(out_dir) / "runs" / sid if out_dir is not None else None
        try:
            record = run_scenario(cfg, out_dir=run_out, scenario_id=sid)
            if run_out is not None:
                record.trace_path = f"runs/{sid}/trace.csv"
            records.append(record)
        except Exception as exc:  # noqa: BLE001 - per-row failure is recorded
            records.append(RunRecord(
                scenario_id=sid, seed=cfg.seed, strategy=cfg.strategy,
                final_loss=float("nan"), rounds=cfg.rounds,
                rounds_to_target=None, time_to_target=None,
                total_model_time=float("nan"), converged_round=None,
                converged_time=None, error=f"{type(exc).__name__}: {exc}",
            ))
    records.sort(key=lambda r: r.scenario_id)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "records.csv", RECORD_COLUMNS,
                  [r.row() for r in records])
        write_csv(out / "summary.csv", SUMMARY_COLUMNS, summarize(records))
    return records
