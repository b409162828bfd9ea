"""Latency model for split training over a heterogeneous edge network.

A training cycle is I barrier-synchronized rounds of split training plus
one client-side aggregation stage. Per round, every device runs its
client-side forward pass and uploads cut-layer activations; the server
runs the remaining forward/backward for all devices; gradients flow back
down and devices finish their backward pass. Every I rounds the client
sub-models (and the server-held non-common layers) make a round trip to
the fed server.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkSnapshot
from .profile import ModelProfile


@dataclass(frozen=True)
class SplitDecision:
    """Cut layer per device; layers 1..cuts[i] run on device i."""

    cuts: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "cuts", tuple(int(c) for c in self.cuts))

    @property
    def n_devices(self) -> int:
        return len(self.cuts)

    @property
    def max_cut(self) -> int:
        return max(self.cuts)

    def validate(self, n_layers: int, n_devices: int | None = None) -> None:
        if n_devices is not None and len(self.cuts) != n_devices:
            raise ValueError(f"{len(self.cuts)} cuts for {n_devices} devices")
        for i, c in enumerate(self.cuts):
            if not 1 <= c <= n_layers:
                raise ValueError(f"device {i}: cut {c} out of range 1..{n_layers}")


@dataclass(frozen=True)
class LatencyBreakdown:
    """Stage latencies in seconds; per-device fields are arrays over devices.

    ``total`` is the barrier-synchronized makespan of the stages present:
    for the per-round part max(client_fp + act_up) + server_fp + server_bp
    + max(grad_down + client_bp), for the aggregation part
    max(ma_up_client, ma_up_server) + max(ma_down_client, ma_down_server).
    """

    client_fp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    act_up: np.ndarray = field(default_factory=lambda: np.zeros(0))
    server_fp: float = 0.0
    server_bp: float = 0.0
    grad_down: np.ndarray = field(default_factory=lambda: np.zeros(0))
    client_bp: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma_up_client: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma_up_server: float = 0.0
    ma_down_client: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ma_down_server: float = 0.0
    total: float = 0.0


def _cut_index(profile: ModelProfile, split: SplitDecision, snapshot: NetworkSnapshot):
    split.validate(profile.n_layers, snapshot.n_devices)
    return np.asarray(split.cuts, dtype=int) - 1


def split_round_latency(
    profile: ModelProfile,
    snapshot: NetworkSnapshot,
    split: SplitDecision,
    batch: int,
) -> LatencyBreakdown:
    """One split-training round; ``total`` is the round makespan."""
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    idx = _cut_index(profile, split, snapshot)
    rho = profile.column("fp_flops_cum")
    varpi = profile.column("bp_flops_cum")
    psi = profile.column("act_bits")
    chi = profile.column("grad_bits")
    b = float(batch)

    f_i = snapshot.device_column("compute")
    client_fp = b * rho[idx] / f_i
    act_up = b * psi[idx] / snapshot.device_column("up_edge")
    server_fp = float(b * np.sum(rho[-1] - rho[idx]) / snapshot.server.compute)
    server_bp = float(b * np.sum(varpi[-1] - varpi[idx]) / snapshot.server.compute)
    grad_down = b * chi[idx] / snapshot.device_column("down_edge")
    client_bp = b * varpi[idx] / f_i

    total = (
        float(np.max(client_fp + act_up))
        + server_fp
        + server_bp
        + float(np.max(grad_down + client_bp))
    )
    return LatencyBreakdown(
        client_fp=client_fp,
        act_up=act_up,
        server_fp=server_fp,
        server_bp=server_bp,
        grad_down=grad_down,
        client_bp=client_bp,
        total=total,
    )


def ma_latency(
    profile: ModelProfile, snapshot: NetworkSnapshot, split: SplitDecision
) -> LatencyBreakdown:
    """One client-side aggregation stage; ``total`` is its makespan.

    The edge server exchanges only the non-common slack: with per-device
    sub-model sizes d_i that is sum(max(d) - d_i), which is exactly zero
    when all cuts agree.
    """
    idx = _cut_index(profile, split, snapshot)
    delta = profile.column("param_bits_cum")[idx]
    slack = float(np.sum(np.max(delta) - delta))

    ma_up_client = delta / snapshot.device_column("up_fed")
    ma_up_server = slack / snapshot.server.to_fed
    ma_down_client = delta / snapshot.device_column("down_fed")
    ma_down_server = slack / snapshot.server.from_fed

    total = max(float(np.max(ma_up_client)), ma_up_server) + max(
        float(np.max(ma_down_client)), ma_down_server
    )
    return LatencyBreakdown(
        ma_up_client=ma_up_client,
        ma_up_server=ma_up_server,
        ma_down_client=ma_down_client,
        ma_down_server=ma_down_server,
        total=total,
    )


def total_cycle_latency(
    profile: ModelProfile,
    snapshot: NetworkSnapshot,
    split: SplitDecision,
    interval: int,
    batch: int,
) -> float:
    """Latency of one full cycle: I rounds of split training plus one MA stage."""
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    round_part = split_round_latency(profile, snapshot, split, batch)
    ma_part = ma_latency(profile, snapshot, split)
    return interval * round_part.total + ma_part.total


BREAKDOWN_COLUMNS = (
    "cycle",
    "device",
    "cut",
    "client_fp_s",
    "act_up_s",
    "server_fp_s",
    "server_bp_s",
    "grad_down_s",
    "client_bp_s",
    "ma_up_client_s",
    "ma_up_server_s",
    "ma_down_client_s",
    "ma_down_server_s",
)


def breakdown_rows(
    round_part: LatencyBreakdown,
    ma_part: LatencyBreakdown,
    split: SplitDecision,
    cycle: int = 0,
) -> list[dict]:
    """One exportable row per (cycle, device), columns named after the stages."""
    rows = []
    for i, cut in enumerate(split.cuts):
        rows.append({
            "cycle": cycle,
            "device": i,
            "cut": cut,
            "client_fp_s": float(round_part.client_fp[i]),
            "act_up_s": float(round_part.act_up[i]),
            "server_fp_s": round_part.server_fp,
            "server_bp_s": round_part.server_bp,
            "grad_down_s": float(round_part.grad_down[i]),
            "client_bp_s": float(round_part.client_bp[i]),
            "ma_up_client_s": float(ma_part.ma_up_client[i]),
            "ma_up_server_s": ma_part.ma_up_server,
            "ma_down_client_s": float(ma_part.ma_down_client[i]),
            "ma_down_server_s": ma_part.ma_down_server,
        })
    return rows
