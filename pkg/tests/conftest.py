"""Shared instance generators and independent oracle evaluators.

The oracles re-derive every quantity from the stage formulas with plain
Python arithmetic and exhaustive enumeration, independent of the package's
vectorized/branch-and-bound code paths.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from splitfed.bound import HyperParams
from splitfed.network import DeviceResources, NetworkSnapshot, ServerResources
from splitfed.profile import LayerStats, ModelProfile, build_profile


def random_profile(rng: np.random.Generator, n_layers: int) -> ModelProfile:
    """Random valid profile: strictly increasing cumulative columns."""
    fp = np.cumsum(rng.uniform(0.2e9, 1.5e9, n_layers))
    bp = np.cumsum(rng.uniform(0.4e9, 3.0e9, n_layers))
    param = np.cumsum(rng.uniform(0.3e6, 8e6, n_layers))
    act = rng.uniform(0.2e6, 8e6, n_layers)
    grad = rng.uniform(0.2e6, 8e6, n_layers)
    sigma = rng.uniform(0.001, 0.05, n_layers)
    g_sq = sigma + rng.uniform(0.01, 0.6, n_layers)
    return build_profile(
        LayerStats(fp[j], bp[j], act[j], grad[j], param[j], sigma[j], g_sq[j])
        for j in range(n_layers)
    )


def random_snapshot(rng: np.random.Generator, n_devices: int,
                    round_idx: int = 0) -> NetworkSnapshot:
    devices = tuple(
        DeviceResources(
            compute=rng.uniform(1e12, 2e12),
            up_edge=rng.uniform(60e6, 90e6),
            down_edge=rng.uniform(200e6, 400e6),
            up_fed=rng.uniform(60e6, 90e6),
            down_fed=rng.uniform(200e6, 400e6),
        )
        for _ in range(n_devices)
    )
    server = ServerResources(compute=rng.uniform(10e12, 30e12),
                             to_fed=rng.uniform(300e6, 500e6),
                             from_fed=rng.uniform(300e6, 500e6))
    return NetworkSnapshot(devices=devices, server=server, round=round_idx)


def random_instance(seed: int, max_devices: int = 4, max_layers: int = 6,
                    interval: int | None = None):
    """(profile, snapshot, hyper, interval) with every split feasible.

    Epsilon sits comfortably above the noise term plus the worst-case drift
    term, so the accuracy denominator is positive for every assignment.
    """
    rng = np.random.default_rng(seed)
    n_devices = int(rng.integers(1, max_devices + 1))
    n_layers = int(rng.integers(2, max_layers + 1))
    profile = random_profile(rng, n_layers)
    snapshot = random_snapshot(rng, n_devices)
    if interval is None:
        interval = int(rng.integers(1, 9))
    gamma = float(rng.uniform(0.01, 0.3))
    beta = float(rng.uniform(0.5, 1.0 / gamma))
    vartheta = float(rng.uniform(0.3, 3.0))
    noise = beta * gamma * profile.sigma_total / n_devices
    worst_drift = 4.0 * (beta * gamma * interval) ** 2 * float(profile.g_cum[-1])
    epsilon = (noise + worst_drift) * float(rng.uniform(1.2, 3.0)) + 1e-6
    h = HyperParams(gamma=gamma, beta=beta, batch=int(rng.integers(4, 33)),
                    n_devices=n_devices, vartheta=vartheta, epsilon=epsilon)
    return profile, snapshot, h, interval


# ---------------------------------------------------------------------------
# Independent evaluation of the split objective (plain-Python path)
# ---------------------------------------------------------------------------

def oracle_q_p(profile: ModelProfile, snapshot: NetworkSnapshot,
               h: HyperParams, interval: int, cuts):
    """(Q, P) at one assignment, straight from the stage formulas."""
    b = float(h.batch)
    n = len(cuts)
    layers = profile.layers
    rho_l = layers[-1].fp_flops_cum
    varpi_l = layers[-1].bp_flops_cum
    f_s = snapshot.server.compute

    t3 = 0.0
    t4 = 0.0
    server = 0.0
    up_fed_max = 0.0
    down_fed_max = 0.0
    deltas = []
    g_max = 0.0
    for i, c in enumerate(cuts):
        st = layers[c - 1]
        dev = snapshot.devices[i]
        t3 = max(t3, b * st.fp_flops_cum / dev.compute + b * st.act_bits / dev.up_edge)
        t4 = max(t4, b * st.grad_bits / dev.down_edge + b * st.bp_flops_cum / dev.compute)
        server += b * (rho_l - st.fp_flops_cum) / f_s + b * (varpi_l - st.bp_flops_cum) / f_s
        up_fed_max = max(up_fed_max, st.param_bits_cum / dev.up_fed)
        down_fed_max = max(down_fed_max, st.param_bits_cum / dev.down_fed)
        deltas.append(st.param_bits_cum)
        g_max = max(g_max, sum(layers[k].grad_sq_moment for k in range(c)))
    slack = n * max(deltas) - sum(deltas)
    t5 = max(up_fed_max, slack / snapshot.server.to_fed)
    t6 = max(down_fed_max, slack / snapshot.server.from_fed)
    q = 2.0 * h.vartheta * (interval * (t3 + server + t4) + t5 + t6)
    sigma_total = sum(s.grad_var for s in layers)
    p = h.gamma * interval * (
        h.epsilon - h.beta * h.gamma * sigma_total / h.n_devices
        - 4.0 * (h.beta * h.gamma * interval) ** 2 * g_max
    )
    return q, p


def oracle_enumerate(profile, snapshot, h, interval, lam=None):
    """Evaluate every one-hot assignment; returns (cuts, q, p) triples."""
    n_layers = profile.n_layers
    n = snapshot.n_devices
    out = []
    for cuts in itertools.product(range(1, n_layers + 1), repeat=n):
        q, p = oracle_q_p(profile, snapshot, h, interval, cuts)
        out.append((cuts, q, p))
    return out


def oracle_best_value(profile, snapshot, h, interval, lam):
    """min over assignments of Q - lam*P, with the argmin."""
    best = None
    for cuts, q, p in oracle_enumerate(profile, snapshot, h, interval):
        val = q - lam * p
        if best is None or val < best[0]:
            best = (val, cuts)
    return best


def oracle_best_ratio(profile, snapshot, h, interval):
    """min over assignments of Q/P (requires P > 0 everywhere)."""
    best = None
    for cuts, q, p in oracle_enumerate(profile, snapshot, h, interval):
        assert p > 0, "instance generator must keep every assignment feasible"
        val = q / p
        if best is None or val < best[0]:
            best = (val, cuts)
    return best


def oracle_joint_minimum(profile, snapshot, h, i_max=50):
    """Exhaustive joint optimum of Q/P over intervals 1..i_max and all splits."""
    best = None
    table = []
    for cuts in itertools.product(range(1, profile.n_layers + 1),
                                  repeat=snapshot.n_devices):
        q1, _ = oracle_q_p(profile, snapshot, h, 1, cuts)
        table.append((cuts, q1))
    for interval in range(1, i_max + 1):
        for cuts, _ in table:
            q, p = oracle_q_p(profile, snapshot, h, interval, cuts)
            if p <= 0:
                continue
            val = q / p
            if best is None or val < best[0]:
                best = (val, interval, cuts)
    return best


# ---------------------------------------------------------------------------
# Independent per-event latency accumulation
# ---------------------------------------------------------------------------

def oracle_trace_total(profile, snapshots, cuts, interval, batch, rounds):
    """Event-by-event clock accumulation of the barrier-synchronized cycle."""
    b = float(batch)
    layers = profile.layers
    rho_l = layers[-1].fp_flops_cum
    varpi_l = layers[-1].bp_flops_cum
    t = 0.0
    for r in range(1, rounds + 1):
        snap = snapshots[r - 1]
        phase1 = 0.0
        phase3 = 0.0
        server = 0.0
        for i, c in enumerate(cuts):
            st = layers[c - 1]
            dev = snap.devices[i]
            phase1 = max(phase1, b * st.fp_flops_cum / dev.compute
                         + b * st.act_bits / dev.up_edge)
            phase3 = max(phase3, b * st.grad_bits / dev.down_edge
                         + b * st.bp_flops_cum / dev.compute)
            server += (b * (rho_l - st.fp_flops_cum)
                       + b * (varpi_l - st.bp_flops_cum)) / snap.server.compute
        t += phase1 + server + phase3
        if r % interval == 0:
            deltas = [layers[c - 1].param_bits_cum for c in cuts]
            slack = len(cuts) * max(deltas) - math.fsum(deltas)
            up = max(max(d / snap.devices[i].up_fed for i, d in enumerate(deltas)),
                     slack / snap.server.to_fed)
            down = max(max(d / snap.devices[i].down_fed for i, d in enumerate(deltas)),
                       slack / snap.server.from_fed)
            t += up + down
    return t


@pytest.fixture
def tiny_profile() -> ModelProfile:
    """Handy 4-layer profile with easy round numbers."""
    return build_profile([
        LayerStats(1e9, 2e9, 4e6, 3e6, 1e6, 0.01, 0.5),
        LayerStats(2e9, 4e9, 3e6, 2e6, 3e6, 0.02, 0.4),
        LayerStats(3e9, 6e9, 2e6, 1e6, 7e6, 0.03, 0.3),
        LayerStats(4e9, 8e9, 1e6, 0.5e6, 15e6, 0.04, 0.2),
    ])
