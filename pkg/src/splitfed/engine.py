"""Split federated training loop at desk scale, plus probes and timing replay.

Each device owns layers up to its cut; the server hosts the rest. Layers
above the deepest cut form the server-side common stack, updated every
round with the gradient averaged across devices. Layers between a
device's cut and the deepest cut are that device's non-common stack,
updated individually and aggregated together with the client stacks every
``interval`` rounds through the fed server.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .latency import SplitDecision, ma_latency, split_round_latency
from .model import DataShards, LayeredModel, minibatch_indices, substream
from .network import NetworkSnapshot
from .profile import ModelProfile

DIVERGENCE_LIMIT = 1e6


class TrainingDiverged(RuntimeError):
    """Loss exceeded the divergence guard during training."""


@dataclass
class TrainingState:
    """Mutable parameter placement for one training run.

    ``client[i]`` holds device i's layers 1..c_i, ``noncommon[i]`` its
    server-side layers c_i+1..L_c, ``common`` the shared layers L_c+1..L.
    The common stack is identical for every device by construction.
    """

    split: SplitDecision
    client: list[list[np.ndarray]]
    noncommon: list[list[np.ndarray]]
    common: list[np.ndarray]
    round: int = 0

    @property
    def n_devices(self) -> int:
        return len(self.client)

    @property
    def max_cut(self) -> int:
        return self.split.max_cut

    def device_layers(self, i: int) -> list[np.ndarray]:
        """Device i's full layer stack in layer order 1..L (live references)."""
        return self.client[i] + self.noncommon[i] + self.common

    def client_specific(self, i: int) -> list[np.ndarray]:
        """Layers 1..L_c of device i: the part aggregated every interval."""
        return self.client[i] + self.noncommon[i]


def init_state(layers: list[np.ndarray], split: SplitDecision,
               n_devices: int | None = None) -> TrainingState:
    """Place one shared parameter set onto devices and server per the split."""
    if n_devices is None:
        n_devices = split.n_devices
    split.validate(len(layers), n_devices)
    l_c = split.max_cut
    client = [[layers[j].copy() for j in range(c)] for c in split.cuts]
    noncommon = [[layers[j].copy() for j in range(c, l_c)] for c in split.cuts]
    common = [layers[j].copy() for j in range(l_c, len(layers))]
    return TrainingState(split=split, client=client, noncommon=noncommon,
                         common=common)


def _client_average(state: TrainingState) -> list[np.ndarray]:
    """Device-average of layers 1..L_c, accumulated in device index order."""
    n = state.n_devices
    acc = [layer.copy() for layer in state.client_specific(0)]
    for i in range(1, n):
        for a, layer in zip(acc, state.client_specific(i)):
            a += layer
    for a in acc:
        a /= n
    return acc


def averaged_layers(state: TrainingState) -> list[np.ndarray]:
    """The analysis object: device-averaged client part plus the common stack."""
    return _client_average(state) + [layer.copy() for layer in state.common]


@dataclass(frozen=True)
class TrainResult:
    state: TrainingState
    losses: np.ndarray       # full-dataset loss of the averaged model, per round
    drifts: np.ndarray       # max over devices of squared distance to the average
    grad_sq_max: np.ndarray  # per-layer max observed squared gradient norm


def train(model: LayeredModel, shards: DataShards, split: SplitDecision,
          interval: int, hyper, rounds: int, seed: int,
          state: TrainingState | None = None) -> TrainResult:
    """Run ``rounds`` rounds of split training with aggregation every ``interval``.

    Pass the returned state back in to continue a run; batch draws are keyed
    by absolute round index, so a run sliced into segments reproduces an
    unsliced one. Aggregation counts rounds from the segment start.
    """
    if interval < 1 or rounds < 0:
        raise ValueError("interval must be >= 1 and rounds >= 0")
    n = shards.n_devices
    split.validate(model.n_layers, n)
    if state is None:
        state = init_state(model.init_params(seed), split, n)
    elif state.split.cuts != split.cuts:
        raise ValueError("state was built for a different split")
    l_c = split.max_cut
    gamma = hyper.gamma
    batch = hyper.batch
    device_data = [shards.device_data(i) for i in range(n)]

    losses = np.zeros(rounds)
    drifts = np.zeros(rounds)
    grad_sq_max = np.zeros(model.n_layers)
    start = state.round

    for r in range(1, rounds + 1):
        t = start + r
        common_grad = [np.zeros_like(layer) for layer in state.common]
        for i in range(n):
            x_dev, y_dev = device_data[i]
            pick = minibatch_indices(seed, i, t, len(y_dev), batch)
            _, grads = model.loss_and_grads(state.device_layers(i),
                                            x_dev[pick], y_dev[pick])
            for j, g in enumerate(grads):
                grad_sq_max[j] = max(grad_sq_max[j], float(g @ g))
            c = split.cuts[i]
            for j in range(c):
                state.client[i][j] -= gamma * grads[j]
            for j in range(c, l_c):
                state.noncommon[i][j - c] -= gamma * grads[j]
            for j in range(l_c, model.n_layers):
                common_grad[j - l_c] += grads[j]
        for layer, g in zip(state.common, common_grad):
            layer -= gamma * (g / n)

        h_c = _client_average(state)
        if r % interval == 0:
            for i in range(n):
                c = split.cuts[i]
                for j in range(c):
                    state.client[i][j] = h_c[j].copy()
                for j in range(c, l_c):
                    state.noncommon[i][j - c] = h_c[j].copy()
            drift = 0.0  # every client-specific stack now equals the average
        else:
            drift = max(
                sum(float(np.sum((a - layer) ** 2))
                    for a, layer in zip(h_c, state.client_specific(i)))
                for i in range(n)
            )

        loss = model.loss(h_c + state.common, shards.x, shards.y)
        if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
            raise TrainingDiverged(
                f"loss {loss} at round {t} (gamma={gamma}, interval={interval})"
            )
        losses[r - 1] = loss
        drifts[r - 1] = drift
        state.round = t

    return TrainResult(state=state, losses=losses, drifts=drifts,
                       grad_sq_max=grad_sq_max)


# ---------------------------------------------------------------------------
# Constant estimation probes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantsEstimate:
    beta_hat: float
    sigma_sq: np.ndarray  # per-layer variance of mini-batch gradients
    g_sq: np.ndarray      # per-layer second-moment bound


def _flat(grads) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads])


def estimate_constants(model: LayeredModel, params: list[np.ndarray],
                       shards: DataShards, hyper, probe_rounds: int,
                       seed: int = 0, n_probe_batches: int = 8) -> ConstantsEstimate:
    """Probe smoothness and per-layer gradient statistics around ``params``.

    The smoothness estimate runs gradient-difference power iteration: the
    ratio ||grad(w+d) - grad(w)|| / ||d|| climbs toward the largest local
    curvature as the direction d is re-aligned each probe. Variances come
    from without-replacement mini-batches against each device's full-shard
    gradient, so a batch covering the shard yields exactly zero.
    """
    if probe_rounds < 2:
        raise ValueError(f"probe_rounds must be >= 2, got {probe_rounds}")
    rng = substream(seed, 1_000_001)
    base = [p.copy() for p in params]
    _, base_grads = model.loss_and_grads(base, shards.x, shards.y)
    g0 = _flat(base_grads)
    scale = 1e-3 * max(1.0, float(np.linalg.norm(_flat(base))))
    direction = rng.standard_normal(len(g0))
    direction *= scale / np.linalg.norm(direction)

    beta_hat = 0.0
    dims = [model.layer_dim(k) for k in range(1, model.n_layers + 1)]
    for _ in range(probe_rounds):
        shifted = []
        pos = 0
        for p, d in zip(base, dims):
            shifted.append(p + direction[pos: pos + d])
            pos += d
        _, probe_grads = model.loss_and_grads(shifted, shards.x, shards.y)
        diff = _flat(probe_grads) - g0
        diff_norm = float(np.linalg.norm(diff))
        step_norm = float(np.linalg.norm(direction))
        if diff_norm == 0.0 or step_norm == 0.0:
            # Degenerate probe (flat direction): re-randomize and skip.
            direction = rng.standard_normal(len(g0))
            direction *= scale / np.linalg.norm(direction)
            continue
        beta_hat = max(beta_hat, diff_norm / step_norm)
        direction = diff * (scale / diff_norm)

    n_layers = model.n_layers
    sigma_sq = np.zeros(n_layers)
    g_sq = np.zeros(n_layers)
    for i in range(shards.n_devices):
        x_dev, y_dev = shards.device_data(i)
        _, full = model.loss_and_grads(base, x_dev, y_dev)
        dev_sigma = np.zeros(n_layers)
        dev_gmax = np.zeros(n_layers)
        b = min(hyper.batch, len(y_dev))
        for _ in range(n_probe_batches):
            # sorted so a batch covering the shard is the full-batch gradient
            pick = np.sort(rng.choice(len(y_dev), size=b, replace=False))
            _, grads = model.loss_and_grads(base, x_dev[pick], y_dev[pick])
            for j in range(n_layers):
                d = grads[j] - full[j]
                dev_sigma[j] += float(d @ d)
                dev_gmax[j] = max(dev_gmax[j], float(grads[j] @ grads[j]))
        dev_sigma /= n_probe_batches
        full_sq = np.array([float(full[j] @ full[j]) for j in range(n_layers)])
        # Second moment dominates variance: fold variance + mean-square in.
        dev_g = np.maximum(dev_gmax, dev_sigma + full_sq)
        sigma_sq = np.maximum(sigma_sq, dev_sigma)
        g_sq = np.maximum(g_sq, dev_g)
    return ConstantsEstimate(beta_hat=beta_hat, sigma_sq=sigma_sq, g_sq=g_sq)


# ---------------------------------------------------------------------------
# Timing replay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimelineEvent:
    round: int
    step: str
    device: int  # -1 for server-side steps
    start: float
    end: float


@dataclass(frozen=True)
class TimingTrace:
    events: tuple[TimelineEvent, ...]
    total: float
    round_end: np.ndarray  # barrier clock after each round (incl. MA if due)


def replay_timing(profile: ModelProfile, snapshots, split: SplitDecision,
                  interval: int, batch: int, rounds: int) -> TimingTrace:
    """Replay the cycle structure event by event against per-round snapshots.

    ``snapshots`` is one snapshot (held constant) or a sequence with one
    entry per round. The aggregation stage runs after every ``interval``-th
    round using that round's snapshot.
    """
    if isinstance(snapshots, NetworkSnapshot):
        snapshots = [snapshots] * rounds
    if len(snapshots) < rounds:
        raise ValueError(f"need {rounds} snapshots, got {len(snapshots)}")
    events = []
    round_end = np.zeros(rounds)
    clock = 0.0
    for r in range(1, rounds + 1):
        snap = snapshots[r - 1]
        part = split_round_latency(profile, snap, split, batch)
        for i in range(split.n_devices):
            fp_end = clock + part.client_fp[i]
            events.append(TimelineEvent(r, "client_fp", i, clock, fp_end))
            events.append(TimelineEvent(r, "act_up", i, fp_end,
                                        fp_end + part.act_up[i]))
        t = clock + float(np.max(part.client_fp + part.act_up))
        events.append(TimelineEvent(r, "server_fp", -1, t, t + part.server_fp))
        t += part.server_fp
        events.append(TimelineEvent(r, "server_bp", -1, t, t + part.server_bp))
        t += part.server_bp
        for i in range(split.n_devices):
            gd_end = t + part.grad_down[i]
            events.append(TimelineEvent(r, "grad_down", i, t, gd_end))
            events.append(TimelineEvent(r, "client_bp", i, gd_end,
                                        gd_end + part.client_bp[i]))
        clock = t + float(np.max(part.grad_down + part.client_bp))
        if r % interval == 0:
            ma = ma_latency(profile, snap, split)
            for i in range(split.n_devices):
                events.append(TimelineEvent(r, "ma_up_client", i, clock,
                                            clock + ma.ma_up_client[i]))
            events.append(TimelineEvent(r, "ma_up_server", -1, clock,
                                        clock + ma.ma_up_server))
            t = clock + max(float(np.max(ma.ma_up_client)), ma.ma_up_server)
            for i in range(split.n_devices):
                events.append(TimelineEvent(r, "ma_down_client", i, t,
                                            t + ma.ma_down_client[i]))
            events.append(TimelineEvent(r, "ma_down_server", -1, t,
                                        t + ma.ma_down_server))
            clock = t + max(float(np.max(ma.ma_down_client)), ma.ma_down_server)
        round_end[r - 1] = clock
    return TimingTrace(events=tuple(events), total=clock, round_end=round_end)
