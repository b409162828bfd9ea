"""Convergence bound for split federated training and derived round counts.

The averaged-gradient-norm bound has three terms: an initialization term
decaying as 1/R, a gradient-noise term, and a client-drift term that is
active only when the client aggregation interval exceeds one round and
grows with the interval squared and with the cumulative second moment of
the client-side layers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class InfeasibleAccuracy(Exception):
    """Target accuracy unreachable for the given interval and cut depth."""

    def __init__(self, message, epsilon=None, interval=None, l_c=None):
        super().__init__(message)
        self.epsilon = epsilon
        self.interval = interval
        self.l_c = l_c


@dataclass(frozen=True)
class HyperParams:
    """Training hyperparameters and loss-landscape constants."""

    gamma: float        # learning rate
    beta: float         # smoothness constant
    batch: int          # mini-batch size
    n_devices: int
    vartheta: float     # initial optimality gap f(w0) - f*
    epsilon: float      # target mean squared gradient norm

    def __post_init__(self):
        if not 0 < self.gamma <= 1.0 / self.beta:
            raise ValueError(
                f"need 0 < gamma <= 1/beta, got gamma={self.gamma}, beta={self.beta}"
            )
        if self.vartheta < 0:
            raise ValueError(f"vartheta must be >= 0, got {self.vartheta}")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if self.batch < 1 or self.n_devices < 1:
            raise ValueError("batch and n_devices must be >= 1")


@dataclass(frozen=True)
class BoundInputs:
    """Aggregation interval and profile statistics entering the bound."""

    interval: int     # client-side MA interval I
    l_c: int          # deepest client-side cut across devices
    sigma_total: float  # sum of per-layer variance bounds over all layers
    g_cum_lc: float   # cumulative second moment of layers 1..l_c

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError(f"interval must be >= 1, got {self.interval}")
        if self.l_c < 1:
            raise ValueError(f"l_c must be >= 1, got {self.l_c}")


def drift_bound(h: HyperParams, inputs: BoundInputs) -> float:
    """Worst-case squared client drift between aggregations.

    Zero when the interval is one round (clients are re-synchronized every
    round), otherwise 4 * gamma^2 * I^2 * g_cum_lc.
    """
    if inputs.interval == 1:
        return 0.0
    return 4.0 * h.gamma**2 * inputs.interval**2 * inputs.g_cum_lc


def convergence_bound(h: HyperParams, inputs: BoundInputs, rounds: float) -> float:
    """Upper bound on the average squared gradient norm after ``rounds``."""
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    init_term = 2.0 * h.vartheta / (h.gamma * rounds)
    noise_term = h.beta * h.gamma * inputs.sigma_total / h.n_devices
    return init_term + noise_term + h.beta**2 * drift_bound(h, inputs)


def accuracy_margin(h: HyperParams, inputs: BoundInputs) -> float:
    """Target accuracy minus the R-independent bound terms (must be > 0)."""
    noise_term = h.beta * h.gamma * inputs.sigma_total / h.n_devices
    return h.epsilon - noise_term - h.beta**2 * drift_bound(h, inputs)


def min_rounds(h: HyperParams, inputs: BoundInputs) -> float:
    """Rounds needed to push the bound below the target accuracy (real-valued)."""
    margin = accuracy_margin(h, inputs)
    if margin <= 0:
        raise InfeasibleAccuracy(
            f"accuracy {h.epsilon} unreachable: margin {margin} <= 0 "
            f"at interval {inputs.interval}, cut depth {inputs.l_c}",
            epsilon=h.epsilon, interval=inputs.interval, l_c=inputs.l_c,
        )
    return 2.0 * h.vartheta / (h.gamma * margin)


def min_rounds_int(h: HyperParams, inputs: BoundInputs) -> int:
    """Integer-ceiling variant of :func:`min_rounds` for reporting."""
    return max(1, math.ceil(min_rounds(h, inputs)))


def weighted_objective(h: HyperParams, inputs: BoundInputs, cycle_latency: float) -> float:
    """Predicted training time: aggregation cycles to converge times cycle latency.

    With the round bound tight, the number of cycles is min_rounds / I, so
    the objective is 2*vartheta / (gamma * I * margin) * cycle_latency.
    """
    return min_rounds(h, inputs) / inputs.interval * cycle_latency
