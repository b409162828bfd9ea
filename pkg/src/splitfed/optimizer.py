"""Joint planner for the client aggregation interval and per-device split points.

The objective is predicted time-to-accuracy: (rounds to converge / I)
times the latency of one I-round cycle. It is minimized by alternating
two exact block steps: a closed-form-plus-root-finding solve for the
integer interval at fixed splits, and a parametric (Dinkelbach) sequence
of 0-1 subproblems for the splits at fixed interval, each solved exactly
by depth-first branch and bound over devices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bound import HyperParams, InfeasibleAccuracy
from .latency import SplitDecision
from .network import NetworkSnapshot
from .profile import ModelProfile


class NonConvergence(RuntimeError):
    """Iteration cap exceeded before the stop rule was met."""


class DenominatorNonpositive(ValueError):
    """Every interval candidate makes the predicted-rounds denominator <= 0."""


@dataclass(frozen=True)
class AuxVars:
    """Tight values of the linearization caps at a split decision.

    t1 caps the max cumulative gradient moment, t2 the max client
    sub-model bits; t3..t6 cap the four max-coupled latency stages.
    """

    t1: float
    t2: float
    t3: float
    t4: float
    t5: float
    t6: float


@dataclass(frozen=True)
class IntervalSolution:
    i_star: int        # optimal integer interval
    i_prime: float     # real stationary point of the objective
    objective_at_star: float


@dataclass(frozen=True)
class DinkelbachState:
    lam: float
    iteration: int
    residual: float
    tol: float


@dataclass(frozen=True)
class DinkelbachResult:
    split: SplitDecision
    aux: AuxVars
    lam: float          # objective ratio Q/P at the returned split
    residual: float     # parametric objective gap at termination
    iterations: int
    trace: tuple[DinkelbachState, ...]


@dataclass(frozen=True)
class BcdIterate:
    iteration: int
    interval: int
    theta: float
    lam: float


@dataclass(frozen=True)
class OptimizerSolution:
    interval: int
    split: SplitDecision
    aux: AuxVars
    objective: float
    trace: tuple[BcdIterate, ...]


# ---------------------------------------------------------------------------
# Interval subproblem
# ---------------------------------------------------------------------------

def xi(i: float, a: float, b2: float, c: float, beta: float, gamma: float,
       t1: float) -> float:
    """Sign function whose positive root is the real optimum of the interval.

    xi(I) = 8*a*(beta*gamma)^2*I^3*t1 + 12*b2*(beta*gamma)^2*I^2*t1 - b2*c;
    strictly increasing for I > 0 when a, b2, t1 > 0, with xi(0) = -b2*c.
    """
    bg2 = (beta * gamma) ** 2
    return 8.0 * a * bg2 * i**3 * t1 + 12.0 * b2 * bg2 * i**2 * t1 - b2 * c


def _xi_derivative(i, a, b2, beta, gamma, t1):
    bg2 = (beta * gamma) ** 2
    return 24.0 * a * bg2 * i**2 * t1 + 24.0 * b2 * bg2 * i * t1


def interval_objective(i: float, a: float, b2: float, c: float, beta: float,
                       gamma: float, t1: float, vartheta: float = 1.0):
    """Predicted training time at interval i, or None if i is infeasible."""
    denom = c - 4.0 * (beta * gamma) ** 2 * i**2 * t1
    if denom <= 0:
        return None
    return 2.0 * vartheta * (a * i + b2) / (gamma * i * denom)


def _find_root(a, b2, c, beta, gamma, t1):
    """Newton-Raphson with a bisection safeguard on xi's bracketing interval."""
    lo = 0.0  # xi(0) = -b2*c < 0
    hi = 1.0
    for _ in range(200):
        if xi(hi, a, b2, c, beta, gamma, t1) > 0:
            break
        lo = hi
        hi *= 2.0
    else:
        raise NonConvergence("xi never became positive while doubling the bracket")

    x = 0.5 * (lo + hi)
    for _ in range(200):
        f = xi(x, a, b2, c, beta, gamma, t1)
        if f == 0.0:
            return x
        if f < 0:
            lo = x
        else:
            hi = x
        df = _xi_derivative(x, a, b2, beta, gamma, t1)
        if df > 0:
            x_new = x - f / df
            if not lo < x_new < hi:
                x_new = 0.5 * (lo + hi)
        else:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 1e-14 * max(1.0, x):
            return x_new
        x = x_new
    return x


def solve_interval(a: float, b2: float, c: float, beta: float, gamma: float,
                   t1: float, vartheta: float = 1.0,
                   i_max: int = 1_000_000) -> IntervalSolution:
    """Optimal integer aggregation interval for fixed split-side coefficients.

    ``a`` is the per-round latency (cap on client FP+upload, server FP+BP,
    cap on download+client BP), ``b2`` the aggregation-stage latency,
    ``c`` the accuracy margin left after the gradient-noise term, ``t1``
    the cap on the cumulative gradient moment of client-side layers.
    """
    if c <= 0:
        raise InfeasibleAccuracy(f"accuracy margin {c} <= 0", epsilon=c)
    if min(a, b2, t1) < 0:
        raise ValueError("a, b2, and t1 must be >= 0")

    def theta(i):
        return interval_objective(i, a, b2, c, beta, gamma, t1, vartheta)

    if t1 == 0.0 and b2 == 0.0:
        # Objective constant in the interval; keep the smallest.
        return IntervalSolution(1, 0.0, theta(1))
    if t1 == 0.0:
        # No drift penalty: objective strictly decreasing, cap applies.
        return IntervalSolution(i_max, math.inf, theta(i_max))
    if b2 == 0.0:
        # No aggregation cost: objective strictly increasing.
        obj = theta(1)
        if obj is None:
            raise DenominatorNonpositive(
                f"margin {c} - {4 * (beta * gamma) ** 2 * t1} <= 0 at interval 1"
            )
        return IntervalSolution(1, 0.0, obj)

    i_prime = _find_root(a, b2, c, beta, gamma, t1)
    if i_prime <= 1.0:
        # The stationary point sits at or below one round: one round is the
        # integer optimum even when its own denominator is exhausted (the
        # objective is then unbounded at every interval, reported as inf).
        obj = theta(1)
        return IntervalSolution(1, float(i_prime),
                                math.inf if obj is None else float(obj))
    candidates = sorted({math.floor(i_prime), math.ceil(i_prime)})
    scored = [(theta(i), i) for i in candidates]
    scored = [(v, i) for v, i in scored if v is not None]
    if not scored:
        # Unreachable in exact arithmetic: floor(i_prime) always keeps the
        # denominator positive. Guards floating-point boundary cases.
        fallback = theta(1)
        if fallback is None:
            raise DenominatorNonpositive(
                f"no feasible interval: margin {c} exhausted by drift at every candidate"
            )
        scored = [(fallback, 1)]
    obj, i_star = min(scored)  # ties resolve to the smaller interval
    return IntervalSolution(int(i_star), float(i_prime), float(obj))


# ---------------------------------------------------------------------------
# Split subproblem
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostTables:
    """Per-device, per-cut stage costs consumed by the 0-1 solver."""

    fp_up: np.ndarray         # (N, L) client FP + activation upload, per round
    down_bp: np.ndarray       # (N, L) gradient download + client BP, per round
    server_round: np.ndarray  # (L,) one device's server FP+BP share, per round
    up_fed: np.ndarray        # (N, L) sub-model upload at aggregation
    down_fed: np.ndarray      # (N, L) sub-model download at aggregation
    delta: np.ndarray         # (L,) client sub-model bits
    g_cum: np.ndarray         # (L,) cumulative gradient second moment
    r_to_fed: float
    r_from_fed: float


def cost_tables(profile: ModelProfile, snapshot: NetworkSnapshot,
                batch: int) -> CostTables:
    b = float(batch)
    rho = profile.column("fp_flops_cum")
    varpi = profile.column("bp_flops_cum")
    psi = profile.column("act_bits")
    chi = profile.column("grad_bits")
    delta = profile.column("param_bits_cum")
    f_i = snapshot.device_column("compute")[:, None]
    fp_up = b * rho[None, :] / f_i + b * psi[None, :] / snapshot.device_column("up_edge")[:, None]
    down_bp = (
        b * chi[None, :] / snapshot.device_column("down_edge")[:, None]
        + b * varpi[None, :] / f_i
    )
    server_round = b * ((rho[-1] - rho) + (varpi[-1] - varpi)) / snapshot.server.compute
    up_fed = delta[None, :] / snapshot.device_column("up_fed")[:, None]
    down_fed = delta[None, :] / snapshot.device_column("down_fed")[:, None]
    return CostTables(
        fp_up=fp_up, down_bp=down_bp, server_round=server_round,
        up_fed=up_fed, down_fed=down_fed, delta=delta, g_cum=profile.g_cum,
        r_to_fed=snapshot.server.to_fed, r_from_fed=snapshot.server.from_fed,
    )


@dataclass(frozen=True)
class Evaluation:
    """Objective pieces at one split decision and interval."""

    q: float            # latency numerator (time for one cycle, scaled by 2*vartheta)
    p: float            # accuracy denominator
    aux: AuxVars
    server_sum: float   # server FP+BP share of the per-round latency

    @property
    def theta(self) -> float:
        return self.q / self.p


def accuracy_coefficient(profile: ModelProfile, h: HyperParams) -> float:
    """Accuracy margin before the drift term: epsilon - beta*gamma*sum(sigma^2)/N."""
    return h.epsilon - h.beta * h.gamma * profile.sigma_total / h.n_devices


def _evaluate(tables: CostTables, h: HyperParams, c_const: float, interval: int,
              idx: np.ndarray) -> Evaluation:
    n = len(idx)
    rows = np.arange(n)
    t1 = float(np.max(tables.g_cum[idx]))
    t2 = float(np.max(tables.delta[idx]))
    t3 = float(np.max(tables.fp_up[rows, idx]))
    t4 = float(np.max(tables.down_bp[rows, idx]))
    server_sum = float(np.sum(tables.server_round[idx]))
    slack = n * t2 - float(np.sum(tables.delta[idx]))
    t5 = max(float(np.max(tables.up_fed[rows, idx])), slack / tables.r_to_fed)
    t6 = max(float(np.max(tables.down_fed[rows, idx])), slack / tables.r_from_fed)
    q = 2.0 * h.vartheta * (interval * (t3 + server_sum + t4) + t5 + t6)
    p = h.gamma * interval * (c_const - 4.0 * (h.beta * h.gamma) ** 2 * interval**2 * t1)
    return Evaluation(q=q, p=p, aux=AuxVars(t1, t2, t3, t4, t5, t6),
                      server_sum=server_sum)


def evaluate_split(profile: ModelProfile, snapshot: NetworkSnapshot,
                   h: HyperParams, interval: int, split: SplitDecision) -> Evaluation:
    """Objective pieces (Q, P, tight caps) at a given split and interval."""
    split.validate(profile.n_layers, snapshot.n_devices)
    tables = cost_tables(profile, snapshot, h.batch)
    idx = np.asarray(split.cuts, dtype=int) - 1
    return _evaluate(tables, h, accuracy_coefficient(profile, h), interval, idx)


def _solve_inner(tables: CostTables, h: HyperParams, c_const: float,
                 interval: int, lam: float):
    """Exact minimizer of Q - lam*P over one-hot splits, by branch and bound.

    Devices are processed most-constrained first. Each node combines two
    admissible bounds on the remaining free devices:

    - a max-form bound flooring every coupled cap by the fixed maxima, the
      free devices' per-stage best cases, and the strongest single free
      device's joint floor across the four coupled stages;
    - an additive bound using max >= mean: every free device owes its
      server share plus a 1/F share of each coupled cap, which ties a
      cut's server saving to the client cost it forces and is separable,
      so its per-device minima can be prefix-summed per free-set size.

    The nonnegative server slack term is dropped and the gradient-moment
    cap floored at the first layer; everything only shrinks the objective,
    so both bounds are admissible. The incumbent starts from coordinate
    descent, which is usually already optimal, leaving the search to
    certify optimality.
    """
    n, n_layers = tables.fp_up.shape
    two_vt = 2.0 * h.vartheta
    i_f = float(interval)
    lam_t1 = lam * 4.0 * h.beta**2 * h.gamma**3 * interval**3
    lam_const = lam * h.gamma * interval * c_const
    g_min = float(tables.g_cum[0])
    server = tables.server_round
    g_cum = tables.g_cum
    server_min = float(server.min())

    joint = i_f * (tables.fp_up + tables.down_bp) + tables.up_fed + tables.down_fed
    perm = np.argsort(-joint.min(axis=1), kind="stable")
    fp_up = tables.fp_up[perm]
    down_bp = tables.down_bp[perm]
    up_fed = tables.up_fed[perm]
    down_fed = tables.down_fed[perm]
    joint = joint[perm]

    # Cut candidates per device, cheapest first under a separable surrogate.
    score = (i_f * (fp_up + server[None, :] + down_bp) + up_fed + down_fed
             + (lam_t1 / n) * g_cum[None, :])
    order = [np.argsort(score[k], kind="stable") for k in range(n)]

    # Suffix floors over free devices k..n-1. At depth k exactly n-k devices
    # are free, so the additive floors can be fixed per depth:
    # suf_phi[k] = sum_{d >= k} min_j (I*S[j] + joint[d, j] / (n - k)).
    suf_fp_up = np.zeros(n + 1)
    suf_down_bp = np.zeros(n + 1)
    suf_up_fed = np.zeros(n + 1)
    suf_down_fed = np.zeros(n + 1)
    suf_joint = np.zeros(n + 1)
    suf_phi = np.zeros(n + 1)
    joint_min = joint.min(axis=1)
    for k in range(n - 1, -1, -1):
        suf_fp_up[k] = max(suf_fp_up[k + 1], float(fp_up[k].min()))
        suf_down_bp[k] = max(suf_down_bp[k + 1], float(down_bp[k].min()))
        suf_up_fed[k] = max(suf_up_fed[k + 1], float(up_fed[k].min()))
        suf_down_fed[k] = max(suf_down_fed[k + 1], float(down_fed[k].min()))
        suf_joint[k] = max(suf_joint[k + 1], float(joint_min[k]))
        suf_phi[k] = float(
            (i_f * server[None, :] + joint[k:] / (n - k)).min(axis=1).sum()
        )

    def complete_value(ordered):
        idx = np.empty(n, dtype=int)
        idx[perm] = ordered
        ev = _evaluate(tables, h, c_const, interval, idx)
        return ev.q - lam * ev.p, ev, idx

    def prune_margin(lb, best):
        # Relative slack: the bound's scalar arithmetic can land an ulp above
        # the leaf evaluation, and near-ties must be explored for exactness.
        return lb - best > 1e-12 * max(abs(lb), abs(best))

    # Incumbent: separable greedy refined by coordinate descent to a fixed point.
    cur = np.array([int(order[k][0]) for k in range(n)])
    best_val, best_ev, best_idx = complete_value(cur)
    for _ in range(4):
        changed = False
        for k in range(n):
            for j in range(n_layers):
                if j == cur[k]:
                    continue
                keep = cur[k]
                cur[k] = j
                val, ev, idx = complete_value(cur)
                if val < best_val:
                    best_val, best_ev, best_idx = val, ev, idx
                    changed = True
                else:
                    cur[k] = keep
        if not changed:
            break
    cur = np.zeros(n, dtype=int)

    def descend(k, t1, t3, t4, t5, t6, server_sum):
        nonlocal best_val, best_ev, best_idx
        if k == n:
            val, ev, idx = complete_value(cur)
            if val < best_val:
                best_val, best_ev, best_idx = val, ev, idx
            return
        free_server = (n - k) * server_min
        max_form = max(
            i_f * (max(t3, suf_fp_up[k]) + max(t4, suf_down_bp[k]))
            + max(t5, suf_up_fed[k]) + max(t6, suf_down_fed[k]),
            suf_joint[k],
        ) + i_f * free_server
        lb_core = max(max_form, suf_phi[k]) + i_f * server_sum
        lb = two_vt * lb_core + lam_t1 * max(t1, g_min) - lam_const
        if prune_margin(lb, best_val):
            return
        for j in order[k]:
            cur[k] = j
            descend(k + 1,
                    max(t1, float(g_cum[j])),
                    max(t3, float(fp_up[k, j])),
                    max(t4, float(down_bp[k, j])),
                    max(t5, float(up_fed[k, j])),
                    max(t6, float(down_fed[k, j])),
                    server_sum + float(server[j]))

    descend(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    return best_idx, best_ev, best_val


def inner_milp(profile: ModelProfile, snapshot: NetworkSnapshot, h: HyperParams,
               interval: int, lam: float):
    """Exact parametric split subproblem: minimize Q - lam*P over splits.

    Returns (split, tight caps, objective value). The caps are returned at
    the exact maxima they bound, which is optimal because the objective is
    non-decreasing in every cap for lam >= 0. The search certifies the
    exact optimum; worst case is exponential in the device count, but
    profiles with depth-correlated payloads prune to seconds even at
    twenty devices.
    """
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    if lam < 0:
        raise ValueError(f"lam must be >= 0, got {lam}")
    tables = cost_tables(profile, snapshot, h.batch)
    idx, ev, val = _solve_inner(tables, h, accuracy_coefficient(profile, h),
                                interval, lam)
    split = SplitDecision(cuts=tuple(int(j) + 1 for j in idx))
    return split, ev.aux, val


def dinkelbach(profile: ModelProfile, snapshot: NetworkSnapshot, h: HyperParams,
               interval: int, tol: float | None = None,
               lambda0: float | None = None, mu0: SplitDecision | None = None,
               max_iter: int = 100) -> DinkelbachResult:
    """Minimize the ratio objective Q/P over splits at a fixed interval.

    Iterates lam <- Q/P of the current exact parametric minimizer until the
    residual Q - lam*P vanishes within ``tol`` (default 1e-9 of the starting
    numerator). The lam sequence is non-increasing.
    """
    tables = cost_tables(profile, snapshot, h.batch)
    c_const = accuracy_coefficient(profile, h)
    n = snapshot.n_devices

    if mu0 is None:
        mu0 = SplitDecision(cuts=(1,) * n)
    mu0.validate(profile.n_layers, n)
    idx0 = np.asarray(mu0.cuts, dtype=int) - 1
    ev0 = _evaluate(tables, h, c_const, interval, idx0)
    if ev0.p <= 0:
        raise InfeasibleAccuracy(
            f"denominator {ev0.p} <= 0 at the starting split",
            epsilon=h.epsilon, interval=interval, l_c=mu0.max_cut,
        )
    if lambda0 is None:
        lam = ev0.q / ev0.p
    else:
        if ev0.q - lambda0 * ev0.p < 0:
            raise ValueError("lambda0 must keep the starting residual >= 0")
        lam = float(lambda0)
    if tol is None:
        tol = 1e-9 * ev0.q

    trace = []
    split, aux, ev = mu0, ev0.aux, ev0
    for it in range(1, max_iter + 1):
        idx, ev, residual = _solve_inner(tables, h, c_const, interval, lam)
        split = SplitDecision(cuts=tuple(int(j) + 1 for j in idx))
        aux = ev.aux
        trace.append(DinkelbachState(lam=lam, iteration=it, residual=residual, tol=tol))
        if ev.p <= 0:
            raise InfeasibleAccuracy(
                f"denominator {ev.p} <= 0 at iterate {it}",
                epsilon=h.epsilon, interval=interval, l_c=split.max_cut,
            )
        if abs(residual) <= tol:
            return DinkelbachResult(split=split, aux=aux, lam=ev.q / ev.p,
                                    residual=residual, iterations=it,
                                    trace=tuple(trace))
        lam = ev.q / ev.p
    raise NonConvergence(f"no convergence within {max_iter} ratio iterations")


# ---------------------------------------------------------------------------
# Alternating minimization over both blocks
# ---------------------------------------------------------------------------

def bcd(profile: ModelProfile, snapshot: NetworkSnapshot, h: HyperParams,
        tol: float | None = None, i0: int = 1, mu0: SplitDecision | None = None,
        max_iter: int = 50, dinkelbach_tol: float | None = None,
        i_max: int = 1_000_000) -> OptimizerSolution:
    """Alternate exact interval and split updates until the objective settles.

    Each block update is an exact minimizer over its block, so the
    objective trace is non-increasing; the stop rule is an absolute change
    of at most ``tol`` (default 1e-6 of the starting objective).
    """
    c_const = accuracy_coefficient(profile, h)
    if c_const <= 0:
        raise InfeasibleAccuracy(
            f"accuracy margin {c_const} <= 0 before any drift",
            epsilon=h.epsilon, interval=i0,
        )
    if mu0 is None:
        mu0 = SplitDecision(cuts=(1,) * snapshot.n_devices)

    interval = int(i0)
    ev = evaluate_split(profile, snapshot, h, interval, mu0)
    if ev.p <= 0:
        raise InfeasibleAccuracy(
            f"denominator {ev.p} <= 0 at the starting point",
            epsilon=h.epsilon, interval=interval, l_c=mu0.max_cut,
        )
    theta = ev.theta
    if tol is None:
        tol = 1e-6 * theta

    split, aux = mu0, ev.aux
    server_sum = ev.server_sum
    trace = [BcdIterate(iteration=0, interval=interval, theta=theta, lam=theta)]
    best = (theta, interval, split, aux)

    for it in range(1, max_iter + 1):
        isol = solve_interval(
            aux.t3 + server_sum + aux.t4, aux.t5 + aux.t6, c_const,
            h.beta, h.gamma, aux.t1, vartheta=h.vartheta, i_max=i_max,
        )
        interval = isol.i_star
        dk = dinkelbach(profile, snapshot, h, interval,
                        tol=dinkelbach_tol, mu0=split)
        split, aux = dk.split, dk.aux
        ev = evaluate_split(profile, snapshot, h, interval, split)
        server_sum = ev.server_sum
        theta_new = ev.theta
        trace.append(BcdIterate(iteration=it, interval=interval,
                                theta=theta_new, lam=dk.lam))
        if theta_new < best[0]:
            best = (theta_new, interval, split, aux)
        if abs(theta - theta_new) <= tol:
            theta = theta_new
            break
        theta = theta_new
    else:
        raise NonConvergence(f"no convergence within {max_iter} sweeps")

    objective, interval, split, aux = best
    return OptimizerSolution(interval=interval, split=split, aux=aux,
                             objective=objective, trace=tuple(trace))
