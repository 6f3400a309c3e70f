"""Comparison strategies: time sharing (TS) and subcarrier separation (SS).

TS ties each user's time fraction across subcarriers and is solved exactly
with the tied projected-gradient oracle.  SS dedicates every subcarrier
either to one user's data or to power transfer.  Its solver here is a
greedy heuristic, so results are labelled ``"ss-greedy"`` everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from .core import (
    Allocation,
    ProblemInstance,
    SolveResult,
    check_feasibility,
    objective,
    user_energies,
    user_rates,
)
from .oracle import OracleConfig, projected_gradient_optimum
from .scfb import InfeasibleProblemError

POWER = -1  # role of a power-transfer subcarrier


@dataclass(frozen=True)
class TsAllocation:
    """One time fraction per user, shared by all subcarriers."""

    tau: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if np.any(tau < 0) or tau.sum() > 1.0 + 1e-9:
            raise ValueError("time fractions must be >= 0 and sum to at most 1")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))

    def expand(self) -> Allocation:
        return Allocation(np.repeat(self.tau[:, None], self.q.shape[1], axis=1), self.q)


@dataclass(frozen=True)
class SsAllocation:
    """``role[n]`` is the served user of an information subcarrier or ``POWER``."""

    role: np.ndarray
    q: np.ndarray

    def expand(self) -> Allocation:
        K, N = self.q.shape
        m = np.zeros((K, N))
        for n, r in enumerate(self.role):
            if r != POWER:
                m[int(r), n] = 1.0
        return Allocation(m, self.q)


def _guard(inst: ProblemInstance) -> None:
    if inst.K == 1 and np.any(inst.qos.min_energy > 0):
        raise InfeasibleProblemError("a single user cannot harvest from other users' power")


def _result(inst, alloc, status, iterations, strategy, message="") -> SolveResult:
    return SolveResult(
        allocation=alloc,
        rates=user_rates(inst, alloc),
        energies=user_energies(inst, alloc),
        objective=objective(inst, alloc),
        status=status,
        iterations=iterations,
        strategy=strategy,
        message=message,
    )


# -- TS ---------------------------------------------------------------------------


def solve_ts(inst: ProblemInstance, cfg: OracleConfig | None = None) -> SolveResult:
    """Sum-rate optimum when every user keeps one time fraction on all subcarriers."""
    _guard(inst)
    res = projected_gradient_optimum(inst, cfg, tied=True)
    if not res.feasible:
        return _result(inst, Allocation.zeros(inst.K, inst.N), "infeasible", 0, "ts",
                       res.message or "no feasible point found")
    status = "converged" if res.converged else "max_iterations"
    return _result(inst, res.allocation, status, 1, "ts", res.message)


def ts_allocation(result: SolveResult) -> TsAllocation:
    return TsAllocation(result.allocation.m[:, 0].copy(), result.allocation.q)


# -- SS ---------------------------------------------------------------------------


def _energy_lp(inst: ProblemInstance, subset) -> np.ndarray | None:
    """Least-power q on ``subset`` (all users' slots) meeting every energy target."""
    K, N = inst.K, inst.N
    E = inst.qos.min_energy
    q = np.zeros((K, N))
    if not np.any(E > 0):
        return q
    if len(subset) == 0:
        return None
    subset = list(subset)
    S = len(subset)
    g = inst.g[:, subset]
    zeta = inst.params.efficiency
    A = np.zeros((K, K * S))
    for k in range(K):
        for l in range(K):
            if l != k:
                A[k, l * S:(l + 1) * S] = zeta * g[k]
    scale = float(E.max())
    res = linprog(np.ones(K * S), A_ub=-A / scale, b_ub=-E / scale, bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    q[:, subset] = res.x.reshape(K, S) * (1.0 + 1e-9)
    return q


def _assign(inst: ProblemInstance, info) -> dict:
    """Max-gain owner per information subcarrier; users with a rate target keep one each."""
    g = inst.g
    owner = {n: int(np.argmax(g[:, n])) for n in info}
    needy = [k for k in range(inst.K) if inst.qos.min_rate[k] > 0]
    for k in needy:
        if k in owner.values():
            continue
        counts = np.bincount(list(owner.values()), minlength=inst.K)
        movable = [n for n in info if counts[owner[n]] > 1 or inst.qos.min_rate[owner[n]] <= 0]
        if not movable:
            break
        n = max(movable, key=lambda j: (g[k, j] / g[owner[j], j], -j))
        owner[n] = k
    return owner


def _info_power(inst: ProblemInstance, owner: dict, budget: float) -> np.ndarray | None:
    """Water-fill ``budget`` W over the owned subcarriers subject to the rate targets."""
    K, N = inst.K, inst.N
    q = np.zeros((K, N))
    if not owner or budget <= 0:
        return q if not np.any(inst.qos.min_rate > 0) else None
    p = inst.params
    cols = sorted(owner)
    users = np.array([owner[n] for n in cols])
    a = inst.g[users, cols] * budget / p.noise_power
    R = inst.qos.min_rate / p.rate_constant

    # unconstrained water-filling as the start point
    lo, hi = -60.0, math.log(a.max() + 1.0)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.maximum(math.exp(-mid) - 1.0 / a, 0.0).sum() > 1.0:
            lo = mid
        else:
            hi = mid
    x0 = np.maximum(math.exp(-hi) - 1.0 / a, 0.0)
    needy = [k for k in range(K) if R[k] > 0]

    def rates(x):
        return np.bincount(users, weights=np.log1p(a * x), minlength=K)

    if all(rates(x0)[k] >= R[k] for k in needy):
        x = x0
    else:
        cons = [{"type": "ineq", "fun": lambda x: 1.0 - x.sum(), "jac": lambda x: -np.ones_like(x)}]
        if needy:
            cons.append({"type": "ineq", "fun": lambda x: rates(x)[needy] / R[needy] - 1.0})
        res = minimize(lambda x: -np.log1p(a * x).sum(), x0, jac=lambda x: -a / (1.0 + a * x),
                       method="SLSQP", bounds=[(0.0, 1.0)] * len(cols), constraints=cons,
                       options={"maxiter": 500, "ftol": 1e-14})
        x = np.clip(res.x, 0.0, None)
        x = x / max(1.0, x.sum())
    q[users, cols] = x * budget
    return q


def _plan(inst: ProblemInstance, power_set, info_set):
    """Evaluate one role assignment; returns (SsAllocation, FeasibilityReport) or None."""
    q_power = _energy_lp(inst, power_set)
    if q_power is None:
        return None
    budget = inst.params.max_power - float(q_power.sum())
    if budget < -1e-12 * inst.params.max_power:
        return None
    owner = _assign(inst, info_set)
    q_info = _info_power(inst, owner, max(budget, 0.0))
    if q_info is None:
        return None
    role = np.full(inst.N, POWER, dtype=int)
    for n, k in owner.items():
        role[n] = k
    ss = SsAllocation(role, q_power + q_info)
    return ss, check_feasibility(inst, ss.expand())


def solve_ss(inst: ProblemInstance, cfg=None) -> SolveResult:
    """Greedy subcarrier separation.

    Subcarriers are ranked by total gain.  The smallest prefix whose energy LP
    fits in P_max becomes the power set; the rest carry data for their
    strongest user with the leftover power water-filled under the rate
    targets.  If that fails, the marginal power subcarrier is swapped with the
    best data subcarrier once.
    """
    _guard(inst)
    N = inst.N
    order = [int(n) for n in np.argsort(-inst.g.sum(axis=0), kind="stable")]
    need_energy = bool(np.any(inst.qos.min_energy > 0))
    tried = 0
    for j in range(1 if need_energy else 0, N + 1):
        q = _energy_lp(inst, order[:j])
        if q is not None and q.sum() <= inst.params.max_power:
            break
    else:
        return _result(inst, Allocation.zeros(inst.K, N), "infeasible", 0, "ss-greedy",
                       "energy targets not reachable with power subcarriers")

    candidates = [(order[:j], order[j:])]
    if 0 < j < N:
        swapped = order[:j - 1] + [order[j]]
        candidates.append((swapped, [order[j - 1]] + order[j + 1:]))
    for power_set, info_set in candidates:
        tried += 1
        out = _plan(inst, power_set, info_set)
        if out is not None and out[1].feasible:
            ss = out[0]
            msg = "" if tried == 1 else "repaired by swapping the marginal subcarrier"
            return _result(inst, ss.expand(), "converged", tried, "ss-greedy", msg)
    return _result(inst, Allocation.zeros(inst.K, N), "infeasible", tried, "ss-greedy",
                   "greedy separation cannot meet the QoS targets")


def ss_allocation(result: SolveResult) -> SsAllocation:
    m = result.allocation.m
    role = np.where(m.max(axis=0) >= 0.5, m.argmax(axis=0), POWER)
    return SsAllocation(role, result.allocation.q)
