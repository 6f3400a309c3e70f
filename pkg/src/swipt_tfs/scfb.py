"""Semi-closed-form dual solver for the time-frequency splitting problem.

For fixed multipliers the Lagrangian of the sqrt-regularized problem splits
over (user, subcarrier) slots, and each slot has a closed-form maximizer:
the power ratio ``s = q/m`` is a water level

    s = [(1 + alpha_k) / D_kn - 1 / a_kn]^+,   D_kn = lambda - sum_{l != k} beta_l h_ln

and the time fraction is ``m = clip(X^2 / Xi^2, 0, 1)`` with
``Xi = -2 * ((1 + alpha_k) ln(1 + a s) - D s - gamma_n)``.

Two drivers are provided.  ``price_update="exact"`` (default) re-solves the
time prices ``gamma`` and the power price ``lambda`` to optimality at every
outer iteration (one-dimensional monotone root finds), and moves the QoS
prices ``alpha``, ``beta`` along the projected QoS-slack gradient scaled by
a damped finite-difference Hessian of the reduced dual, with backtracking.
With the time and power prices eliminated the reduced dual is smooth but
stiff on the scale of X (subcarrier ownership flips there), so a fixed or
diminishing step crawls.
``price_update="subgradient"`` runs the plain projected subgradient update of
all four multiplier families with a diminishing step.

Internally all rates are in nats (C = 1), powers in units of P_max and
harvested energies in units of ``energy_scale``; duals live in these units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, linprog

from .core import (
    Allocation,
    ProblemInstance,
    SolveResult,
    user_energies,
    user_rates,
)


class InfeasibleProblemError(ValueError):
    """Raised when an instance is structurally infeasible before iterating."""


@dataclass(frozen=True)
class DualState:
    """Multipliers of the rate, energy, time and power constraints (normalized units)."""

    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    lam: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            arr = np.array(getattr(self, name), dtype=float).reshape(-1)
            if np.any(arr < 0):
                raise ValueError(f"{name} must be non-negative")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        object.__setattr__(self, "lam", float(self.lam))

    @classmethod
    def initial(cls, K: int, N: int, lam: float = 1.0) -> "DualState":
        return cls(np.zeros(K), np.zeros(K), np.zeros(N), lam)


@dataclass(frozen=True)
class SolverConfig:
    """Controls of :func:`solve`.

    ``regularizer_weight`` is X in normalized rate units (nats per unit of
    sqrt(m)); the bit/s weight is ``X * C``.
    """

    regularizer_weight: float = 1e-3
    price_update: str = "exact"
    step_size: float = 0.1
    step_decay: str = "sqrt"
    max_iterations: int = 2000
    convergence_tol: float = 1e-6
    convergence_window: int = 5
    feasibility_tol: float = 1e-6
    denominator_floor: float = 1e-12
    initial_power_price: float = 1.0

    def __post_init__(self):
        if not self.regularizer_weight > 0:
            raise ValueError("regularizer weight X must be positive")
        if not self.step_size > 0:
            raise ValueError("step size must be positive")
        if not self.denominator_floor > 0:
            raise ValueError("denominator floor must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.price_update not in ("exact", "subgradient"):
            raise ValueError(f"unknown price update {self.price_update!r}")
        if self.step_decay not in ("sqrt", "harmonic", "constant"):
            raise ValueError(f"unknown step decay {self.step_decay!r}")

    def step(self, t: int) -> float:
        if self.step_decay == "sqrt":
            return self.step_size / math.sqrt(t + 1)
        if self.step_decay == "harmonic":
            return self.step_size / (t + 1)
        return self.step_size


@dataclass
class IterationRecord:
    iteration: int
    modified_objective: float
    objective: float
    max_violation: float
    alpha_max: float
    beta_max: float
    gamma_mean: float
    lam: float


class ScaledProblem:
    """Normalized view of an instance.

    ``snr[k, n] = g P_max / sigma^2`` and ``harvest[k, n]`` is the energy
    (in units of ``energy_scale``) user k collects per unit of normalized
    power sent to someone else on subcarrier n.
    """

    def __init__(self, inst: ProblemInstance):
        p = inst.params
        self.inst = inst
        self.K, self.N = inst.K, inst.N
        self.C = p.rate_constant
        self.P = p.max_power
        self.snr = inst.g * p.max_power / p.noise_power
        E = inst.qos.min_energy
        if np.any(E > 0):
            self.energy_scale = float(E.max())
        else:
            self.energy_scale = float(p.efficiency * p.max_power * inst.g.max())
        self.harvest = p.efficiency * inst.g * p.max_power / self.energy_scale
        self.R = inst.qos.min_rate / self.C
        self.E = E / self.energy_scale
        self.offdiag = 1.0 - np.eye(self.K)

    def interference_price(self, beta: np.ndarray) -> np.ndarray:
        """sum_{l != k} beta_l h_ln for every (k, n); K^2 N work."""
        return np.einsum("lk,l,ln->kn", self.offdiag, beta, self.harvest)

    def rate_terms(self, m: np.ndarray, q: np.ndarray) -> np.ndarray:
        out = np.zeros_like(m)
        on = m > 0
        out[on] = m[on] * np.log1p(self.snr[on] * q[on] / m[on])
        return out

    def energies(self, q: np.ndarray) -> np.ndarray:
        other = q.sum(axis=0)[None, :] - q
        return np.sum(other * self.harvest, axis=1)

    def to_allocation(self, m: np.ndarray, q: np.ndarray) -> Allocation:
        return Allocation(m.copy(), q * self.P)

    def from_allocation(self, alloc: Allocation):
        return np.asarray(alloc.m, dtype=float), np.asarray(alloc.q, dtype=float) / self.P


# -- closed-form slot maximizers ---------------------------------------------


def _denominator(lam, interference, floor):
    return np.maximum(lam - interference, floor)


def _power_ratio(alpha_col, snr, denom):
    """Water level s = [(1+alpha)/D - 1/a]^+, zero on dead subcarriers."""
    live = snr > 0
    inv = np.where(live, 1.0 / np.where(live, snr, 1.0), np.inf)
    return np.maximum((1.0 + alpha_col) / denom - inv, 0.0)


def _slot_value(alpha_col, snr, denom, s):
    """(1+alpha) ln(1 + a s) - D s, the per-unit-time Lagrangian gain of a slot."""
    return (1.0 + alpha_col) * np.log1p(snr * s) - denom * s


def _time_fraction(value, gamma, X):
    xi = -2.0 * (value - gamma)
    with np.errstate(divide="ignore"):
        m = np.where(xi <= 0, 1.0, np.minimum(1.0, X**2 / np.where(xi > 0, xi, 1.0) ** 2))
    return m


def _time_prices(value: np.ndarray, X: float) -> np.ndarray:
    """Per-subcarrier gamma_n with sum_k m_kn(gamma_n) = 1.

    sum_k X^2 / (4 (gamma - v_k)^2) is convex and decreasing right of the
    largest v_k, so Newton started at max(v) + X/2 climbs monotonically
    onto the root.
    """
    half = 0.5 * X
    gamma = value.max(axis=0) + half
    for _ in range(200):
        d = gamma[None, :] - value
        t = (half / d) ** 2
        f = t.sum(axis=0) - 1.0
        fp = -2.0 * (t / d).sum(axis=0)
        step = -f / fp
        step = np.maximum(step, 0.0)
        gamma = gamma + step
        if np.all(step <= 1e-15 * (np.abs(gamma) + X)):
            break
    return gamma


def _primal(sp: ScaledProblem, duals: DualState, X: float, floor: float):
    interf = sp.interference_price(duals.beta)
    denom = _denominator(duals.lam, interf, floor)
    alpha_col = duals.alpha[:, None]
    s = _power_ratio(alpha_col, sp.snr, denom)
    value = _slot_value(alpha_col, sp.snr, denom, s)
    m = _time_fraction(value, duals.gamma[None, :], X)
    return m, m * s


def update_q(k: int, n: int, m_kn: float, duals: DualState, inst: ProblemInstance,
             floor: float = 1e-12) -> float:
    """Closed-form energy variable of slot (k, n) for a given time fraction, in W."""
    if not 0.0 <= m_kn <= 1.0:
        raise ValueError("time fraction must lie in [0, 1]")
    sp = ScaledProblem(inst)
    interf = sp.interference_price(duals.beta)[k, n]
    denom = _denominator(duals.lam, interf, floor)
    s = _power_ratio(duals.alpha[k], sp.snr[k, n], denom)
    return float(m_kn * s * sp.P)


def update_m(k: int, n: int, duals: DualState, inst: ProblemInstance, X: float,
             floor: float = 1e-12) -> float:
    """Closed-form time fraction of slot (k, n); X in normalized rate units."""
    if not X > 0:
        raise ValueError("X must be positive")
    sp = ScaledProblem(inst)
    interf = sp.interference_price(duals.beta)[k, n]
    denom = _denominator(duals.lam, interf, floor)
    s = _power_ratio(duals.alpha[k], sp.snr[k, n], denom)
    value = _slot_value(duals.alpha[k], sp.snr[k, n], denom, s)
    return float(_time_fraction(value, duals.gamma[n], X))


def dual_step(duals: DualState, primal: Allocation, inst: ProblemInstance, theta: float) -> DualState:
    """Projected subgradient step on all multipliers.

    Each multiplier moves against its constraint slack (normalized units) and
    is clipped at zero.
    """
    if not theta > 0:
        raise ValueError("step must be positive")
    sp = ScaledProblem(inst)
    m, q = sp.from_allocation(primal)
    return _dual_step(sp, duals, m, q, theta)


def _dual_step(sp, duals, m, q, theta):
    rates = sp.rate_terms(m, q).sum(axis=1)
    energies = sp.energies(q)
    return DualState(
        alpha=np.maximum(duals.alpha - theta * (rates - sp.R), 0.0),
        beta=np.maximum(duals.beta - theta * (energies - sp.E), 0.0),
        gamma=np.maximum(duals.gamma - theta * (1.0 - m.sum(axis=0)), 0.0),
        lam=max(duals.lam - theta * (1.0 - float(q.sum())), 0.0),
    )


# -- exact time / power prices -----------------------------------------------


@dataclass
class _Evaluation:
    duals: DualState
    m: np.ndarray
    q: np.ndarray
    rates: np.ndarray
    energies: np.ndarray
    dual_value: float
    modified: float
    raw: float


def balance_prices(sp: ScaledProblem, alpha: np.ndarray, beta: np.ndarray, X: float,
                   floor: float = 1e-12):
    """Optimal gamma and lambda for fixed QoS prices.

    Returns ``(gamma, lam, m, q)`` with every subcarrier fully shared
    (``sum_k m_kn = 1``) and the power budget met with equality.
    """
    interf = sp.interference_price(beta)
    base = float(interf.max())
    alpha_col = alpha[:, None]

    def primal(lam):
        denom = _denominator(lam, interf, floor)
        s = _power_ratio(alpha_col, sp.snr, denom)
        value = _slot_value(alpha_col, sp.snr, denom, s)
        gamma = _time_prices(value, X)
        m = _time_fraction(value, gamma[None, :], X)
        return gamma, m, m * s

    def excess(u):
        return float(primal(base + math.exp(u))[2].sum()) - 1.0

    u_lo = math.log(floor)
    u_hi = math.log(sp.N * (1.0 + float(alpha.max())) + 1.0)
    if excess(u_lo) <= 0.0:
        u = u_lo
    else:
        u = brentq(excess, u_lo, u_hi, xtol=1e-14, rtol=1e-15, maxiter=500)
    lam = base + math.exp(u)
    gamma, m, q = primal(lam)
    return gamma, lam, m, q


def _evaluate(sp: ScaledProblem, alpha, beta, X, floor) -> _Evaluation:
    gamma, lam, m, q = balance_prices(sp, alpha, beta, X, floor)
    duals = DualState(alpha, beta, gamma, lam)
    return _assess(sp, duals, m, q, X)


def _assess(sp, duals, m, q, X) -> _Evaluation:
    terms = sp.rate_terms(m, q)
    rates = terms.sum(axis=1)
    energies = sp.energies(q)
    raw = float(terms.sum())
    modified = raw + X * float(np.sqrt(m).sum())
    dual_value = (
        float(((1.0 + duals.alpha[:, None]) * terms).sum())
        + X * float(np.sqrt(m).sum())
        - float(duals.alpha @ sp.R)
        + float(duals.beta @ (energies - sp.E))
        + float(duals.gamma @ (1.0 - m.sum(axis=0)))
        + duals.lam * (1.0 - float(q.sum()))
    )
    return _Evaluation(duals, m, q, rates, energies, dual_value, modified, raw)


# -- driver -------------------------------------------------------------------


def energy_power_floor(inst: ProblemInstance) -> float:
    """Least total power (W) that meets every energy target, ``inf`` if none does."""
    E = inst.qos.min_energy
    if not np.any(E > 0):
        return 0.0
    K, N = inst.K, inst.N
    if K == 1:
        return math.inf
    zeta, g = inst.params.efficiency, inst.g
    # energy of user k from q_ln (l != k): zeta * g_kn
    A = np.zeros((K, K * N))
    for k in range(K):
        for l in range(K):
            if l != k:
                A[k, l * N:(l + 1) * N] = zeta * g[k]
    scale = float(E.max())
    res = linprog(np.ones(K * N), A_ub=-A / scale, b_ub=-E / scale, bounds=(0, None), method="highs")
    if res.status != 0:
        return math.inf
    return float(res.fun)


def _qos_scales(sp: ScaledProblem) -> np.ndarray:
    return np.concatenate([np.where(sp.R > 0, sp.R, 1.0), np.where(sp.E > 0, sp.E, 1.0)])


def _violation(sp, ev) -> float:
    rate_gap = (sp.R - ev.rates) / np.where(sp.R > 0, sp.R, 1.0)
    energy_gap = (sp.E - ev.energies) / np.where(sp.E > 0, sp.E, 1.0)
    time_gap = ev.m.sum(axis=0) - 1.0
    power_gap = float(ev.q.sum()) - 1.0
    return float(max(0.0, rate_gap.max(), energy_gap.max(), time_gap.max(), power_gap))


def _record(sp, ev, t, X) -> IterationRecord:
    return IterationRecord(
        iteration=t,
        modified_objective=ev.modified * sp.C,
        objective=ev.raw * sp.C,
        max_violation=_violation(sp, ev),
        alpha_max=float(ev.duals.alpha.max()),
        beta_max=float(ev.duals.beta.max()),
        gamma_mean=float(ev.duals.gamma.mean()),
        lam=ev.duals.lam,
    )


def _finish(sp, ev, status, t, cfg, trace, message="") -> SolveResult:
    inst = sp.inst
    alloc = sp.to_allocation(ev.m, ev.q)
    return SolveResult(
        allocation=alloc,
        rates=user_rates(inst, alloc),
        energies=user_energies(inst, alloc),
        objective=ev.raw * sp.C,
        status=status,
        iterations=t,
        duals=ev.duals,
        objective_trace=[r.modified_objective for r in trace],
        trace=trace,
        strategy="tfs",
        message=message,
    )


def _infeasible_result(sp, cfg, message) -> SolveResult:
    K, N = sp.K, sp.N
    zero = np.zeros((K, N))
    ev = _assess(sp, DualState.initial(K, N, cfg.initial_power_price), zero, zero, cfg.regularizer_weight)
    return _finish(sp, ev, "infeasible", 0, cfg, [], message)


def solve(inst: ProblemInstance, cfg: SolverConfig | None = None, callback=None) -> SolveResult:
    """Maximize the sum rate with time-frequency splitting.

    ``callback``, if given, receives one :class:`IterationRecord` per
    iteration.  Raises :class:`InfeasibleProblemError` for a single user with
    a positive energy target.
    """
    cfg = cfg or SolverConfig()
    if inst.K == 1 and np.any(inst.qos.min_energy > 0):
        raise InfeasibleProblemError("a single user cannot harvest from other users' power")
    sp = ScaledProblem(inst)
    if energy_power_floor(inst) > inst.params.max_power * (1.0 + 1e-9):
        return _infeasible_result(sp, cfg, "energy targets exceed what P_max can deliver")
    if cfg.price_update == "subgradient":
        return _solve_subgradient(sp, cfg, callback)
    return _solve_exact(sp, cfg, callback)


class _Monitor:
    """Convergence window, best-feasible memory and trace bookkeeping."""

    def __init__(self, sp, cfg, callback):
        self.sp, self.cfg, self.callback = sp, cfg, callback
        self.trace = []
        self.stable = 0
        self.best = None
        self.last = None

    def push(self, ev, t, stationary=True):
        rec = _record(self.sp, ev, t, self.cfg.regularizer_weight)
        self.trace.append(rec)
        if self.callback is not None:
            self.callback(rec)
        if self.last is not None:
            change = abs(ev.modified - self.last) / max(abs(self.last), 1e-300)
            self.stable = self.stable + 1 if change < self.cfg.convergence_tol else 0
        self.last = ev.modified
        if rec.max_violation <= 1e-4 and (self.best is None or ev.raw > self.best[0].raw):
            self.best = (ev, t)
        return (
            self.stable >= self.cfg.convergence_window
            and stationary
            and rec.max_violation <= self.cfg.feasibility_tol
        )

    def give_up(self, last_ev, t):
        if self.best is not None:
            ev, _ = self.best
            return _finish(self.sp, ev, "max_iterations", t, self.cfg, self.trace,
                           "iteration limit reached; best feasible iterate returned")
        return _finish(self.sp, last_ev, "infeasible", t, self.cfg, self.trace,
                       "no feasible iterate found before the iteration limit")


def _solve_exact(sp: ScaledProblem, cfg: SolverConfig, callback) -> SolveResult:
    X, floor = cfg.regularizer_weight, cfg.denominator_floor
    K = sp.K
    n = 2 * K
    scale = _qos_scales(sp)
    # work with y = x * scale so that gradients are relative QoS slacks

    def evaluate(y):
        x = y / scale
        ev = _evaluate(sp, x[:K], x[K:], X, floor)
        grad = np.concatenate([ev.rates - sp.R, ev.energies - sp.E]) / scale
        return ev, grad

    y = np.zeros(n)
    ev, grad = evaluate(y)
    mon = _Monitor(sp, cfg, callback)
    damping = 1e-6
    for t in range(1, cfg.max_iterations + 1):
        projected = np.maximum(y - grad, 0.0) - y
        stationary = float(np.abs(projected).max(initial=0.0)) <= cfg.feasibility_tol
        if mon.push(ev, t, stationary):
            return _finish(sp, ev, "converged", t, cfg, mon.trace)
        if ev.dual_value < -1e-9:
            # every feasible point has a non-negative objective, so a negative
            # dual value certifies that the QoS targets cannot all be met
            return _finish(sp, ev, "infeasible", t, cfg, mon.trace,
                           "dual value negative: QoS targets cannot all be met")
        free = np.flatnonzero((y > 0) | (grad < 0))
        if free.size == 0:
            continue
        hess = np.zeros((n, n))
        for j in free:
            h = 1e-7 * max(1.0, abs(y[j]))
            e = np.zeros(n)
            e[j] = h
            hess[:, j] = (evaluate(y + e)[1] - grad) / h
        hess = 0.5 * (hess + hess.T)
        h_ff = hess[np.ix_(free, free)]
        ridge = max(1.0, float(np.abs(np.diag(h_ff)).max()))
        accepted = False
        pg_norm = float(np.abs(projected).max(initial=0.0))
        noise = 1e-12 * max(1.0, abs(ev.dual_value))
        while not accepted and damping < 1e12:
            d = np.zeros(n)
            d[free] = np.linalg.solve(h_ff + damping * ridge * np.eye(free.size), -grad[free])
            shrink = 1.0
            for _ in range(8):
                y_new = np.maximum(y + shrink * d, 0.0)
                ev_new, grad_new = evaluate(y_new)
                if ev_new.dual_value <= ev.dual_value + 1e-4 * float(grad @ (y_new - y)):
                    accepted = True
                    break
                # near the optimum the decrease drops below rounding; then
                # progress is judged by the projected gradient instead
                pg_new = float(np.abs(np.maximum(y_new - grad_new, 0.0) - y_new).max(initial=0.0))
                if ev_new.dual_value <= ev.dual_value + noise and pg_new < 0.5 * pg_norm:
                    accepted = True
                    break
                shrink *= 0.5
            if not accepted:
                damping *= 10.0
        if not accepted:
            damping = 1e-6
            continue
        if shrink == 1.0:
            damping = max(damping / 10.0, 1e-12)
        y, ev, grad = y_new, ev_new, grad_new
        if float(np.abs(y).max()) > 1e12:
            return _finish(sp, ev, "infeasible", t, cfg, mon.trace, "QoS prices diverged")
    return mon.give_up(ev, cfg.max_iterations)


def _solve_subgradient(sp: ScaledProblem, cfg: SolverConfig, callback) -> SolveResult:
    X, floor = cfg.regularizer_weight, cfg.denominator_floor
    duals = DualState.initial(sp.K, sp.N, cfg.initial_power_price)
    mon = _Monitor(sp, cfg, callback)
    ev = None
    for t in range(1, cfg.max_iterations + 1):
        m, q = _primal(sp, duals, X, floor)
        ev = _assess(sp, duals, m, q, X)
        if mon.push(ev, t):
            return _finish(sp, ev, "converged", t, cfg, mon.trace)
        duals = _dual_step(sp, duals, m, q, cfg.step(t - 1))
    return mon.give_up(ev, cfg.max_iterations)


def stationarity_residuals(inst: ProblemInstance, result: SolveResult, X: float):
    """Normalized KKT residuals of the regularized problem at a solver output.

    Returns ``(time_residual, power_residual)`` K x N arrays: the partial
    derivatives of the Lagrangian in m and q, NaN where the slot is not
    interior (m at a bound or q = 0).
    """
    sp = ScaledProblem(inst)
    m, q = sp.from_allocation(result.allocation)
    d = result.duals
    interf = sp.interference_price(d.beta)
    alpha_col = d.alpha[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = sp.snr * q / m
        dm = (1.0 + alpha_col) * (np.log1p(x) - x / (1.0 + x)) - d.gamma[None, :] + X / (2.0 * np.sqrt(m))
        dq = (1.0 + alpha_col) * sp.snr * m / (m + sp.snr * q) + interf - d.lam
    interior = (m > 0) & (m < 1) & (q > 0)
    return np.where(interior, dm, np.nan), np.where(interior, dq, np.nan)


def lagrangian(sp: ScaledProblem, duals: DualState, m: np.ndarray, q: np.ndarray, X: float) -> float:
    """Normalized Lagrangian of the regularized problem."""
    return _assess(sp, duals, m, q, X).dual_value


def with_weight(cfg: SolverConfig, X: float) -> SolverConfig:
    return replace(cfg, regularizer_weight=X)
