"""Desk-scale reference solvers used to check the dual solver.

Neither routine shares code with :mod:`swipt_tfs.scfb`; both work directly
on the convex (m, q) problem.  ``grid_optimum`` enumerates time fractions on
a simplex grid and water-fills the power for each; ``projected_gradient_optimum``
runs accelerated projected gradient with an augmented Lagrangian for the QoS
constraints.  Both are slow by design.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from .core import Allocation, ProblemInstance, check_feasibility

_SMOOTH = 1e-10


@dataclass(frozen=True)
class OracleConfig:
    grid_resolution: int = 20
    refine_levels: int = 14
    pg_step: float = 1.0
    pg_iterations: int = 20000
    pg_tol: float = 1e-10
    penalty_rounds: int = 30
    feasibility_phase: bool = True

    def __post_init__(self):
        if self.grid_resolution < 3:
            raise ValueError("grid_resolution must be >= 3")
        if not (self.pg_step > 0 and self.pg_iterations > 0 and self.pg_tol > 0):
            raise ValueError("projected-gradient controls must be positive")


@dataclass
class OracleResult:
    allocation: Allocation | None
    objective: float
    feasible: bool
    converged: bool = True
    message: str = ""

    def __iter__(self):
        yield self.allocation
        yield self.objective


class OracleRefusal(ValueError):
    """The instance is too large for the exhaustive oracle."""


class _Normalized:
    """Rates in nats, power in units of P_max, QoS as relative slacks."""

    def __init__(self, inst: ProblemInstance):
        p = inst.params
        self.inst = inst
        self.K, self.N = inst.K, inst.N
        self.C = p.rate_constant
        self.P = p.max_power
        self.a = inst.g * p.max_power / p.noise_power
        self.R = inst.qos.min_rate / self.C
        self.E = inst.qos.min_energy
        # harvest[k, n]: W delivered to user k per unit normalized q on n
        self.w = p.efficiency * inst.g * p.max_power
        self.rate_on = self.R > 0
        self.energy_on = self.E > 0

    def rates(self, m, q):
        return _perspective(m, q, self.a).sum(axis=-1)

    def energies(self, q):
        other = q.sum(axis=-2, keepdims=True) - q
        return np.sum(other * self.w, axis=-1)

    def qos_slack(self, m, q):
        """Relative slacks r/R - 1 and e/E - 1 of the active targets."""
        r = self.rates(m, q)[..., self.rate_on] / self.R[self.rate_on] - 1.0
        e = self.energies(q)[..., self.energy_on] / self.E[self.energy_on] - 1.0
        return np.concatenate([r, e], axis=-1)

    def qos_jacobian_q(self, m, q):
        """Jacobian of :meth:`qos_slack` in q for one (K, N) point, rows (active targets) x (K*N)."""
        K, N = self.K, self.N
        with np.errstate(divide="ignore", invalid="ignore"):
            dr = np.where(m > 0, m * self.a / (m + self.a * q), 0.0)
        rows = []
        for k in np.flatnonzero(self.rate_on):
            row = np.zeros((K, N))
            row[k] = dr[k] / self.R[k]
            rows.append(row.ravel())
        for k in np.flatnonzero(self.energy_on):
            row = np.repeat(self.w[k][None, :], K, axis=0)
            row[k] = 0.0
            rows.append(row.ravel() / self.E[k])
        return np.array(rows).reshape(len(rows), K * N)

    def allocation(self, m, q):
        return Allocation(np.array(m, dtype=float), np.array(q, dtype=float) * self.P)


def _perspective(m, q, a):
    out = np.zeros(np.broadcast(m, q, a).shape)
    m, q, a = np.broadcast_arrays(m, q, a)
    on = m > 0
    out[on] = m[on] * np.log1p(a[on] * q[on] / m[on])
    return out


# -- grid oracle ----------------------------------------------------------------


def _compositions(total: int, parts: int):
    """All tuples of ``parts`` non-negative ints summing to ``total``."""
    for cuts in itertools.combinations(range(total + parts - 1), parts - 1):
        prev, out = -1, []
        for c in cuts + (total + parts - 1,):
            out.append(c - prev - 1)
            prev = c
        yield tuple(out)


def _waterfill(m: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Maximize sum m ln(1 + a q / m) s.t. sum q <= 1 for a batch of m matrices.

    ``m`` has shape (B, K, N).  Optimal q = m [1/lam - 1/a]^+, with the
    water level found by bisection on log(lam).
    """
    live = (m > 0) & (a > 0)
    inv_a = np.where(a > 0, 1.0 / np.where(a > 0, a, 1.0), np.inf)
    lo = np.full(m.shape[0], -60.0)
    hi = np.full(m.shape[0], math.log(float(a.max()) + 1.0) + 1.0)

    def power(log_lam):
        level = np.exp(-log_lam)[:, None, None]
        return np.where(live, m * np.maximum(level - inv_a, 0.0), 0.0)

    # 64 halvings take the bracket below double precision
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        total = power(mid).sum(axis=(1, 2))
        too_much = total > 1.0
        lo = np.where(too_much, mid, lo)
        hi = np.where(too_much, hi, mid)
    q = power(hi)
    # hi is on the under-budget side; rescale the remaining sliver onto the live slots
    total = q.sum(axis=(1, 2))
    grow = np.where(total > 0, 1.0 / np.where(total > 0, total, 1.0), 1.0)
    return q * np.minimum(grow, 1.0 + 1e-9)[:, None, None]


def _constrained_power(nz: _Normalized, m: np.ndarray, q0: np.ndarray):
    """Fixed-m power allocation with the QoS constraints (SLSQP)."""
    K, N = nz.K, nz.N
    a = nz.a

    def unpack(v):
        return v.reshape(K, N)

    def neg_obj(v):
        q = unpack(v)
        return -float(_perspective(m, q, a).sum())

    def neg_grad(v):
        q = unpack(v)
        with np.errstate(divide="ignore", invalid="ignore"):
            g = np.where(m > 0, m * a / (m + a * q), 0.0)
        return -g.ravel()

    cons = [{"type": "ineq", "fun": lambda v: 1.0 - v.sum(), "jac": lambda v: -np.ones(K * N)}]
    if np.any(nz.rate_on) or np.any(nz.energy_on):
        cons.append({"type": "ineq", "fun": lambda v: nz.qos_slack(m, unpack(v)),
                     "jac": lambda v: nz.qos_jacobian_q(m, unpack(v))})
    res = minimize(neg_obj, q0.ravel(), jac=neg_grad, method="SLSQP",
                   bounds=[(0.0, None)] * (K * N), constraints=cons,
                   options={"maxiter": 500, "ftol": 1e-14})
    q = np.maximum(unpack(res.x), 0.0)
    total = q.sum()
    if total > 1.0:
        q = q / total
    return q


def _grid_points(nz: _Normalized, resolution: int) -> np.ndarray:
    comps = np.array(list(_compositions(resolution, nz.K)), dtype=float) / resolution
    cols = itertools.product(range(len(comps)), repeat=nz.N)
    return np.array([np.stack([comps[i] for i in idx], axis=1) for idx in cols])


def _local_points(nz: _Normalized, center: np.ndarray, width: float, steps: int = 5) -> np.ndarray:
    K, N = nz.K, nz.N
    offsets = np.linspace(-width, width, steps)
    free = [(k, n) for n in range(N) for k in range(K - 1)]
    points = []
    for delta in itertools.product(offsets, repeat=len(free)):
        m = center.copy()
        for (k, n), d in zip(free, delta):
            m[k, n] = center[k, n] + d
        m[K - 1] = 1.0 - m[:K - 1].sum(axis=0)
        if np.all(m >= -1e-15):
            points.append(np.clip(m, 0.0, 1.0))
    return np.array(points)


def _best_on(nz: _Normalized, ms: np.ndarray, best):
    """Scan a batch of m matrices; ``best`` is (value, m, q) or None."""
    q_wf = _waterfill(ms, nz.a)
    upper = _perspective(ms, q_wf, nz.a).sum(axis=(1, 2))
    slack = nz.qos_slack(ms, q_wf)
    ok = np.all(slack >= -1e-12, axis=1) if slack.shape[-1] else np.ones(len(ms), bool)
    for i in np.argsort(-upper, kind="stable"):
        if best is not None and upper[i] <= best[0]:
            break
        if ok[i]:
            best = (upper[i], ms[i], q_wf[i])
            continue
        q = _constrained_power(nz, ms[i], q_wf[i])
        if np.all(nz.qos_slack(ms[i], q) >= -1e-9):
            val = float(_perspective(ms[i], q, nz.a).sum())
            if best is None or val > best[0]:
                best = (val, ms[i], q)
    return best


def grid_optimum(inst: ProblemInstance, cfg: OracleConfig | None = None) -> OracleResult:
    """Best feasible point over a simplex grid of time fractions, refined locally."""
    cfg = cfg or OracleConfig()
    if inst.K * inst.N > 4:
        raise OracleRefusal(f"grid oracle handles K*N <= 4, got K={inst.K}, N={inst.N}")
    nz = _Normalized(inst)
    best = _best_on(nz, _grid_points(nz, cfg.grid_resolution), None)
    if best is None:
        return OracleResult(None, -math.inf, False, message="no feasible grid point")
    # pattern search: halve the stencil only when its centre stays best
    width, shrinks, moves = 1.0 / cfg.grid_resolution, 0, 0
    while shrinks < cfg.refine_levels and moves < 20 * (cfg.refine_levels + 1):
        centre = best[1]
        best = _best_on(nz, _local_points(nz, centre, width), best)
        if best[1] is centre:
            width /= 2.0
            shrinks += 1
        else:
            moves += 1
    _, m, q = best
    alloc = nz.allocation(m, q)
    return OracleResult(alloc, float(_perspective(m, q, nz.a).sum()) * nz.C, True)


# -- projected gradient ---------------------------------------------------------


def project_capped_simplex(x: np.ndarray, cap: float = 1.0, axis: int = 0) -> np.ndarray:
    """Euclidean projection onto {y >= 0, sum(y, axis) <= cap}."""
    x = np.moveaxis(np.asarray(x, dtype=float), axis, -1)
    y = np.maximum(x, 0.0)
    over = y.sum(axis=-1) > cap
    if np.any(over):
        v = x[over]
        u = -np.sort(-v, axis=-1)
        css = np.cumsum(u, axis=-1) - cap
        idx = np.arange(1, v.shape[-1] + 1)
        rho = np.count_nonzero(u - css / idx > 0, axis=-1)
        theta = css[np.arange(len(v)), rho - 1] / rho
        y[over] = np.maximum(v - theta[:, None], 0.0)
    return np.moveaxis(y, -1, axis)


def project_feasible_box(m: np.ndarray, q: np.ndarray):
    """Projection onto the time-budget and power-budget sets (they are separable)."""
    return project_capped_simplex(m, 1.0, axis=0), project_capped_simplex(q.ravel(), 1.0).reshape(q.shape)


def project_weighted_cap(y: np.ndarray, d: np.ndarray, cap: float = 1.0, axis: int = 0) -> np.ndarray:
    """Projection onto {x >= 0, sum(x, axis) <= cap} in the norm sum d (x - y)^2.

    The minimizer is max(y - theta / d, 0) with one theta >= 0 per slice.
    """
    y = np.asarray(y, dtype=float)
    d = np.moveaxis(np.broadcast_to(np.asarray(d, dtype=float), y.shape), axis, -1)
    y = np.moveaxis(y, axis, -1)
    x = np.maximum(y, 0.0)
    over = x.sum(axis=-1) > cap
    if np.any(over):
        yv, dv = y[over], d[over]
        # breakpoints theta = y d, largest first; the support is a prefix
        order = np.argsort(-(yv * dv), axis=-1, kind="stable")
        ys = np.take_along_axis(yv, order, -1)
        ds = np.take_along_axis(dv, order, -1)
        theta = (np.cumsum(ys, -1) - cap) / np.cumsum(1.0 / ds, -1)
        size = np.count_nonzero(ys * ds - theta > 0, axis=-1)
        chosen = theta[np.arange(len(yv)), np.maximum(size, 1) - 1]
        x[over] = np.maximum(yv - np.maximum(chosen, 0.0)[:, None] / dv, 0.0)
    return np.moveaxis(x, -1, axis)


class _Model:
    """Sum rate and QoS terms over either full m or tied per-user fractions."""

    def __init__(self, nz: _Normalized, tied: bool):
        self.nz, self.tied = nz, tied

    def expand(self, t):
        return np.repeat(t[:, None], self.nz.N, axis=1) if self.tied else t

    def project(self, t, q, dt=None, dq=None):
        """Projection onto the time and power sets, optionally in a diagonal metric."""
        dt = np.ones_like(t) if dt is None else dt
        dq = np.ones_like(q) if dq is None else dq
        tp = project_weighted_cap(t, dt, 1.0, axis=0)
        qp = project_weighted_cap(q.ravel(), dq.ravel(), 1.0).reshape(q.shape)
        return tp, qp

    def parts(self, t, q):
        """Rate terms, their first derivatives and curvature magnitudes in m and q."""
        a = self.nz.a
        m = self.expand(t) + _SMOOTH
        x = a * q / m
        terms = m * np.log1p(x)
        dm = np.log1p(x) - x / (1.0 + x)
        dq = a / (1.0 + x)
        hq = dq * dq / m
        hm = (x / (1.0 + x)) ** 2 / m
        return terms, dm, dq, hm, hq

    def reduce_m(self, dm):
        return dm.sum(axis=1) if self.tied else dm


def _al_value_grad(model: _Model, t, q, mult, rho, phase1=False):
    """Augmented Lagrangian (to maximize), its gradient and a diagonal curvature."""
    nz = model.nz
    terms, dm, dq, hm, hq = model.parts(t, q)
    rates = terms.sum(axis=1)
    energies = nz.energies(q)
    rate_idx = np.flatnonzero(nz.rate_on)
    energy_idx = np.flatnonzero(nz.energy_on)
    slack = np.concatenate([rates[rate_idx] / nz.R[rate_idx] - 1.0,
                            energies[energy_idx] / nz.E[energy_idx] - 1.0])
    weight = np.zeros(nz.K) if phase1 else np.ones(nz.K)
    val = 0.0 if phase1 else float(terms.sum())
    shifted = np.maximum(mult - rho * slack, 0.0)
    val -= float((shifted**2 - mult**2).sum()) / (2.0 * rho)
    # d/d(slack) of the penalty term is +shifted
    wr = shifted[: rate_idx.size] / nz.R[rate_idx]
    we = shifted[rate_idx.size:] / nz.E[energy_idx]
    weight[rate_idx] += wr
    gm, gq = weight[:, None] * dm, weight[:, None] * dq
    cm, cq = weight[:, None] * hm, weight[:, None] * hq
    hot = (shifted > 0)[: rate_idx.size]
    if hot.any():
        idx = rate_idx[hot]
        scale = rho / nz.R[idx, None] ** 2
        cm[idx] += scale * dm[idx] ** 2
        cq[idx] += scale * dq[idx] ** 2
    if energy_idx.size:
        coef = np.zeros(nz.K)
        coef[energy_idx] = we
        # energy_k = sum_n w_kn (Q_n - q_kn)
        per_n = (coef[:, None] * nz.w).sum(axis=0)
        gq += per_n[None, :] - coef[:, None] * nz.w
        hot_e = np.zeros(nz.K)
        hot_e[energy_idx] = np.where(shifted[rate_idx.size:] > 0, rho / nz.E[energy_idx] ** 2, 0.0)
        wsq = hot_e[:, None] * nz.w**2
        cq += wsq.sum(axis=0)[None, :] - wsq
    return val, model.reduce_m(gm), gq, slack, model.reduce_m(cm), cq


def _ascend(model: _Model, t, q, mult, rho, cfg: OracleConfig, phase1=False):
    """Diagonally scaled gradient projection with Armijo backtracking."""
    val, gt, gq, _, ct, cq = _al_value_grad(model, t, q, mult, rho, phase1)
    step = cfg.pg_step
    quiet = 0
    for _ in range(cfg.pg_iterations):
        # metric: curvature with an absolute floor (normalized units)
        dt, dq = np.maximum(ct, 1e-8), np.maximum(cq, 1e-8)
        while True:
            nt, nq = model.project(t + step * gt / dt, q + step * gq / dq, dt, dq)
            nval, ngt, ngq, _, nct, ncq = _al_value_grad(model, nt, nq, mult, rho, phase1)
            gain = float((gt * (nt - t)).sum() + (gq * (nq - q)).sum())
            if nval >= val + 1e-4 * gain or step < 1e-12:
                break
            step *= 0.5
        change = nval - val
        t, q, val, gt, gq, ct, cq = nt, nq, nval, ngt, ngq, nct, ncq
        step = min(step * 2.0, 1.0)
        quiet = quiet + 1 if change <= cfg.pg_tol * max(1.0, abs(val)) else 0
        if quiet >= 5:
            return t, q, True
    return t, q, False


def _find_interior(model: _Model, t, q, cfg: OracleConfig):
    """Phase one: a point with every QoS slack strictly positive, or None."""
    nz = model.nz
    n_active = int(nz.rate_on.sum() + nz.energy_on.sum())
    if n_active == 0:
        return t, q
    margin = 0.0
    for _ in range(12):
        margin = 0.05 if margin == 0.0 else margin / 2.0
        # maximize nothing subject to slack >= margin (scaled targets)
        mult = np.zeros(n_active)
        rho = 10.0
        tt, qq = t, q
        for _ in range(cfg.penalty_rounds):
            shifted_targets = _Shifted(model, margin)
            tt, qq, _ = _ascend(shifted_targets, tt, qq, mult, rho, cfg, phase1=True)
            slack = _slack(model, tt, qq)
            if np.all(slack > 0):
                return tt, qq
            mult = np.maximum(mult - rho * (slack - margin), 0.0)
            rho *= 2.0
    return None


class _Shifted(_Model):
    """Same model with every QoS target inflated by ``1 + margin``."""

    def __init__(self, model: _Model, margin: float):
        nz = model.nz
        shifted = _Normalized.__new__(_Normalized)
        shifted.__dict__.update(nz.__dict__)
        shifted.R = nz.R * (1.0 + margin)
        shifted.E = nz.E * (1.0 + margin)
        super().__init__(shifted, model.tied)


def _slack(model: _Model, t, q):
    m = model.expand(t)
    return model.nz.qos_slack(m, q)


def _least_energy_power(nz: _Normalized) -> float:
    """Smallest normalized total power meeting the energy targets (m plays no part)."""
    if not np.any(nz.energy_on):
        return 0.0
    K, N = nz.K, nz.N
    # energies are linear in q: row k collects w_kn from every other user's slot
    A = np.zeros((K, K, N))
    for k in range(K):
        A[k] = nz.w[k][None, :]
        A[k, k] = 0.0
    on = nz.energy_on
    E = nz.E[on]
    res = linprog(np.ones(K * N), A_ub=-A[on].reshape(int(on.sum()), -1) / E[:, None], b_ub=-np.ones(E.size),
                  bounds=(0, None), method="highs")
    return float(res.fun) if res.status == 0 else math.inf


def projected_gradient_optimum(inst: ProblemInstance, cfg: OracleConfig | None = None,
                               tied: bool = False) -> OracleResult:
    """Maximize the sum rate by projected gradient.

    With ``tied=True`` every user keeps one time fraction on all subcarriers
    (the time-sharing strategy).  The returned point is always feasible; if no
    feasible point is found the result says so.
    """
    cfg = cfg or OracleConfig()
    nz = _Normalized(inst)
    K, N = nz.K, nz.N
    if _least_energy_power(nz) > 1.0 + 1e-9:
        alloc = nz.allocation(np.zeros((K, N)), np.zeros((K, N)))
        return OracleResult(alloc, -math.inf, False, True, "energy targets need more than P_max")
    model = _Model(nz, tied)
    t = np.full(K, 1.0 / K) if tied else np.full((K, N), 1.0 / K)
    q = np.full((K, N), 1.0 / (K * N))
    n_active = int(nz.rate_on.sum() + nz.energy_on.sum())

    mult = np.zeros(n_active)
    rho = 1.0
    converged = False
    last_value, last_violation, steady = None, math.inf, 0
    for _ in range(cfg.penalty_rounds):
        t, q, inner_ok = _ascend(model, t, q, mult, rho, cfg)
        slack = _slack(model, t, q)
        if n_active == 0:
            converged = inner_ok
            break
        violation = max(0.0, -float(slack.min()))
        value = float(_perspective(model.expand(t), q, nz.a).sum())
        mult = np.maximum(mult - rho * slack, 0.0)
        if violation <= 1e-6 and last_value is not None and abs(value - last_value) <= 1e-8 * abs(value):
            steady += 1
        else:
            steady = 0
        if steady >= 2:
            converged = inner_ok
            break
        if violation > 1e-6 and violation > 0.25 * last_violation:
            rho = min(rho * 4.0, 1e8)
        last_value, last_violation = value, violation

    slack = _slack(model, t, q)
    message = ""
    if n_active and np.min(slack) < 0:
        interior = _find_interior(model, t, q, cfg) if cfg.feasibility_phase else None
        if interior is None:
            alloc = nz.allocation(model.expand(t), q)
            return OracleResult(alloc, -math.inf, False, False, "no feasible point found")
        t, q = _repair(model, t, q, *interior)
        message = "repaired toward an interior point"

    m = model.expand(t)
    alloc = nz.allocation(m, q)
    value = float(_perspective(m, q, nz.a).sum()) * nz.C
    feasible = check_feasibility(inst, alloc, 1e-9).feasible
    return OracleResult(alloc, value, feasible, converged, message)


def _repair(model: _Model, t, q, t_in, q_in):
    """Smallest move toward a strictly feasible point that restores feasibility."""
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        tm, qm = (1 - mid) * t + mid * t_in, (1 - mid) * q + mid * q_in
        if np.all(_slack(model, tm, qm) >= 0):
            hi = mid
        else:
            lo = mid
    return (1 - hi) * t + hi * t_in, (1 - hi) * q + hi * q_in
