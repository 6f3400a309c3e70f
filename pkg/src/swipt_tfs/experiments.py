"""Sweeps, convergence traces, fairness tables and the verification report."""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .baselines import solve_ss, solve_ts
from .channel import ChannelConfig, generate
from .core import (
    Allocation,
    ProblemInstance,
    QosRequirements,
    SolveResult,
    SystemParams,
    check_feasibility,
    dbm_to_watt,
)
from .oracle import OracleRefusal, grid_optimum, projected_gradient_optimum
from .scfb import InfeasibleProblemError, ScaledProblem, SolverConfig, solve, stationarity_residuals

STRATEGIES = ("tfs", "ts", "ss-greedy")
SWEEP_VARIABLES = ("E", "K", "X")
SWEEP_HEADER = ["strategy", "variable", "value", "seed", "sum_rate_bps", "min_user_rate_bps",
                "min_user_energy_w", "iterations", "status"]
SUMMARY_HEADER = ["strategy", "variable", "value", "seeds", "feasible", "mean_sum_rate_bps",
                  "stderr_sum_rate_bps", "common_seeds", "common_mean_sum_rate_bps"]
TRACE_HEADER = ["x", "iteration", "modified_objective_bps", "objective_bps", "max_violation",
                "gap_bound", "gap_bound_bps"]
FAIRNESS_HEADER = ["strategy", "user", "rate_bps", "energy_w", "min_rate_bps", "status", "jain_index"]


def fmt(x) -> str:
    """Stable text form of a number for CSV output."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


@dataclass(frozen=True)
class BaseSetup:
    """Fixed parameters shared by every cell of a sweep."""

    num_users: int = 4
    num_subcarriers: int = 15
    subcarrier_bandwidth_hz: float = 10e6
    noise_density_dbm_per_hz: float = -174.0
    max_power_dbm: float = 17.0
    conversion_efficiency: float = 0.2
    min_rate_bps: float = 5e6
    min_energy_w: float = 36e-6
    regularizer_weight: float = 1e-3
    d_min_km: float = 0.0005
    d_max_km: float = 0.0015
    shadow_std_db: float = 4.0
    fading: str = "rayleigh"


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    seeds: tuple = tuple(range(20))
    strategies: tuple = STRATEGIES
    base: BaseSetup = field(default_factory=BaseSetup)
    output: str = "sweep.csv"

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"variable must be one of {SWEEP_VARIABLES}")
        if not self.values or not self.seeds:
            raise ValueError("sweep needs at least one value and one seed")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad or not self.strategies:
            raise ValueError(f"unknown strategies {sorted(bad)}; choose from {STRATEGIES}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "strategies", tuple(self.strategies))

    @classmethod
    def from_dict(cls, data: dict) -> "SweepSpec":
        data = dict(data)
        known = {f.name for f in fields(BaseSetup)}
        base = data.pop("base", {}) or {}
        unknown = set(base) - known
        if unknown:
            raise ValueError(f"unknown base fields {sorted(unknown)}")
        allowed = {f.name for f in fields(cls)}
        extra = set(data) - allowed
        if extra:
            raise ValueError(f"unknown sweep fields {sorted(extra)}")
        return cls(base=BaseSetup(**base), **data)

    @classmethod
    def load(cls, path) -> "SweepSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["values"], out["seeds"], out["strategies"] = list(self.values), list(self.seeds), list(self.strategies)
        return out


@dataclass(frozen=True)
class SweepRow:
    strategy: str
    variable: str
    value: float
    seed: int
    sum_rate_bps: float
    min_user_rate_bps: float
    min_user_energy_w: float
    iterations: int
    status: str
    wall_time_s: float = 0.0

    def key(self):
        return (STRATEGIES.index(self.strategy), self.value, self.seed)

    def cells(self, timing: bool = False) -> list:
        out = [self.strategy, self.variable, fmt(self.value), fmt(self.seed), fmt(self.sum_rate_bps),
               fmt(self.min_user_rate_bps), fmt(self.min_user_energy_w), fmt(self.iterations), self.status]
        if timing:
            out.append(f"{self.wall_time_s:.6f}")
        return out


def build_instance(base: BaseSetup, seed: int, K: int | None = None, E: float | None = None) -> ProblemInstance:
    K = base.num_users if K is None else int(K)
    N = base.num_subcarriers
    E = base.min_energy_w if E is None else float(E)
    params = SystemParams(K, N, base.subcarrier_bandwidth_hz, dbm_to_watt(base.noise_density_dbm_per_hz),
                          dbm_to_watt(base.max_power_dbm), base.conversion_efficiency)
    ch = ChannelConfig(seed=seed, d_min=base.d_min_km, d_max=base.d_max_km,
                       shadow_std=base.shadow_std_db, fading=base.fading)
    qos = QosRequirements(np.full(K, base.min_rate_bps), np.full(K, E))
    return ProblemInstance(params, qos, generate(K, N, ch))


def run_strategy(inst: ProblemInstance, strategy: str, X: float = 1e-3) -> SolveResult:
    if strategy == "tfs":
        return solve(inst, SolverConfig(regularizer_weight=X))
    if strategy == "ts":
        return solve_ts(inst)
    if strategy == "ss-greedy":
        return solve_ss(inst)
    raise ValueError(f"unknown strategy {strategy!r}")


def usable(inst: ProblemInstance, res: SolveResult | None) -> bool:
    """A result whose allocation may be reported: not infeasible and passing the feasibility check."""
    return res is not None and res.status != "infeasible" and check_feasibility(inst, res.allocation).feasible


def _cell(args) -> SweepRow:
    spec, strategy, value, seed = args
    base = spec.base
    K = value if spec.variable == "K" else None
    E = value if spec.variable == "E" else None
    X = value if spec.variable == "X" else base.regularizer_weight
    if K is not None and (K != int(K) or K < 1):
        raise ValueError(f"user count must be a positive integer, got {value}")
    inst = build_instance(base, seed, K=K, E=E)
    start = time.perf_counter()
    try:
        res = run_strategy(inst, strategy, X)
    except InfeasibleProblemError:
        res = None
    wall = time.perf_counter() - start
    if not usable(inst, res):
        nan = float("nan")
        status = "infeasible" if res is None or res.status == "converged" else res.status
        iters = 0 if res is None else res.iterations
        return SweepRow(strategy, spec.variable, value, seed, nan, nan, nan, iters, status, wall)
    return SweepRow(strategy, spec.variable, value, seed, res.objective, float(res.rates.min()),
                    float(res.energies.min()), res.iterations, res.status, wall)


def sweep_rows(spec: SweepSpec, jobs: int = 1) -> list:
    cells = [(spec, s, v, seed) for s in spec.strategies for v in spec.values for seed in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_cell, cells))
    else:
        rows = [_cell(c) for c in cells]
    return sorted(rows, key=SweepRow.key)


def summarize(rows: list) -> list:
    """Per (strategy, value) mean and standard error over feasible seeds.

    The ``common_*`` columns average only over seeds that are feasible at
    every value of the sweep for that strategy, so curves compare like with
    like.
    """
    out = []
    for strategy in STRATEGIES:
        mine = [r for r in rows if r.strategy == strategy]
        if not mine:
            continue
        values = sorted({r.value for r in mine})
        seeds = sorted({r.seed for r in mine})
        ok = {(r.value, r.seed) for r in mine if not math.isnan(r.sum_rate_bps)}
        common = [s for s in seeds if all((v, s) in ok for v in values)]
        for v in values:
            here = [r for r in mine if r.value == v]
            good = np.array([r.sum_rate_bps for r in here if not math.isnan(r.sum_rate_bps)])
            shared = np.array([r.sum_rate_bps for r in here if r.seed in common])
            mean = float(good.mean()) if good.size else float("nan")
            se = float(good.std(ddof=1) / math.sqrt(good.size)) if good.size > 1 else float("nan")
            cmean = float(shared.mean()) if shared.size else float("nan")
            out.append({"strategy": strategy, "variable": here[0].variable, "value": v, "seeds": len(here),
                        "feasible": int(good.size), "mean_sum_rate_bps": mean, "stderr_sum_rate_bps": se,
                        "common_seeds": len(common), "common_mean_sum_rate_bps": cmean})
    return out


def _csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + "_summary.csv")


def write_sweep(rows: list, path, timing: bool = False) -> tuple:
    """Write the per-cell CSV and its ``_summary.csv`` companion."""
    path = Path(path)
    header = SWEEP_HEADER + (["wall_time_s"] if timing else [])
    path.write_text(_csv_text(header, [r.cells(timing) for r in rows]))
    summary = summarize(rows)
    spath = summary_path(path)
    spath.write_text(_csv_text(SUMMARY_HEADER, [[fmt(s[h]) if not isinstance(s[h], str) else s[h]
                                                 for h in SUMMARY_HEADER] for s in summary]))
    return path, spath


def run_sweep(spec: SweepSpec, output=None, jobs: int = 1, timing: bool = False) -> list:
    """Run every (strategy, value, seed) cell and write sorted CSVs."""
    rows = sweep_rows(spec, jobs)
    write_sweep(rows, output or spec.output, timing)
    return rows


# -- convergence ----------------------------------------------------------------


def trace_for(inst: ProblemInstance, X: float, cfg: SolverConfig | None = None) -> SolveResult:
    return solve(inst, replace(cfg or SolverConfig(), regularizer_weight=X))


def gap_bound(inst: ProblemInstance, X: float) -> float:
    """K N X, the regularizer's largest possible value in normalized rate units."""
    return inst.K * inst.N * X


def run_convergence(inst: ProblemInstance, x_values, output=None, cfg: SolverConfig | None = None) -> dict:
    """One solver trace per regularizer weight; returns {X: SolveResult}."""
    results, lines = {}, []
    C = inst.params.rate_constant
    for X in x_values:
        X = float(X)
        res = trace_for(inst, X, cfg)
        results[X] = res
        bound = gap_bound(inst, X)
        for rec in res.trace:
            lines.append([fmt(X), fmt(rec.iteration), fmt(rec.modified_objective), fmt(rec.objective),
                          fmt(rec.max_violation), fmt(bound), fmt(bound * C)])
    if output is not None:
        Path(output).write_text(_csv_text(TRACE_HEADER, lines))
    return results


def window_spread(values, fraction: float = 0.2) -> float:
    """Relative spread (max - min) / |mean| over the final ``fraction`` of a trace."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return float("nan")
    tail = values[-max(1, int(math.ceil(fraction * values.size))):]
    return float((tail.max() - tail.min()) / max(abs(tail.mean()), 1e-300))


# -- fairness -------------------------------------------------------------------


def jain_index(rates) -> float:
    r = np.asarray(rates, dtype=float)
    denom = r.size * float((r**2).sum())
    return float(r.sum() ** 2 / denom) if denom > 0 else float("nan")


def run_fairness(inst: ProblemInstance, output=None, strategies=STRATEGIES, X: float = 1e-3) -> dict:
    """Per-user rates of each strategy on one channel; returns {strategy: SolveResult}."""
    results, lines = {}, []
    for s in strategies:
        try:
            res = run_strategy(inst, s, X)
        except InfeasibleProblemError:
            res = None
        results[s] = res
        status = "infeasible" if res is None else res.status
        ok = usable(inst, res)
        jain = jain_index(res.rates) if ok else float("nan")
        for k in range(inst.K):
            rate = res.rates[k] if ok else float("nan")
            energy = res.energies[k] if ok else float("nan")
            lines.append([s, fmt(k), fmt(rate), fmt(energy), fmt(inst.qos.min_rate[k]), status, fmt(jain)])
    if output is not None:
        Path(output).write_text(_csv_text(FAIRNESS_HEADER, lines))
    return results


# -- verification ---------------------------------------------------------------

GRID_LIMIT = 4
PG_LIMIT = 100
KKT_TOL = 1e-4
TIGHT_TOL = 1e-4


@dataclass
class Check:
    name: str
    passed: bool | None  # None: not applicable
    detail: str = ""

    @property
    def verdict(self) -> str:
        return {True: "PASS", False: "FAIL", None: "SKIP"}[self.passed]


@dataclass
class VerifyReport:
    checks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed is not False for c in self.checks)

    def add(self, name, passed, detail=""):
        self.checks.append(Check(name, None if passed is None else bool(passed), detail))

    def lines(self) -> list:
        out = [f"CHECK {c.name} {c.verdict} {c.detail}".rstrip() for c in self.checks]
        out.append(f"VERIFY {'PASS' if self.passed else 'FAIL'}")
        return out

    def to_dict(self) -> dict:
        return {"passed": self.passed,
                "checks": [{"name": c.name, "verdict": c.verdict, "detail": c.detail} for c in self.checks]}


def verify_allocation(inst: ProblemInstance, alloc: Allocation, report: VerifyReport | None = None,
                      tol: float = 1e-6) -> VerifyReport:
    report = report or VerifyReport()
    fr = check_feasibility(inst, alloc, tol)
    report.add("allocation-feasibility", fr.feasible, fr.summary())
    return report


def verify(inst: ProblemInstance, cfg: SolverConfig | None = None, allocation: Allocation | None = None) -> VerifyReport:
    """Solve with SCFB, self-check it and compare against the oracles where they fit."""
    cfg = cfg or SolverConfig()
    X = cfg.regularizer_weight
    report = VerifyReport()
    if allocation is not None:
        verify_allocation(inst, allocation, report, cfg.feasibility_tol)
    try:
        res = solve(inst, cfg)
    except InfeasibleProblemError as exc:
        report.add("scfb-status", None, f"infeasible: {exc}")
        return report
    report.add("scfb-status", None, f"{res.status} after {res.iterations} iterations")
    if not res.feasible:
        report.add("scfb-feasibility", None, "instance reported infeasible or not converged")
        return report
    fr = check_feasibility(inst, res.allocation, max(cfg.feasibility_tol, 1e-6))
    report.add("scfb-feasibility", fr.feasible, fr.summary())

    sp = ScaledProblem(inst)
    m, q = sp.from_allocation(res.allocation)
    time_gap = float(np.abs(m.sum(axis=0) - 1.0).max())
    power_gap = abs(float(q.sum()) - 1.0)
    report.add("time-budget-tight", time_gap <= TIGHT_TOL, f"max|sum_k m - 1|={time_gap:.3e}")
    report.add("power-budget-tight", power_gap <= TIGHT_TOL, f"|sum q - P|/P={power_gap:.3e}")
    reg = X * float(np.sqrt(m).sum())
    bound = gap_bound(inst, X)
    report.add("regularizer-bound", reg <= bound * (1 + 1e-12), f"X*sum(sqrt m)={reg:.6g} <= KNX={bound:.6g}")
    dm, dq = stationarity_residuals(inst, res, X)
    kkt = float(np.nanmax(np.abs(np.concatenate([dm.ravel(), dq.ravel(), [0.0]]))))
    report.add("kkt-residual", kkt <= KKT_TOL, f"max residual={kkt:.3e}")

    size = inst.K * inst.N
    try:
        if size > PG_LIMIT:
            raise OracleRefusal(f"oracle handles K*N <= {PG_LIMIT}, got K={inst.K}, N={inst.N}")
        oracles = [("pg", projected_gradient_optimum(inst))]
        if size <= GRID_LIMIT:
            oracles.insert(0, ("grid", grid_optimum(inst)))
    except OracleRefusal as exc:
        report.add("oracle", None, f"refused: {exc}")
        return report
    tol_abs = bound * inst.params.rate_constant
    for name, orc in oracles:
        if not orc.feasible:
            report.add(f"oracle-{name}", None, orc.message or "oracle found no feasible point")
            continue
        gap = abs(res.objective - orc.objective)
        allowed = tol_abs + 1e-3 * abs(orc.objective)
        report.add(f"oracle-{name}", gap <= allowed,
                   f"scfb={res.objective:.9g} oracle={orc.objective:.9g} gap={gap:.3e} allowed={allowed:.3e}")
    return report
