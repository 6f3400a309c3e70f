"""Problem data, evaluation and feasibility for the TFS sum-rate problem.

The convex form of the problem works in time-sharing fractions ``m`` and
energy variables ``q = m * p``.  Every quantity here is in SI units (bit/s,
W, Hz); the solver keeps its own normalized copy (see
:class:`swipt_tfs.scfb.ScaledProblem`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

INSTANCE_FORMAT = "swipt-tfs-instance/1"

# p = q/m is reported only above this time fraction
M_FLOOR = 1e-9


def dbm_to_watt(x):
    """Convert dBm to W.  Works on scalars and arrays."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite power level: {x!r}")
    out = 10.0 ** ((arr - 30.0) / 10.0)
    return float(out) if out.ndim == 0 else out


def watt_to_dbm(x):
    """Convert W to dBm.  Zero maps to ``-inf``."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"power must be finite and non-negative: {x!r}")
    with np.errstate(divide="ignore"):
        out = 10.0 * np.log10(arr) + 30.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the downlink.

    ``noise_density`` is in W/Hz; the per-subcarrier noise power is
    ``noise_density * subcarrier_bandwidth``.
    """

    num_users: int
    num_subcarriers: int
    subcarrier_bandwidth: float
    noise_density: float
    max_power: float
    efficiency: float
    harvest_time: float = 1.0

    def __post_init__(self):
        if self.num_users < 1 or self.num_subcarriers < 1:
            raise ValueError("need at least one user and one subcarrier")
        if not self.subcarrier_bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.noise_density > 0:
            raise ValueError("noise density must be positive")
        if not self.max_power > 0:
            raise ValueError("max power must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError("conversion efficiency must lie in (0, 1]")
        if self.harvest_time != 1.0:
            raise ValueError("harvest time is normalized to T = 1")

    @property
    def noise_power(self) -> float:
        return self.noise_density * self.subcarrier_bandwidth

    @property
    def rate_constant(self) -> float:
        """C = B / ln 2, turns nats per slot into bit/s."""
        return self.subcarrier_bandwidth / math.log(2.0)


@dataclass(frozen=True)
class QosRequirements:
    min_rate: np.ndarray
    min_energy: np.ndarray

    def __post_init__(self):
        rate = np.array(self.min_rate, dtype=float).reshape(-1)
        energy = np.array(self.min_energy, dtype=float).reshape(-1)
        if rate.shape != energy.shape:
            raise ValueError("rate and energy targets must have the same length")
        if np.any(~np.isfinite(rate)) or np.any(rate < 0):
            raise ValueError("rate targets must be finite and >= 0")
        if np.any(~np.isfinite(energy)) or np.any(energy < 0):
            raise ValueError("energy targets must be finite and >= 0")
        rate.setflags(write=False)
        energy.setflags(write=False)
        object.__setattr__(self, "min_rate", rate)
        object.__setattr__(self, "min_energy", energy)


@dataclass(frozen=True)
class ChannelGains:
    """K x N matrix of linear power gains."""

    g: np.ndarray

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.ndim != 2:
            raise ValueError("gain matrix must be two-dimensional")
        if np.any(~np.isfinite(g)) or np.any(g < 0):
            raise ValueError("gains must be finite and >= 0")
        if np.any(g.max(axis=1) <= 0):
            raise ValueError("every user needs at least one positive gain")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)


@dataclass(frozen=True)
class ProblemInstance:
    params: SystemParams
    qos: QosRequirements
    channel: ChannelGains

    def __post_init__(self):
        K, N = self.params.num_users, self.params.num_subcarriers
        if self.channel.g.shape != (K, N):
            raise ValueError(f"gain matrix is {self.channel.g.shape}, expected {(K, N)}")
        if self.qos.min_rate.shape != (K,):
            raise ValueError(f"QoS vectors have length {self.qos.min_rate.size}, expected {K}")

    @property
    def K(self) -> int:
        return self.params.num_users

    @property
    def N(self) -> int:
        return self.params.num_subcarriers

    @property
    def g(self) -> np.ndarray:
        return self.channel.g

    def to_dict(self) -> dict:
        p = self.params
        return {
            "format": INSTANCE_FORMAT,
            "num_users": p.num_users,
            "num_subcarriers": p.num_subcarriers,
            "subcarrier_bandwidth_hz": p.subcarrier_bandwidth,
            "noise_density_dbm_per_hz": watt_to_dbm(p.noise_density),
            "max_power_dbm": watt_to_dbm(p.max_power),
            "conversion_efficiency": p.efficiency,
            "harvest_time_s": p.harvest_time,
            "min_rate_bps": self.qos.min_rate.tolist(),
            "min_energy_w": self.qos.min_energy.tolist(),
            "channel_gain": self.channel.g.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemInstance":
        fmt = data.get("format", INSTANCE_FORMAT)
        if fmt != INSTANCE_FORMAT:
            raise ValueError(f"unsupported instance format {fmt!r}")
        try:
            params = SystemParams(
                num_users=int(data["num_users"]),
                num_subcarriers=int(data["num_subcarriers"]),
                subcarrier_bandwidth=float(data["subcarrier_bandwidth_hz"]),
                noise_density=dbm_to_watt(float(data["noise_density_dbm_per_hz"])),
                max_power=dbm_to_watt(float(data["max_power_dbm"])),
                efficiency=float(data["conversion_efficiency"]),
                harvest_time=float(data.get("harvest_time_s", 1.0)),
            )
            qos = QosRequirements(data["min_rate_bps"], data["min_energy_w"])
            channel = ChannelGains(data["channel_gain"])
        except KeyError as exc:
            raise ValueError(f"instance file is missing field {exc.args[0]!r}") from None
        return cls(params, qos, channel)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ProblemInstance":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class Allocation:
    """Time-sharing fractions ``m`` and energy variables ``q`` (both K x N)."""

    m: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float)
        q = np.array(self.q, dtype=float)
        if m.shape != q.shape or m.ndim != 2:
            raise ValueError("m and q must be K x N matrices of the same shape")
        m.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "q", q)

    @property
    def p(self) -> np.ndarray:
        """Transmit power q/m, zero where the time fraction is below the floor."""
        out = np.zeros_like(self.q)
        on = self.m >= M_FLOOR
        out[on] = self.q[on] / self.m[on]
        return out

    @classmethod
    def zeros(cls, K: int, N: int) -> "Allocation":
        return cls(np.zeros((K, N)), np.zeros((K, N)))

    def to_dict(self) -> dict:
        return {"m": self.m.tolist(), "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Allocation":
        return cls(data["m"], data["q"])


@dataclass
class SolveResult:
    """Output of any strategy solver.

    ``status`` is one of ``"converged"``, ``"max_iterations"`` or
    ``"infeasible"``.  ``duals`` is ``None`` for solvers without multipliers.
    """

    allocation: Allocation
    rates: np.ndarray
    energies: np.ndarray
    objective: float
    status: str
    iterations: int
    duals: object = None
    objective_trace: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    strategy: str = "tfs"
    message: str = ""

    @property
    def feasible(self) -> bool:
        return self.status == "converged"


def per_term_rate(m, q, g, noise_power, rate_constant):
    """Rate m * C * ln(1 + g q / (sigma^2 m)) of one (user, subcarrier) slot.

    Broadcasts over arrays.  Exactly zero wherever ``m == 0``.
    """
    m = np.asarray(m, dtype=float)
    q = np.asarray(q, dtype=float)
    g = np.asarray(g, dtype=float)
    m_b, q_b, g_b = np.broadcast_arrays(m, q, g)
    out = np.zeros(m_b.shape)
    on = m_b > 0
    out[on] = m_b[on] * rate_constant * np.log1p(g_b[on] * q_b[on] / (noise_power * m_b[on]))
    return float(out) if out.ndim == 0 else out


def rate_matrix(inst: ProblemInstance, alloc: Allocation) -> np.ndarray:
    p = inst.params
    return per_term_rate(alloc.m, alloc.q, inst.g, p.noise_power, p.rate_constant)


def user_rates(inst: ProblemInstance, alloc: Allocation) -> np.ndarray:
    return rate_matrix(inst, alloc).sum(axis=1)


def user_energies(inst: ProblemInstance, alloc: Allocation) -> np.ndarray:
    """Harvested power of every user: zeta * sum_{l != k} sum_n q_ln g_kn."""
    q_total = alloc.q.sum(axis=0)
    other = q_total[None, :] - alloc.q
    return inst.params.efficiency * np.sum(other * inst.g, axis=1)


def _check_user(inst: ProblemInstance, k: int) -> None:
    if not 0 <= k < inst.K:
        raise IndexError(f"user index {k} out of range for K={inst.K}")


def user_rate(inst: ProblemInstance, alloc: Allocation, k: int) -> float:
    _check_user(inst, k)
    return float(user_rates(inst, alloc)[k])


def user_energy(inst: ProblemInstance, alloc: Allocation, k: int) -> float:
    _check_user(inst, k)
    return float(user_energies(inst, alloc)[k])


def objective(inst: ProblemInstance, alloc: Allocation) -> float:
    """Sum rate in bit/s."""
    return float(rate_matrix(inst, alloc).sum())


def regularizer(alloc: Allocation, weight: float) -> float:
    return float(weight * np.sqrt(np.clip(alloc.m, 0.0, None)).sum())


def modified_objective(inst: ProblemInstance, alloc: Allocation, weight: float) -> float:
    """Sum rate plus ``weight * sum(sqrt(m))``; ``weight`` in bit/s."""
    if weight < 0:
        raise ValueError("regularizer weight must be >= 0")
    return objective(inst, alloc) + regularizer(alloc, weight)


@dataclass
class FeasibilityReport:
    """Constraint slacks of an allocation.

    Raw slacks carry SI units; the ``*_norm`` fields divide by the constraint
    scale (R_k, E_k, P_max, 1) and are what the tolerance is compared to.
    """

    rate_slack: np.ndarray
    energy_slack: np.ndarray
    time_slack: np.ndarray
    power_slack: float
    rate_slack_norm: np.ndarray
    energy_slack_norm: np.ndarray
    power_slack_norm: float
    box_violation: float
    tol: float
    violations: list

    @property
    def feasible(self) -> bool:
        return not self.violations

    @property
    def max_violation(self) -> float:
        """Largest normalized violation over all constraint families (0 if none)."""
        worst = [
            -np.min(self.rate_slack_norm, initial=0.0),
            -np.min(self.energy_slack_norm, initial=0.0),
            -np.min(self.time_slack, initial=0.0),
            -self.power_slack_norm,
            self.box_violation,
        ]
        return float(max(0.0, *worst))

    def summary(self) -> str:
        if self.feasible:
            return "feasible"
        return "violated: " + ", ".join(self.violations)


def _scale(values: np.ndarray) -> np.ndarray:
    # zero targets cannot be violated, any positive scale will do
    return np.where(values > 0, values, 1.0)


def check_feasibility(inst: ProblemInstance, alloc: Allocation, tol: float = 1e-6) -> FeasibilityReport:
    if tol < 0:
        raise ValueError("tolerance must be >= 0")
    if alloc.m.shape != (inst.K, inst.N):
        raise ValueError(f"allocation is {alloc.m.shape}, instance is {(inst.K, inst.N)}")
    rates = user_rates(inst, alloc)
    energies = user_energies(inst, alloc)
    R, E = inst.qos.min_rate, inst.qos.min_energy
    P = inst.params.max_power

    rate_slack = rates - R
    energy_slack = energies - E
    time_slack = 1.0 - alloc.m.sum(axis=0)
    power_slack = P - float(alloc.q.sum())
    box = max(0.0, -float(alloc.m.min()), float(alloc.m.max()) - 1.0, -float(alloc.q.min()) / P)

    rate_norm = rate_slack / _scale(R)
    energy_norm = energy_slack / _scale(E)
    power_norm = power_slack / P

    violations = []
    for k in np.flatnonzero(rate_norm < -tol):
        violations.append(f"rate[{k}]")
    for k in np.flatnonzero(energy_norm < -tol):
        violations.append(f"energy[{k}]")
    for n in np.flatnonzero(time_slack < -tol):
        violations.append(f"time[{n}]")
    if power_norm < -tol:
        violations.append("power")
    if box > tol:
        violations.append("bounds")
    return FeasibilityReport(
        rate_slack=rate_slack,
        energy_slack=energy_slack,
        time_slack=time_slack,
        power_slack=power_slack,
        rate_slack_norm=rate_norm,
        energy_slack_norm=energy_norm,
        power_slack_norm=power_norm,
        box_violation=box,
        tol=tol,
        violations=violations,
    )


def reference_params(num_users: int = 4, num_subcarriers: int = 15) -> SystemParams:
    """Reference setting: 10 MHz subcarriers, -174 dBm/Hz, 17 dBm, zeta = 0.2."""
    return SystemParams(
        num_users=num_users,
        num_subcarriers=num_subcarriers,
        subcarrier_bandwidth=10e6,
        noise_density=dbm_to_watt(-174.0),
        max_power=dbm_to_watt(17.0),
        efficiency=0.2,
    )
