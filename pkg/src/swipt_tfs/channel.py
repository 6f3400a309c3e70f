"""Seeded channel generation: path loss, log-normal shadowing, Rayleigh fading.

Random stream contract
----------------------
One ``numpy.random.Generator`` backed by the counter-based Philox4x32-10 bit
generator is created per call from ``seed``.  Users are drawn one after the
other; for user k the draws are

1. distance, ``Generator.uniform(d_min, d_max)``;
2. shadowing in dB, ``Generator.normal(0, shadow_std)``;
3. ``N`` fading powers, ``Generator.exponential(1.0, size=N)``.

All three are drawn whatever the fading mode (``"rayleigh-flat"`` uses the
first fading value on every subcarrier, ``"none"`` ignores them), so the
first K users of a seed are identical for every larger user count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ChannelGains, ProblemInstance, QosRequirements, SystemParams, reference_params

FADING_MODES = ("rayleigh", "rayleigh-flat", "none")


@dataclass(frozen=True)
class ChannelConfig:
    """Geometry and propagation settings.  Distances in km."""

    seed: int = 0
    d_min: float = 0.0005
    d_max: float = 0.0015
    pathloss_intercept: float = 128.1
    pathloss_slope: float = 37.6
    shadow_std: float = 4.0
    fading: str = "rayleigh"

    def __post_init__(self):
        if not 0 < self.d_min <= self.d_max:
            raise ValueError("need 0 < d_min <= d_max")
        if self.shadow_std < 0:
            raise ValueError("shadowing std must be >= 0")
        if self.fading not in FADING_MODES:
            raise ValueError(f"fading must be one of {FADING_MODES}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


def pathloss_db(d, intercept: float = 128.1, slope: float = 37.6):
    """Path loss in dB at distance ``d`` km."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError("distance must be positive")
    out = intercept + slope * np.log10(d)
    return float(out) if out.ndim == 0 else out


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def sample_users(K: int, N: int, cfg: ChannelConfig):
    """Distances (km), shadowing (dB) and raw fading powers (K x N)."""
    rng = _rng(cfg.seed)
    dist = np.empty(K)
    shadow = np.empty(K)
    fading = np.empty((K, N))
    for k in range(K):
        dist[k] = rng.uniform(cfg.d_min, cfg.d_max)
        shadow[k] = rng.normal(0.0, cfg.shadow_std)
        fading[k] = rng.exponential(1.0, size=N)
    return dist, shadow, fading


def generate(K: int, N: int, cfg: ChannelConfig | None = None) -> ChannelGains:
    cfg = cfg or ChannelConfig()
    if K < 1 or N < 1:
        raise ValueError("K and N must be >= 1")
    dist, shadow, fading = sample_users(K, N, cfg)
    if cfg.fading == "rayleigh-flat":
        fading = np.repeat(fading[:, :1], N, axis=1)
    elif cfg.fading == "none":
        fading = np.ones((K, N))
    loss_db = pathloss_db(dist, cfg.pathloss_intercept, cfg.pathloss_slope) + shadow
    return ChannelGains(10.0 ** (-loss_db[:, None] / 10.0) * fading)


def reference_instance(K: int = 4, N: int = 15, min_energy: float = 36e-6, min_rate: float = 5e6,
                   cfg: ChannelConfig | None = None, params: SystemParams | None = None) -> ProblemInstance:
    """Instance with the reference system parameters and equal per-user targets."""
    params = params or reference_params(K, N)
    qos = QosRequirements(np.full(K, float(min_rate)), np.full(K, float(min_energy)))
    return ProblemInstance(params, qos, generate(K, N, cfg))
