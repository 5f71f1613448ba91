"""Stochastic and analytic model of a pump-driven two-level emitter.

The emitter alternates between the ground state (dwell ~ Exp(w_p), pump
absorption) and the excited state (dwell ~ Exp(gamma + w_st)).  A photon is
collectible only when the excited state is left through the spontaneous
branch, with probability gamma / (gamma + w_st); the stimulated branch
returns the quantum into the pump mode and is not collectible.  Emission
timestamps are recorded at the instant the excited state is left — constant
optical delays do not change correlations.

Defaults elsewhere in the package: gamma = 2e3 s^-1 (500 us lifetime typical
of a rare-earth ion in silica fiber) and w_p = 1e9 s^-1 (a ~2 ns antibunching
dip).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    EventStream,
    PhotonLabError,
    PS_PER_S,
    rng_for,
)


class InvalidDuration(PhotonLabError):
    """Simulation duration is not a positive, finite time."""


class ZeroPumpWarning(UserWarning):
    """w_p = 0 over a nonzero duration: the emitter never absorbs, stream is empty."""


@dataclass(frozen=True)
class TwoLevelEmitterConfig:
    """Rates (s^-1) of the two-level cycle plus the analytic zero-delay floor."""

    w_p: float                # absorption (pump) rate
    gamma: float              # spontaneous decay rate
    w_st: float = 0.0         # stimulated-return rate, back into the pump mode
    g2_0_floor: float = 0.0   # residual g2(0) of the analytic model

    def __post_init__(self):
        if min(self.w_p, self.gamma, self.w_st) < 0:
            raise ConfigError("emitter rates must be non-negative")
        if self.w_p + self.gamma <= 0:
            raise ConfigError("w_p + gamma must be positive")
        if not 0.0 <= self.g2_0_floor <= 1.0:
            raise ConfigError("g2_0_floor must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "w_p_per_s": self.w_p,
            "gamma_per_s": self.gamma,
            "w_st_per_s": self.w_st,
            "g2_0_floor": self.g2_0_floor,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "TwoLevelEmitterConfig":
        try:
            return TwoLevelEmitterConfig(
                w_p=float(d["w_p_per_s"]),
                gamma=float(d["gamma_per_s"]),
                w_st=float(d.get("w_st_per_s", 0.0)),
                g2_0_floor=float(d.get("g2_0_floor", 0.0)),
            )
        except KeyError as exc:
            raise ConfigError(f"emitter config missing key {exc}") from None


def expected_emission_rate(config: TwoLevelEmitterConfig) -> float:
    """Steady-state collectible photon rate, gamma*w_p / (w_p + gamma + w_st)."""
    total = config.w_p + config.gamma + config.w_st
    if total <= 0:
        raise ConfigError("w_p + gamma + w_st must be positive")
    return config.gamma * config.w_p / total


def analytic_g2(config: TwoLevelEmitterConfig, tau_s):
    """Second-order autocorrelation 1 - (1 - g2_0_floor) * exp(-(w_p + gamma) tau).

    Accepts a scalar or array of non-negative delays in seconds.
    """
    tau = np.asarray(tau_s, dtype=float)
    if np.any(tau < 0):
        raise ConfigError("tau must be non-negative")
    out = 1.0 - (1.0 - config.g2_0_floor) * np.exp(-(config.w_p + config.gamma) * tau)
    return float(out) if np.ndim(tau_s) == 0 else out


def simulate_two_level(
    config: TwoLevelEmitterConfig, duration_s: float, seed: int
) -> EventStream:
    """Sample the emitter's photon stream over `duration_s` seconds.

    Alternating-state Markov simulation: exponential dwells are drawn in
    blocks by inverse CDF, cycle end times are accumulated, and each
    excited-state exit is kept as a photon with probability
    gamma / (gamma + w_st).  Deterministic for a fixed (config, seed).
    """
    if not np.isfinite(duration_s) or duration_s <= 0:
        raise InvalidDuration(f"duration must be positive and finite, got {duration_s}")
    duration_ps = int(round(duration_s * PS_PER_S))
    note = (
        f"two_level_sim seed={seed} w_p={config.w_p!r} gamma={config.gamma!r} "
        f"w_st={config.w_st!r} duration_s={duration_s!r}"
    )

    if config.w_p == 0.0:
        warnings.warn("w_p = 0: no absorption, returning an empty stream", ZeroPumpWarning)
        return EventStream.empty(duration_ps, channels=[0], origin_note=note)

    exit_rate = config.gamma + config.w_st
    if exit_rate == 0.0:
        # the first absorption shelves the emitter forever; nothing collectible
        return EventStream.empty(duration_ps, channels=[0], origin_note=note)

    rng = rng_for(seed, "two_level_sim")
    mean_cycle = 1.0 / config.w_p + 1.0 / exit_rate
    expected = duration_s / mean_cycle
    chunk = int(expected * 1.05 + 10.0 * np.sqrt(expected + 1.0) + 100.0)

    exit_times = []
    t0 = 0.0
    while t0 <= duration_s:
        ground = rng.exponential(1.0 / config.w_p, size=chunk)
        excited = rng.exponential(1.0 / exit_rate, size=chunk)
        ends = t0 + np.cumsum(ground + excited)
        exit_times.append(ends)
        t0 = float(ends[-1])

    times = np.concatenate(exit_times)
    times = times[times <= duration_s]
    if config.w_st > 0.0:
        keep = rng.random(times.size) < config.gamma / exit_rate
        times = times[keep]

    t_ps = np.round(times * PS_PER_S).astype(np.int64)
    t_ps = np.minimum(t_ps, duration_ps)  # rounding can push the last record past the edge
    return EventStream.from_arrays(
        t_ps, np.zeros(t_ps.size, dtype=np.int64), duration_ps,
        channels=[0], origin_note=note,
    )


def poisson_stream(
    rate_per_s: float, duration_s: float, seed: int, channel: int = 0, label: str = "poisson"
) -> EventStream:
    """Homogeneous Poisson process: the reference light source for oracle tests.

    Sampled as Poisson(rate*T) uniform order statistics, which is exact.
    """
    if rate_per_s < 0:
        raise ConfigError("rate must be non-negative")
    if not np.isfinite(duration_s) or duration_s <= 0:
        raise InvalidDuration(f"duration must be positive and finite, got {duration_s}")
    duration_ps = int(round(duration_s * PS_PER_S))
    rng = rng_for(seed, label, channel)
    n = int(rng.poisson(rate_per_s * duration_s))
    times = np.sort(rng.random(n)) * duration_s
    t_ps = np.minimum(np.round(times * PS_PER_S).astype(np.int64), duration_ps)
    return EventStream.from_arrays(
        t_ps, np.full(t_ps.size, channel, dtype=np.int64), duration_ps,
        channels=[channel], origin_note=f"{label} rate={rate_per_s!r} seed={seed}",
    )
