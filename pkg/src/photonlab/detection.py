"""Detection-chain imperfections: HBT splitting, background, darks, jitter, dead time.

Models the receive side of a Hanbury Brown-Twiss measurement: a beamsplitter
feeding two single-photon counters.  Detector defaults are placeholders — the
jitter default of 0.42 ns gives a ~1 ns FWHM response, typical of an SPCM —
and every test states its own values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ConfigError,
    EventStream,
    PhotonLabError,
    merge_streams,
    rng_for,
    validate_stream,
)
from .emitter import poisson_stream


class MultiChannelInput(PhotonLabError):
    """An operation expecting a single-channel stream received several channels."""


@dataclass(frozen=True)
class DetectorConfig:
    """Single-photon counter imperfections; times in ps, rates in s^-1."""

    efficiency: float = 1.0
    dead_time_ps: int = 0          # non-paralyzable
    jitter_sigma_ps: float = 0.0   # Gaussian timing jitter, 1 sigma
    dark_rate_per_s: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ConfigError("efficiency must lie in [0, 1]")
        if self.dead_time_ps < 0 or self.jitter_sigma_ps < 0 or self.dark_rate_per_s < 0:
            raise ConfigError("dead time, jitter and dark rate must be non-negative")

    def to_json_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "dead_time_ps": int(self.dead_time_ps),
            "jitter_sigma_ps": self.jitter_sigma_ps,
            "dark_rate_per_s": self.dark_rate_per_s,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "DetectorConfig":
        return DetectorConfig(
            efficiency=float(d.get("efficiency", 1.0)),
            dead_time_ps=int(d.get("dead_time_ps", 0)),
            jitter_sigma_ps=float(d.get("jitter_sigma_ps", 0.0)),
            dark_rate_per_s=float(d.get("dark_rate_per_s", 0.0)),
        )


@dataclass(frozen=True)
class SplitterConfig:
    """Beamsplitter: each photon goes to channel 0 with transmit_prob, else channel 1."""

    transmit_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.transmit_prob <= 1.0:
            raise ConfigError("transmit_prob must lie in [0, 1]")

    def to_json_dict(self) -> dict:
        return {"transmit_prob": self.transmit_prob}

    @staticmethod
    def from_json_dict(d: dict) -> "SplitterConfig":
        return SplitterConfig(transmit_prob=float(d.get("transmit_prob", 0.5)))


@dataclass(frozen=True)
class BackgroundConfig:
    """Pump-scatter photons reaching the splitter, as a homogeneous Poisson rate."""

    rate_per_s: float = 0.0

    def __post_init__(self):
        if self.rate_per_s < 0:
            raise ConfigError("background rate must be non-negative")

    def to_json_dict(self) -> dict:
        return {"background_rate_per_s": self.rate_per_s}

    @staticmethod
    def from_json_dict(d: dict) -> "BackgroundConfig":
        return BackgroundConfig(rate_per_s=float(d.get("background_rate_per_s", 0.0)))


def split_hbt(stream: EventStream, cfg: SplitterConfig, seed: int) -> EventStream:
    """Assign each record of a single-channel stream to channel 0 or 1.

    Timestamps are unchanged; records stay in time order.
    """
    present = set(np.unique(stream.channel).tolist())
    if len(present) > 1:
        raise MultiChannelInput(f"splitter expects one input channel, got {sorted(present)}")
    rng = rng_for(seed, "split_hbt")
    to_ch0 = rng.random(len(stream)) < cfg.transmit_prob
    channel = np.where(to_ch0, 0, 1).astype(np.int64)
    return EventStream.from_arrays(
        stream.t_ps, channel, stream.duration_ps, channels=[0, 1],
        origin_note=stream.origin_note, validate=False,
    )


def add_background(stream: EventStream, cfg: BackgroundConfig, seed: int) -> EventStream:
    """Merge a Poisson background of the given total rate into the stream.

    Single-channel streams receive all background events on that channel;
    with several channels each event lands on a uniformly random one (the
    physical pipeline adds background before the splitter, so the multi-
    channel case only arises on already-split data).
    """
    validate_stream(stream)
    if cfg.rate_per_s == 0.0 or stream.duration_ps == 0:
        return stream
    bg = poisson_stream(cfg.rate_per_s, stream.duration_s, seed, channel=0, label="background")
    targets = sorted(stream.channels) if stream.channels else [0]
    if len(targets) == 1:
        channel = np.full(len(bg), targets[0], dtype=np.int64)
    else:
        rng = rng_for(seed, "background_channels")
        channel = np.asarray(targets, dtype=np.int64)[rng.integers(0, len(targets), size=len(bg))]
    bg = EventStream.from_arrays(
        bg.t_ps, channel, stream.duration_ps, channels=targets,
        origin_note="background", validate=False,
    )
    return merge_streams(stream, bg)


def _enforce_dead_time(t_ps: np.ndarray, dead_time_ps: int) -> np.ndarray:
    """Non-paralyzable dead time: drop records within dead_time after the last accepted one."""
    keep = np.ones(t_ps.size, dtype=bool)
    last = None
    for i, t in enumerate(t_ps.tolist()):
        if last is not None and t - last < dead_time_ps:
            keep[i] = False
        else:
            last = t
    return keep


def apply_detector(stream: EventStream, cfg: DetectorConfig, seed: int) -> EventStream:
    """Run each channel through the detector imperfection pipeline.

    Order per channel: (1) Bernoulli thinning by efficiency, (2) dark-count
    Poisson merge, (3) Gaussian timestamp jitter, (4) re-sort, (5) non-
    paralyzable dead time.  Jitter precedes dead time because the dead time
    acts on electronically registered (already jittered) pulses.  Jittered
    records leaving [0, duration] are dropped.
    """
    validate_stream(stream)
    out_t, out_ch = [], []
    for ch in sorted(stream.channels):
        rng = rng_for(seed, "detector", ch)
        t = stream.channel_times(ch).astype(np.float64)

        if cfg.efficiency < 1.0:
            t = t[rng.random(t.size) < cfg.efficiency]

        if cfg.dark_rate_per_s > 0.0:
            darks = poisson_stream(
                cfg.dark_rate_per_s, stream.duration_s, seed, channel=ch, label="darks"
            )
            t = np.concatenate([t, darks.t_ps.astype(np.float64)])
            t.sort(kind="stable")

        if cfg.jitter_sigma_ps > 0.0:
            t = t + rng.normal(0.0, cfg.jitter_sigma_ps, size=t.size)

        t = np.round(t).astype(np.int64)
        t = t[(t >= 0) & (t <= stream.duration_ps)]
        t.sort(kind="stable")

        if cfg.dead_time_ps > 0 and t.size:
            t = t[_enforce_dead_time(t, cfg.dead_time_ps)]

        out_t.append(t)
        out_ch.append(np.full(t.size, ch, dtype=np.int64))

    t_all = np.concatenate(out_t) if out_t else np.empty(0, dtype=np.int64)
    ch_all = np.concatenate(out_ch) if out_ch else np.empty(0, dtype=np.int64)
    order = np.lexsort((ch_all, t_all))
    return EventStream.from_arrays(
        t_all[order], ch_all[order], stream.duration_ps,
        channels=stream.channels, origin_note=stream.origin_note,
    )
