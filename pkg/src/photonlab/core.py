"""Shared domain types for photon counting pipelines.

Timestamps are integer picoseconds from the stream origin.  An int64 ps axis
spans ~106 days, so multi-hour acquisitions are exactly representable and
comparisons never suffer float drift.  All rates elsewhere in the package are
given in s^-1 and converted at the API boundary.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

PS_PER_S = 10**12


# ---------------------------------------------------------------------------
# errors


class PhotonLabError(Exception):
    """Base class for all package errors."""


class UnsortedStream(PhotonLabError):
    """Timestamps decrease somewhere in the record sequence."""


class OutOfRange(PhotonLabError):
    """A timestamp is negative or beyond the stream duration."""


class UnknownChannel(PhotonLabError):
    """A record carries a channel id not declared by its stream."""


class DurationMismatch(PhotonLabError):
    """Streams to be merged cover different durations."""


class FormatError(PhotonLabError):
    """An input file violates its format contract; message carries the line number."""


class ConfigError(PhotonLabError):
    """A configuration value violates its contract; message carries the field path."""


# ---------------------------------------------------------------------------
# seeding

_SEED_MASK = (1 << 64) - 1


def substream_seed(seed: int, *labels) -> np.random.SeedSequence:
    """Derive a child seed from a root seed and a label path.

    The labels are joined with '/' and hashed (SHA-256); the first 128 bits of
    the digest are appended to the root seed as extra entropy words.  Any two
    distinct label paths therefore yield independent, reproducible substreams.
    """
    path = "/".join(str(lab) for lab in labels)
    digest = hashlib.sha256(path.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.SeedSequence(entropy=[int(seed) & _SEED_MASK, *words])


def rng_for(seed: int, *labels) -> np.random.Generator:
    """PCG64 generator for the substream identified by (seed, *labels)."""
    return np.random.Generator(np.random.PCG64(substream_seed(seed, *labels)))


def seconds_to_ps(t_s: float) -> int:
    """Round a time in seconds to integer picoseconds."""
    return int(round(t_s * PS_PER_S))


def ps_to_seconds(t_ps) -> float:
    return np.asarray(t_ps, dtype=float) * 1e-12 if np.ndim(t_ps) else float(t_ps) * 1e-12


# ---------------------------------------------------------------------------
# event streams


class PhotonRecord(NamedTuple):
    """One detection event: channel 0 is the start detector, 1 the stop detector."""

    t_ps: int
    channel: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Channel-tagged, time-ordered detection timestamps.

    Immutable after construction: the arrays are marked read-only, so streams
    are safe to share across concurrent workers.
    """

    t_ps: np.ndarray          # int64, non-decreasing
    channel: np.ndarray       # int64, one id per record
    duration_ps: int
    channels: frozenset
    origin_note: str = ""

    @staticmethod
    def from_arrays(
        t_ps,
        channel,
        duration_ps: int,
        channels: Iterable[int] | None = None,
        origin_note: str = "",
        validate: bool = True,
    ) -> "EventStream":
        t = np.ascontiguousarray(t_ps, dtype=np.int64)
        ch = np.ascontiguousarray(channel, dtype=np.int64)
        if ch.shape != t.shape:
            raise ConfigError("t_ps and channel must have equal length")
        declared = frozenset(int(c) for c in (channels if channels is not None else np.unique(ch)))
        t.setflags(write=False)
        ch.setflags(write=False)
        stream = EventStream(t, ch, int(duration_ps), declared, origin_note)
        return validate_stream(stream) if validate else stream

    @staticmethod
    def empty(duration_ps: int, channels: Iterable[int] = (), origin_note: str = "") -> "EventStream":
        return EventStream.from_arrays(
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64),
            duration_ps, channels=channels, origin_note=origin_note,
        )

    def __len__(self) -> int:
        return int(self.t_ps.size)

    def records(self) -> Iterator[PhotonRecord]:
        for t, c in zip(self.t_ps.tolist(), self.channel.tolist()):
            yield PhotonRecord(t, c)

    def channel_times(self, channel_id: int) -> np.ndarray:
        """Timestamps of one channel (sorted, read-only view copy)."""
        if channel_id not in self.channels:
            raise UnknownChannel(f"channel {channel_id} not in declared set {sorted(self.channels)}")
        return self.t_ps[self.channel == channel_id]

    def counts_by_channel(self) -> dict:
        return {int(c): int(np.count_nonzero(self.channel == c)) for c in sorted(self.channels)}

    @property
    def duration_s(self) -> float:
        return self.duration_ps * 1e-12

    def with_note(self, origin_note: str) -> "EventStream":
        return EventStream(self.t_ps, self.channel, self.duration_ps, self.channels, origin_note)


def validate_stream(stream: EventStream) -> EventStream:
    """Return the stream unchanged if sorted and in-range, else raise.

    Raises UnsortedStream, OutOfRange or UnknownChannel.  An empty stream is
    vacuously valid.
    """
    t, ch = stream.t_ps, stream.channel
    if t.size:
        if np.any(np.diff(t) < 0):
            raise UnsortedStream("timestamps decrease within the stream")
        if t[0] < 0:
            raise OutOfRange("negative timestamp")
        if t[-1] > stream.duration_ps:
            raise OutOfRange(
                f"timestamp {int(t.max())} ps beyond duration {stream.duration_ps} ps"
            )
        present = set(np.unique(ch).tolist())
        if not present <= set(stream.channels):
            raise UnknownChannel(
                f"records on undeclared channel(s) {sorted(present - set(stream.channels))}"
            )
    if stream.duration_ps < 0:
        raise OutOfRange("negative duration")
    return stream


def merge_streams(a: EventStream, b: EventStream) -> EventStream:
    """Union of two streams over the same duration, re-sorted by time.

    Ties are broken by (t, channel, source order) — a's records sort before
    b's at equal (t, channel) — so merged pipelines stay bit-reproducible.
    """
    if a.duration_ps != b.duration_ps:
        raise DurationMismatch(f"durations differ: {a.duration_ps} vs {b.duration_ps} ps")
    t = np.concatenate([a.t_ps, b.t_ps])
    ch = np.concatenate([a.channel, b.channel])
    order = np.lexsort((ch, t))  # stable: preserves a-before-b at equal keys
    note = a.origin_note if a.origin_note == b.origin_note else f"merge({a.origin_note}|{b.origin_note})"
    return EventStream.from_arrays(
        t[order], ch[order], a.duration_ps,
        channels=a.channels | b.channels, origin_note=note, validate=False,
    )


# ---------------------------------------------------------------------------
# coincidence histograms


@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Binned start-stop delay counts with the metadata needed to normalize them."""

    bin_width_ps: int
    tau_min_ps: int
    tau_max_ps: int
    counts: np.ndarray        # int64 per bin, >= 0
    n_start: int
    n_stop: int
    duration_ps: int
    mode: str                 # "start-stop" or "all-pairs"

    def __post_init__(self):
        counts = np.ascontiguousarray(self.counts, dtype=np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if self.bin_width_ps <= 0:
            raise ConfigError("bin_width_ps must be positive")
        if self.mode not in ("start-stop", "all-pairs"):
            raise ConfigError(f"unknown histogram mode {self.mode!r}")
        n_bins = int(round((self.tau_max_ps - self.tau_min_ps) / self.bin_width_ps))
        if counts.size != n_bins:
            raise ConfigError(f"expected {n_bins} bins, got {counts.size}")
        if np.any(counts < 0):
            raise ConfigError("negative bin count")
        if self.mode == "start-stop" and int(counts.sum()) > self.n_start:
            raise ConfigError("start-stop histogram holds more coincidences than starts")

    @property
    def n_bins(self) -> int:
        return int(self.counts.size)

    @property
    def tau_centers_ps(self) -> np.ndarray:
        return self.tau_min_ps + (np.arange(self.n_bins) + 0.5) * self.bin_width_ps


# ---------------------------------------------------------------------------
# fit reports


@dataclass(frozen=True, eq=False)
class FitReport:
    """Parameters, uncertainties and goodness-of-fit of a least-squares fit."""

    names: tuple
    values: np.ndarray
    std_errors: np.ndarray
    covariance: np.ndarray    # symmetric, diag >= 0
    chi2: float
    dof: int
    converged: bool
    n_iter: int
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        errors = np.asarray(self.std_errors, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "std_errors", errors)
        object.__setattr__(self, "covariance", cov)
        n = len(self.names)
        if values.shape != (n,) or errors.shape != (n,) or cov.shape != (n, n):
            raise ConfigError("fit report shapes inconsistent with parameter names")
        if not np.allclose(cov, cov.T, rtol=1e-8, atol=0):
            raise ConfigError("covariance not symmetric")
        if np.any(np.diag(cov) < -1e-300):
            raise ConfigError("negative covariance diagonal")
        if self.dof < 1:
            raise ConfigError("dof must be >= 1")

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def sigma(self, name: str) -> float:
        return float(self.std_errors[self.names.index(name)])

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "values": [float(v) for v in self.values],
            "std_errors": [float(e) for e in self.std_errors],
            "covariance": [[float(v) for v in row] for row in self.covariance],
            "chi2": float(self.chi2),
            "dof": int(self.dof),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "extras": self.extras,
        }


# ---------------------------------------------------------------------------
# interchange formats

STREAM_CSV_HEADER = "channel,t_ps"


def canonical_json(obj) -> str:
    """Deterministic JSON rendering: sorted keys, 2-space indent, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def stream_to_csv(stream: EventStream) -> str:
    """Render a stream in the timestamp interchange format (header 'channel,t_ps')."""
    lines = [STREAM_CSV_HEADER]
    lines.extend(f"{c},{t}" for t, c in zip(stream.t_ps.tolist(), stream.channel.tolist()))
    return "\n".join(lines) + "\n"


def stream_sidecar(stream: EventStream) -> dict:
    return {
        "duration_ps": int(stream.duration_ps),
        "channels": sorted(int(c) for c in stream.channels),
        "origin_note": stream.origin_note,
    }


def stream_from_csv(csv_text: str, sidecar: dict) -> EventStream:
    """Parse the interchange CSV plus its sidecar metadata back into a stream."""
    lines = csv_text.splitlines()
    if not lines or lines[0].strip() != STREAM_CSV_HEADER:
        raise FormatError(f"line 1: expected header {STREAM_CSV_HEADER!r}")
    channels_col = []
    times_col = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'channel,t_ps', got {line!r}")
        try:
            channels_col.append(int(parts[0]))
            times_col.append(int(parts[1]))
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer field in {line!r}") from None
    try:
        duration_ps = int(sidecar["duration_ps"])
        declared = [int(c) for c in sidecar["channels"]]
        note = str(sidecar.get("origin_note", ""))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"sidecar: {exc}") from None
    return EventStream.from_arrays(times_col, channels_col, duration_ps, channels=declared, origin_note=note)
