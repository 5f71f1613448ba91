"""Coincidence histograms and normalized g2(tau) estimates.

Two accumulation modes:

* ``start-stop`` — TAC emulation, the default: each start is paired with the
  FIRST stop at delay in [0, tau_max).  Subject to pileup bias once the mean
  stop spacing approaches tau_max.
* ``all-pairs`` — every ordered (start, stop) pair in the window; unbiased,
  used as the oracle mode.

Normalization uses the measured n_start and n_stop rather than configured
rates, so it works on external data files:

    g2[k] = counts[k] / (n_start * (n_stop / T) * bin_width)

Per-bin uncertainties are Poisson, sqrt(counts), with empty bins floored at
one count so weighted fits stay defined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CoincidenceHistogram,
    ConfigError,
    EventStream,
    PhotonLabError,
    canonical_json,
)


class MissingChannel(PhotonLabError):
    """The requested start or stop channel is not present in the stream."""


class BadBinning(PhotonLabError):
    """bin width and window are inconsistent."""


class ZeroDuration(PhotonLabError):
    """Normalization impossible: zero duration or an empty start/stop channel."""


@dataclass(frozen=True, eq=False)
class G2Estimate:
    """Normalized correlation per delay bin, with 1-sigma uncertainties."""

    tau_centers_ps: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray
    histogram: CoincidenceHistogram

    def __post_init__(self):
        n = self.histogram.n_bins
        if not (self.tau_centers_ps.size == self.g2.size == self.sigma.size == n):
            raise ConfigError("estimate arrays must match the histogram bin count")
        if np.any(self.g2 < 0):
            raise ConfigError("g2 must be non-negative")
        if np.any(self.sigma <= 0):
            raise ConfigError("sigma must be positive")
        for name in ("tau_centers_ps", "g2", "sigma"):
            arr = getattr(self, name)
            arr = np.ascontiguousarray(arr, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def tau_centers_s(self) -> np.ndarray:
        return self.tau_centers_ps * 1e-12


def _binning(stream, start_ch, stop_ch, bin_width_ps, tau_max_ps):
    if bin_width_ps <= 0:
        raise BadBinning("bin_width_ps must be positive")
    if tau_max_ps < bin_width_ps:
        raise BadBinning("tau_max_ps must be at least one bin wide")
    if tau_max_ps % bin_width_ps != 0:
        raise BadBinning("tau_max_ps must be an integer multiple of bin_width_ps")
    for ch in (start_ch, stop_ch):
        if ch not in stream.channels:
            raise MissingChannel(f"channel {ch} not in stream channels {sorted(stream.channels)}")
    starts = stream.channel_times(start_ch)
    stops = stream.channel_times(stop_ch)
    return starts, stops, int(tau_max_ps // bin_width_ps)


def histogram_start_stop(
    stream: EventStream, start_ch: int, stop_ch: int, bin_width_ps: int, tau_max_ps: int
) -> CoincidenceHistogram:
    """TAC-style histogram: first stop at delay in [0, tau_max) per start.

    A start with no stop in the window contributes nothing, so
    sum(counts) <= n_start.
    """
    starts, stops, n_bins = _binning(stream, start_ch, stop_ch, bin_width_ps, tau_max_ps)
    counts = np.zeros(n_bins, dtype=np.int64)
    if starts.size and stops.size:
        idx = np.searchsorted(stops, starts, side="left")  # first stop at t >= start
        valid = idx < stops.size
        delays = stops[idx[valid]] - starts[valid]
        delays = delays[delays < tau_max_ps]
        counts = np.bincount(delays // bin_width_ps, minlength=n_bins).astype(np.int64)
    return CoincidenceHistogram(
        bin_width_ps=int(bin_width_ps), tau_min_ps=0, tau_max_ps=int(tau_max_ps),
        counts=counts, n_start=int(starts.size), n_stop=int(stops.size),
        duration_ps=stream.duration_ps, mode="start-stop",
    )


def histogram_all_pairs(
    stream: EventStream, start_ch: int, stop_ch: int, bin_width_ps: int, tau_max_ps: int,
    chunk_size: int = 200_000,
) -> CoincidenceHistogram:
    """Unbiased histogram: every ordered (start, stop) pair at delay in [0, tau_max).

    Accumulation runs over start-record chunks with partial histograms summed,
    so the result is independent of the chunking.
    """
    starts, stops, n_bins = _binning(stream, start_ch, stop_ch, bin_width_ps, tau_max_ps)
    counts = np.zeros(n_bins, dtype=np.int64)
    for begin in range(0, starts.size, chunk_size):
        block = starts[begin : begin + chunk_size]
        lo = np.searchsorted(stops, block, side="left")
        hi = np.searchsorted(stops, block + tau_max_ps, side="left")
        m = hi - lo
        total = int(m.sum())
        if total == 0:
            continue
        # ragged gather: stop indices lo[i]..hi[i] for every start i of the block
        offsets = np.cumsum(m) - m
        flat = np.arange(total) - np.repeat(offsets, m) + np.repeat(lo, m)
        delays = stops[flat] - np.repeat(block, m)
        counts += np.bincount(delays // bin_width_ps, minlength=n_bins).astype(np.int64)
    return CoincidenceHistogram(
        bin_width_ps=int(bin_width_ps), tau_min_ps=0, tau_max_ps=int(tau_max_ps),
        counts=counts, n_start=int(starts.size), n_stop=int(stops.size),
        duration_ps=stream.duration_ps, mode="all-pairs",
    )


def normalize_g2(hist: CoincidenceHistogram) -> G2Estimate:
    """Normalize counts by the uncorrelated-coincidence expectation.

    Empty-bin uncertainties are floored at one count before scaling.
    """
    if hist.duration_ps <= 0 or hist.n_start <= 0 or hist.n_stop <= 0:
        raise ZeroDuration(
            "normalization needs positive duration and non-empty start/stop channels"
        )
    duration_s = hist.duration_ps * 1e-12
    bin_s = hist.bin_width_ps * 1e-12
    denom = hist.n_start * (hist.n_stop / duration_s) * bin_s
    g2 = hist.counts / denom
    sigma = np.sqrt(np.maximum(hist.counts, 1)) / denom
    return G2Estimate(
        tau_centers_ps=hist.tau_centers_ps, g2=g2, sigma=sigma, histogram=hist
    )


# ---------------------------------------------------------------------------
# interchange format

G2_CSV_HEADER = "tau_ps,counts,g2,sigma"


def g2_to_csv(est: G2Estimate) -> str:
    """Histogram CSV: 'tau_ps,counts,g2,sigma', one row per bin."""
    lines = [G2_CSV_HEADER]
    for tau, c, g, s in zip(
        est.tau_centers_ps.tolist(), est.histogram.counts.tolist(),
        est.g2.tolist(), est.sigma.tolist(),
    ):
        lines.append(f"{tau!r},{c},{g!r},{s!r}")
    return "\n".join(lines) + "\n"


def g2_metadata(est: G2Estimate) -> dict:
    hist = est.histogram
    return {
        "mode": hist.mode,
        "bin_width_ps": int(hist.bin_width_ps),
        "tau_min_ps": int(hist.tau_min_ps),
        "tau_max_ps": int(hist.tau_max_ps),
        "n_start": int(hist.n_start),
        "n_stop": int(hist.n_stop),
        "duration_ps": int(hist.duration_ps),
    }


def g2_metadata_json(est: G2Estimate) -> str:
    return canonical_json(g2_metadata(est))
