"""Multichannel recording ingestion and preprocessing.

The pipeline mirrors standard EEG practice: resample to a common rate,
notch out mains interference, band-pass, restrict to the canonical 19
10-20 channels, and cut fixed-length segments. All operations are pure
functions returning new recordings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

from .montage import CANONICAL_1020


class PipelineError(ValueError):
    """Invalid preprocessing input or parameters."""


class MissingChannelsError(PipelineError):
    """Recording lacks required canonical channels."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"missing canonical channels: {', '.join(self.missing)}")


@dataclass
class Recording:
    """A labeled multichannel signal: channels x time samples."""

    channel_names: list[str]
    sample_rate_hz: float
    samples: np.ndarray
    label: int | None = None
    subject_id: str = ""

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise PipelineError(f"samples must be (channels, time), got {self.samples.shape}")
        if self.samples.shape[0] != len(self.channel_names):
            raise PipelineError(
                f"{len(self.channel_names)} channel names for {self.samples.shape[0]} sample rows"
            )
        if self.sample_rate_hz <= 0:
            raise PipelineError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if not np.all(np.isfinite(self.samples)):
            raise PipelineError("recording contains non-finite samples")

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    def replace_samples(self, samples: np.ndarray, sample_rate_hz: float | None = None) -> "Recording":
        return Recording(
            list(self.channel_names),
            self.sample_rate_hz if sample_rate_hz is None else sample_rate_hz,
            samples,
            label=self.label,
            subject_id=self.subject_id,
        )


@dataclass
class Segment:
    """Fixed-window slice of a recording; the unit the models consume."""

    samples: np.ndarray
    label: int | None
    source: str = ""

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise PipelineError(f"segment samples must be 2-D, got {self.samples.shape}")

    @property
    def length(self) -> int:
        return self.samples.shape[1]


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def resample(rec: Recording, target_hz: float) -> Recording:
    """Rational polyphase resampling with a windowed-sinc (Kaiser) kernel.

    Output length is round(n * target_hz / source_hz); a same-rate call
    returns the samples bit-for-bit.
    """
    if target_hz <= 0:
        raise PipelineError(f"target rate must be positive, got {target_hz}")
    if rec.n_samples == 0:
        raise PipelineError("cannot resample an empty recording")
    if target_hz == rec.sample_rate_hz:
        return rec.replace_samples(rec.samples.copy())
    ratio = Fraction(target_hz).limit_denominator(10**6) / Fraction(
        rec.sample_rate_hz
    ).limit_denominator(10**6)
    out = sps.resample_poly(rec.samples, ratio.numerator, ratio.denominator, axis=1)
    n_out = _round_half_up(rec.n_samples * target_hz / rec.sample_rate_hz)
    return rec.replace_samples(out[:, :n_out], sample_rate_hz=target_hz)


def notch_filter(rec: Recording, f0: float = 50.0, q: float = 30.0) -> Recording:
    """Zero-phase second-order IIR notch (applied forward-backward)."""
    nyquist = rec.sample_rate_hz / 2.0
    if not 0 < f0 < nyquist:
        raise PipelineError(f"notch frequency {f0} Hz outside (0, {nyquist}) Hz")
    b, a = sps.iirnotch(f0, q, fs=rec.sample_rate_hz)
    return rec.replace_samples(sps.filtfilt(b, a, rec.samples, axis=1))


def bandpass_filter(rec: Recording, lo: float = 0.1, hi: float = 100.0,
                    order: int = 4) -> Recording:
    """Zero-phase Butterworth band-pass (order per edge, forward-backward)."""
    nyquist = rec.sample_rate_hz / 2.0
    if not 0 < lo < hi < nyquist:
        raise PipelineError(f"invalid band [{lo}, {hi}] Hz at sample rate {rec.sample_rate_hz} Hz")
    sos = sps.butter(order, [lo, hi], btype="bandpass", fs=rec.sample_rate_hz, output="sos")
    return rec.replace_samples(sps.sosfiltfilt(sos, rec.samples, axis=1))


def select_channels(rec: Recording) -> Recording:
    """Keep exactly the 19 canonical 10-20 channels, in canonical order.

    Matching is case-insensitive; extra channels are dropped; any missing
    canonical channel rejects the recording.
    """
    index = {}
    for i, name in enumerate(rec.channel_names):
        index.setdefault(name.lower(), i)
    missing = [name for name in CANONICAL_1020 if name.lower() not in index]
    if missing:
        raise MissingChannelsError(missing)
    rows = [index[name.lower()] for name in CANONICAL_1020]
    return Recording(
        list(CANONICAL_1020),
        rec.sample_rate_hz,
        rec.samples[rows],
        label=rec.label,
        subject_id=rec.subject_id,
    )


def segment(rec: Recording, window_s: float = 60.0,
            keep_fraction: float = 0.5) -> list[Segment]:
    """Cut non-overlapping windows of round(rate * window_s) samples.

    A trailing remainder at least ``keep_fraction`` of the window is kept
    as a short segment (to be length-adapted downstream); shorter tails are
    discarded.
    """
    if rec.n_samples < 1:
        raise PipelineError("cannot segment an empty recording")
    win = _round_half_up(rec.sample_rate_hz * window_s)
    segments = []
    offset = 0
    while offset + win <= rec.n_samples:
        segments.append(Segment(
            rec.samples[:, offset:offset + win].copy(),
            rec.label,
            source=f"{rec.subject_id}:{offset}",
        ))
        offset += win
    tail = rec.n_samples - offset
    if tail >= keep_fraction * win and tail > 0:
        segments.append(Segment(
            rec.samples[:, offset:].copy(),
            rec.label,
            source=f"{rec.subject_id}:{offset}",
        ))
    return segments
