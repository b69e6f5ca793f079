"""Synthetic two-class datasets where only the spatial structure differs.

Class 0 segments are independent band-limited noise per channel. Class 1
mixes the same kind of noise through a fixed cross-channel coupling matrix
(a shared-source model), so the classes differ only in inter-channel
correlation while per-channel spectra and variances match. The spatial
signal is exactly what a graph adapter in front of a temporal encoder is
supposed to pick up.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .montage import CANONICAL_1020
from .signal import Recording, Segment


@dataclass
class SynthSpec:
    n_subjects_per_class: int = 8
    segments_per_subject: int = 2
    n_channels: int = 19
    segment_len: int = 1024
    sample_rate_hz: float = 256.0
    coupling: float = 0.75          # shared-source amplitude in class 1, in [0, 1)
    band: tuple[float, float] = (0.5, 40.0)  # noise band in Hz

    def __post_init__(self):
        if self.n_subjects_per_class < 1:
            raise ValueError("n_subjects_per_class must be >= 1")
        if self.segments_per_subject < 1:
            raise ValueError("segments_per_subject must be >= 1")
        if not 0.0 <= self.coupling < 1.0:
            raise ValueError(f"coupling must be in [0, 1), got {self.coupling}")
        if self.segment_len < 8:
            raise ValueError("segment_len too short")


def coupling_matrix(n_channels: int, coupling: float) -> np.ndarray:
    """Row-normalized shared-source mixer: a*I + b*ones, rows unit norm.

    Rows are normalized so class-1 channels keep unit marginal variance
    when applied to unit-variance independent noise.
    """
    a = np.sqrt(1.0 - coupling**2)
    b = coupling / np.sqrt(n_channels)
    mix = a * np.eye(n_channels) + b * np.ones((n_channels, n_channels))
    return mix / np.linalg.norm(mix, axis=1, keepdims=True)


def _bandlimited_noise(rng: np.random.Generator, n_channels: int, length: int,
                       band: tuple[float, float], rate: float) -> np.ndarray:
    """Per-channel unit-std noise restricted to ``band`` via rFFT masking."""
    white = rng.standard_normal((n_channels, length))
    spec = np.fft.rfft(white, axis=1)
    freqs = np.fft.rfftfreq(length, d=1.0 / rate)
    keep = (freqs >= band[0]) & (freqs <= band[1])
    spec[:, ~keep] = 0.0
    noise = np.fft.irfft(spec, n=length, axis=1)
    std = noise.std(axis=1, keepdims=True)
    std[std == 0] = 1.0
    return noise / std


def _channel_names(n: int) -> list[str]:
    if n == len(CANONICAL_1020):
        return list(CANONICAL_1020)
    return [f"ch{i}" for i in range(n)]


def synthesize_recordings(spec: SynthSpec, seed: int) -> list[Recording]:
    """One recording per (class, subject, segment); deterministic per seed."""
    mix = coupling_matrix(spec.n_channels, spec.coupling)
    names = _channel_names(spec.n_channels)
    recordings = []
    for cls in (0, 1):
        for subj in range(spec.n_subjects_per_class):
            rng = np.random.default_rng(np.random.SeedSequence([seed, cls, subj]))
            for seg_idx in range(spec.segments_per_subject):
                noise = _bandlimited_noise(rng, spec.n_channels, spec.segment_len,
                                           spec.band, spec.sample_rate_hz)
                samples = noise if cls == 0 else mix @ noise
                recordings.append(Recording(
                    names,
                    spec.sample_rate_hz,
                    samples,
                    label=cls,
                    subject_id=f"c{cls}s{subj:03d}r{seg_idx:03d}",
                ))
    return recordings


def synthesize_dataset(spec: SynthSpec, seed: int) -> list[Segment]:
    """Labeled fixed-length segments; the desk-scale downstream task data."""
    return [
        Segment(rec.samples, rec.label, source=rec.subject_id)
        for rec in synthesize_recordings(spec, seed)
    ]
