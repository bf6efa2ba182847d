"""Synthetic voice bank: harmonic excitation with per-speaker pitch and
formant structure, the timbre identity the separation task depends on.

Profiles are a deterministic function of (speaker_id, corpus_seed); clips
from one profile differ only in excitation randomness.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .util import rng_from

F0_RANGE = (90.0, 240.0)
FORMANT_RANGES = ((300.0, 850.0), (950.0, 2100.0), (2300.0, 3300.0))
BANDWIDTH_RANGE = (60.0, 120.0)
PEAK_LEVEL = 0.9


@dataclass(frozen=True)
class VoiceProfile:
    speaker_id: int
    f0: float
    formant_centers: tuple
    formant_bandwidths: tuple
    vibrato_rate: float
    vibrato_depth: float
    shimmer_depth: float
    breathiness: float
    syllable_rate: float


def make_profile(speaker_id: int, corpus_seed: int = 0) -> VoiceProfile:
    rng = rng_from(corpus_seed, "voice-profile", speaker_id)
    lo, hi = F0_RANGE
    f0 = math.exp(rng.uniform(math.log(lo), math.log(hi)))
    centers = tuple(rng.uniform(a, b) for a, b in FORMANT_RANGES)
    bands = tuple(rng.uniform(*BANDWIDTH_RANGE) for _ in range(3))
    return VoiceProfile(
        speaker_id=speaker_id,
        f0=f0,
        formant_centers=centers,
        formant_bandwidths=bands,
        vibrato_rate=rng.uniform(4.0, 7.0),
        vibrato_depth=rng.uniform(0.004, 0.015),
        shimmer_depth=rng.uniform(0.08, 0.25),
        breathiness=rng.uniform(0.01, 0.04),
        syllable_rate=rng.uniform(2.0, 4.0),
    )


def _slow_noise(rng, n: int, cutoff_hz: float, sample_rate: int) -> np.ndarray:
    """Unit-ish amplitude noise lowpassed with a one-pole filter."""
    a = math.exp(-2.0 * math.pi * cutoff_hz / sample_rate)
    x = rng.normal(size=n)
    y = lfilter([1.0 - a], [1.0, -a], x)
    peak = np.max(np.abs(y))
    return y / peak if peak > 0 else y


def _resonator_coeffs(center: float, bandwidth: float, sample_rate: int):
    r = math.exp(-math.pi * bandwidth / sample_rate)
    omega = 2.0 * math.pi * center / sample_rate
    gain = (1.0 - r) * abs(1.0 - r * np.exp(2j * omega))
    return [gain], [1.0, -2.0 * r * math.cos(omega), r * r]


def synth_voice(profile: VoiceProfile, duration_s: float, sample_rate: int, rng) -> np.ndarray:
    """One mono clip of the speaker: jittered harmonic source shaped by the
    profile's formant resonators, peak-normalized."""
    if duration_s <= 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    vib_phase = rng.uniform(0, 2 * math.pi)
    flutter = _slow_noise(rng, n, 3.0, sample_rate)
    f0_track = profile.f0 * (
        1.0
        + profile.vibrato_depth * np.sin(2 * math.pi * profile.vibrato_rate * t + vib_phase)
        + 0.5 * profile.vibrato_depth * flutter
    )
    phase = 2.0 * math.pi * np.cumsum(f0_track) / sample_rate

    n_harmonics = max(1, int(0.95 * (sample_rate / 2) / np.max(f0_track)))
    excitation = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        excitation += (1.0 / h) * np.cos(h * phase + rng.uniform(0, 2 * math.pi))
    excitation += profile.breathiness * rng.normal(size=n) * n_harmonics

    shaped = excitation
    for center, bw in zip(profile.formant_centers, profile.formant_bandwidths):
        b, a = _resonator_coeffs(center, bw, sample_rate)
        shaped = lfilter(b, a, shaped)

    shimmer = 1.0 + profile.shimmer_depth * _slow_noise(rng, n, 4.0, sample_rate)
    syllable = 0.65 + 0.35 * np.sin(
        2 * math.pi * profile.syllable_rate * t + rng.uniform(0, 2 * math.pi))
    out = shaped * shimmer * syllable

    peak = np.max(np.abs(out))
    if peak == 0.0:
        raise RuntimeError("voice synthesis produced silence")
    return out * (PEAK_LEVEL / peak)


def log_spectral_envelope(x, sample_rate: int, n_fft: int = 512) -> np.ndarray:
    """Time-averaged log-magnitude spectrum (the timbre signature used by
    the speaker-identity oracles in the test suite)."""
    x = np.asarray(x, dtype=np.float64)
    hop = n_fft // 2
    window = np.hanning(n_fft)
    frames = []
    for start in range(0, max(x.size - n_fft, 0) + 1, hop):
        seg = x[start:start + n_fft]
        if seg.size < n_fft:
            break
        frames.append(np.abs(np.fft.rfft(seg * window)) ** 2)
    if not frames:
        raise ValueError(f"signal too short for spectral envelope (need >= {n_fft} samples)")
    psd = np.mean(frames, axis=0)
    return np.log10(psd + 1e-12)


def envelope_distance(env_a, env_b) -> float:
    return float(np.sqrt(np.mean((np.asarray(env_a) - np.asarray(env_b)) ** 2)))


class SyntheticVoiceBank:
    """Bank of deterministic synthetic speakers."""

    def __init__(self, n_speakers: int, corpus_seed: int = 0):
        if n_speakers < 2:
            raise ValueError("a voice bank needs at least 2 speakers")
        self.n_speakers = n_speakers
        self.corpus_seed = corpus_seed
        self.profiles = [make_profile(i, corpus_seed) for i in range(n_speakers)]

    def describe(self) -> dict:
        return {"type": "synthetic", "n_speakers": self.n_speakers, "corpus_seed": self.corpus_seed}

    def clip(self, speaker_id: int, duration_s: float, sample_rate: int, rng) -> np.ndarray:
        return synth_voice(self.profiles[speaker_id], duration_s, sample_rate, rng)
