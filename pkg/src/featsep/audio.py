"""Multi-channel sampled audio, WAV persistence, and the DSP kernels
(FFT convolution, windowed-sinc fractional delay) the simulator builds on.

Samples are float64 internally; WAV files store PCM16 or IEEE float32,
interleaved little-endian.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class WavError(RuntimeError):
    """Base class for WAV decode failures."""


class WavHeaderError(WavError):
    """Missing or malformed RIFF/WAVE structure."""


class WavEncodingError(WavError):
    """Format tag / bit-depth combination this reader does not support."""


class WavLayoutError(WavError):
    """Channel count, block alignment, and data size disagree."""


@dataclass(frozen=True)
class MultiChannelSignal:
    """C x T sampled audio at a fixed rate. Immutable once constructed."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"samples must be 2-D [channels, frames], got ndim={arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("samples contain non-finite values")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def n_channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.samples.shape[1] / self.sample_rate

    @staticmethod
    def from_mono(x, sample_rate: int) -> "MultiChannelSignal":
        return MultiChannelSignal(np.asarray(x, dtype=np.float64)[None, :], sample_rate)

    def channel(self, i: int) -> np.ndarray:
        return self.samples[i]

    def __add__(self, other: "MultiChannelSignal") -> "MultiChannelSignal":
        if self.sample_rate != other.sample_rate:
            raise ValueError("sample rate mismatch in signal addition")
        if self.samples.shape != other.samples.shape:
            raise ValueError(f"shape mismatch: {self.samples.shape} vs {other.samples.shape}")
        return MultiChannelSignal(self.samples + other.samples, self.sample_rate)


@dataclass(frozen=True)
class Spectrum:
    """FFT workspace value: complex bins of a fixed transform size."""

    bins: np.ndarray
    transform_size: int

    def __post_init__(self):
        if len(self.bins) != self.transform_size:
            raise ValueError("bins length must equal transform_size")


def spectrum_forward(x, transform_size: int | None = None) -> Spectrum:
    x = np.asarray(x, dtype=np.float64)
    n = transform_size or len(x)
    return Spectrum(np.fft.fft(x, n), n)


def spectrum_inverse(spec: Spectrum) -> np.ndarray:
    return np.fft.ifft(spec.bins).real


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def fft_convolve(x, h) -> np.ndarray:
    """Full linear convolution of two 1-D signals, length N + M - 1."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.ndim != 1 or h.ndim != 1:
        raise ValueError("fft_convolve operates on 1-D signals")
    if x.size == 0 or h.size == 0:
        raise ValueError("fft_convolve requires non-empty inputs")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h))):
        raise ValueError("fft_convolve inputs must be finite")
    n_out = x.size + h.size - 1
    n_fft = next_pow2(n_out)
    y = np.fft.irfft(np.fft.rfft(x, n_fft) * np.fft.rfft(h, n_fft), n_fft)
    return y[:n_out]


def direct_convolve(x, h) -> np.ndarray:
    """O(NM) reference convolution; the oracle fft_convolve is tested against."""
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    out = np.zeros(x.size + h.size - 1)
    for j, hj in enumerate(h):
        out[j:j + x.size] += hj * x
    return out


DEFAULT_SINC_HALF_WIDTH = 32


def sinc_kernel(frac: float, half_width: int = DEFAULT_SINC_HALF_WIDTH) -> np.ndarray:
    """Hann-windowed sinc taps evaluating x(t - frac) for frac in (0, 1).

    Tap m corresponds to integer offset j = m - (half_width - 1) from the
    base (floor) sample.
    """
    w = half_width
    j = np.arange(-(w - 1), w + 1, dtype=np.float64)
    t = j - frac
    return np.sinc(t) * (0.5 * (1.0 + np.cos(np.pi * t / w)))


def fractional_delay(x, d: float, half_width: int = DEFAULT_SINC_HALF_WIDTH) -> np.ndarray:
    """Delay a 1-D signal by d >= 0 samples (same length, zero fill at start).

    Integer delays shift exactly; fractional delays interpolate with a
    Hann-windowed sinc of the given half-width.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("fractional_delay operates on 1-D signals")
    n = x.size
    if d < 0:
        raise ValueError(f"delay must be non-negative, got {d}")
    if d >= n:
        raise ValueError(f"delay {d} exceeds signal length {n}")
    di = int(np.floor(d))
    df = d - di
    if df == 0.0:
        out = np.zeros(n)
        out[di:] = x[:n - di]
        return out
    k = sinc_kernel(df, half_width)
    full = np.convolve(x, k)
    out = np.zeros(n)
    start = max(0, di - (half_width - 1))
    out[start:] = full[start + half_width - 1 - di:n + half_width - 1 - di]
    return out


# -- RIFF/WAVE ---------------------------------------------------------------

_FMT_PCM = 1
_FMT_FLOAT = 3


def wav_write(sig: MultiChannelSignal, path, encoding: str = "float32") -> None:
    """Write an interleaved RIFF/WAVE file (pcm16 or float32)."""
    path = Path(path)
    frames = sig.samples.T  # [T, C] interleaved order
    c = sig.n_channels
    if c < 1:
        raise ValueError("wav_write requires at least one channel")
    if encoding == "pcm16":
        if np.any(np.abs(sig.samples) > 1.0):
            raise ValueError("pcm16 encoding requires samples in [-1, 1]")
        payload = np.round(frames * 32767.0).astype("<i2").tobytes()
        fmt_tag, bits = _FMT_PCM, 16
    elif encoding == "float32":
        payload = frames.astype("<f4").tobytes()
        fmt_tag, bits = _FMT_FLOAT, 32
    else:
        raise ValueError(f"unsupported encoding {encoding!r} (use 'pcm16' or 'float32')")

    block_align = c * bits // 8
    fmt = struct.pack("<HHIIHH", fmt_tag, c, sig.sample_rate,
                      sig.sample_rate * block_align, block_align, bits)
    chunks = [(b"fmt ", fmt)]
    if fmt_tag == _FMT_FLOAT:
        chunks.append((b"fact", struct.pack("<I", sig.n_frames)))
    chunks.append((b"data", payload))
    body = b"".join(cid + struct.pack("<I", len(data)) + data + (b"\x00" if len(data) % 2 else b"")
                    for cid, data in chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)


def wav_read(path) -> MultiChannelSignal:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise WavHeaderError(f"not a RIFF/WAVE file: {path}")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + size]
        if len(body) != size:
            raise WavHeaderError(f"truncated chunk {cid!r} in {path}")
        if cid == b"fmt ":
            fmt = body
        elif cid == b"data":
            data = body
        pos += 8 + size + (size % 2)
    if fmt is None or data is None:
        raise WavHeaderError(f"missing fmt/data chunk in {path}")
    if len(fmt) < 16:
        raise WavHeaderError(f"fmt chunk too short in {path}")
    fmt_tag, channels, rate, _byte_rate, block_align, bits = struct.unpack_from("<HHIIHH", fmt)
    if channels < 1:
        raise WavLayoutError(f"channel count {channels} invalid in {path}")
    if (fmt_tag, bits) == (_FMT_PCM, 16):
        dtype, scale = "<i2", 1.0 / 32767.0
    elif (fmt_tag, bits) == (_FMT_FLOAT, 32):
        dtype, scale = "<f4", None
    else:
        raise WavEncodingError(f"unsupported format tag {fmt_tag} / {bits}-bit in {path}")
    if block_align != channels * bits // 8:
        raise WavLayoutError(
            f"block align {block_align} does not match {channels} channels x {bits}-bit in {path}")
    if len(data) % block_align:
        raise WavLayoutError(f"data size {len(data)} not a whole number of frames in {path}")
    frames = np.frombuffer(data, dtype=dtype).reshape(-1, channels)
    if scale is None:
        samples = frames.astype(np.float64).T
    else:
        samples = frames.astype(np.float64).T * scale
    return MultiChannelSignal(samples, rate)


def decimate(x, factor: int, taps: int = 64) -> np.ndarray:
    """Integer-factor downsampling with a windowed-sinc anti-alias lowpass."""
    x = np.asarray(x, dtype=np.float64)
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    if factor == 1:
        return x.copy()
    cutoff = 0.45 / factor
    j = np.arange(-taps, taps + 1, dtype=np.float64)
    h = 2 * cutoff * np.sinc(2 * cutoff * j) * np.hanning(2 * taps + 1)
    y = fft_convolve(x, h)[taps:taps + x.size]
    return y[::factor]
