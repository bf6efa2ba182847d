"""Time-difference-of-arrival estimation from cross-correlation peaks.

Convention: lag(a, b) = argmax over tau of sum_t a[t] * b[t - tau]. The lag
is negative when `a` leads (arrives earlier than) `b`.
"""

from __future__ import annotations

import numpy as np

from .audio import MultiChannelSignal, next_pow2


def cross_correlation_lag(a, b, max_lag: int | None = None, interpolate: bool = True) -> float:
    """Peak lag of the cross-correlation of two equal-length 1-D signals.

    With `interpolate`, a parabolic fit around the integer peak gives
    sub-sample resolution.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("cross-correlation requires equal-length 1-D signals")
    T = a.size
    if max_lag is None:
        max_lag = T - 1
    max_lag = min(max_lag, T - 1)
    n = next_pow2(2 * T - 1)
    spec = np.fft.rfft(a, n) * np.conj(np.fft.rfft(b, n))
    cc = np.fft.irfft(spec, n)
    # cc[k] holds lag k for k >= 0 and lag k - n for the tail
    lags = np.concatenate([np.arange(-max_lag, 0), np.arange(0, max_lag + 1)])
    vals = np.concatenate([cc[n - max_lag:n], cc[:max_lag + 1]])
    peak = int(np.argmax(vals))
    lag = float(lags[peak])
    if interpolate and 0 < peak < len(vals) - 1:
        y0, y1, y2 = vals[peak - 1], vals[peak], vals[peak + 1]
        denom = y0 - 2.0 * y1 + y2
        if abs(denom) > 1e-12 * max(abs(y1), 1e-30):
            lag += 0.5 * (y0 - y2) / denom
    return lag


def channel_tdoa(sig: MultiChannelSignal, i: int, j: int, max_lag: int | None = None) -> float:
    """TDOA of channel i relative to channel j (negative when i leads)."""
    return cross_correlation_lag(sig.channel(i), sig.channel(j), max_lag=max_lag)


def source_tdoa_gap(source_a: MultiChannelSignal, source_b: MultiChannelSignal,
                    mic_pair=(0, 3), max_lag: int | None = None) -> float:
    """Absolute difference between the two sources' TDOAs on one mic pair.

    This is the scalar spatial-disparity statistic used to validate feature
    suppression: co-located sources give a gap near zero.
    """
    i, j = mic_pair
    ta = channel_tdoa(source_a, i, j, max_lag=max_lag)
    tb = channel_tdoa(source_b, i, j, max_lag=max_lag)
    return abs(ta - tb)
