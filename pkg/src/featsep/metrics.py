"""Scale-invariant SDR, its improvement over the mixture, and exhaustive
permutation-invariant assignment."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

CLIP_DB = 60.0
RESIDUAL_FLOOR = 1e-12
MAX_EXHAUSTIVE_SOURCES = 6


@dataclass(frozen=True)
class MetricValue:
    value_db: float
    clipped: bool


@dataclass(frozen=True)
class PermutationAssignment:
    perm: tuple        # perm[i] = estimate index assigned to reference i
    score_db: float    # mean pairwise metric at the optimum


def si_sdr(s, s_hat) -> MetricValue:
    """Scale-invariant SDR of estimate s_hat against reference s, in dB.

    The estimate is projected onto the reference; the value is the energy
    ratio of the projection to the residual, clipped to +-60 dB with a
    residual-energy floor of 1e-12 * ||s||^2.
    """
    s = np.asarray(s, dtype=np.float64)
    s_hat = np.asarray(s_hat, dtype=np.float64)
    if s.shape != s_hat.shape or s.ndim != 1 or s.size < 1:
        raise ValueError(f"si_sdr requires equal-length 1-D signals, got {s.shape} vs {s_hat.shape}")
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0.0:
        raise ValueError("si_sdr reference signal has zero energy")
    alpha = float(np.dot(s_hat, s)) / ref_energy
    proj_energy = alpha * alpha * ref_energy
    residual = alpha * s - s_hat
    res_energy = float(np.dot(residual, residual))
    if res_energy <= RESIDUAL_FLOOR * ref_energy:
        return MetricValue(CLIP_DB, True)
    if proj_energy == 0.0:
        return MetricValue(-CLIP_DB, True)
    value = 10.0 * math.log10(proj_energy / res_energy)
    if value > CLIP_DB:
        return MetricValue(CLIP_DB, True)
    if value < -CLIP_DB:
        return MetricValue(-CLIP_DB, True)
    return MetricValue(value, False)


def si_sdri(s, s_hat, mixture) -> float:
    """Improvement of the estimate over the unprocessed mixture channel."""
    return si_sdr(s, s_hat).value_db - si_sdr(s, mixture).value_db


def pit_assign(refs, ests, metric=None) -> PermutationAssignment:
    """Best reference-to-estimate assignment under the pairwise metric.

    Evaluates all n! pairings (n <= 6); ties resolve to the lexicographically
    smallest permutation.
    """
    if metric is None:
        metric = lambda r, e: si_sdr(r, e).value_db  # noqa: E731
    n = len(refs)
    if n != len(ests):
        raise ValueError(f"pit_assign count mismatch: {n} refs vs {len(ests)} estimates")
    if n < 1 or n > MAX_EXHAUSTIVE_SOURCES:
        raise ValueError(f"pit_assign supports 1..{MAX_EXHAUSTIVE_SOURCES} sources, got {n}")
    matrix = np.array([[metric(r, e) for e in ests] for r in refs])
    best_perm = None
    best_score = -math.inf
    for perm in itertools.permutations(range(n)):
        score = float(np.mean([matrix[i, perm[i]] for i in range(n)]))
        if score > best_score:
            best_score = score
            best_perm = perm
    return PermutationAssignment(best_perm, best_score)


def channel_mean_si_sdr(ref_sig, est_sig) -> float:
    """Mean clipped SI-SDR across the channels of two multi-channel signals."""
    ref = ref_sig.samples
    est = est_sig.samples
    if ref.shape != est.shape:
        raise ValueError(f"channel shape mismatch: {ref.shape} vs {est.shape}")
    return float(np.mean([si_sdr(ref[c], est[c]).value_db for c in range(ref.shape[0])]))


def multichannel_sample_score(refs, estimates, mixture):
    """Per-source SI-SDR improvement under the optimal source permutation.

    The pairwise PIT score is the channel-mean SI-SDR; the improvement
    subtracts the mixture's corresponding channel per channel. Returns
    (improvements per reference source, PermutationAssignment).
    """
    if len(refs) != len(estimates):
        raise ValueError("reference/estimate source counts differ")
    assignment = pit_assign(refs, estimates, metric=channel_mean_si_sdr)
    improvements = []
    for i, ref in enumerate(refs):
        est = estimates[assignment.perm[i]]
        per_channel = [
            si_sdri(ref.samples[c], est.samples[c], mixture.samples[c])
            for c in range(ref.samples.shape[0])
        ]
        improvements.append(float(np.mean(per_channel)))
    return improvements, assignment


def score_sample(sample, estimates):
    """Score model estimates against a separation sample (see module datasets)."""
    return multichannel_sample_score(sample.sources, estimates, sample.mixture)
