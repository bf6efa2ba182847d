"""Feature suppression: learn (or exactly synthesize) a mapping from
source pairs with arbitrary spatial layout to pairs whose spatial cues
match the hard partition, leaving timbre untouched.

The learned path is a cycle-consistent adversarial translator over stacked
12-channel waveform pairs (four networks: forward/reverse generators and a
discriminator per domain, least-squares objective). The oracle path
re-renders both dry sources from a shared position via the room simulator
and serves as a ground-truth suppressor for pipeline validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics, rooms, tdoa
from .audio import MultiChannelSignal
from .datasets import SeparationSample
from .nn import autodiff as ad
from .nn.autodiff import Tensor, no_grad
from .nn.layers import Conv1d, Module, PReLU
from .nn.optim import Adam
from .util import rng_from, write_csv

CYCLE_WEIGHT = 50.0
IDENTITY_WEIGHT = 45.0


@dataclass
class SuppressorConfig:
    n_channels: int = 6            # per source; generators see 2x stacked
    gen_width: int = 24
    gen_blocks: int = 4
    gen_kernel: int = 15
    disc_width: int = 16
    disc_kernel: int = 15
    cycle_weight: float = CYCLE_WEIGHT
    identity_weight: float = IDENTITY_WEIGHT

    @property
    def stack_channels(self) -> int:
        return 2 * self.n_channels

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "n_channels", "gen_width", "gen_blocks", "gen_kernel",
            "disc_width", "disc_kernel", "cycle_weight", "identity_weight")}

    @staticmethod
    def from_dict(d: dict) -> "SuppressorConfig":
        return SuppressorConfig(**d)


class _ResBlock(Module):
    def __init__(self, width: int, kernel: int, rng):
        super().__init__()
        pad = kernel // 2
        self.c1 = self.add_child("c1", Conv1d(width, width, kernel, rng, padding=pad))
        self.a1 = self.add_child("a1", PReLU())
        self.c2 = self.add_child("c2", Conv1d(width, width, kernel, rng, padding=pad))
        self.a2 = self.add_child("a2", PReLU())

    def __call__(self, x: Tensor) -> Tensor:
        return self.a2(ad.add(x, self.c2(self.a1(self.c1(x)))))


class Generator(Module):
    """Shape-preserving residual conv stack on the stacked source pair.

    The output conv is zero-initialized and added to the input, so a fresh
    generator is the identity map.
    """

    def __init__(self, cfg: SuppressorConfig, rng):
        super().__init__()
        pad = cfg.gen_kernel // 2
        w = cfg.gen_width
        self.inp = self.add_child("in", Conv1d(cfg.stack_channels, w, cfg.gen_kernel, rng, padding=pad))
        self.act = self.add_child("act", PReLU())
        self.blocks = [self.add_child(f"res{i}", _ResBlock(w, cfg.gen_kernel, rng))
                       for i in range(cfg.gen_blocks)]
        self.out = self.add_child(
            "out", Conv1d(w, cfg.stack_channels, cfg.gen_kernel, rng, padding=pad, zero_init=True))

    def __call__(self, x: Tensor) -> Tensor:
        h = self.act(self.inp(x))
        for b in self.blocks:
            h = b(h)
        return ad.add(x, self.out(h))


class Discriminator(Module):
    """Strided conv stack scoring per-patch realness, averaged to a scalar."""

    def __init__(self, cfg: SuppressorConfig, rng):
        super().__init__()
        k = cfg.disc_kernel
        pad = k // 2
        w = cfg.disc_width
        self.c1 = self.add_child("c1", Conv1d(cfg.stack_channels, w, k, rng, stride=4, padding=pad))
        self.a1 = self.add_child("a1", PReLU())
        self.c2 = self.add_child("c2", Conv1d(w, 2 * w, k, rng, stride=4, padding=pad))
        self.a2 = self.add_child("a2", PReLU())
        self.c3 = self.add_child("c3", Conv1d(2 * w, 1, 3, rng, padding=1))

    def __call__(self, x: Tensor) -> Tensor:
        """x [B, 12, T] -> patch scores [B, 1, T']"""
        return self.c3(self.a2(self.c2(self.a1(self.c1(x)))))


class SuppressorNets(Module):
    def __init__(self, cfg: SuppressorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = rng_from(seed, "suppressor")
        self.g_forward = self.add_child("G", Generator(cfg, rng))
        self.g_reverse = self.add_child("F", Generator(cfg, rng))
        self.d_hard = self.add_child("D_hard", Discriminator(cfg, rng))
        self.d_all = self.add_child("D_all", Discriminator(cfg, rng))

    def generator_params(self):
        for name, t in self.g_forward.parameters():
            yield f"G.{name}", t
        for name, t in self.g_reverse.parameters():
            yield f"F.{name}", t

    def discriminator_params(self):
        for name, t in self.d_hard.parameters():
            yield f"D_hard.{name}", t
        for name, t in self.d_all.parameters():
            yield f"D_all.{name}", t


def stack_pair(sources) -> np.ndarray:
    """Two [C, T] renders -> one [2C, T] array."""
    a, b = sources
    a = a.samples if isinstance(a, MultiChannelSignal) else np.asarray(a)
    b = b.samples if isinstance(b, MultiChannelSignal) else np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"source pair shapes differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=0)


def unstack_pair(stacked: np.ndarray):
    c = stacked.shape[0] // 2
    return stacked[:c], stacked[c:]


def suppress(nets: SuppressorNets, sources, sample_rate: int | None = None):
    """Apply the trained forward generator to one source pair.

    sources: two [C, T] signals; returns two signals of the same shape.
    """
    if len(sources) != 2:
        raise ValueError("suppress expects exactly two sources")
    if sample_rate is None and isinstance(sources[0], MultiChannelSignal):
        sample_rate = sources[0].sample_rate
    x = stack_pair(sources)
    if x.shape[0] != nets.cfg.stack_channels:
        raise ValueError(f"expected {nets.cfg.stack_channels} stacked channels, got {x.shape[0]}")
    with no_grad():
        y = nets.g_forward(Tensor(x[None]))
    out = y.data[0]
    if not np.all(np.isfinite(out)):
        raise RuntimeError("suppressor produced non-finite output")
    a, b = unstack_pair(out)
    if sample_rate:
        return MultiChannelSignal(a, sample_rate), MultiChannelSignal(b, sample_rate)
    return a, b


# -- losses ------------------------------------------------------------------------


def _mean_sq_err(score: Tensor, target: float) -> Tensor:
    d = ad.sub(score, target)
    return ad.tmean(ad.mul(d, d))


def _l1(a: Tensor, b: Tensor) -> Tensor:
    return ad.tmean(ad.absolute(ad.sub(a, b)))


@dataclass
class GeneratorLossParts:
    adversarial: float
    cycle: float
    identity: float
    total: float


def generator_loss(nets: SuppressorNets, batch_all: Tensor, batch_hard: Tensor,
                   cycle_weight: float | None = None, identity_weight: float | None = None):
    """Least-squares adversarial + weighted cycle and identity terms.

    batch_all/batch_hard: [B, 12, T] stacked pairs from the full-distribution
    and hard-partition pools. Returns (scalar loss, GeneratorLossParts).
    """
    cw = nets.cfg.cycle_weight if cycle_weight is None else cycle_weight
    iw = nets.cfg.identity_weight if identity_weight is None else identity_weight
    g_x = nets.g_forward(batch_all)
    f_y = nets.g_reverse(batch_hard)
    adv = ad.add(_mean_sq_err(nets.d_hard(g_x), 1.0), _mean_sq_err(nets.d_all(f_y), 1.0))
    cycle = ad.add(_l1(nets.g_reverse(g_x), batch_all), _l1(nets.g_forward(f_y), batch_hard))
    ident = ad.add(_l1(nets.g_forward(batch_hard), batch_hard),
                   _l1(nets.g_reverse(batch_all), batch_all))
    total = ad.add(ad.add(adv, ad.mul(cycle, cw)), ad.mul(ident, iw))
    parts = GeneratorLossParts(adv.item(), cycle.item(), ident.item(), total.item())
    return total, parts


def discriminator_loss(nets: SuppressorNets, batch_all: Tensor, batch_hard: Tensor):
    """Real pairs score 1, generated pairs score 0 (least squares)."""
    with no_grad():
        fake_hard = nets.g_forward(batch_all)
        fake_all = nets.g_reverse(batch_hard)
    loss_hard = ad.add(_mean_sq_err(nets.d_hard(batch_hard), 1.0),
                       _mean_sq_err(nets.d_hard(Tensor(fake_hard.data)), 0.0))
    loss_all = ad.add(_mean_sq_err(nets.d_all(batch_all), 1.0),
                      _mean_sq_err(nets.d_all(Tensor(fake_all.data)), 0.0))
    return ad.add(loss_hard, loss_all)


# -- oracle suppressor ---------------------------------------------------------------


def oracle_suppress(sample: SeparationSample):
    """Re-render both dry sources from source 0's position: spatial cues
    collapse to a shared pattern while the dry timbre is untouched."""
    if sample.dry is None or len(sample.dry) != 2:
        raise ValueError("oracle suppression needs the sample's dry sources")
    pos = sample.scene.source_positions[0]
    scene = sample.scene.with_sources(np.stack([pos, pos]))
    rendered = rooms.spatialize(scene, list(sample.dry))
    return rendered[0], rendered[1]


def suppressed_view(sample: SeparationSample, pair) -> SeparationSample:
    """Rebuild a sample around a suppressed source pair (mixture = exact sum)."""
    a, b = pair
    if not isinstance(a, MultiChannelSignal):
        a = MultiChannelSignal(a, sample.mixture.sample_rate)
        b = MultiChannelSignal(b, sample.mixture.sample_rate)
    return SeparationSample(
        sample_id=sample.sample_id, sources=(a, b), mixture=a + b, dry=sample.dry,
        speaker_ids=sample.speaker_ids, angle_deg=sample.angle_deg, scene=sample.scene,
        partition=sample.partition, seed=sample.seed)


# -- training --------------------------------------------------------------------------


@dataclass
class GanSchedule:
    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 50
    beta1: float = 0.5
    crop: int = 0            # 0 = full length; else random crop length per step
    tdoa_probe: int = 12     # samples used for the per-epoch TDOA-gap statistic

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lr", "batch_size", "epochs", "beta1", "crop", "tdoa_probe")}

    @staticmethod
    def from_dict(d: dict) -> "GanSchedule":
        return GanSchedule(**d)


def pair_tdoa_gap(pair, mic_pair=(0, 3), max_lag: int = 40) -> float:
    a, b = pair
    if not isinstance(a, MultiChannelSignal):
        a = MultiChannelSignal(a, 1)
        b = MultiChannelSignal(b, 1)
    return tdoa.source_tdoa_gap(a, b, mic_pair=mic_pair, max_lag=max_lag)


def mean_tdoa_gap(pairs, mic_pair=(0, 3)) -> float:
    return float(np.mean([pair_tdoa_gap(p, mic_pair, max_lag=40) for p in pairs]))


@dataclass
class GanEpochRecord:
    epoch: int
    g_total: float
    d_total: float
    cycle: float
    identity: float
    adversarial: float
    tdoa_gap: float


class GanLog:
    header = ["epoch", "g_total", "d_total", "cycle", "identity", "adv", "tdoa_gap"]

    def __init__(self):
        self.records: list[GanEpochRecord] = []

    def rows(self):
        for r in self.records:
            yield [r.epoch, r.g_total, r.d_total, r.cycle, r.identity, r.adversarial, r.tdoa_gap]

    def to_csv(self, path):
        write_csv(path, self.header, list(self.rows()))


def _rms_normalized(stacked: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(stacked ** 2))
    return stacked / rms if rms > 0 else stacked


def train_suppressor(nets: SuppressorNets, samples_all, samples_hard,
                     schedule: GanSchedule, seed: int = 0, progress=None) -> GanLog:
    """Alternate least-squares discriminator/generator updates.

    samples_all / samples_hard: SeparationSample lists providing source
    pairs from the full distribution and the hard partition.
    """
    if not samples_all or not samples_hard:
        raise ValueError("both training pools must be non-empty")
    pool_all = [_rms_normalized(stack_pair(s.sources)) for s in samples_all]
    pool_hard = [_rms_normalized(stack_pair(s.sources)) for s in samples_hard]
    rng = rng_from(seed, "train-suppressor")
    opt_g = Adam(list(nets.generator_params()), lr=schedule.lr, beta1=schedule.beta1)
    opt_d = Adam(list(nets.discriminator_params()), lr=schedule.lr, beta1=schedule.beta1)
    log = GanLog()
    probe = samples_all[:schedule.tdoa_probe]

    steps_per_epoch = max(1, len(pool_all) // schedule.batch_size)
    for epoch in range(schedule.epochs):
        g_tot = d_tot = cyc = ident = adv = 0.0
        for step in range(steps_per_epoch):
            xa = _draw(pool_all, schedule, rng)
            xh = _draw(pool_hard, schedule, rng)
            batch_all = Tensor(xa)
            batch_hard = Tensor(xh)

            d_loss = discriminator_loss(nets, batch_all, batch_hard)
            _check(d_loss.item(), "discriminator", epoch, step)
            _zero(nets.discriminator_params())
            d_loss.backward()
            opt_d.step()

            g_loss, parts = generator_loss(nets, batch_all, batch_hard)
            _check(parts.total, "generator", epoch, step)
            _zero(nets.generator_params())
            g_loss.backward()
            opt_g.step()

            g_tot += parts.total
            d_tot += d_loss.item()
            cyc += parts.cycle
            ident += parts.identity
            adv += parts.adversarial

        k = steps_per_epoch
        gap = mean_tdoa_gap([unstack_pair(_apply(nets, p)) for p in probe])
        record = GanEpochRecord(epoch, g_tot / k, d_tot / k, cyc / k, ident / k, adv / k, gap)
        log.records.append(record)
        if progress is not None:
            progress(record)
    return log


def _apply(nets, stacked: np.ndarray) -> np.ndarray:
    with no_grad():
        return nets.g_forward(Tensor(stacked[None])).data[0]


def _draw(pool, schedule: GanSchedule, rng) -> np.ndarray:
    idx = rng.integers(0, len(pool), size=schedule.batch_size)
    items = [pool[i] for i in idx]
    if schedule.crop and schedule.crop < items[0].shape[1]:
        T = items[0].shape[1]
        starts = rng.integers(0, T - schedule.crop + 1, size=len(items))
        items = [it[:, s:s + schedule.crop] for it, s in zip(items, starts)]
    return np.stack(items)


def _zero(params) -> None:
    for _, t in params:
        t.grad = None


def _check(value: float, which: str, epoch: int, step: int) -> None:
    if not math.isfinite(value):
        raise RuntimeError(f"non-finite {which} loss at epoch {epoch}, step {step}")


# -- validation -------------------------------------------------------------------------


@dataclass
class SuppressionReport:
    tdoa_gap_before: float
    tdoa_gap_after: float
    spatial_model_before: float
    spatial_model_after: float
    timbre_model_before: float
    timbre_model_after: float

    @property
    def spatial_model_drop(self) -> float:
        return self.spatial_model_before - self.spatial_model_after

    @property
    def timbre_model_drop(self) -> float:
        return self.timbre_model_before - self.timbre_model_after

    def to_dict(self) -> dict:
        return {
            "tdoa_gap_before": self.tdoa_gap_before,
            "tdoa_gap_after": self.tdoa_gap_after,
            "spatial_model_before": self.spatial_model_before,
            "spatial_model_after": self.spatial_model_after,
            "timbre_model_before": self.timbre_model_before,
            "timbre_model_after": self.timbre_model_after,
        }


def validate_suppression(samples_before, samples_after, spatial_model, timbre_model) -> SuppressionReport:
    """Score the spatial-only and timbre-only separators on matched samples
    before/after suppression, alongside the TDOA-gap statistic."""
    from .separator import evaluate_model, mean_sisdri

    gap_before = mean_tdoa_gap([s.sources for s in samples_before])
    gap_after = mean_tdoa_gap([s.sources for s in samples_after])
    return SuppressionReport(
        tdoa_gap_before=gap_before,
        tdoa_gap_after=gap_after,
        spatial_model_before=mean_sisdri(evaluate_model(spatial_model, samples_before)),
        spatial_model_after=mean_sisdri(evaluate_model(spatial_model, samples_after)),
        timbre_model_before=mean_sisdri(evaluate_model(timbre_model, samples_before)),
        timbre_model_after=mean_sisdri(evaluate_model(timbre_model, samples_after)),
    )
