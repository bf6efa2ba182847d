"""Multi-channel time-domain separation model.

Encoder conv -> chunked dual-path recurrent blocks (intra-chunk and
inter-chunk GRUs with projection, layer norm and residual) -> sigmoid masks
in the encoder domain per source -> shared transposed-conv decoder. Trained
with permutation-invariant negative SI-SDR.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .audio import MultiChannelSignal
from .nn import autodiff as ad
from .nn.autodiff import Tensor, no_grad
from .nn.layers import Conv1d, ConvTranspose1d, GRU, LayerNorm, Linear, Module, PReLU
from .nn.optim import Adam
from .util import rng_from, write_csv


@dataclass
class SeparatorConfig:
    n_channels: int = 6
    n_sources: int = 2
    encoder_filters: int = 48
    kernel: int = 16
    stride: int = 8
    chunk_size: int = 50
    n_blocks: int = 2
    hidden: int = 48
    intra_bidirectional: bool = True
    inter_bidirectional: bool = False

    def __post_init__(self):
        if self.chunk_size % 2 != 0:
            raise ValueError("chunk_size must be even (hop is chunk_size / 2)")
        for name in ("encoder_filters", "kernel", "stride", "chunk_size", "n_blocks", "hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def chunk_hop(self) -> int:
        return self.chunk_size // 2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "n_channels", "n_sources", "encoder_filters", "kernel", "stride",
            "chunk_size", "n_blocks", "hidden", "intra_bidirectional", "inter_bidirectional")}

    @staticmethod
    def from_dict(d: dict) -> "SeparatorConfig":
        return SeparatorConfig(**d)


def chunk(x: Tensor, size: int, hop: int):
    """[.., T] -> ([.., n, size], padded_length). Pads with zeros on the right
    so that unchunk can reconstruct the original exactly."""
    if hop != size // 2:
        raise ValueError(f"chunk hop must be size/2, got hop={hop}, size={size}")
    T = x.shape[-1]
    if T < size:
        pad = size - T
    else:
        pad = (hop - (T - size) % hop) % hop
    if pad:
        x = ad.pad_last(x, 0, pad)
    return ad.unfold(x, size, hop), T + pad


def unchunk(chunks: Tensor, total: int, hop: int, out_len: int) -> Tensor:
    """Exact inverse of chunk: overlap-add normalized by the per-frame overlap
    count, then cropped to the original length."""
    size = chunks.shape[-1]
    folded = ad.fold(chunks, total, hop)
    n = chunks.shape[-2]
    counts = np.zeros(total)
    for i in range(n):
        counts[i * hop:i * hop + size] += 1.0
    inv = np.broadcast_to(1.0 / counts, folded.shape).copy()
    out = ad.mul(folded, Tensor(inv))
    return ad.narrow(out, out.ndim - 1, 0, out_len)


def n_chunks(T: int, size: int, hop: int) -> int:
    """Chunk count on the zero-padded sequence."""
    if T < size:
        return 1
    return math.ceil((T - size) / hop) + 1


class _DualPathBlock(Module):
    def __init__(self, cfg: SeparatorConfig, rng):
        super().__init__()
        n, h = cfg.encoder_filters, cfg.hidden
        self.intra = self.add_child("intra", GRU(n, h, rng, bidirectional=cfg.intra_bidirectional))
        self.intra_proj = self.add_child("intra_proj", Linear(self.intra.out_features, n, rng))
        self.intra_norm = self.add_child("intra_norm", LayerNorm(n))
        self.inter = self.add_child("inter", GRU(n, h, rng, bidirectional=cfg.inter_bidirectional))
        self.inter_proj = self.add_child("inter_proj", Linear(self.inter.out_features, n, rng))
        self.inter_norm = self.add_child("inter_norm", LayerNorm(n))

    def __call__(self, chunks: Tensor) -> Tensor:
        B, N, C, K = chunks.shape
        # intra-chunk pass: sequence along K
        seq = ad.reshape(ad.transpose(chunks, (3, 0, 2, 1)), (K, B * C, N))
        seq = self.intra_norm(self.intra_proj(self.intra(seq)))
        intra_out = ad.transpose(ad.reshape(seq, (K, B, C, N)), (1, 3, 2, 0))
        chunks = ad.add(chunks, intra_out)
        # inter-chunk pass: sequence along C
        seq = ad.reshape(ad.transpose(chunks, (2, 0, 3, 1)), (C, B * K, N))
        seq = self.inter_norm(self.inter_proj(self.inter(seq)))
        inter_out = ad.transpose(ad.reshape(seq, (C, B, K, N)), (1, 3, 0, 2))
        return ad.add(chunks, inter_out)


class SeparatorModel(Module):
    def __init__(self, cfg: SeparatorConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        n = cfg.encoder_filters
        rng = rng_from(seed, "separator")
        self.encoder = self.add_child(
            "encoder", Conv1d(cfg.n_channels, n, cfg.kernel, rng, stride=cfg.stride))
        self.encoder_act = self.add_child("encoder_act", PReLU())
        self.encoder_norm = self.add_child("encoder_norm", LayerNorm(n))
        self.blocks = [
            self.add_child(f"block{i}", _DualPathBlock(cfg, rng)) for i in range(cfg.n_blocks)
        ]
        self.mask_act = self.add_child("mask_act", PReLU())
        self.mask_head = self.add_child(
            "mask_head", Conv1d(n, cfg.n_sources * n, 1, rng))
        self.decoder = self.add_child(
            "decoder", ConvTranspose1d(n, cfg.n_channels, cfg.kernel, rng, stride=cfg.stride))

    def __call__(self, mix: Tensor):
        """mix [B, C, T] -> list of n_sources estimates, each [B, C, T]."""
        cfg = self.cfg
        if mix.ndim != 3 or mix.shape[1] != cfg.n_channels:
            raise ValueError(f"expected mixture [B, {cfg.n_channels}, T], got {mix.shape}")
        B, _, T = mix.shape
        if T < cfg.kernel:
            raise ValueError(f"mixture too short: {T} < kernel {cfg.kernel}")
        enc = self.encoder_act(self.encoder(mix))          # [B, N, F]
        F = enc.shape[2]
        # normalized copy feeds the blocks; masks multiply the raw encoding
        feats = ad.transpose(self.encoder_norm(ad.transpose(enc, (0, 2, 1))), (0, 2, 1))
        chunks, padded = chunk(feats, cfg.chunk_size, cfg.chunk_hop)
        for block in self.blocks:
            chunks = block(chunks)
        feats = unchunk(chunks, padded, cfg.chunk_hop, F)  # [B, N, F]
        masks = ad.sigmoid(self.mask_head(self.mask_act(feats)))  # [B, S*N, F]
        outs = []
        n = cfg.encoder_filters
        for s in range(cfg.n_sources):
            mask_s = ad.narrow(masks, 1, s * n, n)
            dec = self.decoder(ad.mul(enc, mask_s))        # [B, C, T_dec]
            T_dec = dec.shape[2]
            if T_dec >= T:
                dec = ad.narrow(dec, 2, 0, T)
            else:
                dec = ad.pad_last(dec, 0, T - T_dec)
            outs.append(dec)
        return outs


def separate(model: SeparatorModel, mixture) -> list[MultiChannelSignal]:
    """Inference on one mixture (MultiChannelSignal or [C, T] array)."""
    if isinstance(mixture, MultiChannelSignal):
        arr, rate = mixture.samples, mixture.sample_rate
    else:
        arr, rate = np.asarray(mixture, dtype=np.float64), 0
    with no_grad():
        outs = model(Tensor(arr[None]))
    rendered = []
    for o in outs:
        if not np.all(np.isfinite(o.data)):
            raise RuntimeError("separator produced non-finite output")
        rendered.append(MultiChannelSignal(o.data[0], rate) if rate else o.data[0])
    return rendered


# -- differentiable PIT SI-SDR loss ----------------------------------------------

_PROJ_EPS = 1e-18
_FLOOR = 1e-12


def _si_sdr_db_terms(est: Tensor, ref: np.ndarray) -> Tensor:
    """Clipped SI-SDR per channel, differentiable wrt est. est/ref: [C, T]."""
    ref_e = np.sum(ref * ref, axis=-1)
    if np.any(ref_e == 0.0):
        raise ValueError("loss reference has a zero-energy channel")
    ref_t = Tensor(ref)
    dot = ad.tsum(ad.mul(est, ref_t), axis=-1)            # [C]
    alpha = ad.mul(dot, Tensor(1.0 / ref_e))
    proj_e = ad.mul(ad.mul(alpha, alpha), Tensor(ref_e))
    est_e = ad.tsum(ad.mul(est, est), axis=-1)
    # projection and residual are orthogonal: ||alpha s - e||^2 = ||e||^2 - proj_e
    # (clamped at zero against cancellation when the estimate is a scaled reference)
    res_e = ad.clamp(ad.sub(est_e, proj_e), 0.0, math.inf)
    ratio = ad.div(ad.add(proj_e, Tensor(_PROJ_EPS * ref_e)),
                   ad.add(res_e, Tensor(_FLOOR * ref_e)))
    return ad.clamp(ad.mul(ad.log10(ratio), 10.0), -metrics.CLIP_DB, metrics.CLIP_DB)


def pit_si_sdr_loss(estimates, references: np.ndarray):
    """Negative best-permutation mean SI-SDR over sources and channels.

    estimates: list of n_sources Tensors [B, C, T]; references [B, S, C, T].
    The permutation per sample comes from the detached metric matrix and only
    the chosen pairing is differentiated. Returns (scalar loss, permutations).
    """
    n_src = len(estimates)
    B = references.shape[0]
    per_sample = []
    perms = []
    for b in range(B):
        refs_b = [MultiChannelSignal(references[b, s], 1) for s in range(n_src)]
        ests_b = [MultiChannelSignal(estimates[s].data[b], 1) for s in range(n_src)]
        assign = metrics.pit_assign(refs_b, ests_b, metric=metrics.channel_mean_si_sdr)
        perms.append(assign.perm)
        terms = []
        for i in range(n_src):
            est_b = ad.narrow(estimates[assign.perm[i]], 0, b, 1)
            est_b = ad.reshape(est_b, est_b.shape[1:])
            terms.append(_si_sdr_db_terms(est_b, references[b, i]))
        per_sample.append(ad.tmean(ad.concat(terms, 0)))
    stacked = ad.concat([ad.reshape(t, (1,)) for t in per_sample], 0)
    return ad.mul(ad.tmean(stacked), -1.0), perms


# -- training ----------------------------------------------------------------------


@dataclass
class TrainSchedule:
    lr: float = 5e-4
    batch_size: int = 4
    epochs: int = 30
    plateau_patience: int = 3
    plateau_min_delta_db: float = 0.01
    lr_factor: float = 0.5

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "lr", "batch_size", "epochs", "plateau_patience", "plateau_min_delta_db", "lr_factor")}

    @staticmethod
    def from_dict(d: dict) -> "TrainSchedule":
        return TrainSchedule(**d)


class SampleBatch:
    """In-memory float32 cache of a manifest's mixtures and references."""

    def __init__(self, samples):
        if not samples:
            raise ValueError("empty sample set")
        self.samples = samples
        self.mixtures = np.stack([s.mixture.samples for s in samples]).astype(np.float32)
        self.references = np.stack(
            [np.stack([src.samples for src in s.sources]) for s in samples]).astype(np.float32)

    def __len__(self):
        return len(self.samples)


def _mean_si_sdri(model, batch: SampleBatch) -> float:
    vals = []
    with no_grad():
        for i, sample in enumerate(batch.samples):
            outs = model(Tensor(batch.mixtures[i:i + 1].astype(np.float64)))
            ests = [MultiChannelSignal(o.data[0], sample.mixture.sample_rate) for o in outs]
            improvements, _ = metrics.score_sample(sample, ests)
            vals.append(float(np.mean(improvements)))
    return float(np.mean(vals))


def evaluate_model(model, samples):
    """Per-sample PIT SI-SDRi rows: (id, partition, per-source, mean)."""
    rows = []
    with no_grad():
        for sample in samples:
            outs = model(Tensor(sample.mixture.samples[None]))
            ests = [MultiChannelSignal(o.data[0], sample.mixture.sample_rate) for o in outs]
            improvements, _ = metrics.score_sample(sample, ests)
            rows.append((sample.sample_id, sample.partition.value,
                         improvements[0], improvements[1], float(np.mean(improvements))))
    return rows


def mean_sisdri(rows) -> float:
    return float(np.mean([r[4] for r in rows])) if rows else float("nan")


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    regime: str
    eval_sisdri: dict = field(default_factory=dict)


class TrainingLog:
    def __init__(self, eval_names):
        self.eval_names = list(eval_names)
        self.records: list[EpochRecord] = []

    def header(self):
        return ["epoch", "lr", "train_loss"] + [f"sisdri_{n}" for n in self.eval_names] + ["regime"]

    def rows(self):
        for r in self.records:
            yield [r.epoch, r.lr, r.train_loss] + [
                r.eval_sisdri.get(n, float("nan")) for n in self.eval_names] + [r.regime]

    def to_csv(self, path):
        write_csv(path, self.header(), self.rows())


def train_separator(model: SeparatorModel, train_samples, val_samples, schedule: TrainSchedule,
                    seed: int = 0, eval_sets: dict | None = None, eval_every: int = 1,
                    switch_epoch: int | None = None, switch_samples=None,
                    loss_weights=None, sampler=None, progress=None) -> TrainingLog:
    """Train with Adam and halve the LR when validation SI-SDRi plateaus.

    `eval_sets` maps names to sample lists scored every `eval_every` epochs.
    `switch_epoch`/`switch_samples` swap the training set mid-run (the pool
    is re-sampled each epoch by `sampler` when given, enabling reweighted or
    augmented streams). `loss_weights` maps sample_id to a loss multiplier.
    """
    if not train_samples:
        raise ValueError("empty training manifest")
    if not val_samples:
        raise ValueError("empty validation manifest")
    eval_sets = eval_sets or {}
    opt = Adam(list(model.parameters()), lr=schedule.lr)
    rng = rng_from(seed, "train-separator")
    log = TrainingLog(["val"] + list(eval_sets))
    regime = "phase1"
    batch = SampleBatch(train_samples)
    best_val = -math.inf
    stale = 0

    for epoch in range(schedule.epochs):
        if switch_epoch is not None and epoch == switch_epoch:
            batch = SampleBatch(switch_samples)
            regime = "phase2"
            best_val = -math.inf
            stale = 0
        if sampler is not None:
            batch = SampleBatch(sampler(epoch, rng))
        order = rng.permutation(len(batch))
        losses = []
        bs = schedule.batch_size
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            mix = Tensor(batch.mixtures[idx].astype(np.float64))
            refs = batch.references[idx].astype(np.float64)
            ests = model(mix)
            loss, _ = pit_si_sdr_loss(ests, refs)
            if loss_weights is not None:
                w = float(np.mean([loss_weights.get(batch.samples[i].sample_id, 1.0) for i in idx]))
                loss = ad.mul(loss, w)
            value = loss.item()
            if not math.isfinite(value):
                raise RuntimeError(
                    f"non-finite training loss at epoch {epoch}, step {start // bs}")
            model.zero_grad()
            loss.backward()
            opt.step()
            losses.append(value)

        record = EpochRecord(epoch, opt.lr, float(np.mean(losses)), regime)
        val_rows = evaluate_model(model, val_samples)
        val_score = mean_sisdri(val_rows)
        record.eval_sisdri["val"] = val_score
        if eval_sets and (epoch % eval_every == 0 or epoch == schedule.epochs - 1):
            for name, samples in eval_sets.items():
                record.eval_sisdri[name] = mean_sisdri(evaluate_model(model, samples))
        log.records.append(record)
        if progress is not None:
            progress(record)

        if val_score > best_val + schedule.plateau_min_delta_db:
            best_val = val_score
            stale = 0
        else:
            stale += 1
            if stale >= schedule.plateau_patience:
                opt.lr *= schedule.lr_factor
                stale = 0
    return log
