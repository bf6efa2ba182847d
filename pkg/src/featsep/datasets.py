"""Dataset generation and persistence.

A dataset is a directory with meta.json, manifest.jsonl (one record per
sample), and per-sample WAV files (two dry mono sources and their two
6-channel renders). Mixtures are never stored: they are reconstructed as the
exact float sum of the stored float32 renders, which keeps the
mixture-equals-sum invariant true to the last bit.

Partition semantics over (same_speaker, angle):
    same speaker, angle >= threshold   -> easy    (spatial cue only)
    different,    angle <  threshold   -> hard    (timbre cue only)
    different,    angle >= threshold   -> easy_hard
    same speaker, angle <  threshold   -> unsolvable, generator redraws the scene
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rooms
from .audio import MultiChannelSignal, decimate, wav_read, wav_write, WavError
from .rooms import RoomScene, SceneSamplingSpec, sample_scene
from .util import canonical_json, config_hash, rng_from
from .voices import PEAK_LEVEL, SyntheticVoiceBank

log = logging.getLogger(__name__)

ANGLE_THRESHOLD_DEG = 20.0
MAX_REDRAWS = 1000


class Partition(str, enum.Enum):
    EASY = "easy"
    HARD = "hard"
    EASY_HARD = "easy_hard"


class DatasetKind(str, enum.Enum):
    ALL = "all"
    EASY = "easy"
    HARD = "hard"


class UnsolvableSampleError(ValueError):
    """Same speaker below the angle threshold: neither feature separates it."""


def classify_sample(same_speaker: bool, angle_deg: float,
                    threshold: float = ANGLE_THRESHOLD_DEG) -> Partition:
    if not 0.0 <= angle_deg <= 180.0:
        raise ValueError(f"angle must be in [0, 180], got {angle_deg}")
    if same_speaker and angle_deg >= threshold:
        return Partition.EASY
    if not same_speaker and angle_deg < threshold:
        return Partition.HARD
    if not same_speaker:
        return Partition.EASY_HARD
    raise UnsolvableSampleError(
        f"same speaker at {angle_deg:.1f} deg < {threshold} deg is separable by neither feature")


@dataclass(frozen=True)
class SeparationSample:
    sample_id: str
    sources: tuple                 # 2 x MultiChannelSignal [n_mics, T]
    mixture: MultiChannelSignal
    dry: tuple                     # 2 x MultiChannelSignal [1, T]
    speaker_ids: tuple
    angle_deg: float
    scene: RoomScene
    partition: Partition
    seed: int


@dataclass
class PlannedSample:
    index: int
    speaker_ids: tuple
    scene: RoomScene
    partition: Partition


def plan_sample(kind: DatasetKind, index: int, n_speakers: int, scene_spec: SceneSamplingSpec,
                root_seed: int, threshold: float = ANGLE_THRESHOLD_DEG) -> PlannedSample:
    """Draw speakers and a scene for one sample of the given dataset kind.

    For kind=all, an unsolvable draw (same speaker, angle below threshold)
    keeps the speaker pair and redraws the scene, so the same-speaker
    fraction stays exactly 1/n_speakers.
    """
    rng = rng_from(root_seed, "plan", kind.value, index)
    if kind is DatasetKind.ALL:
        ids = tuple(int(v) for v in rng.integers(0, n_speakers, size=2))
        same = ids[0] == ids[1]
        for _ in range(MAX_REDRAWS):
            scene = sample_scene(rng, scene_spec)
            if not (same and scene.source_angle_deg < threshold):
                break
        else:
            raise rooms.ConfigurationError("could not draw a solvable scene")
    elif kind is DatasetKind.EASY:
        sid = int(rng.integers(0, n_speakers))
        ids = (sid, sid)
        lo, hi = scene_spec.angle_range_deg
        scene = sample_scene(rng, scene_spec, angle_range_deg=(max(lo, threshold), hi))
    elif kind is DatasetKind.HARD:
        pair = rng.choice(n_speakers, size=2, replace=False)
        ids = tuple(int(v) for v in pair)
        lo, hi = scene_spec.angle_range_deg
        scene = sample_scene(rng, scene_spec, angle_range_deg=(lo, min(hi, threshold)))
    else:
        raise ValueError(f"unknown dataset kind {kind}")
    partition = classify_sample(ids[0] == ids[1], scene.source_angle_deg, threshold)
    return PlannedSample(index, ids, scene, partition)


def plan_dataset(kind: DatasetKind, n_samples: int, n_speakers: int,
                 scene_spec: SceneSamplingSpec, root_seed: int):
    """Speaker/scene/partition draws only, no audio. Used for distribution
    checks and as the first stage of generate_dataset."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    return [plan_sample(kind, i, n_speakers, scene_spec, root_seed) for i in range(n_samples)]


def _quantize32(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32).astype(np.float64)


def render_sample(plan: PlannedSample, voice_bank, sample_rate: int, clip_duration: float,
                  root_seed: int, kind: DatasetKind) -> SeparationSample:
    """Synthesize dry utterances, spatialize, and assemble one sample.

    Dry signals are peak-normalized and quantized to float32 values before
    rendering so a re-render from persisted files reproduces the stored
    renders up to one final float32 rounding.
    """
    seed_key = (root_seed, "audio", kind.value, plan.index)
    drys = []
    for slot, sid in enumerate(plan.speaker_ids):
        rng = rng_from(*seed_key, slot)
        x = voice_bank.clip(sid, clip_duration, sample_rate, rng)
        peak = np.max(np.abs(x))
        x = x * (PEAK_LEVEL / peak) if peak > 0 else x
        drys.append(MultiChannelSignal.from_mono(_quantize32(x), sample_rate))
    rendered = rooms.spatialize(plan.scene, drys)
    sources = tuple(MultiChannelSignal(_quantize32(r.samples), sample_rate) for r in rendered)
    mixture = sources[0] + sources[1]
    sample_id = f"{kind.value}-{plan.index:05d}"
    return SeparationSample(
        sample_id=sample_id, sources=sources, mixture=mixture, dry=tuple(drys),
        speaker_ids=plan.speaker_ids, angle_deg=plan.scene.source_angle_deg,
        scene=plan.scene, partition=plan.partition, seed=root_seed)


@dataclass
class DatasetManifest:
    kind: DatasetKind
    root: Path
    records: list
    meta: dict

    def __len__(self) -> int:
        return len(self.records)

    @property
    def sample_rate(self) -> int:
        return int(self.meta["sample_rate"])

    def load_sample(self, record) -> SeparationSample:
        root = self.root
        src0 = wav_read(root / record["files"]["src0"])
        src1 = wav_read(root / record["files"]["src1"])
        dry0 = wav_read(root / record["files"]["dry0"])
        dry1 = wav_read(root / record["files"]["dry1"])
        return SeparationSample(
            sample_id=record["id"],
            sources=(src0, src1),
            mixture=src0 + src1,
            dry=(dry0, dry1),
            speaker_ids=tuple(record["speaker_ids"]),
            angle_deg=float(record["angle_deg"]),
            scene=RoomScene.from_dict(record["scene"]),
            partition=Partition(record["partition"]),
            seed=int(record["seed"]),
        )

    def load_all(self):
        return [self.load_sample(r) for r in self.records]

    def verify_files(self) -> None:
        for record in self.records:
            for rel in record["files"].values():
                path = self.root / rel
                if not path.exists():
                    raise FileNotFoundError(f"manifest references missing file {path}")

    def partition_fractions(self) -> dict:
        counts = {p.value: 0 for p in Partition}
        for r in self.records:
            counts[r["partition"]] += 1
        n = max(len(self.records), 1)
        return {k: v / n for k, v in counts.items()}


def generate_dataset(kind, n_samples: int, voice_bank, scene_spec: SceneSamplingSpec,
                     out_dir, root_seed: int, sample_rate: int = 8000,
                     clip_duration: float = 1.0) -> DatasetManifest:
    """Generate and persist a dataset of the given kind."""
    kind = DatasetKind(kind)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = {
        "kind": kind.value,
        "n_samples": n_samples,
        "voice_bank": voice_bank.describe(),
        "scene_spec": scene_spec.to_dict(),
        "root_seed": root_seed,
        "sample_rate": sample_rate,
        "clip_duration": clip_duration,
    }
    plans = plan_dataset(kind, n_samples, voice_bank.n_speakers, scene_spec, root_seed)
    records = []
    for plan in plans:
        sample = render_sample(plan, voice_bank, sample_rate, clip_duration, root_seed, kind)
        rel_dir = Path("wav") / sample.sample_id
        (out_dir / rel_dir).mkdir(parents=True, exist_ok=True)
        files = {}
        for name, sig in (("dry0", sample.dry[0]), ("dry1", sample.dry[1]),
                          ("src0", sample.sources[0]), ("src1", sample.sources[1])):
            rel = rel_dir / f"{name}.wav"
            wav_write(sig, out_dir / rel, encoding="float32")
            files[name] = str(rel)
        records.append({
            "id": sample.sample_id,
            "files": files,
            "speaker_ids": list(sample.speaker_ids),
            "angle_deg": sample.angle_deg,
            "partition": sample.partition.value,
            "seed": root_seed,
            "scene": sample.scene.to_dict(),
        })
    manifest = DatasetManifest(kind, out_dir, records, meta={})
    meta = {
        "kind": kind.value,
        "n_samples": n_samples,
        "sample_rate": sample_rate,
        "clip_duration": clip_duration,
        "config": config,
        "config_hash": config_hash(config),
        "partition_fractions": manifest.partition_fractions(),
    }
    manifest.meta = meta
    (out_dir / "manifest.jsonl").write_text(
        "".join(canonical_json(r) + "\n" for r in records))
    (out_dir / "meta.json").write_text(canonical_json(meta) + "\n")
    return manifest


def load_manifest(path) -> DatasetManifest:
    root = Path(path)
    meta = json.loads((root / "meta.json").read_text())
    records = [json.loads(line) for line in (root / "manifest.jsonl").read_text().splitlines() if line]
    return DatasetManifest(DatasetKind(meta["kind"]), root, records, meta)


class CorpusVoiceBank:
    """Per-speaker utterance pools ingested from mono WAV files."""

    def __init__(self, pools: dict, sample_rate: int, source: str):
        if len(pools) < 2:
            raise ValueError("corpus must contain at least 2 speakers")
        self.speakers = sorted(pools)
        self.pools = pools
        self.sample_rate = sample_rate
        self.source = source

    @property
    def n_speakers(self) -> int:
        return len(self.speakers)

    def describe(self) -> dict:
        return {"type": "corpus", "source": self.source,
                "n_speakers": self.n_speakers, "sample_rate": self.sample_rate}

    def clip(self, speaker_id: int, duration_s: float, sample_rate: int, rng) -> np.ndarray:
        if sample_rate != self.sample_rate:
            raise ValueError(f"corpus ingested at {self.sample_rate} Hz, requested {sample_rate}")
        name = self.speakers[speaker_id]
        pool = self.pools[name]
        n = int(round(duration_s * sample_rate))
        usable = [u for u in pool if u.size >= n]
        if not usable:
            raise ValueError(
                f"speaker {name!r} has no utterance of at least {duration_s} s at {sample_rate} Hz")
        utt = usable[int(rng.integers(0, len(usable)))]
        start = int(rng.integers(0, utt.size - n + 1))
        clip = utt[start:start + n].copy()
        peak = np.max(np.abs(clip))
        if peak == 0.0:
            raise ValueError(f"selected clip from speaker {name!r} is silent")
        return clip * (PEAK_LEVEL / peak)


def ingest_corpus(corpus_dir, target_rate: int) -> CorpusVoiceBank:
    """Build a voice bank from <corpus_dir>/<speaker>/*.wav mono files.

    Files at an integer multiple of the target rate are decimated; unreadable
    files are skipped with a warning; a speaker directory with no usable file
    is an error.
    """
    corpus_dir = Path(corpus_dir)
    speaker_dirs = sorted(p for p in corpus_dir.iterdir() if p.is_dir())
    if len(speaker_dirs) < 2:
        raise ValueError(f"corpus needs >= 2 speaker directories, found {len(speaker_dirs)}")
    pools = {}
    for sdir in speaker_dirs:
        utterances = []
        for wav_path in sorted(sdir.glob("*.wav")):
            try:
                sig = wav_read(wav_path)
            except WavError as exc:
                log.warning("skipping unreadable file %s: %s", wav_path, exc)
                continue
            if sig.n_channels != 1:
                log.warning("skipping non-mono file %s (%d channels)", wav_path, sig.n_channels)
                continue
            if sig.sample_rate % target_rate != 0:
                log.warning("skipping %s: rate %d not an integer multiple of %d",
                            wav_path, sig.sample_rate, target_rate)
                continue
            utterances.append(decimate(sig.channel(0), sig.sample_rate // target_rate))
        if not utterances:
            raise ValueError(f"speaker directory {sdir.name!r} has no usable utterances")
        pools[sdir.name] = utterances
    return CorpusVoiceBank(pools, target_rate, str(corpus_dir))
