"""Paired audio-visual datasets: a synthetic generator and WAV-corpus ingestion.

The synthetic task ties both modalities to one latent class: class k owns
a fixed random visual template and a pair of class-unique sine
frequencies, and every sample is template + noise / sine mixture + noise.
The correlation between modalities is the whole point; without it the
cross-modal objectives have nothing to learn.
"""

from __future__ import annotations

import csv
import hashlib
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import audio
from .audio import MelSpectrogram, StftParams, Waveform
from .errors import ConfigError
from .tensor import Tensor, load_tensor, save_tensor

# Scales chosen so the task is learnable but not linearly trivial: the raw
# visual vectors stay nearest-centroid separable while leaving headroom
# between trained and untrained encoders under the probe protocol.
TEMPLATE_SCALE = 1.0
SINE_AMP = 0.35
FREQ_GRID_HZ = np.arange(200, 4001, 100)  # class tones live on this grid

SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 4
    per_class: int = 64
    visual_dim: int = 32
    audio_seconds: float = 1.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.per_class < 2:
            raise ConfigError(f"need at least 2 samples per class, got {self.per_class}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.audio_seconds <= 0:
            raise ConfigError(f"audio_seconds must be positive, got {self.audio_seconds}")


@dataclass
class PairedSample:
    visual: Tensor          # [visual_dim]
    audio: Waveform
    label: int              # consumed only by the probe, never by pretraining
    uid: int = -1           # stable index for spectrogram caching


@dataclass
class DatasetSplit:
    train: list[PairedSample]
    val: list[PairedSample]
    test: list[PairedSample]

    def all_samples(self) -> list[PairedSample]:
        return self.train + self.val + self.test


@dataclass
class PairedBatch:
    visual: Tensor                    # [batch x visual_dim]
    mel: list[MelSpectrogram]         # per-sample spectrograms, batch order
    labels: np.ndarray                # [batch] int


def class_frequencies(n_classes: int, seed: int) -> np.ndarray:
    """Two distinct tones per class, no tone shared across classes.

    Drawn without replacement from a 100 Hz grid, so distinct tones are
    at least 100 Hz apart by construction.
    """
    need = 2 * n_classes
    if need > FREQ_GRID_HZ.size:
        raise ConfigError(
            f"{n_classes} classes need {need} distinct tones, grid has {FREQ_GRID_HZ.size}")
    rng = np.random.default_rng(int(seed) + 0xF0E1)
    chosen = rng.choice(FREQ_GRID_HZ, size=need, replace=False)
    return chosen.reshape(n_classes, 2).astype(np.float64)


def _split_counts(n: int) -> tuple[int, int, int]:
    tr = int(np.floor(n * SPLIT_FRACTIONS[0]))
    va = int(np.floor(n * SPLIT_FRACTIONS[1]))
    return tr, va, n - tr - va


def generate(spec: SyntheticSpec) -> DatasetSplit:
    """Deterministic synthetic dataset with class-balanced 70/10/20 splits."""
    if spec.visual_dim < spec.n_classes:
        warnings.warn(
            f"visual_dim {spec.visual_dim} < n_classes {spec.n_classes}: "
            "templates may be hard to separate", stacklevel=2)
    rng = np.random.default_rng(spec.seed)
    freqs = class_frequencies(spec.n_classes, spec.seed)
    templates = TEMPLATE_SCALE * rng.standard_normal((spec.n_classes, spec.visual_dim))

    rate = audio.TARGET_RATE
    n_samples_audio = int(round(spec.audio_seconds * rate))
    t = np.arange(n_samples_audio) / rate

    split_lists: tuple[list, list, list] = ([], [], [])
    uid = 0
    for k in range(spec.n_classes):
        members = []
        for _ in range(spec.per_class):
            visual = templates[k] + spec.noise_sigma * rng.standard_normal(spec.visual_dim)
            phases = rng.uniform(0.0, 2.0 * np.pi, size=2)
            wave = (SINE_AMP * np.sin(2 * np.pi * freqs[k, 0] * t + phases[0])
                    + SINE_AMP * np.sin(2 * np.pi * freqs[k, 1] * t + phases[1]))
            wave = wave + spec.noise_sigma * rng.standard_normal(n_samples_audio)
            sample = PairedSample(
                visual=Tensor(visual),
                audio=Waveform(np.clip(wave, -1.0, 1.0), sample_rate=rate, channels=1),
                label=k, uid=uid)
            uid += 1
            members.append(sample)
        order = rng.permutation(spec.per_class)
        tr, va, _ = _split_counts(spec.per_class)
        for pos, idx in enumerate(order):
            bucket = 0 if pos < tr else (1 if pos < tr + va else 2)
            split_lists[bucket].append(members[idx])
    return DatasetSplit(train=split_lists[0], val=split_lists[1], test=split_lists[2])


# ----------------------------------------------------------------- ingestion

def export_dataset(split: DatasetSplit, out_dir) -> str:
    """Write WAVs (16-bit PCM), visual tensor files, and a manifest CSV.

    The exported tree round-trips through load_corpus, so synthetic and
    real corpora share one ingestion path.
    """
    out_dir = str(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")
    rows = []
    for i, sample in enumerate(split.all_samples()):
        wav_name = f"sample_{i:05d}.wav"
        vec_name = f"sample_{i:05d}.visual.bin"
        audio.write_wav_pcm16(os.path.join(out_dir, wav_name), sample.audio)
        save_tensor(sample.visual, os.path.join(out_dir, vec_name))
        rows.append((wav_name, vec_name, sample.label))
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerows(rows)
    return manifest_path


def _bucket_of(name: str) -> int:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    r = int.from_bytes(digest[:8], "little") / 2.0 ** 64
    if r < SPLIT_FRACTIONS[0]:
        return 0
    if r < SPLIT_FRACTIONS[0] + SPLIT_FRACTIONS[1]:
        return 1
    return 2


def load_corpus(corpus_dir, manifest_path) -> DatasetSplit:
    """Read <wav_path>, <visual_path>, <label> rows; split by path hash."""
    corpus_dir = str(corpus_dir)
    split_lists: tuple[list, list, list] = ([], [], [])
    try:
        with open(manifest_path, "r", newline="", encoding="utf-8") as fh:
            reader = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read manifest {manifest_path}: {exc}") from exc

    uid = 0
    for lineno, row in enumerate(reader, start=1):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 3:
            raise ConfigError(
                f"{manifest_path}:{lineno}: expected 3 columns, got {len(row)}")
        wav_rel, vec_rel, label_s = (c.strip() for c in row)
        wav_path = os.path.join(corpus_dir, wav_rel)
        vec_path = os.path.join(corpus_dir, vec_rel)
        try:
            label = int(label_s)
        except ValueError as exc:
            raise ConfigError(
                f"{manifest_path}:{lineno}: label {label_s!r} is not an integer") from exc
        if not os.path.exists(vec_path):
            raise ConfigError(f"{manifest_path}:{lineno}: missing file {vec_path}")
        wave = audio.read_wav(wav_path)  # raises AudioDecodeError with the path
        visual = load_tensor(vec_path)
        sample = PairedSample(visual=visual, audio=wave, label=label, uid=uid)
        uid += 1
        split_lists[_bucket_of(wav_rel)].append(sample)
    return DatasetSplit(*split_lists)


# ------------------------------------------------------------------ batching

class SpectrogramCache:
    """Computes each sample's spectrogram once; fan-out capped by AVCL_THREADS."""

    def __init__(self, params: StftParams | None = None):
        self.params = params or StftParams()
        self._store: dict[int, MelSpectrogram] = {}

    def get(self, sample: PairedSample) -> MelSpectrogram:
        mel = self._store.get(sample.uid)
        if mel is None:
            mel = audio.process(sample.audio, self.params)
            self._store[sample.uid] = mel
        return mel

    def warm(self, samples: list[PairedSample]) -> None:
        pending = [s for s in samples if s.uid not in self._store]
        if not pending:
            return
        workers = _worker_cap()
        if workers <= 1:
            for s in pending:
                self.get(s)
            return
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for s, mel in zip(pending, pool.map(
                    lambda s: audio.process(s.audio, self.params), pending)):
                self._store[s.uid] = mel


def _worker_cap() -> int:
    cap = os.environ.get("AVCL_THREADS", "")
    try:
        return max(1, int(cap))
    except ValueError:
        return min(4, os.cpu_count() or 1)


def batches(samples: list[PairedSample], batch_size: int, seed: int, epoch: int,
            cache: SpectrogramCache | None = None) -> list[PairedBatch]:
    """Seeded per-epoch shuffle into fixed-size batches; the ragged tail is dropped."""
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2 (the contrastive loss "
                          f"needs negatives), got {batch_size}")
    if batch_size > len(samples):
        raise ConfigError(
            f"batch_size {batch_size} exceeds split size {len(samples)}")
    cache = cache or SpectrogramCache()
    rng = np.random.default_rng(int(seed) ^ int(epoch))
    order = rng.permutation(len(samples))
    out = []
    for start in range(0, len(samples) - batch_size + 1, batch_size):
        chunk = [samples[i] for i in order[start:start + batch_size]]
        visual = Tensor(np.stack([s.visual.data for s in chunk]))
        mel = [cache.get(s) for s in chunk]
        labels = np.array([s.label for s in chunk], dtype=np.int64)
        out.append(PairedBatch(visual=visual, mel=mel, labels=labels))
    return out
