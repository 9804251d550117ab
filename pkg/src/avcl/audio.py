"""Audio preprocessing pipeline.

A clip is folded to mono, resampled to 24 kHz, windowed into 10 ms
non-overlapping Hann frames (240 samples -> 121 magnitude bins), pushed
through a 256-filter triangular mel bank spanning 0-12 kHz, and finally
stretched/compressed along time to a fixed 256 frames. The result is a
256x256 non-negative matrix covering the whole clip.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import resample_poly

from .errors import AudioDecodeError, ConfigError, ContractError

TARGET_RATE = 24000


@dataclass(frozen=True)
class StftParams:
    window_ms: int = 10
    hop_ms: int = 10
    n_bands: int = 256
    target_frames: int = 256
    window_fn: str = "hann"
    log_compress: bool = False

    def __post_init__(self):
        if not (self.window_ms >= self.hop_ms > 0):
            raise ConfigError(
                f"need window_ms >= hop_ms > 0, got {self.window_ms}/{self.hop_ms}")
        if self.n_bands <= 0 or self.target_frames <= 0:
            raise ConfigError("n_bands and target_frames must be positive")
        if self.window_fn != "hann":
            raise ConfigError(f"unsupported window function {self.window_fn!r}")

    def window_samples(self, rate: int) -> int:
        return int(round(self.window_ms * rate / 1000.0))

    def hop_samples(self, rate: int) -> int:
        return int(round(self.hop_ms * rate / 1000.0))


@dataclass
class Waveform:
    """Interleaved samples in [-1, 1] at a fixed rate."""

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels not in (1, 2):
            raise AudioDecodeError(f"unsupported channel count {self.channels}")
        if self.samples.size % self.channels != 0:
            raise ContractError(
                f"sample count {self.samples.size} not divisible by {self.channels} channels")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0 + 1e-9:
            raise ContractError("samples exceed the [-1, 1] range")

    @property
    def n_frames(self) -> int:
        return self.samples.size // self.channels

    @property
    def duration(self) -> float:
        return self.n_frames / self.sample_rate


@dataclass
class MelSpectrogram:
    values: np.ndarray  # bands x frames, non-negative
    source_rate: int
    params: StftParams = field(default_factory=StftParams)


# ---------------------------------------------------------------- WAV codec

_FMT_PCM = 1
_FMT_FLOAT = 3


def read_wav(path) -> Waveform:
    """Decode a RIFF/WAVE file: PCM 16-bit or IEEE float 32-bit, 1-2 channels."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise AudioDecodeError(f"{path}: cannot read file: {exc}") from exc

    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioDecodeError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (csize,) = struct.unpack_from("<I", raw, pos + 4)
        body = raw[pos + 8:pos + 8 + csize]
        if cid == b"fmt " and len(body) >= 16:
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif cid == b"data":
            data = body
        pos += 8 + csize + (csize & 1)  # chunks are word-aligned

    if fmt is None or data is None:
        raise AudioDecodeError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _byterate, _align, bits = fmt
    if channels not in (1, 2):
        raise AudioDecodeError(f"{path}: unsupported channel count {channels}")

    if tag == _FMT_PCM and bits == 16:
        samples = np.frombuffer(data[:len(data) - len(data) % 2], dtype="<i2")
        samples = samples.astype(np.float64) / 32768.0
    elif tag == _FMT_FLOAT and bits == 32:
        samples = np.frombuffer(data[:len(data) - len(data) % 4], dtype="<f4")
        samples = np.clip(samples.astype(np.float64), -1.0, 1.0)
    else:
        raise AudioDecodeError(
            f"{path}: unsupported encoding (format tag {tag}, {bits}-bit); "
            "expected 16-bit PCM or 32-bit float")

    usable = samples.size - samples.size % channels
    return Waveform(samples[:usable], sample_rate=rate, channels=channels)


def write_wav_pcm16(path, w: Waveform) -> None:
    """Write 16-bit PCM. Quantizes with round-half-away and saturation."""
    from .ioutil import atomic_write_bytes

    x = np.clip(w.samples, -1.0, 1.0)
    pcm = np.clip(np.floor(x * 32768.0 + 0.5), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    block = 2 * w.channels
    header = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    header += b"fmt " + struct.pack("<IHHIIHH", 16, _FMT_PCM, w.channels,
                                    w.sample_rate, w.sample_rate * block, block, 16)
    header += b"data" + struct.pack("<I", len(payload))
    atomic_write_bytes(path, header + payload)


# ------------------------------------------------------------------ pipeline

def to_mono(w: Waveform) -> Waveform:
    """Average stereo frames; mono passes through unchanged."""
    if w.channels == 1:
        return w
    if w.channels != 2:
        raise AudioDecodeError(f"unsupported channel count {w.channels}")
    folded = w.samples.reshape(-1, 2).mean(axis=1)
    return Waveform(folded, sample_rate=w.sample_rate, channels=1)


def resample(w: Waveform, target: int = TARGET_RATE) -> Waveform:
    """Polyphase band-limited resampling; preserves duration within a sample."""
    if w.channels != 1:
        raise ContractError("resample expects a mono waveform; call to_mono first")
    if target <= 0:
        raise ContractError(f"target rate must be positive, got {target}")
    if w.sample_rate == target:
        return Waveform(w.samples.copy(), sample_rate=target, channels=1)
    if w.samples.size == 0:
        return Waveform(np.zeros(0), sample_rate=target, channels=1)
    g = math.gcd(w.sample_rate, target)
    y = resample_poly(w.samples, target // g, w.sample_rate // g)
    return Waveform(np.clip(y, -1.0, 1.0), sample_rate=target, channels=1)


def _hann(n: int) -> np.ndarray:
    # periodic (DFT-even) Hann
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(w: Waveform, p: StftParams | None = None) -> np.ndarray:
    """Magnitude spectrogram of non-overlapping Hann-windowed frames.

    Returns frames x bins with bins = window/2 + 1. Inputs shorter than
    one window are zero-padded to a single frame.
    """
    if p is None:
        p = StftParams()
    if w.channels != 1:
        raise ContractError("stft_magnitude expects a mono waveform")
    win = p.window_samples(w.sample_rate)
    hop = p.hop_samples(w.sample_rate)
    x = w.samples
    if x.size < win:
        x = np.pad(x, (0, win - x.size))
    n_frames = (x.size - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * _hann(win)[None, :]
    return np.abs(np.fft.rfft(frames, axis=1))


def mel_of(f):
    """Perceptual mel scale: mel(f) = 2595 log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def hz_of(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


_FILTERBANK_CACHE: dict = {}


def mel_filterbank(n_bands: int, n_bins: int, rate: int, window: int) -> np.ndarray:
    """Triangular filters with edges equally spaced in mel over [0, rate/2].

    Sampled at the bin center frequencies, peak weight 1 (HTK style).
    With a 240-sample window the 100 Hz bin spacing exceeds the width of
    the lowest filters, so some low bands are identically zero; that is a
    consequence of the fixed 10 ms window, not a bug.
    """
    key = (n_bands, n_bins, rate, window)
    fb = _FILTERBANK_CACHE.get(key)
    if fb is not None:
        return fb
    edges_hz = hz_of(np.linspace(0.0, float(mel_of(rate / 2.0)), n_bands + 2))
    bin_hz = np.arange(n_bins) * rate / window
    fb = np.zeros((n_bands, n_bins))
    for m in range(n_bands):
        lo, center, hi = edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    _FILTERBANK_CACHE[key] = fb
    return fb


def _resize_time(values: np.ndarray, target: int) -> np.ndarray:
    """Linear interpolation of the frame axis onto ``target`` points."""
    bands, frames = values.shape
    if frames == target:
        return values.copy()
    if frames == 1:
        return np.repeat(values, target, axis=1)
    pos = np.linspace(0.0, frames - 1.0, target)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, frames - 1)
    w = pos - lo
    return values[:, lo] * (1.0 - w) + values[:, hi] * w


def mel_scale(spec: np.ndarray, p: StftParams | None = None,
              rate: int = TARGET_RATE) -> MelSpectrogram:
    """Apply the mel filterbank per frame, then fit the whole clip onto
    ``target_frames`` time steps."""
    if p is None:
        p = StftParams()
    spec = np.asarray(spec, dtype=np.float64)
    if spec.ndim != 2:
        raise ContractError(f"mel_scale expects frames x bins, got shape {spec.shape}")
    if spec.shape[0] < 2:
        warnings.warn("mel_scale: fewer than 2 frames; padding by repetition",
                      stacklevel=2)
        spec = np.repeat(spec, 2, axis=0)[:2]
    fb = mel_filterbank(p.n_bands, spec.shape[1], rate, p.window_samples(rate))
    banded = fb @ spec.T  # bands x frames
    values = _resize_time(banded, p.target_frames)
    if p.log_compress:
        values = np.log1p(values)
    return MelSpectrogram(values=values, source_rate=rate, params=p)


def process(w: Waveform, p: StftParams | None = None) -> MelSpectrogram:
    """Full pipeline: mono -> 24 kHz -> windowed magnitudes -> mel 256x256."""
    if p is None:
        p = StftParams()
    mono = to_mono(w)
    at_rate = resample(mono, TARGET_RATE)
    spec = stft_magnitude(at_rate, p)
    return mel_scale(spec, p, rate=TARGET_RATE)
