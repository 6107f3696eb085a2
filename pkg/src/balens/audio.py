"""Audio front end: resampling, endpoint trimming, peak normalization,
log-mel segments and per-modality embeddings.

Geometry follows the common 16 kHz / 25 ms / 10 ms / 64-band convention
with non-overlapping 0.96 s segments of 96 frames. The segment embedding is
the per-band mean and standard deviation over the segment's frames (128
values); segments are then average-pooled into one vector per modality, and
the three modalities are concatenated in the order breathing, cough, speech.
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioError, DataError

TARGET_RATE = 16_000
WINDOW = 400  # 25 ms
HOP = 160  # 10 ms
FFT_SIZE = 512
N_MELS = 64
MEL_LOW_HZ = 125.0
MEL_HIGH_HZ = 7500.0
LOG_OFFSET = 0.01
FRAMES_PER_SEGMENT = 96
SEGMENT_SAMPLES = FRAMES_PER_SEGMENT * HOP  # 0.96 s
EMBEDDING_DIM = 2 * N_MELS
TRIM_DB = -40.0
KAISER_BETA = 8.6

MODALITIES = ("breathing", "cough", "speech")


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    modality: str = "speech"

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim == 2:
            x = x.mean(axis=1)
        if x.ndim != 1:
            raise AudioError("audio samples must be 1-D (mono) or 2-D (frames x channels)")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")
        if self.modality not in MODALITIES:
            raise AudioError(f"unknown modality {self.modality!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class MelSegmentGrid:
    values: np.ndarray  # (n_segments, 96, 64)

    @property
    def n_segments(self) -> int:
        return self.values.shape[0]


def read_wav(path: str | os.PathLike, modality: str = "speech") -> AudioClip:
    """Load 8/16/24/32-bit PCM or float WAV, scaled to [-1, 1]; stereo averaged to mono."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise AudioError(f"{path}: unreadable WAV ({exc})") from None
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data / 32768.0
    elif data.dtype == np.int32:
        # 24-bit files are left-justified into int32 by scipy
        x = data / 2147483648.0
    elif np.issubdtype(data.dtype, np.floating):
        x = data.astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(x, int(rate), modality)


def write_wav(path: str | os.PathLike, clip: AudioClip, float32: bool = False) -> None:
    if float32:
        wavfile.write(path, clip.sample_rate, clip.samples.astype(np.float32))
    else:
        pcm = np.clip(np.round(clip.samples * 32767.0), -32768, 32767).astype(np.int16)
        wavfile.write(path, clip.sample_rate, pcm)


def resample(x: np.ndarray, rate: int, target: int = TARGET_RATE) -> np.ndarray:
    """Polyphase windowed-sinc resampling with a Kaiser window."""
    if rate == target:
        return np.asarray(x, dtype=np.float64)
    ratio = Fraction(target, rate)
    return resample_poly(x, ratio.numerator, ratio.denominator, window=("kaiser", KAISER_BETA))


def trim_silence(x: np.ndarray, frame: int = HOP, threshold_db: float = TRIM_DB) -> np.ndarray:
    """Drop leading and trailing 10 ms frames whose RMS is below ``threshold_db`` re. the peak."""
    peak = np.max(np.abs(x)) if x.size else 0.0
    if peak == 0.0:
        raise AudioError("all-silent clip")
    n_frames = -(-x.size // frame)
    padded = np.zeros(n_frames * frame)
    padded[: x.size] = x
    lengths = np.full(n_frames, frame)
    lengths[-1] = x.size - frame * (n_frames - 1)
    rms = np.sqrt((padded.reshape(n_frames, frame) ** 2).sum(axis=1) / lengths)
    loud = np.flatnonzero(rms >= peak * 10.0 ** (threshold_db / 20.0))
    return x[loud[0] * frame: min(x.size, (loud[-1] + 1) * frame)]


def preprocess(clip: AudioClip) -> AudioClip:
    """Resample to 16 kHz mono, trim leading/trailing silence, scale the peak to 1."""
    if clip.samples.size == 0:
        raise AudioError("empty clip")
    x = resample(clip.samples, clip.sample_rate)
    x = trim_silence(x)
    peak = np.max(np.abs(x))
    x = x / peak
    if x.size < SEGMENT_SAMPLES:
        raise AudioError(
            f"{clip.modality} clip too short after trimming: {x.size / TARGET_RATE:.3f} s < 0.96 s"
        )
    return AudioClip(x, TARGET_RATE, clip.modality)


def _hz_to_mel(f):
    return 1127.0 * np.log1p(np.asarray(f, dtype=np.float64) / 700.0)


def mel_filterbank(
    n_mels: int = N_MELS,
    n_fft: int = FFT_SIZE,
    rate: int = TARGET_RATE,
    low: float = MEL_LOW_HZ,
    high: float = MEL_HIGH_HZ,
) -> np.ndarray:
    """Triangular HTK-mel weights, shape ``(n_fft // 2 + 1, n_mels)``; DC bin zeroed."""
    n_bins = n_fft // 2 + 1
    bin_mel = _hz_to_mel(np.linspace(0.0, rate / 2.0, n_bins))
    edges = np.linspace(_hz_to_mel(low), _hz_to_mel(high), n_mels + 2)
    W = np.empty((n_bins, n_mels))
    for i in range(n_mels):
        lo, mid, hi = edges[i:i + 3]
        up = (bin_mel - lo) / (mid - lo)
        down = (hi - bin_mel) / (hi - mid)
        W[:, i] = np.maximum(0.0, np.minimum(up, down))
    W[0, :] = 0.0
    return W


_MEL = mel_filterbank()
_WINDOW = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WINDOW) / WINDOW)  # periodic Hann


def log_mel_frames(x: np.ndarray) -> np.ndarray:
    """Log-mel frames, shape ``(len(x) // 160, 64)``.

    Frames start every 10 ms; the tail is zero-padded by 15 ms so the last
    frame starting inside the signal is complete.
    """
    n_frames = x.size // HOP
    if n_frames == 0:
        return np.empty((0, N_MELS))
    padded = np.zeros((n_frames - 1) * HOP + WINDOW)
    m = min(x.size, padded.size)
    padded[:m] = x[:m]
    frames = np.lib.stride_tricks.sliding_window_view(padded, WINDOW)[::HOP][:n_frames]
    spec = np.abs(np.fft.rfft(frames * _WINDOW, n=FFT_SIZE, axis=1))
    return np.log(spec @ _MEL + LOG_OFFSET)


def mel_segments(clip: AudioClip) -> MelSegmentGrid:
    """Non-overlapping 96-frame segments; a trailing partial segment is dropped."""
    if clip.sample_rate != TARGET_RATE:
        raise AudioError(f"mel_segments expects {TARGET_RATE} Hz audio; preprocess first")
    frames = log_mel_frames(clip.samples)
    n_seg = frames.shape[0] // FRAMES_PER_SEGMENT
    if n_seg == 0:
        raise AudioError(f"{clip.modality} clip yields no complete 0.96 s segment")
    values = frames[: n_seg * FRAMES_PER_SEGMENT].reshape(n_seg, FRAMES_PER_SEGMENT, N_MELS)
    values.setflags(write=False)
    return MelSegmentGrid(values)


def embed_modality(grid: MelSegmentGrid) -> np.ndarray:
    """Per-segment band means and standard deviations, averaged over segments (128 values)."""
    if grid.n_segments < 1:
        raise AudioError("no segments to embed")
    per_segment = np.concatenate([grid.values.mean(axis=1), grid.values.std(axis=1)], axis=1)
    return per_segment.mean(axis=0)


def fuse_modalities(breathing, cough, speech) -> np.ndarray:
    """Concatenate the three modality embeddings, breathing then cough then speech."""
    parts = []
    for name, emb in zip(MODALITIES, (breathing, cough, speech)):
        if emb is None:
            raise AudioError(f"missing {name} embedding")
        e = np.asarray(emb, dtype=np.float64)
        if e.shape != (EMBEDDING_DIM,):
            raise AudioError(f"{name} embedding has shape {e.shape}, expected ({EMBEDDING_DIM},)")
        parts.append(e)
    return np.concatenate(parts)


def clip_features(clip: AudioClip) -> np.ndarray:
    return embed_modality(mel_segments(preprocess(clip)))


# -- manifests -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    id: str
    user_id: str
    label: int
    paths: tuple[Path, Path, Path]  # breathing, cough, speech
    line: int


def read_manifest(path: str | os.PathLike) -> list[ManifestRow]:
    """Comma-delimited ``id,user_id,label,breathing,cough,speech``; relative paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    rows = []
    try:
        fh = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        need = {"id", "user_id", "label", *MODALITIES}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise DataError(f"{path}: manifest lacks columns {sorted(missing)}")
        for rec in reader:
            try:
                label = int(rec["label"])
            except ValueError:
                raise DataError(f"{path}:{reader.line_num}: malformed label {rec['label']!r}") from None
            if label not in (0, 1):
                raise DataError(f"{path}:{reader.line_num}: label must be 0 or 1")
            paths = tuple(base / rec[m] for m in MODALITIES)
            rows.append(ManifestRow(rec["id"], rec["user_id"], label, paths, reader.line_num))
    if not rows:
        raise DataError(f"{path}: empty manifest")
    return rows


def submission_features(row: ManifestRow) -> np.ndarray:
    embs = [clip_features(read_wav(p, m)) for p, m in zip(row.paths, MODALITIES)]
    return fuse_modalities(*embs)
