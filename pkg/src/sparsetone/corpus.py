"""Corpus handling: manifest ingestion, synthetic tone corpus, preprocessing.

All waveforms are mono float32 arrays with amplitudes in [-1, 1] at a fixed
sample rate (16 kHz after preprocessing). Short clips are unified to a target
length by cyclic repetition, long ones by keeping the head of the clip.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

SPLITS = ("train", "val", "test")
DEFAULT_SAMPLE_RATE = 16000

# Peak level ingested real audio is normalized to, so the perturbation bound
# epsilon is comparable across clips.
PEAK_NORM = 0.95


class ManifestError(ValueError):
    """Malformed corpus manifest (bad header, label, split, or empty)."""


class IngestionError(ValueError):
    """Audio referenced by a manifest could not be ingested."""


@dataclass
class AudioClip:
    """A fixed-rate mono waveform plus label metadata."""

    samples: np.ndarray
    sample_rate: int
    label: int
    clip_id: str
    split: str

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError(f"clip {self.clip_id!r}: samples must be a nonempty 1-D array")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-6:
            raise ValueError(f"clip {self.clip_id!r}: peak amplitude {peak:.4f} exceeds 1.0")
        if self.split not in SPLITS:
            raise ValueError(f"clip {self.clip_id!r}: unknown split {self.split!r}")
        if self.label < 0:
            raise ValueError(f"clip {self.clip_id!r}: negative label index")

    def __len__(self):
        return int(self.samples.shape[0])


@dataclass
class ManifestEntry:
    path: str
    label: str
    split: str


@dataclass
class CorpusManifest:
    """Parsed manifest: entries plus corpus-level settings."""

    entries: list[ManifestEntry]
    class_names: list[str]
    target_duration_s: float | None = None
    sample_rate: int = DEFAULT_SAMPLE_RATE
    root: Path = field(default_factory=Path)

    def label_index(self, label: str) -> int:
        return self.class_names.index(label)

    @property
    def target_len(self) -> int | None:
        if self.target_duration_s is None:
            return None
        return int(round(self.target_duration_s * self.sample_rate))


def load_manifest(path, class_names=None, target_duration_s=None,
                  sample_rate=DEFAULT_SAMPLE_RATE, check_files=True) -> CorpusManifest:
    """Parse a `path,label,split` CSV manifest.

    Paths are relative to the manifest's directory. When `class_names` is
    given, labels outside it are rejected; otherwise classes are the sorted
    set of labels seen. Raises ManifestError naming the offending data row
    (1-based) on bad splits or labels, IngestionError on missing audio files.
    """
    path = Path(path)
    root = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty manifest") from None
        if [h.strip() for h in header] != ["path", "label", "split"]:
            raise ManifestError(f"{path}: header must be 'path,label,split', got {header}")
        entries = []
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ManifestError(f"{path}: row {row_no}: expected 3 columns, got {len(row)}")
            rel, label, split = (c.strip() for c in row)
            if split not in SPLITS:
                raise ManifestError(f"{path}: row {row_no}: unknown split {split!r}")
            if class_names is not None and label not in class_names:
                raise ManifestError(f"{path}: row {row_no}: unknown label {label!r}")
            entries.append(ManifestEntry(rel, label, split))
    if not entries:
        raise ManifestError(f"{path}: empty manifest")
    if check_files:
        for i, entry in enumerate(entries, start=1):
            if not (root / entry.path).exists():
                raise IngestionError(f"{path}: row {i}: audio file not found: {entry.path}")
    names = list(class_names) if class_names is not None else sorted({e.label for e in entries})
    if len(names) < 2:
        raise ManifestError(f"{path}: need at least 2 classes, got {names}")
    return CorpusManifest(entries, names, target_duration_s, sample_rate, root)


def read_wav(path):
    """Read a 16-bit PCM mono WAV file as (float32 samples in [-1, 1], rate)."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise IngestionError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype != np.int16:
        raise IngestionError(f"{path}: expected 16-bit PCM, got dtype {data.dtype}")
    return (data.astype(np.float32) / 32768.0), int(rate)


def write_wav(path, samples, sample_rate):
    """Write float samples in [-1, 1] as 16-bit PCM mono WAV.

    Scaling matches the reader (x32768), so a round trip stays within half a
    quantization step except at exactly +1.0.
    """
    samples = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(path, int(sample_rate), pcm)


def pad_or_trim(clip: AudioClip, target_len: int) -> AudioClip:
    """Unify clip length: repeat cyclically if short, keep the head if long."""
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    x = clip.samples
    n = x.shape[0]
    if n == target_len:
        out = x.copy()
    elif n > target_len:
        out = x[:target_len].copy()
    else:
        reps = math.ceil(target_len / n)
        out = np.tile(x, reps)[:target_len]
    return replace(clip, samples=out)


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resample to target_rate, clamping amplitudes back to [-1, 1]."""
    if target_rate <= 0 or clip.sample_rate <= 0:
        raise ValueError("sample rates must be positive")
    if target_rate == clip.sample_rate:
        return replace(clip, samples=clip.samples.copy())
    g = math.gcd(target_rate, clip.sample_rate)
    out = resample_poly(clip.samples.astype(np.float64), target_rate // g, clip.sample_rate // g)
    out = np.clip(out, -1.0, 1.0).astype(np.float32)
    return replace(clip, samples=out, sample_rate=target_rate)


def peak_normalize(samples: np.ndarray, peak: float = PEAK_NORM) -> np.ndarray:
    """Scale so max |x| == peak (no-op on silent input)."""
    m = float(np.max(np.abs(samples)))
    if m == 0.0:
        return samples.astype(np.float32)
    return (samples * (peak / m)).astype(np.float32)


_HARMONIC_AMPS = (1.0, 0.5, 0.25)
_TONE_PEAK = 0.75
_NOISE_SNR_DB = 20.0
_BURST_S = 0.06


def synthesize_corpus(seed: int, n_per_class: int, classes: int, duration_s: float,
                      sample_rate: int = DEFAULT_SAMPLE_RATE) -> list[AudioClip]:
    """Generate a deterministic labeled corpus of pulsed harmonic tones.

    Class k is a harmonic tone with fundamental 150 + 60k Hz, gated by a
    Hann-windowed pulse-train amplitude modulation at the class rate
    2 + 1.5k pulses per second, over a 20 dB-SNR Gaussian noise bed. Burst
    amplitudes, counts, positions, and ~3% fundamental jitter vary per clip.
    Keeping the class evidence in short bursts (instead of a steady tone)
    puts it within reach of sparse, amplitude-bounded perturbations, which is
    what the attack suites measure. Splits are assigned 60/20/20 per class by
    a seeded shuffle. Pure function of its arguments: the same seed
    reproduces the corpus bitwise.
    """
    if not (2 <= classes <= 8):
        raise ValueError("classes must be in [2, 8]")
    if duration_s <= 0 or n_per_class <= 0:
        raise ValueError("duration_s and n_per_class must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    burst_len = min(int(_BURST_S * sample_rate), max(n // 5, 16))
    t_burst = np.arange(burst_len, dtype=np.float64) / sample_rate
    window = np.hanning(burst_len)
    n_train = int(n_per_class * 0.6)
    n_val = int(n_per_class * 0.2)
    clips = []
    for k in range(classes):
        f0_base = 150.0 + 60.0 * k
        pulse_rate = 2.0 + 1.5 * k
        order = rng.permutation(n_per_class)
        split_of = {}
        for rank, idx in enumerate(order):
            split_of[int(idx)] = ("train" if rank < n_train
                                  else "val" if rank < n_train + n_val else "test")
        for i in range(n_per_class):
            sig = np.zeros(n, dtype=np.float64)
            n_bursts = max(1, int(round(pulse_rate * duration_s))
                           + int(rng.integers(-1, 2)))
            for _ in range(n_bursts):
                f0 = f0_base * (1.0 + rng.uniform(-0.03, 0.03))
                amp = rng.uniform(0.3, 1.0)
                phases = rng.uniform(0.0, 2.0 * np.pi, size=len(_HARMONIC_AMPS))
                burst = np.zeros(burst_len, dtype=np.float64)
                for h, ha in enumerate(_HARMONIC_AMPS):
                    burst += ha * np.sin(2.0 * np.pi * f0 * (h + 1) * t_burst + phases[h])
                start = int(rng.integers(0, n - burst_len + 1))
                sig[start:start + burst_len] += amp * window * burst / sum(_HARMONIC_AMPS)
            sig *= _TONE_PEAK / np.max(np.abs(sig))
            noise_std = np.sqrt(np.mean(sig**2)) / (10.0 ** (_NOISE_SNR_DB / 20.0))
            sig = sig + rng.standard_normal(n) * noise_std
            clips.append(AudioClip(
                samples=np.clip(sig, -1.0, 1.0).astype(np.float32),
                sample_rate=sample_rate,
                label=k,
                clip_id=f"syn-{k}-{i:04d}",
                split=split_of[i],
            ))
    return clips


def export_corpus(clips: list[AudioClip], out_dir, class_names: list[str]) -> Path:
    """Write clips as WAV files plus a `manifest.csv`; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", "label", "split"])
        for clip in clips:
            rel = f"{clip.clip_id}.wav"
            write_wav(out_dir / rel, clip.samples, clip.sample_rate)
            writer.writerow([rel, class_names[clip.label], clip.split])
    return manifest_path


def load_corpus(manifest: CorpusManifest, normalize: bool = True) -> list[AudioClip]:
    """Ingest all manifest entries, preprocessed to the manifest's rate and length.

    Pipeline per clip: read WAV, resample to manifest.sample_rate, optionally
    peak-normalize to 0.95, then pad-or-trim to the target length.
    """
    target_len = manifest.target_len
    clips = []
    for i, entry in enumerate(manifest.entries, start=1):
        path = manifest.root / entry.path
        try:
            samples, rate = read_wav(path)
        except FileNotFoundError:
            raise IngestionError(f"row {i}: audio file not found: {entry.path}") from None
        clip = AudioClip(samples, rate, manifest.label_index(entry.label),
                         Path(entry.path).stem, entry.split)
        clip = resample(clip, manifest.sample_rate)
        if normalize:
            clip = replace(clip, samples=peak_normalize(clip.samples))
        if target_len is not None:
            clip = pad_or_trim(clip, target_len)
        clips.append(clip)
    return clips


def split_clips(clips: list[AudioClip], split: str) -> list[AudioClip]:
    if split not in SPLITS:
        raise ValueError(f"unknown split {split!r}")
    return [c for c in clips if c.split == split]
