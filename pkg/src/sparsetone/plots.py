"""Waveform and log-Mel spectrogram figures for adversarial example audits."""

from __future__ import annotations

from pathlib import Path

import numpy as np

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
from scipy.signal import stft


def _mel_filterbank(n_mels, n_fft, rate, fmin=0.0, fmax=None):
    fmax = fmax or rate / 2
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + f / 700.0)
    def mel_to_hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    mel_pts = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_pts = mel_to_hz(mel_pts)
    bins = np.floor((n_fft + 1) * hz_pts / rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, ctr, hi = bins[m - 1], bins[m], bins[m + 1]
        for k in range(lo, ctr):
            if ctr > lo:
                fb[m - 1, k] = (k - lo) / (ctr - lo)
        for k in range(ctr, hi):
            if hi > ctr:
                fb[m - 1, k] = (hi - k) / (hi - ctr)
    return fb


def log_mel_spectrogram(samples, rate, n_fft=512, n_mels=64):
    _, _, spec = stft(samples, fs=rate, nperseg=n_fft, noverlap=n_fft // 2)
    power = np.abs(spec) ** 2
    mel = _mel_filterbank(n_mels, n_fft, rate) @ power
    return 10.0 * np.log10(np.maximum(mel, 1e-10))


def plot_waveform_pair(x, x_adv, rate, out_path):
    """Side-by-side waveforms and log-Mel spectrograms of a clip and its attack."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    t = np.arange(len(x)) / rate
    fig, axes = plt.subplots(2, 2, figsize=(10, 6))
    for col, (sig, title) in enumerate(((x, "original"), (x_adv, "adversarial"))):
        axes[0, col].plot(t, sig, linewidth=0.4)
        axes[0, col].set_title(f"{title} waveform")
        axes[0, col].set_ylim(-1, 1)
        mel = log_mel_spectrogram(np.asarray(sig, dtype=np.float64), rate)
        axes[1, col].imshow(mel, aspect="auto", origin="lower", cmap="magma")
        axes[1, col].set_title(f"{title} log-Mel")
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return out_path


def plot_attack_examples(generator, clips, out_dir):
    """Emit one waveform/spectrogram comparison figure per clip."""
    from .generator import generate
    out_dir = Path(out_dir)
    written = []
    for clip in clips:
        _, x_adv = generate(generator, clip.samples, mode="infer")
        written.append(plot_waveform_pair(clip.samples, x_adv, clip.sample_rate,
                                          out_dir / f"{clip.clip_id}.png"))
    return written
