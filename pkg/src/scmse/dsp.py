"""STFT analysis/synthesis (25 ms periodic Hann, 50% overlap at 48 kHz) and power compression."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .audio_io import SAMPLE_RATE, AudioClip

EPS_MAG = 1e-12


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 1200
    hop: int = 600
    fft_len: int = 1200
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.fft_len != self.win_len:
            raise ValueError("fft_len must equal win_len")
        if 2 * self.hop != self.win_len:
            raise ValueError("hop must be win_len / 2")

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def bin_hz(self) -> float:
        return self.sample_rate / self.fft_len

    def window(self) -> np.ndarray:
        n = np.arange(self.win_len)
        return 0.5 - 0.5 * np.cos(2 * np.pi * n / self.win_len)

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.win_len) // self.hop + 1


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # (T, F) complex
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 2 or self.data.shape[1] != self.config.n_bins:
            raise ValueError(f"spectrogram must be T x {self.config.n_bins}, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("spectrogram contains non-finite values")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]


@dataclass
class CompressedSpectrum:
    real_c: np.ndarray
    imag_c: np.ndarray
    mag_c: np.ndarray
    gamma: float


def frame_signal(x: np.ndarray, config: StftConfig) -> np.ndarray:
    n_frames = config.n_frames(len(x))
    idx = np.arange(config.win_len)[None, :] + config.hop * np.arange(n_frames)[:, None]
    return x[idx]


def stft(clip: AudioClip | np.ndarray, config: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Unnormalized STFT; frame n covers samples [n*hop, n*hop + win_len), no centering."""
    x = clip.samples if isinstance(clip, AudioClip) else np.asarray(clip, dtype=np.float64)
    if len(x) < config.win_len:
        raise ValueError(f"signal of {len(x)} samples is shorter than one window ({config.win_len})")
    frames = frame_signal(x, config) * config.window()
    return ComplexSpectrogram(np.fft.rfft(frames, n=config.fft_len, axis=-1), config)


def istft(spec: ComplexSpectrogram, length: int | None = None) -> np.ndarray:
    """Weighted overlap-add inverse with the analysis window as synthesis window.

    The overlap-added signal is divided by the summed squared window, floored at the
    smallest value that sum takes where frames fully overlap. Interior samples are
    therefore reconstructed exactly, while the first and last half-window, covered
    by a single tapered frame, are attenuated instead of divided by a near-zero
    window sum (which would amplify any spectral modification without bound).
    Returns raw samples rather than an AudioClip so short or edge-trimmed outputs
    are allowed.
    """
    cfg = spec.config
    frames = np.fft.irfft(spec.data, n=cfg.fft_len, axis=-1)[:, : cfg.win_len]
    win = cfg.window()
    n_frames = frames.shape[0]
    total = (n_frames - 1) * cfg.hop + cfg.win_len
    out = np.zeros(total)
    wsum = np.zeros(total)
    for n in range(n_frames):
        sl = slice(n * cfg.hop, n * cfg.hop + cfg.win_len)
        out[sl] += frames[n] * win
        wsum[sl] += win**2
    out /= np.maximum(wsum, overlap_floor(cfg))
    if length is not None:
        out = out[:length] if length <= total else np.pad(out, (0, length - total))
    return out


def overlap_floor(cfg: StftConfig) -> float:
    """Minimum of the steady-state summed squared window (0.5 for 50 % Hann)."""
    w2 = cfg.window() ** 2
    steady = np.zeros(cfg.hop)
    for start in range(0, cfg.win_len, cfg.hop):
        chunk = w2[start : start + cfg.hop]
        steady[: len(chunk)] += chunk
    return float(steady.min())


def power_compress(spec: ComplexSpectrogram | np.ndarray, gamma: float = 1.0 / 3.0) -> CompressedSpectrum:
    """|S|^gamma magnitude with the phase of S carried onto real/imag parts."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma {gamma} outside (0, 1]")
    s = spec.data if isinstance(spec, ComplexSpectrogram) else np.asarray(spec, dtype=np.complex128)
    mag = np.abs(s)
    safe = np.maximum(mag, EPS_MAG)
    mag_c = np.where(mag > EPS_MAG, safe**gamma, 0.0)
    return CompressedSpectrum(mag_c * s.real / safe, mag_c * s.imag / safe, mag_c, gamma)


def dump_spectrogram_csv(spec: ComplexSpectrogram, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "bin", "re", "im"])
        for n, k in np.ndindex(spec.data.shape):
            v = spec.data[n, k]
            w.writerow([n, k, repr(float(v.real)), repr(float(v.imag))])
