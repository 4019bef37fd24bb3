"""48 kHz mono audio: WAV read/write, synthetic clip generation and SNR mixing."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 48000
MIN_SAMPLES = 1200
SNR_RANGE = (-5.0, 15.0)
CLIP_KINDS = ("speechlike", "white", "pink")


class WavFormatError(ValueError):
    """Raised for WAV files outside the supported 48 kHz mono PCM16/float32 subset."""


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"sample_rate {self.sample_rate} != {SAMPLE_RATE}")
        if self.samples.ndim != 1:
            raise ValueError("audio clips are mono; got shape %s" % (self.samples.shape,))
        if len(self.samples) < MIN_SAMPLES:
            raise ValueError(f"clip has {len(self.samples)} samples, need at least {MIN_SAMPLES}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("clip contains non-finite samples")

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2))


@dataclass(frozen=True)
class MixtureRecipe:
    clean_id: str
    noise_id: str
    snr_db: float
    seed: int

    def __post_init__(self):
        lo, hi = SNR_RANGE
        if not lo <= self.snr_db <= hi:
            raise ValueError(f"snr_db {self.snr_db} outside [{lo}, {hi}]")
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


def read_wav(path) -> AudioClip:
    """Read a 48 kHz mono PCM16 or float32 WAV file.

    PCM16 samples are divided by 32768, float32 samples are returned as stored.
    """
    try:
        rate, data = wavfile.read(str(path))
    except FileNotFoundError:
        raise
    except (ValueError, EOFError, OSError) as exc:
        raise WavFormatError(f"{path}: malformed WAV header ({exc})") from exc
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"sample_rate {rate} != {SAMPLE_RATE}")
    if data.ndim != 1:
        raise WavFormatError(f"{path}: expected mono, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, rate)


def write_wav(path, clip: AudioClip, fmt: str = "float32") -> None:
    """Write ``clip`` as float32 (lossless for float32 data) or PCM16."""
    samples = np.asarray(clip.samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ValueError("refusing to write non-finite samples")
    if fmt == "float32":
        data = samples.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown WAV format {fmt!r}; use 'float32' or 'pcm16'")
    wavfile.write(str(path), clip.sample_rate, data)


def _normalize_peak(x: np.ndarray, peak: float = 0.9) -> np.ndarray:
    return x * (peak / np.max(np.abs(x)))


def synth_clip(kind: str, duration_s: float, seed: int) -> AudioClip:
    """Deterministic synthetic clip, peak-normalized to 0.9.

    ``speechlike`` is a sum of 3-6 harmonics of a random f0 in [80, 300] Hz under a
    slow (syllable-rate) amplitude envelope; ``white`` is Gaussian noise; ``pink``
    is Gaussian noise shaped to a 1/f power spectrum.
    """
    if kind not in CLIP_KINDS:
        raise ValueError(f"unknown clip kind {kind!r}; expected one of {CLIP_KINDS}")
    if not 0.5 <= duration_s <= 10.0:
        raise ValueError(f"duration_s {duration_s} outside [0.5, 10]")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    if kind == "speechlike":
        f0 = rng.uniform(80.0, 300.0)
        n_harm = int(rng.integers(3, 7))
        x = np.zeros(n)
        for h in range(1, n_harm + 1):
            x += rng.uniform(0.5, 1.0) / h * np.sin(2 * np.pi * h * f0 * t + rng.uniform(0, 2 * np.pi))
        rate = rng.uniform(2.0, 6.0)
        envelope = 0.55 + 0.45 * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        x *= envelope
    elif kind == "white":
        x = rng.standard_normal(n)
    else:
        spectrum = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1.0 / SAMPLE_RATE)
        shaping = np.zeros_like(freqs)
        shaping[1:] = 1.0 / np.sqrt(freqs[1:])
        x = np.fft.irfft(spectrum * shaping, n)
    return AudioClip(_normalize_peak(x), SAMPLE_RATE)


class Mixture(NamedTuple):
    noisy: AudioClip
    noise: AudioClip
    clean: AudioClip


def fit_noise(noise: np.ndarray, length: int, seed: int) -> np.ndarray:
    """Tile short noise; take a seeded random window of long noise."""
    noise = np.asarray(noise, dtype=np.float64)
    if len(noise) < length:
        reps = -(-length // len(noise))
        return np.tile(noise, reps)[:length]
    offset = int(np.random.default_rng(seed).integers(0, len(noise) - length + 1))
    return noise[offset : offset + length]


def mix_at_snr(clean: AudioClip, noise: AudioClip, snr_db: float, seed: int = 0) -> Mixture:
    """Scale ``noise`` so that 10*log10(P_clean / P_noise) == snr_db and add it.

    If the mixture would clip, clean and noise are rescaled jointly to peak 0.99,
    which leaves the SNR unchanged. The returned ``clean`` is the training target
    (equal to the input clean unless that rescale happened).
    """
    c = np.asarray(clean.samples, dtype=np.float64)
    n = fit_noise(noise.samples, len(c), seed)
    p_clean = np.mean(c**2)
    p_noise = np.mean(n**2)
    if p_clean <= 0:
        raise ValueError("clean signal is silent")
    if p_noise <= 0:
        raise ValueError("noise signal is silent")
    n = n * np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0)))
    noisy = c + n
    peak = np.max(np.abs(noisy))
    if peak > 1.0:
        g = 0.99 / peak
        c, n, noisy = c * g, n * g, noisy * g
    return Mixture(AudioClip(noisy), AudioClip(n), AudioClip(c))


def measured_snr(clean: np.ndarray, noise: np.ndarray) -> float:
    return float(10.0 * np.log10(np.mean(np.square(clean)) / np.mean(np.square(noise))))


# Dataset directory: <root>/clean/*.wav, <root>/noise/*.wav, <root>/recipes.csv

RECIPE_HEADER = ["clean_id", "noise_id", "snr_db", "seed"]


def write_recipes(path, recipes) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RECIPE_HEADER)
        for r in recipes:
            w.writerow([r.clean_id, r.noise_id, repr(float(r.snr_db)), r.seed])


def read_recipes(path) -> list[MixtureRecipe]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RECIPE_HEADER:
            raise ValueError(f"{path}: expected header {','.join(RECIPE_HEADER)}")
        return [
            MixtureRecipe(row["clean_id"], row["noise_id"], float(row["snr_db"]), int(row["seed"]))
            for row in reader
        ]


def synth_dataset(
    root,
    n_clips: int,
    snr_min: float = -5.0,
    snr_max: float = 15.0,
    seed: int = 0,
    duration_s: float = 1.0,
) -> list[MixtureRecipe]:
    """Write a synthetic dataset: speechlike clean clips, white/pink noise, recipes.

    Mixtures and their (possibly rescaled) clean targets are also written to
    ``noisy/`` and ``reference/`` for the evaluation tooling.
    """
    root = Path(root)
    for sub in ("clean", "noise", "noisy", "reference"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    recipes = []
    for i in range(n_clips):
        clean_id = f"clean_{i:03d}"
        noise_id = f"noise_{i:03d}"
        kind = "white" if i % 2 == 0 else "pink"
        clip_seed = int(rng.integers(0, 2**31))
        write_wav(root / "clean" / f"{clean_id}.wav", synth_clip("speechlike", duration_s, clip_seed))
        write_wav(root / "noise" / f"{noise_id}.wav", synth_clip(kind, duration_s, clip_seed + 1))
        snr = float(rng.uniform(snr_min, snr_max))
        recipes.append(MixtureRecipe(clean_id, noise_id, snr, int(rng.integers(0, 2**31))))
    write_recipes(root / "recipes.csv", recipes)
    for r in recipes:
        mix = load_mixture(root, r)
        name = f"{r.clean_id}.wav"
        write_wav(root / "noisy" / name, mix.noisy)
        write_wav(root / "reference" / name, mix.clean)
    return recipes


def load_mixture(root, recipe: MixtureRecipe) -> Mixture:
    root = Path(root)
    clean = read_wav(root / "clean" / f"{recipe.clean_id}.wav")
    noise = read_wav(root / "noise" / f"{recipe.noise_id}.wav")
    return mix_at_snr(clean, noise, recipe.snr_db, recipe.seed)
