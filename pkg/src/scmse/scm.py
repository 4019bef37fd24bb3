"""Spectral compression mapping (SCM): identity low band, log-warped triangular high band.

Frequencies up to the knee (5 kHz by default) pass through an identity block; the
rest of the spectrum is summarized by triangular filters uniformly spaced on

    f_c = f                                   f <= knee
    f_c = a * (ln((f - a) / a) + 2)           f >  knee,   a = knee / 2

which is continuous with unit slope at the knee. The matrix becomes the initial
weight of a bias-free dense layer; the inverse mapping (iSCM) is a separate,
randomly initialized dense layer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dsp import StftConfig


@dataclass(frozen=True)
class WarpParams:
    knee_hz: float = 5000.0
    f_max: float = 24000.0

    @property
    def a(self) -> float:
        return self.knee_hz / 2.0


def warp_frequency(f_hz, params: WarpParams = WarpParams()):
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0) or np.any(f > params.f_max):
        raise ValueError(f"frequency outside [0, {params.f_max}] Hz")
    a = params.a
    upper = a * (np.log(np.maximum(f - a, 1e-300) / a) + 2.0)
    out = np.where(f <= params.knee_hz, f, upper)
    return out.item() if out.ndim == 0 else out


def unwarp_frequency(fc_hz, params: WarpParams = WarpParams()):
    fc = np.asarray(fc_hz, dtype=np.float64)
    a = params.a
    out = np.where(fc <= params.knee_hz, fc, a + a * np.exp(fc / a - 2.0))
    return out.item() if out.ndim == 0 else out


def bin_of_knee(config: StftConfig = StftConfig(), knee_hz: float = 5000.0) -> int:
    """Number of bins whose center frequency is <= knee (a bin exactly at the knee counts)."""
    return int(np.floor(knee_hz / config.bin_hz + 1e-9)) + 1


@dataclass
class CompressionMatrix:
    weights: np.ndarray  # (F_c, F)
    K: int
    learn_mask: np.ndarray  # (F_c, F) bool, True = trainable

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape


def triangular_filters(n_filters: int, n_bins: int, bin_hz: float, params: WarpParams) -> np.ndarray:
    """``n_filters`` triangles centered uniformly in the warped domain between knee and f_max.

    Edges are the neighbouring centers (the outermost edges are the knee and f_max);
    every row is normalized to unit sum.
    """
    lo = warp_frequency(params.knee_hz, params)
    hi = warp_frequency(params.f_max, params)
    points = unwarp_frequency(np.linspace(lo, hi, n_filters + 2), params)
    freqs = np.arange(n_bins) * bin_hz
    bank = np.zeros((n_filters, n_bins))
    for i in range(n_filters):
        left, center, right = points[i], points[i + 1], points[i + 2]
        rising = (freqs - left) / (center - left)
        falling = (right - freqs) / (right - center)
        bank[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        total = bank[i].sum()
        if total <= 0:
            raise ValueError(f"triangular filter {i} covers no bins; use fewer filters")
        bank[i] /= total
    return bank


def build_compression_matrix(
    F: int = 601,
    F_c: int = 256,
    K: int = 126,
    warp: WarpParams = WarpParams(),
    config: StftConfig = StftConfig(),
) -> CompressionMatrix:
    if not 0 < K < F_c < F:
        raise ValueError(f"need 0 < K < F_c < F, got K={K}, F_c={F_c}, F={F}")
    if F != config.n_bins:
        raise ValueError(f"F={F} does not match the STFT bin count {config.n_bins}")
    weights = np.zeros((F_c, F))
    weights[:K, :K] = np.eye(K)
    weights[K:] = triangular_filters(F_c - K, F, config.bin_hz, warp)
    return CompressionMatrix(weights, K, np.ones((F_c, F), dtype=bool))


def apply_mapping(weights: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Per-frame product ``frames @ weights.T``: (T, F) -> (T, F_c)."""
    weights = np.asarray(weights)
    frames = np.asarray(frames)
    if frames.shape[-1] != weights.shape[1]:
        raise ValueError(f"frames have {frames.shape[-1]} bins, mapping expects {weights.shape[1]}")
    return frames @ weights.T


def init_inverse(F_c: int, F: int, seed: int) -> np.ndarray:
    """Random (F, F_c) inverse mapping, uniform in +-sqrt(6 / (F_c + F))."""
    bound = np.sqrt(6.0 / (F_c + F))
    return np.random.default_rng(seed).uniform(-bound, bound, size=(F, F_c))


def freeze_low_band(matrix: CompressionMatrix, high_learn: bool) -> CompressionMatrix:
    mask = np.ones_like(matrix.weights, dtype=bool)
    if high_learn:
        mask[: matrix.K] = False
    return CompressionMatrix(matrix.weights.copy(), matrix.K, mask)


def masked_sgd_step(matrix: CompressionMatrix, grad: np.ndarray, lr: float) -> CompressionMatrix:
    """weights - lr * (grad * mask); frozen entries are copied unchanged."""
    step = np.where(matrix.learn_mask, matrix.weights - lr * grad, matrix.weights)
    return CompressionMatrix(step, matrix.K, matrix.learn_mask)


def dump_matrix_csv(weights: np.ndarray, learn_mask: np.ndarray, path) -> None:
    """One line per row: ``row_index,learnable,<weights...>``."""
    weights = np.asarray(weights)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for i, row in enumerate(weights):
            w.writerow([i, int(bool(np.any(learn_mask[i])))] + [repr(float(v)) for v in row])
