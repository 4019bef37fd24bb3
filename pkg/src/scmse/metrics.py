"""Scale-invariant SDR and directory-level evaluation reports."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio_io import read_wav

SDR_CAP_DB = 100.0
REPORT_HEADER = ["clip", "si_sdr_noisy_db", "si_sdr_enhanced_db", "delta_db"]


def si_sdr(reference, estimate) -> float:
    """10*log10(|s_t|^2 / |est - s_t|^2), s_t the projection of est onto the reference.

    Capped at +100 dB when the residual is numerically zero.
    """
    ref = np.asarray(reference, dtype=np.float64)
    est = np.asarray(estimate, dtype=np.float64)
    if ref.shape != est.shape:
        raise ValueError(f"length mismatch: reference {ref.shape} vs estimate {est.shape}")
    ref_energy = np.dot(ref, ref)
    if ref_energy <= 0:
        raise ValueError("reference signal is silent")
    target = (np.dot(est, ref) / ref_energy) * ref
    residual = est - target
    t_energy = np.dot(target, target)
    r_energy = np.dot(residual, residual)
    if r_energy <= 1e-20 * max(t_energy, 1e-300):
        return SDR_CAP_DB
    return float(min(10.0 * np.log10(t_energy / r_energy), SDR_CAP_DB))


@dataclass
class ClipScore:
    clip: str
    si_sdr_noisy: float
    si_sdr_enhanced: float

    @property
    def delta(self) -> float:
        return self.si_sdr_enhanced - self.si_sdr_noisy


@dataclass
class SdrReport:
    clips: list[ClipScore] = field(default_factory=list)

    def _values(self, attr: str) -> np.ndarray:
        return np.array([getattr(c, attr) for c in self.clips])

    def mean(self, attr: str = "delta") -> float:
        return float(np.mean(self._values(attr)))

    def median(self, attr: str = "delta") -> float:
        return float(np.median(self._values(attr)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_HEADER)
            for c in self.clips:
                w.writerow([c.clip, f"{c.si_sdr_noisy:.6f}", f"{c.si_sdr_enhanced:.6f}", f"{c.delta:.6f}"])


def evaluate_set(clean_dir, noisy_dir, enhanced_dir) -> SdrReport:
    clean_dir, noisy_dir, enhanced_dir = Path(clean_dir), Path(noisy_dir), Path(enhanced_dir)
    names = sorted(p.name for p in clean_dir.glob("*.wav"))
    if not names:
        raise FileNotFoundError(f"no .wav files in {clean_dir}")
    missing = [str(d / n) for n in names for d in (noisy_dir, enhanced_dir) if not (d / n).exists()]
    if missing:
        raise FileNotFoundError("missing counterpart files: " + ", ".join(missing))
    report = SdrReport()
    for name in names:
        ref = read_wav(clean_dir / name).samples
        noisy = read_wav(noisy_dir / name).samples
        enhanced = read_wav(enhanced_dir / name).samples
        report.clips.append(ClipScore(Path(name).stem, si_sdr(ref, noisy), si_sdr(ref, enhanced)))
    return report
