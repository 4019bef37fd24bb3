"""Desk-scale experiments shared by the acceptance tests and ``scripts/``."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import audio_io
from .metrics import ClipScore, SdrReport, si_sdr
from .model.config import ModelConfig
from .model.enhance import enhance_array
from .model.train import SpectralDataset, build_model, evaluate_losses, train


@dataclass
class OverfitResult:
    l1_initial: float
    l1_final: float
    joint_losses: dict
    report: SdrReport
    seconds_stage1: float
    seconds_joint: float
    checkpoints: dict = field(default_factory=dict)

    @property
    def l1_ratio(self) -> float:
        return self.l1_final / self.l1_initial

    @property
    def mean_improvement_db(self) -> float:
        return self.report.mean()

    def summary(self) -> str:
        return (
            f"stage 1: L1 {self.l1_initial:.1f} -> {self.l1_final:.1f} (ratio {self.l1_ratio:.4f}) "
            f"in {self.seconds_stage1:.0f} s; joint: L2 {self.joint_losses['l2']:.1f} in {self.seconds_joint:.0f} s; "
            f"mean SI-SDR improvement {self.mean_improvement_db:+.2f} dB over {len(self.report.clips)} clips"
        )


def desk_overfit(
    workdir,
    n_clips: int = 16,
    steps_stage1: int = 2000,
    steps_joint: int = 2000,
    seed: int = 0,
    cfg: ModelConfig | None = None,
    log=None,
) -> OverfitResult:
    """Synthesize the toy set, train both stages on it, and score the training clips.

    Losses before and after stage 1 are whole-set means with the model in inference
    mode; the SI-SDR report enhances every training mixture with the joint model.
    """
    cfg = cfg or ModelConfig.reduced()
    workdir = Path(workdir)
    data_dir = workdir / "data"
    if not (data_dir / "recipes.csv").exists():
        audio_io.synth_dataset(data_dir, n_clips, -5.0, 15.0, seed)
    data = SpectralDataset.from_directory(data_dir, cfg.stft, frames=cfg.train_frames)
    gamma = float(cfg.gamma)

    l1_initial = evaluate_losses(build_model(cfg), data, "1", gamma)["l1"]
    t0 = time.perf_counter()
    s1 = train(data, "1", cfg, steps_stage1, seed, ckpt_out=workdir / "stage1.ckpt", log_path=workdir / "stage1.csv")
    t1 = time.perf_counter()
    l1_final = evaluate_losses(s1.model, data, "1", gamma)["l1"]
    if log:
        log(f"stage 1 done: L1 {l1_initial:.1f} -> {l1_final:.1f} ({t1 - t0:.0f} s)")

    joint = train(
        data, "joint", cfg, steps_joint, seed,
        init_ckpt=workdir / "stage1.ckpt", ckpt_out=workdir / "joint.ckpt", log_path=workdir / "joint.csv",
    )
    t2 = time.perf_counter()
    joint_losses = evaluate_losses(joint.model, data, "joint", gamma)

    report = SdrReport()
    for recipe in audio_io.read_recipes(data_dir / "recipes.csv"):
        mix = audio_io.load_mixture(data_dir, recipe)
        enhanced = enhance_array(joint.model, mix.noisy.samples)
        report.clips.append(
            ClipScore(recipe.clean_id, si_sdr(mix.clean.samples, mix.noisy.samples), si_sdr(mix.clean.samples, enhanced))
        )
    report.write_csv(workdir / "report.csv")
    result = OverfitResult(
        l1_initial, l1_final, joint_losses, report, t1 - t0, t2 - t1,
        {"stage1": workdir / "stage1.ckpt", "joint": workdir / "joint.ckpt"},
    )
    if log:
        log(result.summary())
    return result


def smoke_train(workdir, cfg: ModelConfig, steps: int = 1, seed: int = 0) -> dict:
    """One short stage-1 plus joint run on two tiny clips; shows a configuration trains end to end."""
    workdir = Path(workdir)
    data_dir = workdir / "smoke"
    audio_io.synth_dataset(data_dir, 2, seed=seed, duration_s=0.5)
    data = SpectralDataset.from_directory(data_dir, cfg.stft, frames=8)
    s1 = train(data, "1", cfg, steps, seed, ckpt_out=workdir / "smoke1.ckpt")
    joint = train(data, "joint", cfg, steps, seed, init_ckpt=workdir / "smoke1.ckpt")
    last = joint.log_rows[-1]
    return {"stage1_loss": s1.log_rows[-1][-1], "joint_loss": last[-1], "finite": bool(np.isfinite(last[-1]))}
