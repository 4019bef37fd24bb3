"""Two-stage training: MHAN pre-training on L1, then joint MHAN+DPCRN training on L2."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .. import audio_io, dsp
from ..diffcore import AdamState, ParameterStore, adam_step, warmup_lr
from ..diffcore.checkpoint import config_hash, load_checkpoint, load_into, save_checkpoint
from .config import ModelConfig
from .losses import loss_stage1, loss_stage2
from .network import MhaDpcrn, Spec

log = logging.getLogger(__name__)

STAGES = ("pretrain_mhan", "joint")
STAGE_TAGS = {"pretrain_mhan": "1", "joint": "joint"}
LOG_HEADER = ["step", "lr", "l_mag_mha", "l_mag_dpcrn", "l_ri_dpcrn", "total"]


class TrainingError(RuntimeError):
    pass


def normalize_stage(stage: str) -> str:
    aliases = {"1": "pretrain_mhan", "stage1": "pretrain_mhan", "pretrain_mhan": "pretrain_mhan", "joint": "joint", "2": "joint"}
    if stage not in aliases:
        raise ValueError(f"unknown stage {stage!r}; expected 1/pretrain_mhan or joint")
    return aliases[stage]


@dataclass
class SpectralDataset:
    """Noisy and clean-target STFTs, (N, T, F) float arrays."""

    noisy_re: np.ndarray
    noisy_im: np.ndarray
    clean_re: np.ndarray
    clean_im: np.ndarray
    names: list[str]

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def from_pairs(cls, pairs, names, config: dsp.StftConfig = dsp.StftConfig(), frames: int | None = None):
        specs_n, specs_c = [], []
        for clean, noisy in pairs:
            specs_n.append(dsp.stft(noisy, config).data)
            specs_c.append(dsp.stft(clean, config).data)
        n_frames = frames or min(s.shape[0] for s in specs_n)

        def fix(s):
            if s.shape[0] >= n_frames:
                return s[:n_frames]
            return np.pad(s, ((0, n_frames - s.shape[0]), (0, 0)))

        noisy = np.stack([fix(s) for s in specs_n])
        clean = np.stack([fix(s) for s in specs_c])
        return cls(noisy.real, noisy.imag, clean.real, clean.imag, list(names))

    @classmethod
    def from_directory(cls, root, config: dsp.StftConfig = dsp.StftConfig(), frames: int | None = None):
        recipes = audio_io.read_recipes(Path(root) / "recipes.csv")
        pairs = []
        for r in recipes:
            mix = audio_io.load_mixture(root, r)
            pairs.append((mix.clean, mix.noisy))
        return cls.from_pairs(pairs, [r.clean_id for r in recipes], config, frames)

    def batch(self, idx, dtype=torch.float32) -> tuple[Spec, Spec]:
        def t(a):
            return torch.tensor(a[idx], dtype=dtype)

        return Spec(t(self.noisy_re), t(self.noisy_im)), Spec(t(self.clean_re), t(self.clean_im))


def batch_order(n_items: int, batch_size: int, steps: int, seed: int):
    """Deterministic batches: fresh seeded permutation per epoch, ragged tail dropped."""
    rng = np.random.default_rng(seed)
    per_epoch = max(n_items // batch_size, 1)
    out = []
    while len(out) < steps:
        perm = rng.permutation(n_items)
        for b in range(per_epoch):
            out.append(np.sort(perm[b * batch_size : (b + 1) * batch_size]))
    return out[:steps]


def build_model(cfg: ModelConfig, seed: int | None = None) -> MhaDpcrn:
    return MhaDpcrn(cfg, seed)


def stage_store(model: MhaDpcrn, stage: str) -> ParameterStore:
    if stage == "pretrain_mhan":
        return ParameterStore.from_module(model.mhan, prefix="mhan.")
    return ParameterStore.from_module(model)


def evaluate_losses(model: MhaDpcrn, data: SpectralDataset, stage: str, gamma: float, batch_size: int = 2) -> dict:
    """Mean per-item losses over the whole set with the model in inference mode."""
    was_training = model.training
    model.eval()
    sums = {"l_mag_mha": 0.0, "l_mag_dpcrn": 0.0, "l_ri_dpcrn": 0.0}
    with torch.no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            noisy, clean = data.batch(idx, dtype=next(model.parameters()).dtype)
            out = model(noisy, stage="joint" if stage == "joint" else "1")
            if stage == "joint":
                _, br = loss_stage2(out.s_mha, out.s_dpcrn, clean, gamma)
                sums["l_mag_mha"] += br.l_mag_mha * len(idx)
                sums["l_mag_dpcrn"] += br.l_mag_dpcrn * len(idx)
                sums["l_ri_dpcrn"] += br.l_ri_dpcrn * len(idx)
            else:
                sums["l_mag_mha"] += loss_stage1(out.s_mha, clean, gamma).item() * len(idx)
    model.train(was_training)
    means = {k: v / len(data) for k, v in sums.items()}
    means["l1"] = means["l_mag_mha"]
    means["l2"] = means["l_mag_mha"] + means["l_mag_dpcrn"] + means["l_ri_dpcrn"]
    return means


@dataclass
class TrainResult:
    model: MhaDpcrn
    adam: AdamState
    meta: dict
    log_rows: list[list[float]]


def train(
    data: SpectralDataset,
    stage: str,
    cfg: ModelConfig,
    steps: int,
    seed: int = 0,
    init_ckpt=None,
    ckpt_out=None,
    log_path=None,
    dtype=torch.float32,
) -> TrainResult:
    """Run ``steps`` optimizer steps of one training stage.

    Joint training starts from a stage-1 checkpoint: MHAN weights come from it, DPCRN
    weights are freshly initialized, and the warmup step counter continues from the
    checkpoint's step count.
    """
    stage = normalize_stage(stage)
    torch.manual_seed(seed)
    model = build_model(cfg).to(dtype)
    step0 = 0
    if stage == "joint":
        if init_ckpt is None:
            raise TrainingError("joint training requires a stage-1 checkpoint (--init-ckpt)")
        arrays, _, meta = load_checkpoint(init_ckpt)
        if meta.get("stage") not in ("1", "joint"):
            raise TrainingError(f"checkpoint stage {meta.get('stage')!r} cannot initialize joint training")
        loaded = load_into(model.mhan, arrays, prefix="mhan.")
        if not loaded:
            raise TrainingError("stage-1 checkpoint holds no MHAN weights")
        step0 = int(meta.get("step", 0))

    store = stage_store(model, stage)
    adam = AdamState()
    gamma = float(cfg.gamma)
    rows = []
    model.train()
    for i, idx in enumerate(batch_order(len(data), cfg.batch_size, steps, seed)):
        phi = step0 + i + 1
        noisy, clean = data.batch(idx, dtype)
        store.zero_grad()
        if stage == "pretrain_mhan":
            out = model(noisy, stage="1")
            loss = loss_stage1(out.s_mha, clean, gamma)
            l_mha, l_mag, l_ri = loss.item(), 0.0, 0.0
        else:
            out = model(noisy, stage="joint")
            loss, br = loss_stage2(out.s_mha, out.s_dpcrn, clean, gamma)
            l_mha, l_mag, l_ri = br.l_mag_mha, br.l_mag_dpcrn, br.l_ri_dpcrn
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {phi}")
        loss.backward()
        lr = warmup_lr(phi)
        adam_step(store, adam, lr)
        rows.append([phi, lr, l_mha, l_mag, l_ri, l_mha + l_mag + l_ri])
        if (i + 1) % 100 == 0:
            log.info("step %d lr %.3e loss %.4f", phi, lr, rows[-1][-1])

    meta = {
        "stage": STAGE_TAGS[stage],
        "step": step0 + steps,
        "seed": seed,
        "config": cfg.to_text(),
        "config_hash": config_hash(cfg.to_text()),
    }
    if ckpt_out is not None:
        save_checkpoint(ckpt_out, model, adam, meta)
    if log_path is not None:
        write_log(log_path, rows)
    return TrainResult(model, adam, meta, rows)


def write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow([r[0]] + [repr(float(v)) for v in r[1:]])


def load_model(path) -> tuple[MhaDpcrn, dict]:
    arrays, _, meta = load_checkpoint(path)
    cfg = ModelConfig.from_text(meta["config"])
    model = build_model(cfg)
    load_into(model, arrays)
    return model, meta
