from __future__ import annotations

import numpy as np
import torch

from .. import dsp
from ..audio_io import AudioClip
from .network import MhaDpcrn, Spec
from .train import load_model


class StageError(RuntimeError):
    pass


def pad_for_synthesis(x: np.ndarray, config: dsp.StftConfig) -> tuple[np.ndarray, int]:
    """Zero-pad so every input sample lies where frames fully overlap.

    ``win_len - hop`` zeros go in front, and the tail is padded to whole frames plus
    the same margin. Returns the padded signal and the offset of the first input
    sample.
    """
    lead = config.win_len - config.hop
    n = lead + len(x) + lead
    extra = (-(n - config.win_len)) % config.hop
    return np.pad(x, (lead, lead + extra)), lead


def enhance_array(model: MhaDpcrn, samples: np.ndarray) -> np.ndarray:
    cfg = model.cfg.stft
    samples = np.asarray(samples, dtype=np.float64)
    padded, lead = pad_for_synthesis(samples, cfg)
    spec = dsp.stft(padded, cfg).data
    dtype = next(model.parameters()).dtype
    x = Spec(torch.tensor(spec.real[None], dtype=dtype), torch.tensor(spec.imag[None], dtype=dtype))
    model.eval()
    with torch.no_grad():
        out = model(x, stage="joint").s_dpcrn
    est = out.re[0].double().numpy() + 1j * out.im[0].double().numpy()
    return dsp.istft(dsp.ComplexSpectrogram(est, cfg))[lead : lead + len(samples)]


def enhance(noisy: AudioClip, checkpoint) -> AudioClip:
    model, meta = load_model(checkpoint)
    if meta.get("stage") != "joint":
        raise StageError(f"checkpoint stage: {meta.get('stage')}, need joint")
    return AudioClip(enhance_array(model, noisy.samples))
