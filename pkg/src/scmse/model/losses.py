"""Power-compressed magnitude and real/imaginary losses.

Each loss is the squared Frobenius norm over all T-F points of one item, averaged
over the batch axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import Tensor

from ..dsp import EPS_MAG
from .network import Spec

GAMMA = 1.0 / 3.0


def compress(s: Spec, gamma: float = GAMMA) -> tuple[Tensor, Tensor, Tensor]:
    """(real_c, imag_c, mag_c) with mag_c = |S|^gamma and the phase of S.

    Below EPS_MAG everything (value and gradient) is zero.
    """
    power = s.re**2 + s.im**2
    safe = torch.sqrt(torch.clamp(power, min=EPS_MAG**2))
    live = power > EPS_MAG**2
    mag_c = torch.where(live, safe**gamma, torch.zeros_like(safe))
    return mag_c * s.re / safe, mag_c * s.im / safe, mag_c


def _frobenius_sq(d: Tensor) -> Tensor:
    if d.dim() == 2:
        return (d**2).sum()
    return (d**2).sum(dim=tuple(range(1, d.dim()))).mean()


def _check_shapes(est: Spec, ref: Spec) -> None:
    if est.re.shape != ref.re.shape:
        raise ValueError(f"loss: estimate shape {tuple(est.re.shape)} != reference shape {tuple(ref.re.shape)}")


def loss_mag(est: Spec, ref: Spec, gamma: float = GAMMA) -> Tensor:
    _check_shapes(est, ref)
    return _frobenius_sq(compress(ref, gamma)[2] - compress(est, gamma)[2])


def loss_ri(est: Spec, ref: Spec, gamma: float = GAMMA) -> Tensor:
    _check_shapes(est, ref)
    er, ei, _ = compress(est, gamma)
    rr, ri, _ = compress(ref, gamma)
    return _frobenius_sq(rr - er) + _frobenius_sq(ri - ei)


def loss_stage1(s_mha: Spec, ref: Spec, gamma: float = GAMMA) -> Tensor:
    return loss_mag(s_mha, ref, gamma)


@dataclass
class LossBreakdown:
    l_mag_mha: float
    l_mag_dpcrn: float
    l_ri_dpcrn: float

    @property
    def l1(self) -> float:
        return self.l_mag_mha

    @property
    def l2(self) -> float:
        return self.l_mag_mha + self.l_mag_dpcrn + self.l_ri_dpcrn


def loss_stage2(s_mha: Spec, s_dpcrn: Spec, ref: Spec, gamma: float = GAMMA) -> tuple[Tensor, LossBreakdown]:
    l_mha = loss_mag(s_mha, ref, gamma)
    l_mag = loss_mag(s_dpcrn, ref, gamma)
    l_ri = loss_ri(s_dpcrn, ref, gamma)
    total = l_mha + l_mag + l_ri
    return total, LossBreakdown(l_mha.item(), l_mag.item(), l_ri.item())
