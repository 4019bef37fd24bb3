"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
from torch import Tensor

NOISE_ULPS = 16


@dataclass
class GradEntry:
    name: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    noise: float = 0.0  # rounding floor of the central difference

    def rel_error(self, tolerance: float) -> float:
        # below the rounding floor the comparison is absolute: |diff| <= noise passes
        denom = max(abs(self.analytic), abs(self.numeric), 1e-8, self.noise / tolerance)
        return abs(self.analytic - self.numeric) / denom


@dataclass
class GradReport:
    tolerance: float
    entries: list[GradEntry] = field(default_factory=list)

    @property
    def failures(self) -> list[GradEntry]:
        return [e for e in self.entries if e.rel_error(self.tolerance) > self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_rel_error(self) -> float:
        return max((e.rel_error(self.tolerance) for e in self.entries), default=0.0)

    def worst(self, n: int = 5) -> list[GradEntry]:
        return sorted(self.entries, key=lambda e: -e.rel_error(self.tolerance))[:n]

    def summary(self) -> str:
        lines = [
            f"{len(self.entries)} coordinates, max rel error {self.max_rel_error:.3e}, "
            f"tolerance {self.tolerance:g}: {'PASS' if self.passed else 'FAIL'}"
        ]
        for e in self.worst(3):
            lines.append(
                f"  {e.name}{list(e.index)}: analytic={e.analytic:.6e} numeric={e.numeric:.6e} rel={e.rel_error(self.tolerance):.2e}"
            )
        return "\n".join(lines)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: dict[str, Tensor],
    tolerance: float = 1e-4,
    n_coords: int = 10,
    step: float = 1e-5,
    seed: int = 0,
    richardson: bool = False,
) -> GradReport:
    """Compare autograd gradients of ``loss_fn()`` with central differences.

    ``params`` are leaf tensors (requires_grad) read by ``loss_fn``. Up to
    ``n_coords`` random coordinates are sampled per tensor (all of them if the tensor
    is smaller). Run in float64.

    Each entry carries the rounding floor of its central difference,
    ``NOISE_ULPS * spacing(|loss|) / step``; structurally zero gradients (a bias
    feeding batch norm, an attention key bias) are judged against it.

    With ``richardson`` the numeric derivative is (4 D(step/2) - D(step)) / 3, which
    cancels the O(step^2) truncation term of the plain central difference; used for
    deep compositions whose third derivatives are large.
    """
    for name, p in params.items():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {name: p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p) for name, p in params.items()}

    rng = np.random.default_rng(seed)
    report = GradReport(tolerance)
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            n = flat.numel()
            idx = np.arange(n) if n <= n_coords else rng.choice(n, size=n_coords, replace=False)
            for i in idx:
                i = int(i)
                numeric, scale = _central(loss_fn, flat, i, step)
                noise = NOISE_ULPS * np.spacing(scale) / step
                if richardson:
                    half, _ = _central(loss_fn, flat, i, step / 2)
                    numeric = (4 * half - numeric) / 3
                    noise *= 3
                coord = tuple(int(c) for c in np.unravel_index(i, tuple(p.shape)))
                report.entries.append(GradEntry(name, coord, analytic[name].view(-1)[i].item(), numeric, noise))
    return report


def _central(loss_fn, flat: Tensor, i: int, h: float) -> tuple[float, float]:
    orig = flat[i].item()
    flat[i] = orig + h
    up = loss_fn().item()
    flat[i] = orig - h
    down = loss_fn().item()
    flat[i] = orig
    return (up - down) / (2 * h), max(abs(up), abs(down))
