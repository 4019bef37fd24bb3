"""Parameter bookkeeping, Adam with freeze masks, and the warmup learning-rate rule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import Tensor, nn


class ParameterStore:
    """Named trainable arrays with optional boolean learn masks.

    A module that owns a masked weight exposes it through a ``learn_mask`` buffer
    (same shape as its ``weight``); :meth:`from_module` picks these up.
    """

    def __init__(self, params: dict[str, Tensor], masks: dict[str, Tensor] | None = None):
        self.params = dict(params)
        self.masks = dict(masks or {})
        for name, mask in self.masks.items():
            if name not in self.params:
                raise KeyError(f"mask for unknown parameter {name!r}")
            if mask.shape != self.params[name].shape:
                raise ValueError(f"mask shape {tuple(mask.shape)} != parameter shape for {name!r}")

    @classmethod
    def from_module(cls, module: nn.Module, prefix: str = "") -> "ParameterStore":
        params = {prefix + n: p for n, p in module.named_parameters()}
        masks = {}
        for mod_name, mod in module.named_modules():
            mask = getattr(mod, "learn_mask", None)
            if isinstance(mask, Tensor):
                key = prefix + (f"{mod_name}.weight" if mod_name else "weight")
                masks[key] = mask
        return cls(params, masks)

    def __iter__(self):
        return iter(self.params.items())

    def __len__(self) -> int:
        return len(self.params)

    def mask(self, name: str) -> Tensor | None:
        return self.masks.get(name)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def n_trainable(self) -> int:
        total = 0
        for name, p in self.params.items():
            m = self.masks.get(name)
            total += int(m.sum()) if m is not None else p.numel()
        return total


def warmup_lr(step: int, C: float = 128.0, warmup: int = 10000) -> float:
    """(1/sqrt(C)) * min(step^-1/2, step * warmup^-3/2); peaks at step == warmup."""
    if step < 1:
        raise ValueError(f"warmup_lr: step must be >= 1, got {step}")
    return (1.0 / math.sqrt(C)) * min(1.0 / math.sqrt(step), step / math.sqrt(warmup**3))


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    t: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)


def adam_step(store: ParameterStore, state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update; masked-out entries keep their exact values."""
    grads = {}
    for name, p in store:
        g = p.grad if p.grad is not None else torch.zeros_like(p)
        if not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in parameter {name!r}")
        grads[name] = g
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    with torch.no_grad():
        for name, p in store:
            g = grads[name]
            m = state.m.setdefault(name, torch.zeros_like(p))
            v = state.v.setdefault(name, torch.zeros_like(p))
            m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
            v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
            update = lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps)
            mask = store.mask(name)
            if mask is None:
                p.sub_(update)
            else:
                p.copy_(torch.where(mask, p - update, p))
