from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .primitives import Dense


class MultiHeadAttention(nn.Module):
    """Scaled dot-product self-attention over time with an optional causal mask.

    Input and output are (B, T, D); each of ``heads`` heads works on D / heads features.
    """

    def __init__(self, d_model: int, heads: int, causal: bool = True):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"mha: d_model {d_model} is not divisible by heads {heads}")
        self.d_model, self.heads, self.causal = d_model, heads, causal
        self.q = Dense(d_model, d_model)
        self.k = Dense(d_model, d_model)
        self.v = Dense(d_model, d_model)
        self.out = Dense(d_model, d_model)

    def _split(self, x: Tensor) -> Tensor:
        b, t, _ = x.shape
        return x.view(b, t, self.heads, self.d_model // self.heads).transpose(1, 2)

    def forward(self, x: Tensor, return_weights: bool = False):
        if x.dim() != 3 or x.shape[-1] != self.d_model:
            raise ValueError(f"mha: expected (B, T, {self.d_model}) input, got {tuple(x.shape)}")
        b, t, _ = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_model // self.heads)
        if self.causal:
            future = torch.ones(t, t, dtype=torch.bool, device=x.device).triu(1)
            scores = scores.masked_fill(future, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        y = (weights @ v).transpose(1, 2).reshape(b, t, self.d_model)
        y = self.out(y)
        return (y, weights) if return_weights else y

