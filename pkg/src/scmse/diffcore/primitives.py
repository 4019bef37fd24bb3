"""Layer primitives the two networks are assembled from.

Forward passes are written out with plain tensor ops; reverse-mode gradients come
from torch autograd and are verified against central finite differences by
:mod:`scmse.diffcore.gradcheck`.

Conv tensors are laid out (batch, channel, time, freq). Kernel and stride tuples
are given as (freq, time) throughout, matching how the model config is written.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn


def _check(cond: bool, primitive: str, msg: str) -> None:
    if not cond:
        raise ValueError(f"{primitive}: {msg}")


def _uniform_(t: Tensor, bound: float) -> Tensor:
    with torch.no_grad():
        return t.uniform_(-bound, bound)


class Dense(nn.Module):
    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = nn.Parameter(torch.empty(out_features, in_features))
        self.bias = nn.Parameter(torch.zeros(out_features)) if bias else None
        _uniform_(self.weight, math.sqrt(6.0 / (in_features + out_features)))

    def forward(self, x: Tensor) -> Tensor:
        _check(
            x.shape[-1] == self.in_features,
            "dense",
            f"last dimension is {x.shape[-1]}, expected {self.in_features}",
        )
        y = x @ self.weight.t()
        return y + self.bias if self.bias is not None else y


class Conv2d(nn.Module):
    """2-D convolution, causal in time (kernel_t - 1 past frames), zero-padded in frequency.

    Frequency padding is (kernel_f - 1) // 2 on each side.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple[int, int], stride: tuple[int, int] = (1, 1)):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kf, self.kt = kernel
        self.sf, self.st = stride
        self.pad_f = (self.kf - 1) // 2
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, self.kt, self.kf))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        _uniform_(self.weight, 1.0 / math.sqrt(in_ch * self.kf * self.kt))

    def forward(self, x: Tensor) -> Tensor:
        _check(x.dim() == 4, "conv2d", f"expected (B, C, T, F) input, got rank {x.dim()}")
        _check(x.shape[1] == self.in_ch, "conv2d", f"channel dimension is {x.shape[1]}, expected {self.in_ch}")
        x = F.pad(x, (self.pad_f, self.pad_f, self.kt - 1, 0))
        _check(x.shape[3] >= self.kf, "conv2d", f"frequency dimension {x.shape[3]} smaller than kernel {self.kf}")
        return F.conv2d(x, self.weight, self.bias, stride=(self.st, self.sf))

    def output_freq(self, n_freq: int) -> int:
        return (n_freq + 2 * self.pad_f - self.kf) // self.sf + 1


class TransConv2d(nn.Module):
    """Transposed counterpart of :class:`Conv2d`.

    Frequency geometry is the adjoint of the matching Conv2d (full transposed conv,
    then crop the padding); in time the trailing kernel_t - 1 frames are dropped so
    frame t only sees inputs at frames <= t.
    """

    def __init__(self, in_ch: int, out_ch: int, kernel: tuple[int, int], stride: tuple[int, int] = (1, 1)):
        super().__init__()
        self.in_ch, self.out_ch = in_ch, out_ch
        self.kf, self.kt = kernel
        self.sf, self.st = stride
        self.pad_f = (self.kf - 1) // 2
        self.weight = nn.Parameter(torch.empty(in_ch, out_ch, self.kt, self.kf))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        _uniform_(self.weight, 1.0 / math.sqrt(in_ch * self.kf * self.kt))

    def forward(self, x: Tensor, out_size: tuple[int, int] | None = None) -> Tensor:
        _check(x.dim() == 4, "transconv2d", f"expected (B, C, T, F) input, got rank {x.dim()}")
        _check(x.shape[1] == self.in_ch, "transconv2d", f"channel dimension is {x.shape[1]}, expected {self.in_ch}")
        y = F.conv_transpose2d(x, self.weight, self.bias, stride=(self.st, self.sf))
        if out_size is None:
            out_size = (x.shape[2] * self.st, (x.shape[3] - 1) * self.sf + self.kf - 2 * self.pad_f)
        n_t, n_f = out_size
        _check(
            self.pad_f + n_f <= y.shape[3],
            "transconv2d",
            f"cannot produce {n_f} frequency bins from {x.shape[3]} inputs",
        )
        return y[:, :, :n_t, self.pad_f : self.pad_f + n_f]


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, w_ih: Tensor, w_hh: Tensor, bias: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (input, forget, candidate, output)."""
    gates = x @ w_ih.t() + h @ w_hh.t() + bias
    return _lstm_gates(gates, c)


def _lstm_gates(gates: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    i, f, g, o = gates.chunk(4, dim=-1)
    c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    h_new = torch.sigmoid(o) * torch.tanh(c_new)
    return h_new, c_new


class LSTM(nn.Module):
    """Single-direction LSTM over axis 1 of an (N, L, input) tensor."""

    def __init__(self, input_size: int, hidden_size: int, reverse: bool = False):
        super().__init__()
        self.input_size, self.hidden_size, self.reverse = input_size, hidden_size, reverse
        self.w_ih = nn.Parameter(torch.empty(4 * hidden_size, input_size))
        self.w_hh = nn.Parameter(torch.empty(4 * hidden_size, hidden_size))
        self.bias = nn.Parameter(torch.zeros(4 * hidden_size))
        bound = 1.0 / math.sqrt(hidden_size)
        _uniform_(self.w_ih, bound)
        _uniform_(self.w_hh, bound)

    def forward(self, x: Tensor) -> Tensor:
        _check(x.dim() == 3, "lstm", f"expected (N, L, input) input, got rank {x.dim()}")
        _check(x.shape[2] == self.input_size, "lstm", f"input dimension is {x.shape[2]}, expected {self.input_size}")
        n, length, _ = x.shape
        # input projection for all steps at once; only the recurrence is sequential
        x_proj = (x @ self.w_ih.t() + self.bias).unbind(1)
        h = x.new_zeros(n, self.hidden_size)
        c = x.new_zeros(n, self.hidden_size)
        steps = range(length - 1, -1, -1) if self.reverse else range(length)
        out = [None] * length
        w_hh_t = self.w_hh.t()
        for s in steps:
            h, c = _lstm_gates(x_proj[s] + h @ w_hh_t, c)
            out[s] = h
        return torch.stack(out, dim=1)


class BiLSTM(nn.Module):
    """Forward and backward LSTMs over axis 1, outputs concatenated (2 * hidden)."""

    def __init__(self, input_size: int, hidden_size: int):
        super().__init__()
        self.fwd = LSTM(input_size, hidden_size)
        self.bwd = LSTM(input_size, hidden_size, reverse=True)

    def forward(self, x: Tensor) -> Tensor:
        return torch.cat([self.fwd(x), self.bwd(x)], dim=-1)


class LayerNorm(nn.Module):
    """Normalization over the last (feature) axis with learnable gain and bias."""

    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.dim, self.eps = dim, eps
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x: Tensor) -> Tensor:
        _check(x.shape[-1] == self.dim, "layer_norm", f"feature dimension is {x.shape[-1]}, expected {self.dim}")
        mean = x.mean(dim=-1, keepdim=True)
        var = ((x - mean) ** 2).mean(dim=-1, keepdim=True)
        return (x - mean) / torch.sqrt(var + self.eps) * self.gain + self.bias


class BatchNorm2d(nn.Module):
    """Batch normalization over (batch, time, freq) per channel.

    Running statistics follow ``running = momentum * running + (1 - momentum) * batch``.
    """

    def __init__(self, channels: int, momentum: float = 0.99, eps: float = 1e-5):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.gain = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.register_buffer("running_mean", torch.zeros(channels))
        self.register_buffer("running_var", torch.ones(channels))

    def forward(self, x: Tensor) -> Tensor:
        _check(x.dim() == 4 and x.shape[1] == self.channels, "batch_norm", f"expected (B, {self.channels}, T, F), got {tuple(x.shape)}")
        if self.training:
            mean = x.mean(dim=(0, 2, 3))
            var = ((x - mean[None, :, None, None]) ** 2).mean(dim=(0, 2, 3))
            with torch.no_grad():
                self.running_mean.mul_(self.momentum).add_((1 - self.momentum) * mean.detach())
                self.running_var.mul_(self.momentum).add_((1 - self.momentum) * var.detach())
        else:
            mean, var = self.running_mean, self.running_var
        shape = (1, -1, 1, 1)
        x_hat = (x - mean.view(shape)) / torch.sqrt(var.view(shape) + self.eps)
        return x_hat * self.gain.view(shape) + self.bias.view(shape)


class InstanceNorm2d(nn.Module):
    """Per-sample, per-channel normalization of a (B, C, T, F) tensor.

    With ``per_frame`` (the default) statistics are taken over frequency within each
    frame, so no frame sees statistics from later frames; otherwise over (T, F).
    """

    def __init__(self, channels: int, per_frame: bool = True, eps: float = 1e-5):
        super().__init__()
        self.channels, self.per_frame, self.eps = channels, per_frame, eps
        self.gain = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))

    def forward(self, x: Tensor) -> Tensor:
        _check(x.dim() == 4 and x.shape[1] == self.channels, "instance_norm", f"expected (B, {self.channels}, T, F), got {tuple(x.shape)}")
        axes = (3,) if self.per_frame else (2, 3)
        mean = x.mean(dim=axes, keepdim=True)
        var = ((x - mean) ** 2).mean(dim=axes, keepdim=True)
        shape = (1, -1, 1, 1)
        return (x - mean) / torch.sqrt(var + self.eps) * self.gain.view(shape) + self.bias.view(shape)


class PReLU(nn.Module):
    def __init__(self, channels: int, init: float = 0.25):
        super().__init__()
        self.channels = channels
        self.slope = nn.Parameter(torch.full((channels,), init))

    def forward(self, x: Tensor) -> Tensor:
        _check(x.dim() >= 2 and x.shape[1] == self.channels, "prelu", f"channel dimension is {x.shape[1]}, expected {self.channels}")
        slope = self.slope.view((1, -1) + (1,) * (x.dim() - 2))
        return torch.where(x >= 0, x, slope * x)


relu = torch.relu
sigmoid = torch.sigmoid
