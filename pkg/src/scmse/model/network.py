"""MHAN (stage 1 magnitude-mask estimator) and DPCRN (stage 2 complex refiner).

Spectrogram tensors are (batch, time, bins); complex spectra travel as
``Spec(re, im)`` pairs of real tensors.
"""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import Tensor, nn

from .. import scm
from ..diffcore import (
    LSTM,
    BatchNorm2d,
    BiLSTM,
    Conv2d,
    Dense,
    InstanceNorm2d,
    LayerNorm,
    MultiHeadAttention,
    PReLU,
    TransConv2d,
)
from .config import ModelConfig


class Spec(NamedTuple):
    re: Tensor
    im: Tensor


class SpectralMapping(nn.Module):
    """Bias-free dense layer initialized with the compression matrix.

    ``learn_mask`` marks which weights the optimizer may change.
    """

    def __init__(self, matrix: scm.CompressionMatrix):
        super().__init__()
        self.weight = nn.Parameter(torch.tensor(matrix.weights, dtype=torch.float32))
        self.register_buffer("learn_mask", torch.tensor(matrix.learn_mask), persistent=False)
        self.K = matrix.K

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise ValueError(f"scm: input has {x.shape[-1]} bins, expected {self.weight.shape[1]}")
        return x @ self.weight.t()


class InverseMapping(nn.Module):
    """Bias-free dense layer from compressed features back to all bins; random init."""

    def __init__(self, n_compressed: int, n_bins: int, seed: int):
        super().__init__()
        self.weight = nn.Parameter(torch.tensor(scm.init_inverse(n_compressed, n_bins, seed), dtype=torch.float32))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[1]:
            raise ValueError(f"iscm: input has {x.shape[-1]} features, expected {self.weight.shape[1]}")
        return x @ self.weight.t()


def make_mappings(cfg: ModelConfig, inverse_seed: int) -> tuple[SpectralMapping, InverseMapping]:
    warp = scm.WarpParams(knee_hz=cfg.knee_hz, f_max=cfg.stft.sample_rate / 2)
    matrix = scm.build_compression_matrix(cfg.n_bins, cfg.n_compressed, cfg.K, warp, cfg.stft)
    matrix = scm.freeze_low_band(matrix, cfg.high_learn)
    return SpectralMapping(matrix), InverseMapping(cfg.n_compressed, cfg.n_bins, inverse_seed)


class MhaBlock(nn.Module):
    def __init__(self, d_model: int, heads: int, ffn_hidden: int):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, heads, causal=True)
        self.norm1 = LayerNorm(d_model)
        self.ffn_in = Dense(d_model, ffn_hidden)
        self.ffn_out = Dense(ffn_hidden, d_model)
        self.norm2 = LayerNorm(d_model)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.attn(x))
        return self.norm2(x + self.ffn_out(torch.relu(self.ffn_in(x))))


class MHAN(nn.Module):
    """|X| -> spectral magnitude mask in (0, 1). No positional encoding."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.n_bins = cfg.n_bins
        self.scm, self.iscm = make_mappings(cfg, seed + 1)
        self.norm_in = LayerNorm(cfg.n_compressed)
        self.blocks = nn.ModuleList(
            MhaBlock(cfg.n_compressed, cfg.heads, cfg.ffn_hidden) for _ in range(cfg.mha_blocks)
        )

    def forward(self, mag: Tensor) -> Tensor:
        if mag.shape[-1] != self.n_bins:
            raise ValueError(f"mhan: input has {mag.shape[-1]} bins, expected {self.n_bins}")
        x = torch.relu(self.norm_in(self.scm(mag)))
        for block in self.blocks:
            x = block(x)
        return torch.sigmoid(self.iscm(x))


def apply_smm(mask: Tensor, x: Spec) -> Spec:
    if mask.shape != x.re.shape:
        raise ValueError(f"apply_smm: mask shape {tuple(mask.shape)} != spectrum shape {tuple(x.re.shape)}")
    return Spec(mask * x.re, mask * x.im)


class DprnnBlock(nn.Module):
    """Intra-frame BiLSTM over frequency, then inter-frame LSTM over time.

    Each path: RNN -> dense -> instance norm, plus a residual from the path input.
    """

    def __init__(self, channels: int, hidden: int):
        super().__init__()
        self.intra_rnn = BiLSTM(channels, hidden)
        self.intra_fc = Dense(2 * hidden, channels)
        self.intra_norm = InstanceNorm2d(channels)
        self.inter_rnn = LSTM(channels, hidden)
        self.inter_fc = Dense(hidden, channels)
        self.inter_norm = InstanceNorm2d(channels)

    def forward(self, x: Tensor) -> Tensor:
        b, c, t, f = x.shape
        seq = x.permute(0, 2, 3, 1).reshape(b * t, f, c)
        y = self.intra_fc(self.intra_rnn(seq)).reshape(b, t, f, c).permute(0, 3, 1, 2)
        x = x + self.intra_norm(y)

        seq = x.permute(0, 3, 2, 1).reshape(b * f, t, c)
        y = self.inter_fc(self.inter_rnn(seq)).reshape(b, f, t, c).permute(0, 3, 2, 1)
        return x + self.inter_norm(y)


class ConvUnit(nn.Module):
    def __init__(self, conv: nn.Module, channels: int):
        super().__init__()
        self.conv = conv
        self.norm = BatchNorm2d(channels)
        self.act = PReLU(channels)

    def forward(self, x: Tensor, *args) -> Tensor:
        return self.act(self.norm(self.conv(x, *args)))


class Decoder(nn.Module):
    """Mirror of the encoder; each layer sees [previous output, matching encoder output]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        ins = [1] + list(cfg.enc_channels[:-1])
        layers = []
        for i, (ch, k, s) in enumerate(zip(cfg.enc_channels, cfg.enc_kernels, cfg.enc_strides)):
            conv = TransConv2d(2 * ch, ins[i], k, s)
            # the output layer stays linear so it can produce signed spectra
            layers.append(conv if i == 0 else ConvUnit(conv, ins[i]))
        self.layers = nn.ModuleList(layers)

    def forward(self, x: Tensor, skips: list[Tensor], sizes: list[tuple[int, int]]) -> Tensor:
        for i in reversed(range(len(self.layers))):
            x = self.layers[i](torch.cat([x, skips[i]], dim=1), sizes[i])
        return x[:, 0]


class DPCRN(nn.Module):
    """Refines the pre-enhanced complex spectrum.

    With ``dpcrn_output == "mask"`` (the default) the two decoders estimate the real
    and imaginary parts of a complex mask that multiplies the pre-enhanced spectrum;
    with ``"direct"`` they estimate the refined real and imaginary parts outright.
    The mask form inherits the input's scale, while the direct form has to rebuild
    absolute spectral levels from batch-normalized features and trains far slower.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.n_bins = cfg.n_bins
        self.output = cfg.dpcrn_output
        self.scm, self.iscm = make_mappings(cfg, seed + 2)
        ins = [cfg.in_channels] + list(cfg.enc_channels[:-1])
        self.encoder = nn.ModuleList(
            ConvUnit(Conv2d(i, o, k, s), o)
            for i, o, k, s in zip(ins, cfg.enc_channels, cfg.enc_kernels, cfg.enc_strides)
        )
        self.dprnn = DprnnBlock(cfg.enc_channels[-1], cfg.rnn_hidden)
        self.dec_re = Decoder(cfg)
        self.dec_im = Decoder(cfg)

    def forward(self, s: Spec) -> Spec:
        if s.re.shape[-1] != self.n_bins or s.re.shape != s.im.shape:
            raise ValueError(f"dpcrn: expected matching (B, T, {self.n_bins}) planes, got {tuple(s.re.shape)}")
        x = torch.stack([self.scm(s.re), self.scm(s.im)], dim=1)
        skips, sizes = [], []
        for unit in self.encoder:
            sizes.append((x.shape[2], x.shape[3]))
            x = unit(x)
            skips.append(x)
        x = self.dprnn(x)
        re, im = self.iscm(self.dec_re(x, skips, sizes)), self.iscm(self.dec_im(x, skips, sizes))
        if self.output == "mask":
            return Spec(re * s.re - im * s.im, re * s.im + im * s.re)
        return Spec(re, im)


class EnhancementOutput(NamedTuple):
    mask: Tensor
    s_mha: Spec
    s_dpcrn: Spec | None


def spec_magnitude(s: Spec) -> Tensor:
    return torch.sqrt(s.re**2 + s.im**2)


class MhaDpcrn(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int | None = None):
        super().__init__()
        self.cfg = cfg
        seed = cfg.init_seed if seed is None else seed
        torch.manual_seed(seed)
        self.mhan = MHAN(cfg, seed)
        self.dpcrn = DPCRN(cfg, seed)

    def forward(self, x: Spec, stage: str = "joint") -> EnhancementOutput:
        mask = self.mhan(spec_magnitude(x))
        s_mha = apply_smm(mask, x)
        s_dpcrn = self.dpcrn(s_mha) if stage == "joint" else None
        return EnhancementOutput(mask, s_mha, s_dpcrn)


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
