"""Model configuration and its ``key = value`` text format."""

from __future__ import annotations

import ast
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path

from ..dsp import StftConfig
from ..scm import bin_of_knee

DPCRN_OUTPUTS = ("mask", "direct")


@dataclass
class ModelConfig:
    # stft (fixed framing, kept here so the config file is self-describing)
    win_len: int = 1200
    hop: int = 600
    fft_len: int = 1200
    # spectral compression mapping
    n_compressed: int = 256
    knee_hz: float = 5000.0
    high_learn: bool = True
    # MHAN
    mha_blocks: int = 5
    heads: int = 8
    ffn_hidden: int = 1024
    # DPCRN, kernel/stride tuples are (freq, time)
    enc_channels: list[int] = field(default_factory=lambda: [16, 32, 48, 64, 80])
    enc_kernels: list[tuple[int, int]] = field(default_factory=lambda: [(5, 2), (3, 2), (3, 2), (3, 2), (2, 1)])
    enc_strides: list[tuple[int, int]] = field(default_factory=lambda: [(2, 1), (1, 1), (1, 1), (1, 1), (1, 1)])
    rnn_hidden: int = 127
    in_channels: int = 2
    # "mask": decoders emit a complex mask multiplied onto the pre-enhanced spectrum;
    # "direct": they emit the refined real/imag planes outright
    dpcrn_output: str = "mask"
    # losses / training
    gamma: Fraction = Fraction(1, 3)
    batch_size: int = 2
    train_frames: int = 79
    init_seed: int = 0

    def __post_init__(self):
        if self.n_compressed % self.heads:
            raise ValueError(f"n_compressed {self.n_compressed} not divisible by heads {self.heads}")
        n = len(self.enc_channels)
        if len(self.enc_kernels) != n or len(self.enc_strides) != n:
            raise ValueError("encoder channel, kernel and stride lists must have equal length")
        if not 0 < self.K < self.n_compressed < self.stft.n_bins:
            raise ValueError(
                f"need 0 < K < n_compressed < {self.stft.n_bins}; K={self.K}, n_compressed={self.n_compressed}"
            )
        if self.dpcrn_output not in DPCRN_OUTPUTS:
            raise ValueError(f"dpcrn_output must be one of {DPCRN_OUTPUTS}, got {self.dpcrn_output!r}")
        self.enc_kernels = [tuple(k) for k in self.enc_kernels]
        self.enc_strides = [tuple(s) for s in self.enc_strides]
        self.gamma = Fraction(self.gamma)

    @property
    def stft(self) -> StftConfig:
        return StftConfig(self.win_len, self.hop, self.fft_len)

    @property
    def n_bins(self) -> int:
        return self.stft.n_bins

    @property
    def K(self) -> int:
        return bin_of_knee(self.stft, self.knee_hz)

    @classmethod
    def full_width(cls, **overrides) -> "ModelConfig":
        """The full-size model (the dataclass defaults), with optional field overrides."""
        return cls(**overrides)

    @classmethod
    def reduced(cls, **overrides) -> "ModelConfig":
        """Desk-scale width: 64 compressed bins, 2 attention blocks, 8-channel encoder.

        64 compressed bins cannot hold the 126-bin identity block of a 5 kHz knee,
        so the knee moves to 1250 Hz (K = 32, 32 triangular filters).
        """
        base = dict(
            n_compressed=64,
            knee_hz=1250.0,
            mha_blocks=2,
            ffn_hidden=256,
            enc_channels=[8, 8, 8, 8, 8],
        )
        base.update(overrides)
        return cls(**base)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, bool):
                text = "on" if value else "off"
            elif isinstance(value, Fraction):
                text = str(value)
            else:
                text = repr(value)
            lines.append(f"{f.name} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, value)
        return cls(**values)

    @classmethod
    def load(cls, path) -> "ModelConfig":
        return cls.from_text(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    def as_dict(self) -> dict:
        return asdict(self)


def _parse_value(key: str, value: str):
    if key == "high_learn":
        if value not in ("on", "off"):
            raise ValueError(f"high_learn must be 'on' or 'off', got {value!r}")
        return value == "on"
    if key == "gamma":
        return Fraction(value)
    return ast.literal_eval(value)
