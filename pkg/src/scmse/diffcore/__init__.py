from .attention import MultiHeadAttention
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradReport, grad_check
from .optim import AdamState, ParameterStore, adam_step, warmup_lr
from .primitives import (
    LSTM,
    BatchNorm2d,
    BiLSTM,
    Conv2d,
    Dense,
    InstanceNorm2d,
    LayerNorm,
    PReLU,
    TransConv2d,
    lstm_cell,
)
