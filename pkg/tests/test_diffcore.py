import math

import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from scmse.diffcore import (
    LSTM,
    AdamState,
    BatchNorm2d,
    CheckpointError,
    Conv2d,
    Dense,
    LayerNorm,
    MultiHeadAttention,
    ParameterStore,
    TransConv2d,
    adam_step,
    grad_check,
    load_checkpoint,
    lstm_cell,
    save_checkpoint,
    warmup_lr,
)
from scmse.diffcore.checkpoint import config_hash, load_into, read_arrays, write_arrays
from scmse.diffcore.suite import LINEAR_TOL, loss_cases, primitive_cases


# ---------------------------------------------------------------- primitives


def test_dense_identity():
    d = Dense(4, 4)
    with torch.no_grad():
        d.weight.copy_(torch.eye(4))
    x = torch.randn(3, 4)
    assert torch.equal(d(x), x)


def test_conv2d_all_ones_sum():
    conv = Conv2d(1, 1, (2, 2))
    with torch.no_grad():
        conv.weight.fill_(1.0)
    # (2 - 1) // 2 = 0 frequency padding; trim the causal time padding by reading the last frame
    out = conv(torch.ones(1, 1, 2, 2))
    assert out.shape == (1, 1, 2, 1)
    assert out[0, 0, -1, 0].item() == 4.0


def test_conv2d_is_causal_in_time():
    conv = Conv2d(2, 3, (3, 2))
    x = torch.randn(1, 2, 6, 9)
    y = x.clone()
    y[:, :, 4] += 1.0
    assert torch.equal(conv(x)[:, :, :4], conv(y)[:, :, :4])


def test_transconv_restores_encoder_geometry():
    conv = Conv2d(2, 4, (5, 2), (2, 1))
    up = TransConv2d(4, 2, (5, 2), (2, 1))
    x = torch.randn(2, 2, 7, 33)
    z = conv(x)
    assert z.shape == (2, 4, 7, 17)
    assert up(z, (7, 33)).shape == x.shape


def test_lstm_cell_zero_weights():
    x = torch.randn(3, 5)
    h, c = torch.zeros(3, 4), torch.zeros(3, 4)
    h1, c1 = lstm_cell(x, h, c, torch.zeros(16, 5), torch.zeros(16, 4), torch.zeros(16))
    assert torch.all(h1 == 0) and torch.all(c1 == 0)


def test_lstm_reverse_reads_sequence_backwards():
    fwd = LSTM(3, 4)
    rev = LSTM(3, 4, reverse=True)
    rev.load_state_dict(fwd.state_dict())
    x = torch.randn(2, 6, 3)
    np.testing.assert_allclose(rev(x).detach(), fwd(x.flip(1)).flip(1).detach(), rtol=1e-6, atol=1e-7)


def test_shape_errors_name_the_primitive():
    with pytest.raises(ValueError, match="dense: last dimension is 3, expected 4"):
        Dense(4, 2)(torch.zeros(2, 3))
    with pytest.raises(ValueError, match="conv2d: channel dimension"):
        Conv2d(2, 2, (3, 2))(torch.zeros(1, 3, 4, 8))
    with pytest.raises(ValueError, match="layer_norm"):
        LayerNorm(5)(torch.zeros(2, 4))


def test_layer_norm_normalizes_last_axis(rng):
    x = torch.tensor(rng.standard_normal((3, 7, 16)) * 5 + 2)
    y = LayerNorm(16).double()(x)
    np.testing.assert_allclose(y.mean(-1).detach(), 0, atol=1e-9)
    np.testing.assert_allclose(y.var(-1, unbiased=False).detach(), 1, atol=1e-4)


def test_batch_norm_running_average_momentum():
    bn = BatchNorm2d(1)
    x = torch.full((2, 1, 3, 4), 5.0)
    bn(x)
    assert bn.running_mean.item() == pytest.approx(0.99 * 0 + 0.01 * 5.0)
    bn.eval()
    y = bn(torch.zeros(1, 1, 1, 1))
    expected = (0 - bn.running_mean) / torch.sqrt(bn.running_var + bn.eps)
    assert y.item() == pytest.approx(expected.item())


# ---------------------------------------------------------------- attention


def test_attention_single_frame():
    mha = MultiHeadAttention(8, 2).double()
    x = torch.randn(1, 1, 8, dtype=torch.float64)
    out, weights = mha(x, return_weights=True)
    assert torch.all(weights == 1.0)
    expected = mha.out(mha.v(x))
    np.testing.assert_allclose(out.detach(), expected.detach(), rtol=1e-12)


def test_attention_rows_are_causal_distributions():
    mha = MultiHeadAttention(8, 4).double()
    _, w = mha(torch.randn(2, 6, 8, dtype=torch.float64), return_weights=True)
    np.testing.assert_allclose(w.sum(-1).detach(), 1.0, atol=1e-9)
    upper = torch.triu(torch.ones(6, 6, dtype=torch.bool), diagonal=1)
    assert torch.all(w[..., upper] == 0)


def test_attention_head_divisibility():
    with pytest.raises(ValueError):
        MultiHeadAttention(10, 4)


# ---------------------------------------------------------------- gradient checks


@pytest.mark.parametrize("name", list(primitive_cases()))
def test_primitive_gradients(name):
    fn, params, tol = primitive_cases()[name]
    report = grad_check(fn, params, tolerance=tol)
    assert report.passed, report.summary()


@pytest.mark.parametrize("name", list(loss_cases()))
def test_loss_gradients(name):
    fn, params, tol = loss_cases()[name]
    report = grad_check(fn, params, tolerance=tol)
    assert report.passed, report.summary()


def test_dense_l2_loss_passes_at_linear_tolerance():
    d = Dense(5, 3).double()
    x = torch.randn(4, 5, dtype=torch.float64)
    params = dict(d.named_parameters())
    report = grad_check(lambda: (d(x) ** 2).sum(), params, tolerance=LINEAR_TOL)
    assert report.passed, report.summary()


def test_corrupted_backward_is_detected():
    w = torch.randn(6, dtype=torch.float64, requires_grad=True)

    class Square(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x * x

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return 2 * (g * 2 * x)  # true gradient scaled by 2

    report = grad_check(lambda: Square.apply(w).sum(), {"w": w})
    assert not report.passed
    assert len(report.failures) == 6
    assert "FAIL" in report.summary()


def test_grad_check_samples_at_least_ten_coordinates():
    w = torch.randn(50, dtype=torch.float64, requires_grad=True)
    report = grad_check(lambda: (w**3).sum(), {"w": w}, n_coords=10)
    assert len(report.entries) == 10 and report.passed


# ---------------------------------------------------------------- warmup schedule


def test_warmup_examples():
    assert warmup_lr(1) == pytest.approx(8.8388e-8, rel=1e-4)
    assert warmup_lr(1) == (1 / math.sqrt(128)) * 1e-6
    assert warmup_lr(10000) == pytest.approx(8.8388e-4, rel=1e-4)
    assert warmup_lr(40000) == pytest.approx(4.4194e-4, rel=1e-4)


def test_warmup_rejects_step_zero():
    with pytest.raises(ValueError):
        warmup_lr(0)


def test_warmup_shape():
    lr = np.array([warmup_lr(s) for s in range(1, 30001)])
    assert np.all(np.diff(lr[:10000]) > 0)
    assert np.all(np.diff(lr[9999:]) < 0)
    assert int(np.argmax(lr)) + 1 == 10000


# ---------------------------------------------------------------- Adam


def _scalar_store(value=0.0, mask=None):
    p = torch.tensor([value], dtype=torch.float64, requires_grad=True)
    masks = {"p": torch.tensor(mask)} if mask is not None else None
    return p, ParameterStore({"p": p}, masks)


def test_adam_first_step_moves_by_lr():
    p, store = _scalar_store()
    p.grad = torch.ones_like(p)
    state = AdamState()
    adam_step(store, state, 1e-3)
    assert p.item() == pytest.approx(-1e-3 / (1 + 1e-9), rel=1e-12)
    assert state.t == 1


def test_adam_zero_grad_leaves_value():
    p, store = _scalar_store(0.7)
    p.grad = torch.zeros_like(p)
    adam_step(store, AdamState(), 1e-2)
    assert p.item() == 0.7


def test_adam_masked_entry_unchanged():
    p = torch.tensor([1.0, 2.0, 3.0], requires_grad=True)
    store = ParameterStore({"p": p}, {"p": torch.tensor([True, False, True])})
    state = AdamState()
    for _ in range(5):
        p.grad = torch.ones_like(p)
        adam_step(store, state, 0.1)
    assert p[1].item() == 2.0
    assert p[0].item() < 1.0 and p[2].item() < 3.0


@given(st.integers(0, 2**31 - 1))
def test_adam_all_false_mask_is_noop(seed):
    g = torch.Generator().manual_seed(seed)
    p = torch.randn(4, 3, generator=g, requires_grad=True)
    before = p.detach().clone()
    store = ParameterStore({"p": p}, {"p": torch.zeros(4, 3, dtype=torch.bool)})
    p.grad = torch.randn(4, 3, generator=g)
    adam_step(store, AdamState(), 0.5)
    assert torch.equal(p.detach(), before)


def test_adam_nan_gradient_names_parameter():
    p, store = _scalar_store()
    p.grad = torch.tensor([float("nan")], dtype=torch.float64)
    with pytest.raises(FloatingPointError, match="'p'"):
        adam_step(store, AdamState(), 1e-3)


def test_store_rejects_mismatched_mask():
    p = torch.zeros(3, requires_grad=True)
    with pytest.raises(ValueError):
        ParameterStore({"p": p}, {"p": torch.ones(4, dtype=torch.bool)})


# ---------------------------------------------------------------- checkpoints


def test_array_round_trip_bit_exact(tmp_path, rng):
    arrays = {
        "a": rng.standard_normal((3, 4)).astype(np.float32),
        "b.weight": rng.standard_normal(7).astype(np.float32),
        "c": rng.standard_normal((2, 2, 2)),
        "scalar": np.array(np.float32(1.5)),
    }
    path = tmp_path / "x.ckpt"
    write_arrays(path, arrays, {"stage": "1", "step": 3})
    back, meta = read_arrays(path)
    assert meta == {"stage": "1", "step": 3}
    assert set(back) == set(arrays)
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and back[k].shape == v.shape
        assert back[k].tobytes() == v.tobytes()


def test_checkpoint_layout_starts_with_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    write_arrays(path, {"w": np.zeros(2, np.float32)}, {})
    data = path.read_bytes()
    assert data[:4] == b"SCM1"
    assert int.from_bytes(data[4:8], "little") == 1


def test_module_and_adam_round_trip(tmp_path):
    torch.manual_seed(0)
    mod = torch.nn.Sequential(Dense(3, 4), Dense(4, 2))
    store = ParameterStore.from_module(mod)
    state = AdamState()
    for _ in range(3):
        store.zero_grad()
        mod(torch.randn(5, 3)).pow(2).sum().backward()
        adam_step(store, state, 1e-2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, mod, state, {"stage": "1", "step": 3, "seed": 0, "config_hash": config_hash("x")})
    weights, state2, meta = load_checkpoint(path)
    assert state2.t == 3 and meta["step"] == 3
    for name, p in mod.named_parameters():
        assert weights[name].tobytes() == p.detach().numpy().tobytes()
        assert state2.m[name].numpy().tobytes() == state.m[name].numpy().tobytes()
        assert state2.v[name].numpy().tobytes() == state.v[name].numpy().tobytes()
    fresh = torch.nn.Sequential(Dense(3, 4), Dense(4, 2))
    loaded = load_into(fresh, weights)
    assert len(loaded) == 4
    for a, b in zip(fresh.parameters(), mod.parameters()):
        assert torch.equal(a, b)


def test_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"XXXX" + bytes(20))
    with pytest.raises(CheckpointError, match="bad magic"):
        read_arrays(path)


def test_truncated_file(tmp_path):
    path = tmp_path / "t.ckpt"
    write_arrays(path, {"w": np.ones((10, 10), np.float32)}, {"a": 1})
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(CheckpointError, match="truncated"):
        read_arrays(path)


def test_unknown_version(tmp_path):
    path = tmp_path / "v.ckpt"
    write_arrays(path, {}, {})
    data = bytearray(path.read_bytes())
    data[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(data))
    with pytest.raises(CheckpointError, match="version"):
        read_arrays(path)
