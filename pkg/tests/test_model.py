import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from scmse.audio_io import AudioClip, synth_clip
from scmse.diffcore import load_checkpoint
from scmse.diffcore import grad_check
from scmse.diffcore.checkpoint import write_arrays
from scmse.diffcore.suite import MODEL_STEP, model_case
from scmse.model.config import ModelConfig
from scmse.model.enhance import StageError, enhance, enhance_array, pad_for_synthesis
from scmse.model.losses import LossBreakdown, loss_mag, loss_ri, loss_stage1, loss_stage2
from scmse.model.network import MHAN, MhaDpcrn, Spec, apply_smm, count_parameters
from scmse.model.train import SpectralDataset, TrainingError, batch_order, train

CFG = ModelConfig.reduced()


@pytest.fixture(scope="module")
def model():
    m = MhaDpcrn(CFG, seed=0).double()
    m.eval()
    return m


def _spec(shape, seed, scale=1.0):
    g = torch.Generator().manual_seed(seed)
    return Spec(
        torch.randn(shape, generator=g, dtype=torch.float64) * scale,
        torch.randn(shape, generator=g, dtype=torch.float64) * scale,
    )


def _c(z: complex) -> Spec:
    return Spec(torch.tensor([[z.real]], dtype=torch.float64), torch.tensor([[z.imag]], dtype=torch.float64))


# ---------------------------------------------------------------- MHAN and SMM


def test_mask_in_open_unit_interval(model):
    x = _spec((2, 6, 601), 0, scale=50.0)
    mask = model(x, stage="1").mask
    assert torch.all(mask > 0) and torch.all(mask < 1)


def test_zero_input_mask_is_reproducible(model):
    zero = torch.zeros(1, 5, 601, dtype=torch.float64)
    a, b = model.mhan(zero), model.mhan(zero)
    assert torch.equal(a[:, 0], b[:, 0])
    assert torch.all((a > 0) & (a < 1))


def test_mhan_rejects_wrong_bin_count(model):
    with pytest.raises(ValueError, match="600 bins"):
        model.mhan(torch.zeros(1, 3, 600, dtype=torch.float64))


def test_apply_smm_examples():
    x = _c(2 + 2j)
    out = apply_smm(torch.tensor([[0.5]], dtype=torch.float64), x)
    assert (out.re.item(), out.im.item()) == (1.0, 1.0)
    ones = apply_smm(torch.ones(1, 1, dtype=torch.float64), x)
    assert torch.equal(ones.re, x.re) and torch.equal(ones.im, x.im)
    with pytest.raises(ValueError):
        apply_smm(torch.ones(2, 1), x)


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_apply_smm_preserves_phase(seed):
    x = _spec((3, 17), seed)
    mask = torch.rand(3, 17, generator=torch.Generator().manual_seed(seed), dtype=torch.float64) * 0.98 + 0.01
    out = apply_smm(mask, x)
    diff = torch.angle(torch.complex(out.re, out.im)) - torch.angle(torch.complex(x.re, x.im))
    assert torch.max(torch.abs(diff)) <= 1e-9


# ---------------------------------------------------------------- causality


@pytest.mark.parametrize("stage", ["1", "joint"])
def test_causality(model, stage):
    x = _spec((1, 8, 601), 3, scale=20.0)
    t = 5
    y = Spec(x.re.clone(), x.im.clone())
    y.re[:, t] += 7.0
    y.im[:, t:] -= 3.0
    with torch.no_grad():
        a, b = model(x, stage=stage), model(y, stage=stage)
    out_a = a.s_dpcrn if stage == "joint" else a.s_mha
    out_b = b.s_dpcrn if stage == "joint" else b.s_mha
    assert torch.equal(a.mask[:, :t], b.mask[:, :t])
    assert torch.max(torch.abs(out_a.re[:, :t] - out_b.re[:, :t])) <= 1e-6
    assert torch.max(torch.abs(out_a.im[:, :t] - out_b.im[:, :t])) <= 1e-6
    # the perturbed frame itself does change the output
    assert not torch.equal(out_a.re[:, t], out_b.re[:, t])


def test_dpcrn_output_shape_and_zero_input(model):
    zero = Spec(torch.zeros(1, 4, 601, dtype=torch.float64), torch.zeros(1, 4, 601, dtype=torch.float64))
    out = model(zero, stage="joint").s_dpcrn
    assert out.re.shape == (1, 4, 601) and out.im.shape == (1, 4, 601)
    assert torch.all(torch.isfinite(out.re)) and torch.all(torch.isfinite(out.im))
    again = model(zero, stage="joint").s_dpcrn
    assert torch.equal(out.re, again.re)


def test_dpcrn_mask_variant_multiplies_pre_enhanced_spectrum():
    m = MhaDpcrn(CFG, seed=1).double().eval()
    assert CFG.dpcrn_output == "mask"
    x = _spec((1, 4, 601), 5, scale=3.0)
    out = m(x, stage="joint")
    # a zero pre-enhanced bin stays zero whatever the mask
    s_mha = Spec(out.s_mha.re.clone(), out.s_mha.im.clone())
    s_mha.re[0, 0, 10] = 0.0
    s_mha.im[0, 0, 10] = 0.0
    refined = m.dpcrn(s_mha)
    assert refined.re[0, 0, 10].item() == 0.0 and refined.im[0, 0, 10].item() == 0.0


def test_dpcrn_direct_variant():
    m = MhaDpcrn(ModelConfig.reduced(dpcrn_output="direct"), seed=1).double().eval()
    x = _spec((1, 6, 601), 5, scale=3.0)
    out = m(x, stage="joint")
    assert out.s_dpcrn.re.shape == (1, 6, 601)
    # direct estimates do not vanish where the pre-enhanced spectrum does
    zero = Spec(torch.zeros(1, 6, 601, dtype=torch.float64), torch.zeros(1, 6, 601, dtype=torch.float64))
    assert torch.all(torch.isfinite(m.dpcrn(zero).re))


def test_direct_variant_gradients():
    fn, params = model_case("joint", dpcrn_output="direct")
    params = {k: v for k, v in params.items() if k.startswith("dpcrn.")}
    report = grad_check(fn, params, n_coords=3, step=MODEL_STEP, richardson=True)
    assert report.passed, report.summary()


# ---------------------------------------------------------------- losses


def test_loss_mag_single_bin():
    assert loss_mag(_c(1 + 0j), _c(8 + 0j)).item() == pytest.approx(1.0, abs=1e-12)


def test_loss_ri_single_bin():
    assert loss_ri(_c(8j), _c(8 + 0j)).item() == pytest.approx(8.0, abs=1e-12)


def test_losses_vanish_at_reference():
    s = _spec((2, 5, 601), 1, scale=4.0)
    assert loss_mag(s, s).item() == 0.0
    assert loss_ri(s, s).item() == 0.0
    assert loss_stage1(s, s).item() == 0.0
    total, br = loss_stage2(s, s, s)
    assert total.item() == 0.0 and br.l2 == 0.0


@given(st.integers(0, 2**31 - 1))
@settings(max_examples=20)
def test_loss_ri_symmetric_and_nonnegative(seed):
    a, b = _spec((2, 3, 7), seed), _spec((2, 3, 7), seed + 1)
    assert loss_ri(a, b).item() == pytest.approx(loss_ri(b, a).item(), rel=1e-12)
    assert loss_mag(a, b).item() >= 0


def test_stage1_is_loss_mag_bitwise():
    a, b = _spec((2, 3, 9), 4), _spec((2, 3, 9), 5)
    assert loss_stage1(a, b).item() == loss_mag(a, b).item()


def test_breakdown_sums_to_total():
    mha, dp, ref = _spec((2, 4, 601), 6), _spec((2, 4, 601), 7), _spec((2, 4, 601), 8)
    total, br = loss_stage2(mha, dp, ref)
    assert isinstance(br, LossBreakdown)
    assert abs(br.l2 - total.item()) <= 1e-9 * max(1.0, abs(total.item()))
    assert br.l1 == br.l_mag_mha


def test_losses_average_over_batch():
    a, b = _spec((1, 3, 5), 9), _spec((1, 3, 5), 10)
    single = loss_mag(a, b).item()
    doubled = loss_mag(Spec(a.re.repeat(2, 1, 1), a.im.repeat(2, 1, 1)), Spec(b.re.repeat(2, 1, 1), b.im.repeat(2, 1, 1)))
    assert doubled.item() == pytest.approx(single, rel=1e-12)


def test_joint_loss_reaches_every_mhan_parameter():
    m = MhaDpcrn(CFG, seed=2).double().train()
    noisy, clean = _spec((2, 6, 601), 11, 10.0), _spec((2, 6, 601), 12, 10.0)
    out = m(noisy, stage="joint")
    loss_stage2(out.s_mha, out.s_dpcrn, clean)[0].backward()
    for name, p in m.named_parameters():
        assert p.grad is not None and torch.count_nonzero(p.grad) > 0, name


# ---------------------------------------------------------------- config and size


def test_config_text_round_trip(tmp_path):
    cfg = ModelConfig.reduced(high_learn=False, dpcrn_output="direct")
    path = tmp_path / "c.cfg"
    cfg.save(path)
    assert ModelConfig.load(path) == cfg
    assert "high_learn = off" in path.read_text()
    assert ModelConfig.from_text("# comment\nheads = 4\n").heads == 4


def test_config_rejects_bad_values():
    with pytest.raises(ValueError, match="unknown key"):
        ModelConfig.from_text("bogus = 1")
    with pytest.raises(ValueError):
        ModelConfig(n_compressed=100)  # K = 126 does not fit
    with pytest.raises(ValueError):
        ModelConfig(dpcrn_output="phase")
    with pytest.raises(ValueError):
        ModelConfig(heads=7)


def test_full_width_parameter_count():
    m = MhaDpcrn(ModelConfig.full_width())
    assert count_parameters(m) == 5_120_690
    assert count_parameters(m.mhan) == 4_257_024
    assert MHAN(ModelConfig.full_width()).scm.weight.shape == (256, 601)


# ---------------------------------------------------------------- training


@pytest.fixture(scope="module")
def toy_data():
    pairs, names = [], []
    for i in range(4):
        clean = synth_clip("speechlike", 0.5, i)
        noise = synth_clip("white", 0.5, 100 + i)
        noisy = AudioClip(clean.samples + 0.1 * noise.samples)
        pairs.append((clean, noisy))
        names.append(f"c{i}")
    return SpectralDataset.from_pairs(pairs, names, CFG.stft, frames=6)


def test_batch_order_is_deterministic():
    a = batch_order(16, 2, 20, seed=3)
    b = batch_order(16, 2, 20, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert sorted(np.concatenate(a[:8]).tolist()) == list(range(16))


def test_training_is_deterministic_in_double(toy_data):
    a = train(toy_data, "1", CFG, 3, seed=5, dtype=torch.float64)
    b = train(toy_data, "1", CFG, 3, seed=5, dtype=torch.float64)
    assert a.log_rows == b.log_rows


def test_joint_requires_stage1_checkpoint(toy_data):
    with pytest.raises(TrainingError, match="stage-1 checkpoint"):
        train(toy_data, "joint", CFG, 1)


def test_high_learn_rows_survive_training(toy_data, tmp_path):
    ckpt = tmp_path / "s1.ckpt"
    log = tmp_path / "s1.csv"
    before = MhaDpcrn(CFG, seed=0)
    res = train(toy_data, "1", CFG, 4, seed=0, ckpt_out=ckpt, log_path=log)
    K = CFG.K
    w0, w1 = before.mhan.scm.weight.detach(), res.model.mhan.scm.weight.detach()
    assert torch.equal(w1[:K], w0[:K])
    assert not torch.equal(w1[K:], w0[K:])
    assert log.read_text().splitlines()[0] == "step,lr,l_mag_mha,l_mag_dpcrn,l_ri_dpcrn,total"

    joint = train(toy_data, "joint", CFG, 2, seed=0, init_ckpt=ckpt, ckpt_out=tmp_path / "j.ckpt")
    assert joint.meta["stage"] == "joint" and joint.meta["step"] == 6
    assert joint.log_rows[0][0] == 5  # warmup counter continues from stage 1
    assert torch.equal(joint.model.mhan.scm.weight.detach()[:K], w0[:K])


def test_joint_init_loads_mhan_and_leaves_dpcrn_fresh(toy_data, tmp_path):
    ckpt = tmp_path / "s1.ckpt"
    res = train(toy_data, "1", CFG, 2, seed=0, ckpt_out=ckpt)
    arrays, adam, meta = load_checkpoint(ckpt)
    assert meta["stage"] == "1" and meta["step"] == 2 and adam.t == 2
    # poison the DPCRN entries: joint initialization must ignore them
    poisoned = {k: (np.zeros_like(v) if k.startswith("dpcrn.") else v) for k, v in arrays.items()}
    write_arrays(ckpt, poisoned, meta)
    joint = train(toy_data, "joint", CFG, 0, seed=0, init_ckpt=ckpt)
    for name, p in joint.model.mhan.named_parameters():
        assert torch.equal(p, dict(res.model.mhan.named_parameters())[name]), name
    fresh = MhaDpcrn(CFG, seed=0)
    for (name, p), q in zip(joint.model.dpcrn.named_parameters(), fresh.dpcrn.parameters()):
        assert torch.equal(p, q), name


def test_high_learn_off_frees_low_rows(toy_data):
    cfg = ModelConfig.reduced(high_learn=False)
    before = MhaDpcrn(cfg, seed=0)
    res = train(toy_data, "1", cfg, 3, seed=0)
    assert not torch.equal(res.model.mhan.scm.weight.detach()[: cfg.K], before.mhan.scm.weight.detach()[: cfg.K])


# ---------------------------------------------------------------- enhancement


def test_pad_for_synthesis_geometry():
    cfg = CFG.stft
    padded, lead = pad_for_synthesis(np.ones(5000), cfg)
    assert lead == 600
    assert (len(padded) - cfg.win_len) % cfg.hop == 0
    assert len(padded) - lead - 5000 >= 600


def test_enhance_zero_and_random_input(model):
    zero = enhance_array(model, np.zeros(4800))
    assert zero.shape == (4800,)
    assert np.sqrt(np.mean(zero**2)) <= 1e-3
    noisy = np.random.default_rng(0).standard_normal(7000) * 0.3
    out = enhance_array(model, noisy)
    assert out.shape == (7000,) and np.all(np.isfinite(out))


def test_enhance_refuses_stage1_checkpoint(toy_data, tmp_path):
    ckpt = tmp_path / "s1.ckpt"
    train(toy_data, "1", CFG, 1, ckpt_out=ckpt)
    with pytest.raises(StageError, match="checkpoint stage: 1, need joint"):
        enhance(AudioClip(np.zeros(2400)), ckpt)
