"""The finite-difference gradient suite run by ``scmse gradcheck`` and the tests.

Every case builds a small random float64 instance, contracts the output with a
fixed random cotangent, and checks all parameters plus the input.
"""

from __future__ import annotations

from typing import Callable

import torch
from torch import Tensor, nn

from . import primitives as P
from .attention import MultiHeadAttention
from .gradcheck import GradReport, grad_check

LINEAR_TOL = 1e-6
# A smaller probe keeps end-to-end perturbations from straddling a PReLU/ReLU kink,
# which at 1e-5 occasionally happens somewhere among thousands of activations.
MODEL_STEP = 1e-6


def _contract(out: Tensor, seed: int) -> Callable[[Tensor], Tensor]:
    g = torch.Generator().manual_seed(seed)
    cot = torch.randn(out.shape, generator=g, dtype=out.dtype)
    return lambda y: (y * cot).sum()


def module_case(module: nn.Module, x: Tensor, forward=None, seed: int = 0):
    """(loss_fn, params) for checking ``module`` and its input ``x``."""
    module = module.double()
    x = x.double().requires_grad_(True)
    fwd = forward or (lambda: module(x))
    with torch.no_grad():
        contract = _contract(fwd(), seed + 1)
    params = {f"param:{n}": p for n, p in module.named_parameters()}
    params["input"] = x
    return (lambda: contract(fwd())), params


def _rand(*shape, seed: int) -> Tensor:
    return torch.randn(*shape, generator=torch.Generator().manual_seed(seed), dtype=torch.float64)


def primitive_cases(seed: int = 0) -> dict[str, tuple[Callable, dict, float]]:
    """name -> (loss_fn, params, tolerance)."""
    torch.manual_seed(seed)
    cases = {}

    def add(name, module, x, tol=1e-4, forward=None):
        fn, params = module_case(module, x, forward, seed)
        cases[name] = (fn, params, tol)

    add("dense_bias", P.Dense(5, 4), _rand(3, 5, seed=seed), LINEAR_TOL)
    add("dense_nobias", P.Dense(6, 3, bias=False), _rand(2, 6, seed=seed + 1), LINEAR_TOL)
    add("conv2d", P.Conv2d(2, 3, (3, 2), (2, 1)), _rand(2, 2, 4, 7, seed=seed + 2), LINEAR_TOL)
    tc = P.TransConv2d(3, 2, (3, 2), (2, 1))
    xt = _rand(2, 3, 4, 4, seed=seed + 3).requires_grad_(True)
    add("transconv2d", tc, xt, LINEAR_TOL, forward=lambda: tc(xt, (4, 7)))

    cell = P.LSTM(3, 4)
    cell_x = _rand(5, 3, seed=seed + 4).requires_grad_(True)
    h0 = _rand(5, 4, seed=seed + 5).requires_grad_(True)
    c0 = _rand(5, 4, seed=seed + 6).requires_grad_(True)
    cell.double()
    fwd = lambda: torch.cat(P.lstm_cell(cell_x, h0, c0, cell.w_ih, cell.w_hh, cell.bias), dim=-1)
    fn, params = module_case(cell, cell_x, fwd, seed)
    params.update({"h0": h0, "c0": c0})
    cases["lstm_cell"] = (fn, params, 1e-4)

    add("lstm", P.LSTM(3, 4), _rand(2, 5, 3, seed=seed + 7))
    add("bilstm", P.BiLSTM(3, 4), _rand(2, 5, 3, seed=seed + 8))
    add("layer_norm", P.LayerNorm(6), _rand(3, 4, 6, seed=seed + 9))
    bn = P.BatchNorm2d(3)
    add("batch_norm_train", bn, _rand(2, 3, 4, 5, seed=seed + 10))
    bn_eval = P.BatchNorm2d(3).double()
    with torch.no_grad():
        bn_eval.running_mean.copy_(_rand(3, seed=seed + 11))
        bn_eval.running_var.copy_(_rand(3, seed=seed + 12).abs() + 0.5)
    bn_eval.eval()
    add("batch_norm_eval", bn_eval, _rand(2, 3, 4, 5, seed=seed + 13), LINEAR_TOL)
    add("instance_norm", P.InstanceNorm2d(3), _rand(2, 3, 4, 5, seed=seed + 14))
    add("instance_norm_global", P.InstanceNorm2d(3, per_frame=False), _rand(2, 3, 4, 5, seed=seed + 15))
    add("prelu", P.PReLU(3), _rand(2, 3, 4, 5, seed=seed + 16))
    add("relu", _Fn(torch.relu), _rand(4, 6, seed=seed + 17))
    add("sigmoid", _Fn(torch.sigmoid), _rand(4, 6, seed=seed + 18))
    add("mha_causal", MultiHeadAttention(8, 2, causal=True), _rand(2, 5, 8, seed=seed + 19))
    return cases


class _Fn(nn.Module):
    def __init__(self, fn):
        super().__init__()
        self.fn = fn

    def forward(self, x):
        return self.fn(x)


def loss_cases(seed: int = 0) -> dict[str, tuple[Callable, dict, float]]:
    """Power-compressed losses with respect to the estimate planes."""
    from ..model.losses import loss_mag, loss_ri, loss_stage1, loss_stage2
    from ..model.network import Spec

    ref = Spec(_rand(2, 4, 6, seed=seed), _rand(2, 4, 6, seed=seed + 1))
    est_re = _rand(2, 4, 6, seed=seed + 2).requires_grad_(True)
    est_im = _rand(2, 4, 6, seed=seed + 3).requires_grad_(True)
    mha_re = _rand(2, 4, 6, seed=seed + 4).requires_grad_(True)
    mha_im = _rand(2, 4, 6, seed=seed + 5).requires_grad_(True)
    est, mha = Spec(est_re, est_im), Spec(mha_re, mha_im)
    both = {"est_re": est_re, "est_im": est_im}
    return {
        "loss_mag": (lambda: loss_mag(est, ref), both, 1e-4),
        "loss_ri": (lambda: loss_ri(est, ref), both, 1e-4),
        "loss_stage1": (lambda: loss_stage1(mha, ref), {"mha_re": mha_re, "mha_im": mha_im}, 1e-4),
        "loss_stage2": (
            lambda: loss_stage2(mha, est, ref)[0],
            {**both, "mha_re": mha_re, "mha_im": mha_im},
            1e-4,
        ),
    }


def model_case(stage: str = "joint", n_frames: int = 4, seed: int = 0, dpcrn_output: str = "mask"):
    """End-to-end loss (L1 or L2) of the reduced-width model on a random 4-frame batch."""
    from ..model.config import ModelConfig
    from ..model.losses import loss_stage1, loss_stage2
    from ..model.network import MhaDpcrn, Spec

    cfg = ModelConfig.reduced(dpcrn_output=dpcrn_output)
    model = MhaDpcrn(cfg, seed).double()
    model.train()
    g = torch.Generator().manual_seed(seed + 100)
    shape = (2, n_frames, cfg.n_bins)
    noisy = Spec(torch.randn(shape, generator=g, dtype=torch.float64), torch.randn(shape, generator=g, dtype=torch.float64))
    clean = Spec(torch.randn(shape, generator=g, dtype=torch.float64), torch.randn(shape, generator=g, dtype=torch.float64))

    def loss():
        out = model(noisy, stage=stage)
        if stage == "joint":
            return loss_stage2(out.s_mha, out.s_dpcrn, clean)[0]
        return loss_stage1(out.s_mha, clean)

    module = model if stage == "joint" else model.mhan
    prefix = "" if stage == "joint" else "mhan."
    params = {prefix + n: p for n, p in module.named_parameters()}
    return loss, params


def run_suite(tolerance: float = 1e-4, seed: int = 0, n_coords: int = 10, log=print) -> dict[str, GradReport]:
    """Primitives, losses, and the end-to-end reduced-width model; linear cases use min(tolerance, 1e-6)."""
    reports = {}
    cases = {**primitive_cases(seed), **loss_cases(seed)}
    for name, (fn, params, tol) in cases.items():
        tol = min(tol, tolerance) if tol == LINEAR_TOL else tolerance
        reports[name] = grad_check(fn, params, tolerance=tol, n_coords=n_coords, seed=seed)
    for stage in ("1", "joint"):
        fn, params = model_case(stage, seed=seed)
        reports[f"model_stage_{stage}"] = grad_check(
            fn, params, tolerance=tolerance, n_coords=n_coords, seed=seed, step=MODEL_STEP, richardson=True
        )
    if log is not None:
        for name, rep in reports.items():
            log(f"{name}: {rep.summary()}")
    return reports
