"""Command-line entry point: ``scmse <subcommand> ...``.

Exit codes: 0 on success, 1 on usage errors (bad or missing flags, inconsistent
requests), 2 on runtime failures (unreadable files, failed checks, bad checkpoints).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError(f"expected 'on' or 'off', got {text!r}")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scmse", description="Two-stage full-band speech enhancement with spectral compression mapping.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic clean/noise/recipe dataset")
    s.add_argument("--out", required=True, type=Path)
    s.add_argument("--clips", type=int, default=16)
    s.add_argument("--snr-min", type=float, default=-5.0)
    s.add_argument("--snr-max", type=float, default=15.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=1.0, help="clip length in seconds")

    t = sub.add_parser("train", help="stage-1 MHAN pre-training or joint MHAN+DPCRN training")
    t.add_argument("--stage", required=True, choices=["1", "joint"])
    t.add_argument("--data", required=True, type=Path)
    t.add_argument("--config", type=Path, help="model config file (default: full-width configuration)")
    t.add_argument("--ckpt", required=True, type=Path, help="checkpoint to write")
    t.add_argument("--init-ckpt", type=Path, help="stage-1 checkpoint (required for --stage joint)")
    t.add_argument("--steps", type=int, required=True)
    t.add_argument("--high-learn", type=_on_off, help="override the config's High-Learn setting (on|off)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--log", type=Path, help="loss log CSV (default: <ckpt>.csv)")

    e = sub.add_parser("enhance", help="enhance one WAV file with a joint checkpoint")
    e.add_argument("--in", dest="inp", required=True, type=Path)
    e.add_argument("--out", required=True, type=Path)
    e.add_argument("--ckpt", required=True, type=Path)

    v = sub.add_parser("eval", help="SI-SDR report over matching clean/noisy/enhanced directories")
    v.add_argument("--clean", required=True, type=Path)
    v.add_argument("--noisy", required=True, type=Path)
    v.add_argument("--enhanced", required=True, type=Path)
    v.add_argument("--report", required=True, type=Path)

    i = sub.add_parser("inspect-scm", help="dump a compression matrix and report model size")
    i.add_argument("--ckpt", type=Path, help="checkpoint to read (default: fresh model from --config)")
    i.add_argument("--config", type=Path, help="model config for a fresh model (default: full width)")
    i.add_argument("--out", required=True, type=Path)
    i.add_argument("--which", choices=["mhan", "dpcrn"], default="mhan")

    g = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    g.add_argument("--tolerance", type=float, default=1e-4)
    g.add_argument("--seed", type=int, default=0)
    return p


def _configure_threads() -> None:
    value = os.environ.get("SCM_THREADS")
    if value:
        try:
            n = int(value)
        except ValueError:
            raise UsageError(f"SCM_THREADS must be a positive integer, got {value!r}") from None
        if n < 1:
            raise UsageError(f"SCM_THREADS must be a positive integer, got {value!r}")
        torch.set_num_threads(n)


def _load_config(path):
    from .model.config import ModelConfig

    return ModelConfig.load(path) if path is not None else ModelConfig.full_width()


def cmd_synth(args) -> int:
    from .audio_io import synth_dataset

    if args.clips < 1:
        raise UsageError("--clips must be at least 1")
    if args.snr_min > args.snr_max:
        raise UsageError("--snr-min must not exceed --snr-max")
    recipes = synth_dataset(args.out, args.clips, args.snr_min, args.snr_max, args.seed, args.duration)
    print(f"wrote {len(recipes)} mixtures to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from dataclasses import replace

    from .model.network import count_parameters
    from .model.train import SpectralDataset, normalize_stage, stage_store, train

    if args.stage == "joint" and args.init_ckpt is None:
        raise UsageError("--stage joint requires --init-ckpt with a stage-1 checkpoint")
    if args.steps < 0:
        raise UsageError("--steps must be non-negative")
    cfg = _load_config(args.config)
    if args.high_learn is not None:
        cfg = replace(cfg, high_learn=args.high_learn)
    data = SpectralDataset.from_directory(args.data, cfg.stft, frames=cfg.train_frames)
    if len(data) < cfg.batch_size:
        raise RuntimeError(f"dataset has {len(data)} clips, fewer than batch size {cfg.batch_size}")
    log_path = args.log or args.ckpt.with_suffix(args.ckpt.suffix + ".csv")
    result = train(data, args.stage, cfg, args.steps, args.seed, args.init_ckpt, args.ckpt, log_path)
    store = stage_store(result.model, normalize_stage(args.stage))
    print(f"parameters: {count_parameters(result.model)} total, {store.n_trainable()} trained in this stage")
    if result.log_rows:
        first, last = result.log_rows[0][-1], result.log_rows[-1][-1]
        print(f"loss: first step {first:.4f}, last step {last:.4f}")
    print(f"checkpoint: {args.ckpt} (stage {result.meta['stage']}, step {result.meta['step']})")
    return EXIT_OK


def cmd_enhance(args) -> int:
    from .audio_io import read_wav, write_wav
    from .model.enhance import enhance

    clip = read_wav(args.inp)
    write_wav(args.out, enhance(clip, args.ckpt))
    print(f"enhanced {args.inp} -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_set

    report = evaluate_set(args.clean, args.noisy, args.enhanced)
    report.write_csv(args.report)
    print(
        f"{len(report.clips)} clips: mean SI-SDR noisy {report.mean('si_sdr_noisy'):.3f} dB, "
        f"enhanced {report.mean('si_sdr_enhanced'):.3f} dB, improvement {report.mean():.3f} dB "
        f"(median {report.median():.3f} dB)"
    )
    return EXIT_OK


def cmd_inspect_scm(args) -> int:
    from .diffcore import ParameterStore
    from .model.network import MhaDpcrn, count_parameters
    from .model.train import load_model
    from .scm import dump_matrix_csv

    if args.ckpt is not None:
        model, _ = load_model(args.ckpt)
    else:
        model = MhaDpcrn(_load_config(args.config))
    mapping = getattr(model, args.which).scm
    dump_matrix_csv(mapping.weight.detach().numpy(), mapping.learn_mask.numpy(), args.out)
    cfg = model.cfg
    print(f"compression matrix ({args.which}): {tuple(mapping.weight.shape)}, K = {cfg.K}, written to {args.out}")
    print(f"total trainable parameters: {count_parameters(model)}")
    print(f"  MHAN {count_parameters(model.mhan)}, DPCRN {count_parameters(model.dpcrn)}")
    print(f"  free under High-Learn={'on' if cfg.high_learn else 'off'}: {ParameterStore.from_module(model).n_trainable()}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diffcore.suite import run_suite

    reports = run_suite(tolerance=args.tolerance, seed=args.seed)
    failed = [name for name, rep in reports.items() if not rep.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} cases passed")
    if failed:
        print("failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "enhance": cmd_enhance,
    "eval": cmd_eval,
    "inspect-scm": cmd_inspect_scm,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _configure_threads()
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except Exception as exc:  # runtime failures become exit code 2 with a one-line reason
        print(f"scmse: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
