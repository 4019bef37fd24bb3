"""Per-module parameter counts for the full-width and reduced-width configurations."""

from scmse.diffcore import ParameterStore
from scmse.model.config import ModelConfig
from scmse.model.network import MhaDpcrn, count_parameters

TARGET_TOTAL = 5.00e6


def breakdown(model):
    rows = [("mhan.scm", model.mhan.scm), ("mhan.norm_in", model.mhan.norm_in), ("mhan.blocks", model.mhan.blocks)]
    rows += [("mhan.iscm", model.mhan.iscm)]
    rows += [("dpcrn.scm", model.dpcrn.scm), ("dpcrn.iscm", model.dpcrn.iscm), ("dpcrn.encoder", model.dpcrn.encoder)]
    rows += [("dpcrn.dprnn", model.dpcrn.dprnn), ("dpcrn.dec_re", model.dpcrn.dec_re), ("dpcrn.dec_im", model.dpcrn.dec_im)]
    return [(name, count_parameters(mod)) for name, mod in rows]


def main():
    for label, cfg in (("full width", ModelConfig.full_width()), ("reduced width", ModelConfig.reduced())):
        model = MhaDpcrn(cfg)
        total = count_parameters(model)
        print(f"{label}: {total} parameters ({ParameterStore.from_module(model).n_trainable()} free under High-Learn)")
        for name, n in breakdown(model):
            print(f"  {name:14s} {n:>9d}")
        if label == "full width":
            print(f"  vs target 5.00 M: {100 * (total - TARGET_TOTAL) / TARGET_TOTAL:+.1f} %")


if __name__ == "__main__":
    main()
