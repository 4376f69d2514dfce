"""Isolate the unlabeled-loss dynamics from a good initialization."""

import sys
import time
from dataclasses import replace
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from gazedistill import eyegen, pipeline as pl
from gazedistill.augment import AugmentConfig
from gazedistill.config import Config
from gazedistill.evalkit import evaluate_predictor
from gazedistill.nets import clone_bundle
from gazedistill.losses import pseudo_loss, sd_mse
from gazedistill.tensorcore import AdamW, Tape, backward, mul, no_grad
from gazedistill.tensorcore.rng import RngStream


def main() -> None:
    cfg = Config.defaults()
    t0 = time.perf_counter()
    data = eyegen.load_dataset("/tmp/gd_full_2.2_0.5_0.05/data")
    real = data.real_train

    def ev(bundle):
        return evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval,
                                  RngStream(7, 0), 0).e50u50

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    rc = pl.RunConfig.from_config(cfg, "stage1")
    rc.iterations = 2400
    rc.synsup_only = True
    init_run = replace(rc)
    # strong-view synthetic training as the good starting point
    import gazedistill.pipeline as pmod
    src = pmod._stage1_loop.__doc__
    strong_init, _, _ = pl._stage1_loop(data, replace(rc, synsup_only=False, sd_pl_only=False,
                                                      syn_fraction=1.0), "teacher_s", foundation)
    # syn_fraction=1.0 makes the real sub-batch size 1; hack: use the loop
    # directly with synsup_only but strong views by patching
    print(f"[{time.perf_counter()-t0:5.1f}s] init (strong-ish synft) eval: {ev(strong_init):.2f}")

    aug = AugmentConfig()
    gaze_cfg = rc.gaze

    for name, use_sd, use_ps in (("pseudo-only", False, True), ("sd-only", True, False), ("both", True, True)):
        student = clone_bundle(strong_init, role="student")
        teacher = clone_bundle(student, role="teacher", requires_grad=False)
        opt = AdamW(student.parameters(), 2e-4, weight_decay=1e-4, total_steps=800,
                    warmup_frac=0.0, lr_floor=1e-5)
        rng = RngStream(123, 0).child("iso", name)
        for step in range(1, 801):
            srng = rng.child("step", step)
            ridx = pl._sample_indices(srng.child("batch"), len(real), 8)
            wl, wr = pl._views(real, ridx, srng.child("weak"), aug, "weak")
            stl, str_ = pl._views(real, ridx, srng.child("strong"), aug, "strong")
            opt.zero_grad()
            with Tape():
                with no_grad():
                    h_t, y_t = teacher.forward_pair(*pl._pair_tensors(wl, wr))
                    z_t = teacher.project(h_t, "main")
                h_s, y_s = student.forward_pair(*pl._pair_tensors(stl, str_))
                loss = None
                if use_ps:
                    loss = pseudo_loss(y_t, y_s, gaze_cfg)
                if use_sd:
                    l_sd = sd_mse(z_t, student.project(h_s, "main"))
                    loss = l_sd if loss is None else loss + l_sd
                backward(loss)
            opt.step()
            pl.maybe_ema_update(teacher, student, pl.EmaConfig(0.95, 10), step)
            if step % 200 == 0:
                print(f"[{time.perf_counter()-t0:5.1f}s]   {name} step {step}: student {ev(student):.2f} "
                      f"teacher {ev(teacher):.2f}")


if __name__ == "__main__":
    main()
