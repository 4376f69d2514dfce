"""Trace eval error along the stage-1 trajectory to localize the collapse."""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from gazedistill import eyegen, pipeline as pl
from gazedistill.config import Config
from gazedistill.evalkit import evaluate_predictor
from gazedistill.nets import clone_bundle
from gazedistill.tensorcore.rng import RngStream


def main() -> None:
    cfg = Config.defaults()
    cfg.set("data.tone_exponent", "2.2")
    cfg.set("data.vignette_strength", "0.5")
    cfg.set("data.noise_real", "0.05")
    t0 = time.perf_counter()
    data = eyegen.load_dataset("/tmp/gd_tune2/data")
    print(f"[{time.perf_counter()-t0:5.1f}s] data ready")

    def ev(bundle):
        rep = evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval, RngStream(7, 0), 0)
        preds = pl.bundle_predictor(bundle)(data.real_eval.images_left[:256], data.real_eval.images_right[:256])
        return rep.e50u50, float(preds.std())

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done")

    # checkpointed stage-1 run: snapshot eval error every 300 steps
    rc = pl.RunConfig.from_config(cfg, "stage1")
    rc.iterations = 2400
    rc.ema.interval = 10

    import gazedistill.pipeline as pmod

    orig_update = pmod.maybe_ema_update
    snapshots = []

    def spying_update(teacher, student, ema_cfg, step):
        applied = orig_update(teacher, student, ema_cfg, step)
        if step % 300 == 0:
            es, ps = ev(student)
            et, pt = ev(teacher)
            snapshots.append((step, es, et, ps, pt))
            print(f"[{time.perf_counter()-t0:5.1f}s]   step {step}: student {es:.2f} (pred std {ps:.1f}) "
                  f"teacher {et:.2f} (std {pt:.1f})")
        return applied

    pmod.maybe_ema_update = spying_update
    try:
        student, teacher, _ = pl._stage1_loop(data, rc, "teacher_s", foundation)
    finally:
        pmod.maybe_ema_update = orig_update
    es, ps = ev(student)
    print(f"[{time.perf_counter()-t0:5.1f}s] final student {es:.2f} (pred std {ps:.1f})")

    # ground truth std for reference
    print("gaze std (deg):", float(data.real_eval.gaze.std()))


if __name__ == "__main__":
    main()
