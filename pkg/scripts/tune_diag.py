"""Diagnostics: achievable floor, stage-1 loss-term isolation, gap size."""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from gazedistill import eyegen, pipeline as pl
from gazedistill.config import Config
from gazedistill.cli import dataset_spec_from_config
from gazedistill.evalkit import evaluate_predictor
from gazedistill.tensorcore.rng import RngStream


def main() -> None:
    cfg = Config.defaults()
    t0 = time.perf_counter()
    data = eyegen.load_dataset("/tmp/gd_tune/data")
    print(f"[{time.perf_counter()-t0:5.1f}s] dataset loaded")

    def ev(predict):
        return evaluate_predictor(predict, data.real_eval, RngStream(7, 0), 200)

    # 1. achievable floor: fully supervised, longer
    for iters in (1500,):
        rc = pl.RunConfig.from_config(cfg, "fully_supervised")
        rc.iterations = iters
        m, _ = pl.run_baseline("fully_supervised", data, rc)
        r = ev(pl.bundle_predictor(m))
        print(f"[{time.perf_counter()-t0:5.1f}s] fully_supervised@{iters}: E50U50={r.e50u50:.2f} E90U90={r.e90u90:.2f}")

    # 2. synftT longer: is 4.1 undertraining or the domain gap?
    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done")
    rc = pl.RunConfig.from_config(cfg, "synft")
    rc.iterations = 2400
    synft_t, rep = pl.synthetic_finetune(data, rc, "teacher_s", foundation)
    r = ev(pl.bundle_predictor(synft_t))
    print(f"[{time.perf_counter()-t0:5.1f}s] synftT@2400: E50U50={r.e50u50:.2f} E90U90={r.e90u90:.2f} loss={rep.rows[-1][1]:.4f}")

    # 3. stage-1 term isolation at 1200 steps each
    import dataclasses

    base = pl.RunConfig.from_config(cfg, "stage1")
    base.iterations = 1200

    def run_variant(name, sd_scale, ps_scale):
        orig_sd = pl.sd_mse
        orig_ps = pl.pseudo_loss
        from gazedistill import tensorcore as tc

        pl.sd_mse = lambda zt, zs: tc.mul(orig_sd(zt, zs), sd_scale)
        pl.pseudo_loss = lambda yt, ys, c: tc.mul(orig_ps(yt, ys, c), ps_scale)
        try:
            student, teacher, _ = pl._stage1_loop(data, base, "teacher_s", foundation)
        finally:
            pl.sd_mse = orig_sd
            pl.pseudo_loss = orig_ps
        rs = ev(pl.bundle_predictor(student))
        rt = ev(pl.bundle_predictor(teacher))
        print(f"[{time.perf_counter()-t0:5.1f}s] stage1[{name}]@1200: student={rs.e50u50:.2f} teacher={rt.e50u50:.2f}")

    run_variant("full", 1.0, 1.0)
    run_variant("pseudo-only", 0.0, 1.0)
    run_variant("sd-only", 1.0, 0.0)
    print(f"total {time.perf_counter()-t0:.1f}s")


if __name__ == "__main__":
    main()
