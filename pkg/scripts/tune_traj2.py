"""Side-by-side: synft trajectory vs stage-1 with loss-component logging."""

import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from gazedistill import eyegen, pipeline as pl
from gazedistill.config import Config
from gazedistill.evalkit import evaluate_predictor
from gazedistill.tensorcore.rng import RngStream


def main() -> None:
    cfg = Config.defaults()
    t0 = time.perf_counter()
    data = eyegen.load_dataset("/tmp/gd_tune2/data")

    def ev(bundle):
        return evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval,
                                  RngStream(7, 0), 0).e50u50

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done")

    # synft trajectory via repeated short runs (deterministic prefix property
    # does not hold across different totals, so just run cumulative lengths)
    for steps in (300, 900, 1500, 2400):
        rc = pl.RunConfig.from_config(cfg, "synft")
        rc.iterations = steps
        m, _ = pl.synthetic_finetune(data, rc, "teacher_s", foundation)
        print(f"[{time.perf_counter()-t0:5.1f}s] synft@{steps}: {ev(m):.2f}")

    # stage-1 with component logging every 100 steps
    rc = pl.RunConfig.from_config(cfg, "stage1")
    rc.iterations = 1200
    rc.ema.interval = 10
    student, teacher, rep = pl._stage1_loop(data, rc, "teacher_s", foundation)
    print(f"[{time.perf_counter()-t0:5.1f}s] stage1@1200: student {ev(student):.2f} teacher {ev(teacher):.2f}")
    cols = rep.columns
    for i in range(99, len(rep.rows), 100):
        row = dict(zip(cols, rep.rows[i]))
        print(f"  step {int(row['iteration']):4d}: L_syn={row['loss_synsup']:.4f} "
              f"L_sd={row['loss_sd']:.4f} L_ps={row['loss_pseudo']:.4f} "
              f"lam=({row['lam_synsup']:.2f},{row['lam_sd']:.2f}) lr={row['lr']:.2e}")


if __name__ == "__main__":
    main()
