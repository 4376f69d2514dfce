"""Stage-1 as fine-tuning: LR x EMA-momentum matrix."""

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
    data = eyegen.load_dataset("/tmp/gd_full_2.2_0.5_0.05/data")

    def ev(bundle):
        return evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval,
                                  RngStream(7, 0), 0).e50u50

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done (synftT-weak@2400 = 4.29 reference; target <= 3.43)")

    for lr in (2.5e-4, 5e-4):
        for mom in (0.95, 0.99):
            rc = pl.RunConfig.from_config(cfg, "stage1")
            rc.iterations = 3000
            rc.lr = lr
            rc.ema.interval = 10
            rc.ema.momentum = mom
            student, teacher, _ = pl._stage1_loop(data, rc, "teacher_s", foundation)
            print(f"[{time.perf_counter()-t0:5.1f}s] lr={lr} alpha={mom}: "
                  f"student={ev(student):.2f} teacher={ev(teacher):.2f}")


if __name__ == "__main__":
    main()
