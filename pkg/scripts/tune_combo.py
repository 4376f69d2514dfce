"""Stage-1 frictions: syn_fraction x iterations on the harsh cached data."""

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
    print(f"[{time.perf_counter()-t0:5.1f}s] data ready")

    def ev(bundle):
        return evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval,
                                  RngStream(7, 0), 0).e50u50

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done (synftT-weak@2400 = 4.29 reference)")

    combos = [
        dict(T=3000, frac=0.625, K=10),
        dict(T=3000, frac=0.75, K=10),
        dict(T=2400, frac=0.75, K=10),
    ]
    for c in combos:
        rc = pl.RunConfig.from_config(cfg, "stage1")
        rc.iterations = c["T"]
        rc.syn_fraction = c["frac"]
        rc.ema.interval = c["K"]
        student, teacher, rep = pl._stage1_loop(data, rc, "teacher_s", foundation)
        print(f"[{time.perf_counter()-t0:5.1f}s] T={c['T']} frac={c['frac']} K={c['K']}: "
              f"student={ev(student):.2f} teacher={ev(teacher):.2f}")


if __name__ == "__main__":
    main()
