"""Test the bridgeable-gap hypothesis: tone inside the augmentation span."""

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
    cfg.set("data.tone_exponent", "1.35")
    cfg.set("data.vignette_strength", "0.40")
    cfg.set("data.noise_real", "0.11")
    t0 = time.perf_counter()
    cache = Path("/tmp/gd_gap2/data")
    if (cache / "syn.eye1").exists():
        data = eyegen.load_dataset(cache)
    else:
        data = eyegen.make_dataset(dataset_spec_from_config(cfg))
        eyegen.save_dataset(data, cache)
    print(f"[{time.perf_counter()-t0:5.1f}s] data ready (tone 1.35, vignette 0.40, noise 0.11, warp 2)")

    def ev(bundle):
        return evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval,
                                  RngStream(7, 0), 0).e50u50

    rc = pl.RunConfig.from_config(cfg, "fully_supervised")
    rc.iterations = 1500
    m, _ = pl.run_baseline("fully_supervised", data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] FS@1500: {ev(m):.2f}")

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done")

    rc = pl.RunConfig.from_config(cfg, "synft")
    rc.iterations = 2400
    synft_t, _ = pl.synthetic_finetune(data, rc, "teacher_s", foundation)
    r_st = ev(synft_t)
    print(f"[{time.perf_counter()-t0:5.1f}s] synftT@2400: {r_st:.2f} (stage1 target <= {0.8*r_st:.2f})")

    for K, lr in ((10, 1e-3), (25, 1e-3)):
        rc = pl.RunConfig.from_config(cfg, "stage1")
        rc.iterations = 2400
        rc.ema.interval = K
        rc.lr = lr
        student, teacher, _ = pl._stage1_loop(data, rc, "teacher_s", foundation)
        print(f"[{time.perf_counter()-t0:5.1f}s] stage1 K={K} lr={lr}: "
              f"student={ev(student):.2f} teacher={ev(teacher):.2f}")


if __name__ == "__main__":
    main()
