"""Stage-1 stabilization grid: LR x EMA interval x batch mix."""

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
    cfg.set("data.tone_exponent", "2.2")
    cfg.set("data.vignette_strength", "0.5")
    cfg.set("data.noise_real", "0.05")
    t0 = time.perf_counter()
    data_dir = Path("/tmp/gd_tune2/data")
    if (data_dir / "syn.eye1").exists():
        data = eyegen.load_dataset(data_dir)
    else:
        data = eyegen.make_dataset(dataset_spec_from_config(cfg))
        eyegen.save_dataset(data, data_dir)
    print(f"[{time.perf_counter()-t0:5.1f}s] data ready")

    def ev(predict):
        return evaluate_predictor(predict, data.real_eval, RngStream(7, 0), 200)

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain done")

    rc = pl.RunConfig.from_config(cfg, "synft")
    rc.iterations = 2400
    synft_t, _ = pl.synthetic_finetune(data, rc, "teacher_s", foundation)
    r_st = ev(pl.bundle_predictor(synft_t))
    print(f"[{time.perf_counter()-t0:5.1f}s] synftT@2400: {r_st.e50u50:.2f} (stage1 target <= {0.8 * r_st.e50u50:.2f})")

    grid = [
        dict(lr=5e-4, K=10, batch=8, frac=0.5),
        dict(lr=3e-4, K=10, batch=8, frac=0.5),
        dict(lr=5e-4, K=5, batch=8, frac=0.5),
        dict(lr=5e-4, K=10, batch=12, frac=0.5),
    ]
    for g in grid:
        rc = pl.RunConfig.from_config(cfg, "stage1")
        rc.iterations = 2400
        rc.lr = g["lr"]
        rc.ema.interval = g["K"]
        rc.batch_size = g["batch"]
        rc.syn_fraction = g["frac"]
        student, teacher, _ = pl._stage1_loop(data, rc, "teacher_s", foundation)
        rs = ev(pl.bundle_predictor(student))
        rt = ev(pl.bundle_predictor(teacher))
        print(f"[{time.perf_counter()-t0:5.1f}s] lr={g['lr']} K={g['K']} b={g['batch']}: "
              f"student={rs.e50u50:.2f} teacher={rt.e50u50:.2f}")

    print(f"total {time.perf_counter()-t0:.1f}s")


if __name__ == "__main__":
    main()
