"""Second diagnostic round: stronger domain gap + EMA interval sweep."""

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
    data = eyegen.make_dataset(dataset_spec_from_config(cfg))
    print(f"[{time.perf_counter()-t0:5.1f}s] generated stronger-gap dataset")

    def ev(predict):
        return evaluate_predictor(predict, data.real_eval, RngStream(7, 0), 200)

    rc = pl.RunConfig.from_config(cfg, "fully_supervised")
    rc.iterations = 1500
    m, _ = pl.run_baseline("fully_supervised", data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] FS@1500: {ev(pl.bundle_predictor(m)).e50u50:.2f}")

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, rep = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] pretrain acc={rep.extras['holdout_accuracy']:.3f}")

    rc = pl.RunConfig.from_config(cfg, "synft")
    rc.iterations = 2400
    synft_t, _ = pl.synthetic_finetune(data, rc, "teacher_s", foundation)
    r_st = ev(pl.bundle_predictor(synft_t))
    print(f"[{time.perf_counter()-t0:5.1f}s] synftT@2400: {r_st.e50u50:.2f}")

    for interval in (10, 25):
        rc = pl.RunConfig.from_config(cfg, "stage1")
        rc.iterations = 2400
        rc.ema.interval = interval
        student, teacher, _ = pl._stage1_loop(data, rc, "teacher_s", foundation)
        rs = ev(pl.bundle_predictor(student))
        rt = ev(pl.bundle_predictor(teacher))
        print(f"[{time.perf_counter()-t0:5.1f}s] stage1 K={interval}: student={rs.e50u50:.2f} "
              f"teacher={rt.e50u50:.2f} (vs synftT {r_st.e50u50:.2f}, need <= {0.8*r_st.e50u50:.2f})")

    print(f"total {time.perf_counter()-t0:.1f}s")


if __name__ == "__main__":
    main()
