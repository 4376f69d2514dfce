"""Full criterion-6/7 picture at one config: harsh dark-structure gap,
weak-view supervised baselines, strong-view consistency recipes."""

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

TONE = "2.2"
VIG = "0.5"
NOISE = "0.05"


def main() -> None:
    cfg = Config.defaults()
    cfg.set("data.tone_exponent", TONE)
    cfg.set("data.vignette_strength", VIG)
    cfg.set("data.noise_real", NOISE)
    t0 = time.perf_counter()
    cache = Path(f"/tmp/gd_corr_{TONE}_{VIG}_{NOISE}/data")
    if (cache / "syn.eye1").exists():
        data = eyegen.load_dataset(cache)
    else:
        data = eyegen.make_dataset(dataset_spec_from_config(cfg))
        eyegen.save_dataset(data, cache)
    print(f"[{time.perf_counter()-t0:5.1f}s] data ready (tone {TONE}, vig {VIG}, noise {NOISE})")

    def ev(bundle):
        return evaluate_predictor(pl.bundle_predictor(bundle), data.real_eval,
                                  RngStream(7, 0), 0).e50u50

    rc = pl.RunConfig.from_config(cfg, "fully_supervised")
    rc.iterations = 1500
    m, _ = pl.run_baseline("fully_supervised", data, rc)
    print(f"[{time.perf_counter()-t0:5.1f}s] FS@1500: {ev(m):.2f}")

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, _ = pl.pretrain_identity(data, rc)
    probe, ppredict = pl.linear_probe(foundation, data.syn)
    r_probe = evaluate_predictor(ppredict, data.real_eval, RngStream(7, 0), 0).e50u50
    print(f"[{time.perf_counter()-t0:5.1f}s] probe: {r_probe:.2f}")

    rc = pl.RunConfig.from_config(cfg, "synft")
    rc.iterations = 2400
    synft_t, _ = pl.synthetic_finetune(data, rc, "teacher_s", foundation)
    r_st = ev(synft_t)
    print(f"[{time.perf_counter()-t0:5.1f}s] synftT(weak)@2400: {r_st:.2f} (stage1 target <= {0.8*r_st:.2f})")

    rc = pl.RunConfig.from_config(cfg, "stage1")
    rc.iterations = 2400
    rc.ema.interval = 10
    student, teacher, _ = pl._stage1_loop(data, rc, "teacher_s", foundation)
    r_s1 = ev(teacher)
    print(f"[{time.perf_counter()-t0:5.1f}s] stage1 K=10: student={ev(student):.2f} teacher={r_s1:.2f} "
          f"(gain {100*(1-r_s1/r_st):.0f}%)")

    rc = pl.RunConfig.from_config(cfg, "synft")
    rc.iterations = 1200
    synft_s, _ = pl.synthetic_finetune(data, rc, "student", None)
    r_ss = ev(synft_s)
    print(f"[{time.perf_counter()-t0:5.1f}s] synftS(weak)@1200: {r_ss:.2f}")

    rc = pl.RunConfig.from_config(cfg, "self_distill_no_vfm")
    rc.iterations = 1500
    rc.ema.interval = 10
    m, _ = pl.run_baseline("self_distill_no_vfm", data, rc)
    r_sd = ev(m)
    print(f"[{time.perf_counter()-t0:5.1f}s] self_distill: {r_sd:.2f}")

    rc = pl.RunConfig.from_config(cfg, "stage2")
    rc.iterations = 800
    rc.ema.interval = 10
    m, _ = pl.stage2_distill(data, rc, teacher, synft_s)
    r_s2 = ev(m)
    print(f"[{time.perf_counter()-t0:5.1f}s] stage2: {r_s2:.2f} (gain over synftS {100*(1-r_s2/r_ss):.0f}%, "
          f"ratio to teacher {r_s2/max(r_s1,1e-9):.2f})")

    for kind in ("pseudo_only", "sp_kd"):
        rc = pl.RunConfig.from_config(cfg, kind)
        rc.iterations = 600
        m, _ = pl.run_baseline(kind, data, rc, teacher, synft_s)
        print(f"[{time.perf_counter()-t0:5.1f}s] {kind}: {ev(m):.2f}")

    print(f"total {time.perf_counter()-t0:.1f}s")


if __name__ == "__main__":
    main()
