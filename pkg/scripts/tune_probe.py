"""Single-seed tuning probe: runs the core stages at default settings and
prints per-method E50U50 so the ordering margins can be inspected."""

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

    data_dir = Path("/tmp/gd_tune/data")
    if (data_dir / "syn.eye1").exists():
        data = eyegen.load_dataset(data_dir)
        print(f"[{time.perf_counter()-t0:6.1f}s] loaded cached dataset")
    else:
        data = eyegen.make_dataset(dataset_spec_from_config(cfg))
        eyegen.save_dataset(data, data_dir)
        print(f"[{time.perf_counter()-t0:6.1f}s] generated dataset")

    def ev(predict):
        return evaluate_predictor(predict, data.real_eval, RngStream(7, 0), 200)

    rc = pl.RunConfig.from_config(cfg, "pretrain")
    foundation, rep = pl.pretrain_identity(data, rc)
    print(f"[{time.perf_counter()-t0:6.1f}s] pretrain acc={rep.extras['holdout_accuracy']:.3f} "
          f"intra={rep.extras['intra_distance']:.3f} inter={rep.extras['inter_distance']:.3f}")

    probe, predict = pl.linear_probe(foundation, data.syn)
    r = ev(predict)
    print(f"[{time.perf_counter()-t0:6.1f}s] probe        E50U50={r.e50u50:.2f}  E90U90={r.e90u90:.2f}")

    rc = pl.RunConfig.from_config(cfg, "synft")
    synft_t, rep = pl.synthetic_finetune(data, rc, cfg.get_str("net.teacher_tier"), foundation)
    r_st = ev(pl.bundle_predictor(synft_t))
    print(f"[{time.perf_counter()-t0:6.1f}s] synftT       E50U50={r_st.e50u50:.2f}  E90U90={r_st.e90u90:.2f} "
          f"(final loss {rep.rows[-1][1]:.4f})")

    rc = pl.RunConfig.from_config(cfg, "stage1")
    s1_student, stage1_t, rep = pl._stage1_loop(data, rc, rc.teacher_tier, foundation)
    r_s1s = ev(pl.bundle_predictor(s1_student))
    r_s1 = ev(pl.bundle_predictor(stage1_t))
    print(f"[{time.perf_counter()-t0:6.1f}s] stage1       E50U50={r_s1.e50u50:.2f}  E90U90={r_s1.e90u90:.2f} "
          f"(improvement over synftT: {100*(1 - r_s1.e50u50/r_st.e50u50):.1f}%; internal student E50U50={r_s1s.e50u50:.2f})")

    rc = pl.RunConfig.from_config(cfg, "synft")
    synft_s, rep = pl.synthetic_finetune(data, rc, "student", None)
    r_ss = ev(pl.bundle_predictor(synft_s))
    print(f"[{time.perf_counter()-t0:6.1f}s] synftS       E50U50={r_ss.e50u50:.2f}  E90U90={r_ss.e90u90:.2f}")

    rc = pl.RunConfig.from_config(cfg, "stage2")
    stage2_s, rep = pl.stage2_distill(data, rc, stage1_t, synft_s)
    r_s2 = ev(pl.bundle_predictor(stage2_s))
    print(f"[{time.perf_counter()-t0:6.1f}s] stage2       E50U50={r_s2.e50u50:.2f}  E90U90={r_s2.e90u90:.2f} "
          f"(improvement over synftS: {100*(1 - r_s2.e50u50/r_ss.e50u50):.1f}%, ratio to teacher {r_s2.e50u50/r_s1.e50u50:.2f})")

    for kind in ("self_distill_no_vfm", "pseudo_only", "sp_kd", "fully_supervised"):
        rc = pl.RunConfig.from_config(cfg, kind)
        m, rep = pl.run_baseline(kind, data, rc, stage1_t, synft_s)
        rr = ev(pl.bundle_predictor(m))
        print(f"[{time.perf_counter()-t0:6.1f}s] {kind:12s} E50U50={rr.e50u50:.2f}  E90U90={rr.e90u90:.2f}")

    print(f"total {time.perf_counter()-t0:.1f}s")


if __name__ == "__main__":
    main()
