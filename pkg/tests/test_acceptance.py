"""Acceptance suite: one test per criterion, each printing a PASS line.

Criteria 1-5 are oracle checks and run in seconds. Criteria 6-9 share one
full default-configuration `reproduce` run (a session fixture, ~12-14
minutes on a 2-core CPU) plus the two stage-1 ablation arms; expect the
whole module to take roughly half an hour.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines as they complete.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from gazedistill import eyegen, evalkit, losses, pipeline as pl
from gazedistill import tensorcore as tc
from gazedistill.cli import run_reproduce, REPRODUCE_SEEDS
from gazedistill.config import Config
from gazedistill.losses import DinoState, GazeLossConfig, VicConfig
from gazedistill.nets import EmaConfig, ModelBundle, ema_update, maybe_ema_update
from gazedistill.tensorcore import Tensor
from gazedistill.tensorcore.rng import RngStream

from gradcheck import check_grads


def report(criterion: int, ok: bool, detail: str) -> None:
    print(f"\n[ACCEPTANCE {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


def rnd(stream, *shape):
    return RngStream(2024, stream).uniform(shape) * 4.0 - 2.0


# ---------------------------------------------------------------------------


class TestCriterion1Gradients:
    def test_gradient_suite(self):
        t0 = time.perf_counter()
        worst = 0.0

        # every differentiable primitive
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.mul(tc.add(t[0], t[1]), t[2])),
                                       [rnd(1, 3, 4), rnd(2, 4), rnd(3, 3, 4)]))
        den = np.abs(rnd(4, 3, 3)) + 1.0
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.div(tc.sub(t[0], t[1]), t[2])),
                                       [rnd(5, 3, 3), rnd(6, 3, 3), den]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.matmul(t[0], t[1])),
                                       [rnd(7, 3, 4), rnd(8, 4, 2)]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.matmul(t[0], tc.transpose(t[0]))),
                                       [rnd(9, 3, 4)]))
        worst = max(worst, check_grads(
            lambda t: tc.reduce_mean(tc.conv2d(t[0], t[1], stride=2, padding=1)),
            [rnd(10, 2, 2, 6, 7), rnd(11, 3, 2, 3, 3)]))
        x = rnd(12, 3, 4)
        x[np.abs(x) < 0.05] += 0.1
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.relu(t[0])), [x]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.gelu(t[0])), [rnd(13, 3, 4)]))
        pos = np.abs(rnd(14, 3, 3)) + 0.5
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.log(t[0])), [pos]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.exp(t[0])), [rnd(15, 3, 3)]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.sqrt(t[0])), [pos]))
        xa = rnd(16, 3, 3)
        xa[np.abs(xa) < 0.05] += 0.1
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.absval(t[0])), [xa]))
        xm = rnd(17, 3, 3)
        xm[np.abs(xm - 0.3) < 0.05] += 0.1
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.max_scalar(t[0], 0.3)), [xm]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.mul(tc.softmax(t[0], axis=-1), t[1])),
                                       [rnd(18, 3, 5), rnd(19, 3, 5)]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.mul(tc.log_softmax(t[0], axis=-1), t[1])),
                                       [rnd(20, 3, 5), rnd(21, 3, 5)]))
        worst = max(worst, check_grads(lambda t: tc.reduce_sum(tc.reduce_var(t[0], axis=0)), [rnd(22, 5, 3)]))
        worst = max(worst, check_grads(lambda t: tc.reduce_mean(t[0], axis=(0, 1)), [rnd(23, 3, 4)]))
        worst = max(worst, check_grads(
            lambda t: tc.reduce_sum(tc.mul(tc.reshape(tc.concat([t[0], t[1]], axis=1), (12,)), t[2])),
            [rnd(24, 2, 3), rnd(25, 2, 3), rnd(26, 12)]))
        worst = max(worst, check_grads(
            lambda t: tc.reduce_sum(tc.mul(tc.slice_rows(t[0], 1, 3), t[1])),
            [rnd(27, 4, 3), rnd(28, 2, 3)]))

        # composite losses: robust gaze, feature MSE, VIC, EMA alignment
        # (same form as feature MSE against a constant), prototype CE
        cfg = GazeLossConfig(beta=1.0, gamma=5.0, k=0.5)
        y = np.array([[0.3, -1.7, 6.0, 0.02]], dtype=np.float64)
        worst = max(worst, check_grads(
            lambda t: losses.gaze_loss(Tensor(np.zeros((1, 4))), t[0], cfg), [y]))
        zt = RngStream(2024, 29).uniform((4, 5))
        worst = max(worst, check_grads(lambda t: losses.sd_mse(Tensor(zt), t[0]),
                                       [RngStream(2024, 30).uniform((4, 5))]))
        worst = max(worst, check_grads(lambda t: losses.vic_kd(Tensor(zt), t[0], VicConfig()),
                                       [RngStream(2024, 31).uniform((4, 5))]))
        ht = RngStream(2024, 32).uniform((4, 5)) + 0.2
        worst = max(worst, check_grads(lambda t: losses.sp_kd(Tensor(ht), t[0]),
                                       [RngStream(2024, 33).uniform((4, 5)) + 0.2]))
        state = DinoState.create(losses.DinoHeadConfig(prototypes=8), seed=0, in_dim=5)

        def dino_build(t):
            st = DinoState(Tensor(state.prototypes.data.astype(np.float64)), state.center.copy(), state.cfg)
            return losses.dino_sd(Tensor(zt), t[0], st, update_center=False)

        worst = max(worst, check_grads(dino_build, [RngStream(2024, 34).uniform((4, 5))]))

        elapsed = time.perf_counter() - t0
        report(1, worst < 1e-4 and elapsed < 60.0,
               f"gradient suite worst relative error {worst:.2e} (< 1e-4), runtime {elapsed:.1f}s (< 60s)")


class TestCriterion2LossOracles:
    def test_loss_oracles(self):
        cfg = GazeLossConfig(beta=1.0, gamma=5.0, k=0.5)

        def gl(e):
            return losses.gaze_loss(
                Tensor(np.zeros((1, 1), dtype=np.float64)),
                Tensor(np.array([[e]], dtype=np.float64)),
                cfg,
            ).item()

        checks = [
            abs(gl(0.0) - 0.0) < 1e-6,
            abs(gl(0.5) - 0.125) < 1e-6,
            abs(gl(2.0) - 1.5) < 1e-6,
            abs(gl(10.0) - 4.75) < 1e-6,
            abs(gl(1.0 - 1e-7) - 0.5) < 1e-6,  # continuity at beta
            abs(gl(1.0) - 0.5) < 1e-6,
            abs(gl(5.0 - 1e-7) - 4.5) < 1e-6,  # jump factor k at gamma
            abs(gl(5.0) - 2.25) < 1e-6,
        ]

        # VIC hand-computed 2-point batch values
        z = Tensor(np.array([[1.0, -1.0], [-1.0, 1.0]], dtype=np.float64))
        cov_only = losses.vic_kd(z, z, VicConfig(lam_inv=0, lam_var=0, lam_cov=1.0))
        checks.append(abs(cov_only.item() - 1.0) < 1e-6)
        zc = Tensor(np.full((4, 3), 0.7, dtype=np.float64))
        var_only = losses.vic_kd(zc, zc, VicConfig(lam_inv=0, lam_var=1.0, lam_cov=0))
        checks.append(abs(var_only.item() - 1.0) < 1e-6)

        # cosine schedule endpoints and midpoint
        checks.append(abs(losses.cosine_weight(1.0, 0.0, 0, 10) - 1.0) < 1e-6)
        checks.append(abs(losses.cosine_weight(1.0, 0.0, 10, 10) - 0.0) < 1e-6)
        checks.append(abs(losses.cosine_weight(1.0, 0.0, 5, 10) - 0.5) < 1e-6)
        report(2, all(checks), "piecewise gaze values, VIC 2-point values, cosine endpoints exact to 1e-6")


class TestCriterion3Ema:
    def test_ema_exactness(self):
        t = ModelBundle("student", seed=41)
        s = ModelBundle("student", seed=42)
        snap = {k: v.data.copy() for k, v in t.parameters().items()}
        alpha = 0.97
        ema_update(t, s, alpha)
        worst = 0.0
        for k, v in t.parameters().items():
            direct = np.float32(alpha) * snap[k] + np.float32(1 - alpha) * s.parameters()[k].data
            denom = np.maximum(np.abs(direct), 1e-3)
            worst = max(worst, float((np.abs(v.data - direct) / denom).max()))
        exact_ok = worst < 1e-6

        t2 = ModelBundle("student", seed=43)
        s2 = ModelBundle("student", seed=44)
        cfg = EmaConfig(momentum=0.95, interval=100)
        applied = [step for step in range(1, 1001) if maybe_ema_update(t2, s2, cfg, step)]
        interval_ok = applied == list(range(100, 1001, 100))

        t3 = ModelBundle("student", seed=45)
        s3 = ModelBundle("student", seed=46)
        key = "head/fc0/w"
        gaps = []
        for _ in range(50):
            ema_update(t3, s3, 0.95)
            gaps.append(float(np.abs(t3.parameters()[key].data - s3.parameters()[key].data).mean()))
        ratios = np.array([b / a for a, b in zip(gaps, gaps[1:])])
        geo_ok = bool(np.all(np.abs(ratios - 0.95) < 1e-3))
        report(3, exact_ok and interval_ok and geo_ok,
               f"EMA update exact to 32-bit rounding (worst rel {worst:.1e}), K=100 honored, "
               f"geometric ratio 0.95 over 50 updates")


class TestCriterion4EuBootstrap:
    def test_eu_and_bootstrap(self):
        r = RngStream(99, 1)
        users = [r.uniform((20,)) * 10 for _ in range(5)]
        rep = evalkit.eu_table(users)

        def brute(values, p):
            v = sorted(float(x) for x in values)
            h = (len(v) - 1) * p / 100.0
            lo = math.floor(h)
            hi = min(lo + 1, len(v) - 1)
            return v[lo] + (h - lo) * (v[hi] - v[lo])

        grid = np.array([[brute([brute(u, ep) for u in users], up) for ep in (50, 75, 90)]
                         for up in (50, 75, 90)])
        eu_ok = bool(np.abs(rep.grid - grid).max() < 1e-9)

        lo, hi = evalkit.bootstrap_ci([np.full(12, 2.5)], iterations=64, rng=RngStream(99, 2))
        degen_ok = bool(np.all(lo == 2.5) and np.all(hi == 2.5))

        def mean_width(n_users, seed):
            rr = RngStream(seed, 51)
            us = [float(np.abs(3.0 + rr.normal())) + np.abs(rr.normal((30,))) for _ in range(n_users)]
            lo_, hi_ = evalkit.bootstrap_ci(us, iterations=300, rng=RngStream(seed, 52))
            return float((hi_ - lo_).mean())

        ratios = [mean_width(8, f) / mean_width(16, f) for f in range(6)]
        shrink = float(np.mean(ratios))
        shrink_ok = 1.2 <= shrink <= 1.7
        report(4, eu_ok and degen_ok and shrink_ok,
               f"EU grid matches brute force to 1e-9, degenerate CI is a point, "
               f"doubling users shrinks CI width by {shrink:.2f} (in [1.2, 1.7])")


class TestCriterion5Personalization:
    def test_bias_recovery(self):
        r = RngStream(7, 70)
        gt = (r.uniform((9, 4)) * 40 - 20).astype(np.float64)
        c = np.array([2.5, -1.25, 0.75, 3.0])
        model = evalkit.personalize(gt + c, gt)
        recov = float(np.abs(model.bias + c).max())
        corrected = model.apply(gt + c)
        resid = float(np.abs(evalkit.angular_error_deg(corrected, gt)).max())
        # arccos of a clipped unit dot bottoms out near 1e-6 degrees
        report(5, recov < 1e-6 and resid < 1e-5,
               f"injected bias recovered to {recov:.1e} (< 1e-6), post-correction error {resid:.1e} deg")


# ---------------------------------------------------------------------------
# end-to-end criteria


@pytest.fixture(scope="session")
def reproduce_run(tmp_path_factory):
    out = Path("out/acceptance")
    cfg = Config.defaults()
    t0 = time.perf_counter()
    results = run_reproduce(cfg, out, quiet=False)
    elapsed = time.perf_counter() - t0
    return cfg, out, results, elapsed


def median_cell(results, method, cell="e50u50"):
    return float(np.median([getattr(rep, cell) for rep in results[method].values()]))


@pytest.mark.slow
class TestCriterion6Motivation:
    def test_stage1_ordering(self, reproduce_run):
        cfg, out, results, _ = reproduce_run
        probe = median_cell(results, "linear_probe")
        synft = median_cell(results, "synft_teacher")
        stage1 = median_cell(results, "stage1_teacher")
        rel = 1.0 - stage1 / synft
        order_ok = probe > synft > stage1
        margin_ok = rel >= 0.20

        data = eyegen.load_dataset(out / "data")
        foundation = ModelBundle.load(out / "foundation.gdck")
        embed = pl.bundle_embedder(foundation)
        ev = data.real_eval
        idx = np.flatnonzero(ev.frame_ids < 8)[: 32 * 8]
        embs = embed(ev.images_left[idx], ev.images_right[idx])
        intra, inter = pl.embedding_distances(embs, ev.subject_ids[idx])
        cluster_ok = intra < inter
        report(6, order_ok and margin_ok and cluster_ok,
               f"E50U50 medians: probe {probe:.2f} > synft {synft:.2f} > stage1 {stage1:.2f} "
               f"(gain {100 * rel:.0f}% >= 20%); identity embeddings intra {intra:.2f} < inter {inter:.2f}")


@pytest.mark.slow
class TestCriterion7Distillation:
    def test_stage2_ordering(self, reproduce_run):
        cfg, out, results, _ = reproduce_run
        synft_s = median_cell(results, "synft_student")
        selfd = median_cell(results, "self_distill_no_vfm")
        stage2 = median_cell(results, "stage2_student")
        teacher = median_cell(results, "stage1_teacher")
        fully = median_cell(results, "fully_supervised")
        rel = 1.0 - stage2 / synft_s
        order_ok = synft_s > selfd > stage2
        margin_ok = rel >= 0.20
        ratio_ok = stage2 <= 1.5 * teacher
        best_ok = all(
            fully < median_cell(results, m)
            for m in ("linear_probe", "synft_teacher", "stage1_teacher", "synft_student",
                      "self_distill_no_vfm", "pseudo_only", "sp_kd", "stage2_student")
        )
        report(7, order_ok and margin_ok and ratio_ok and best_ok,
               f"E50U50 medians: synftS {synft_s:.2f} > self-distill {selfd:.2f} > stage2 {stage2:.2f} "
               f"(gain {100 * rel:.0f}% >= 20%), stage2/teacher {stage2 / teacher:.2f} <= 1.5, "
               f"fully supervised {fully:.2f} strictly best")


@pytest.mark.slow
class TestCriterion8Ablations:
    def test_ablation_directions(self, reproduce_run):
        cfg, out, results, _ = reproduce_run
        data = eyegen.load_dataset(out / "data")
        foundation = ModelBundle.load(out / "foundation.gdck")
        full = median_cell(results, "stage1_teacher")

        def run_arm(flag):
            cells = []
            for seed in REPRODUCE_SEEDS:
                cs = Config(dict(cfg.values))
                cs.set("run.seed", seed)
                cs.set(flag, True)
                rc = pl.RunConfig.from_config(cs, "stage1")
                teacher, _ = pl.stage1_optimize(data, rc, foundation)
                rng = RngStream(cs.get_int("eval.seed"), 0)
                rep = evalkit.evaluate_predictor(
                    pl.bundle_predictor(teacher), data.real_eval, rng, 300)
                cells.append(rep.e50u50)
            return float(np.median(cells))

        sched_off = run_arm("run.scheduler_off")
        sd_pl = run_arm("run.sd_pl_only")
        worse_ok = sched_off > full and sd_pl > full

        # synsup_only reuses the synthetic-finetuning code path; loss series
        # must agree bit for bit under equal seeds
        cs = Config(dict(cfg.values))
        cs.set("run.seed", 0)
        cs.set("run.iterations", 120)
        rc_a = pl.RunConfig.from_config(cs, "stage1")
        rc_a.synsup_only = True
        _, rep_a = pl.stage1_optimize(data, rc_a, foundation)
        rc_b = pl.RunConfig.from_config(cs, "stage1")
        _, rep_b = pl.synthetic_finetune(data, rc_b, rc_b.teacher_tier, foundation)
        bitwise_ok = rep_a.series("loss").tolist() == rep_b.series("loss").tolist()
        report(8, worse_ok and bitwise_ok,
               f"scheduler_off {sched_off:.2f} and sd+pl-only {sd_pl:.2f} both worse than full {full:.2f}; "
               f"synsup_only loss series bitwise equal to synthetic finetuning")


@pytest.mark.slow
class TestCriterion9Budget:
    def test_budget_and_determinism(self, reproduce_run, tmp_path):
        _, out, _, elapsed = reproduce_run
        budget_ok = elapsed < 15 * 60

        # determinism mechanism: a reduced-scale reproduce is byte-identical
        # across reruns (the full run uses the same seeded machinery)
        cfg = Config.defaults()
        for k, v in {
            "data.n_subjects_pretrain": 4, "data.n_subjects_syn": 3,
            "data.n_subjects_real_train": 3, "data.n_subjects_real_eval": 2,
            "run.iterations": 4, "run.batch_size": 4, "eval.bootstrap_iters": 20,
        }.items():
            cfg.set(k, v)
        outs = []
        for run_dir in ("r1", "r2"):
            d = tmp_path / run_dir
            run_reproduce(Config(dict(cfg.values)), d, quiet=True)
            outs.append((d / "metrics.csv").read_bytes())
        identical = outs[0] == outs[1]
        report(9, budget_ok and identical,
               f"reproduce wall clock {elapsed / 60:.1f} min (< 15), "
               f"metrics byte-identical across reruns at reduced scale")
