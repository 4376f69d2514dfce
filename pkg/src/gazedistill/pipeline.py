"""Trainers: identity pretraining, linear probe, synthetic finetuning, the
two-stage teacher-optimization / distillation recipe, baselines, ablations.

All trainers are bit-reproducible given a seed: batch sampling, weight
init, and augmentation draw from per-purpose RngStream children. Unlabeled
real-domain training data structurally carries no gaze; only the
fully-supervised upper bound reads the eval pool's labels, and it is the
only trainer allowed to.

Stage 1 trains a gradient student and returns its EMA teacher (the
stabilized weights). Stage 2 freezes that teacher, trains a small student
against it in feature space (VIC) and output space (pseudo-labels), with a
second branch distilling against an EMA copy of the student itself.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, strong_augment_batch, weak_augment_batch
from .config import Config
from .eyegen import DatasetBundle, Split
from .losses import (
    DinoHeadConfig,
    DinoState,
    GazeLossConfig,
    VicConfig,
    dino_sd,
    gaze_loss,
    pseudo_loss,
    sd_mse,
    sp_kd,
    stage1_weights,
    stage2_total,
    vic_kd,
)
from .nets import ANGLE_SCALE_DEG, EmaConfig, ModelBundle, clone_bundle, maybe_ema_update
from .tensorcore import AdamW, Tape, Tensor, backward, log_softmax, matmul, mul, no_grad, reduce_mean, reduce_sum, slice_rows
from .tensorcore.rng import RngStream

BASELINE_KINDS = ("pseudo_only", "sp_kd", "self_distill_no_vfm", "fully_supervised")

# per-stage (iterations, batch pairs) used when run.iterations/run.batch_size = 0
STAGE_DEFAULTS: dict[str, tuple[int, int]] = {
    "pretrain": (1200, 12),
    "synft": (1200, 8),
    "stage1": (2400, 8),
    "stage2": (800, 8),
    "pseudo_only": (600, 8),
    "sp_kd": (600, 8),
    "self_distill_no_vfm": (1500, 8),
    "fully_supervised": (600, 8),
}


class PipelineError(RuntimeError):
    pass


@dataclass
class RunConfig:
    stage: str
    iterations: int
    batch_size: int
    lr: float = 1e-3
    lr_floor: float = 1e-5
    warmup_frac: float = 0.10
    weight_decay: float = 1e-4
    ema: EmaConfig = field(default_factory=EmaConfig)
    gaze: GazeLossConfig = field(default_factory=GazeLossConfig)
    vic: VicConfig = field(default_factory=VicConfig)
    dino: DinoHeadConfig = field(default_factory=DinoHeadConfig)
    aug: AugmentConfig = field(default_factory=AugmentConfig)
    teacher_tier: str = "teacher_s"
    seed: int = 0
    syn_fraction: float = 0.5
    sched_stretch: float = 2.0
    synsup_only: bool = False
    sd_pl_only: bool = False
    scheduler_off: bool = False
    dino_loss: bool = False

    def validate(self) -> None:
        if self.iterations < 0:
            raise PipelineError("iterations must be >= 0")
        if self.synsup_only and self.sd_pl_only:
            raise PipelineError("synsup_only and sd_pl_only are mutually exclusive")
        self.ema.validate()
        self.gaze.validate()
        self.vic.validate()

    @staticmethod
    def from_config(cfg: Config, stage: str) -> "RunConfig":
        it = cfg.get_int("run.iterations")
        bs = cfg.get_int("run.batch_size")
        d_it, d_bs = STAGE_DEFAULTS.get(stage, (1000, 16))
        return RunConfig(
            stage=stage,
            iterations=it if it > 0 else d_it,
            batch_size=bs if bs > 0 else d_bs,
            lr=cfg.get_float("run.lr"),
            lr_floor=cfg.get_float("run.lr_floor"),
            warmup_frac=cfg.get_float("run.warmup_frac"),
            weight_decay=cfg.get_float("run.weight_decay"),
            ema=EmaConfig(cfg.get_float("run.ema_momentum"), cfg.get_int("run.ema_interval")),
            gaze=GazeLossConfig(cfg.get_float("loss.beta"), cfg.get_float("loss.gamma"), cfg.get_float("loss.k")),
            vic=VicConfig(
                cfg.get_float("loss.vic_inv"),
                cfg.get_float("loss.vic_var"),
                cfg.get_float("loss.vic_cov"),
                cfg.get_float("loss.vic_gamma_v"),
            ),
            dino=DinoHeadConfig(
                cfg.get_int("loss.dino_prototypes"),
                cfg.get_float("loss.dino_teacher_temp"),
                cfg.get_float("loss.dino_student_temp"),
                cfg.get_float("loss.dino_center_momentum"),
            ),
            aug=AugmentConfig(
                gamma_lo=cfg.get_float("aug.gamma_lo"),
                gamma_hi=cfg.get_float("aug.gamma_hi"),
                scale_lo=cfg.get_float("aug.scale_lo"),
                scale_hi=cfg.get_float("aug.scale_hi"),
                strong_p=cfg.get_float("aug.strong_p"),
                blur_sigma_lo=cfg.get_float("aug.blur_sigma_lo"),
                blur_sigma_hi=cfg.get_float("aug.blur_sigma_hi"),
                brightness=cfg.get_float("aug.brightness"),
                contrast_lo=cfg.get_float("aug.contrast_lo"),
                contrast_hi=cfg.get_float("aug.contrast_hi"),
                shadow_lo=cfg.get_float("aug.shadow_lo"),
                shadow_hi=cfg.get_float("aug.shadow_hi"),
                dropout_count_max=cfg.get_int("aug.dropout_count_max"),
                dropout_frac_max=cfg.get_float("aug.dropout_frac_max"),
                quant_block=cfg.get_int("aug.quant_block"),
                quant_levels=cfg.get_int("aug.quant_levels"),
            ),
            teacher_tier=cfg.get_str("net.teacher_tier"),
            seed=cfg.get_int("run.seed"),
            syn_fraction=cfg.get_float("sched.syn_fraction"),
            sched_stretch=cfg.get_float("sched.stretch"),
            synsup_only=cfg.get_bool("run.synsup_only"),
            sd_pl_only=cfg.get_bool("run.sd_pl_only"),
            scheduler_off=cfg.get_bool("run.scheduler_off"),
            dino_loss=cfg.get_bool("run.dino_loss"),
        )


@dataclass
class RunReport:
    stage: str
    seed: int
    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    wall_clock_s: float = 0.0
    extras: dict[str, float] = field(default_factory=dict)

    def log(self, *values: float) -> None:
        self.rows.append([float(v) for v in values])

    def write_csv(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write(",".join(self.columns) + "\n")
            for row in self.rows:
                f.write(",".join(f"{v:.8g}" for v in row) + "\n")

    def series(self, column: str) -> np.ndarray:
        j = self.columns.index(column)
        return np.array([r[j] for r in self.rows], dtype=np.float64)


# ---------------------------------------------------------------------------
# shared step plumbing


def _pair_tensors(il: np.ndarray, ir: np.ndarray) -> tuple[Tensor, Tensor]:
    return Tensor(il[:, None, :, :]), Tensor(ir[:, None, :, :])


def _norm_gaze(gaze_deg: np.ndarray) -> Tensor:
    return Tensor((gaze_deg / ANGLE_SCALE_DEG).astype(np.float32))


def _sample_indices(rng: RngStream, n: int, batch: int) -> np.ndarray:
    return rng.integers(n, (batch,))


def _views(
    split: Split,
    idx: np.ndarray,
    rng: RngStream,
    aug: AugmentConfig,
    kind: str,
) -> tuple[np.ndarray, np.ndarray]:
    """Augmented (left, right) views.

    Both eyes go through one stacked augment call; every image slot draws
    its own parameters, so the eyes stay independently augmented.
    """
    n = idx.size
    stacked = np.concatenate([split.images_left[idx], split.images_right[idx]], axis=0)
    fn = weak_augment_batch if kind == "weak" else strong_augment_batch
    out = fn(stacked, rng.child(kind), aug)
    return out[:n], out[n:]


def bundle_predictor(bundle: ModelBundle):
    """Degrees-valued predictor over raw image batches."""

    def predict(il: np.ndarray, ir: np.ndarray) -> np.ndarray:
        with no_grad():
            _, y = bundle.forward_pair(*_pair_tensors(il, ir))
        return y.data.astype(np.float64) * ANGLE_SCALE_DEG

    return predict


def bundle_embedder(bundle: ModelBundle):
    def embed(il: np.ndarray, ir: np.ndarray) -> np.ndarray:
        with no_grad():
            h, _ = bundle.forward_pair(*_pair_tensors(il, ir))
        return h.data.copy()

    return embed


# ---------------------------------------------------------------------------
# stage 0: identity pretraining (foundation surrogate)

_HOLDOUT_FRAMES = 8


def pretrain_identity(data: DatasetBundle, cfg: RunConfig) -> tuple[ModelBundle, RunReport]:
    """Train a teacher-tier backbone to classify subject identity.

    The temporary classifier head is discarded; the returned bundle's value
    is its backbone (the "foundation" initialization). Frames with
    frame_id >= frames_per_recording - 8 are held out for the accuracy
    metric.
    """
    cfg.validate()
    split = data.pretrain
    if len(split) == 0:
        raise PipelineError("pretrain pool is empty")
    subjects = np.unique(split.subject_ids)
    sub_index = {int(s): i for i, s in enumerate(subjects)}
    labels = np.array([sub_index[int(s)] for s in split.subject_ids], dtype=np.int64)
    max_frame = int(split.frame_ids.max())
    train_mask = split.frame_ids < max_frame + 1 - _HOLDOUT_FRAMES
    train_idx = np.flatnonzero(train_mask)
    held_idx = np.flatnonzero(~train_mask)

    bundle = ModelBundle(cfg.teacher_tier, role="teacher", proj_keys=("main",), seed=cfg.seed, input_hw=split.images_left.shape[1:])
    n_cls = len(subjects)
    rng = RngStream(cfg.seed, 0).child("pretrain")
    ws = rng.child("cls-init")
    cls_w = Tensor((np.sqrt(2.0 / (2 * bundle.spec.embed_dim)) * ws.normal((2 * bundle.spec.embed_dim, n_cls))).astype(np.float32), requires_grad=True)
    cls_b = Tensor(np.zeros(n_cls, dtype=np.float32), requires_grad=True)

    params = {f"backbone/{k}": v for k, v in bundle.backbone.params.items()}
    params["cls/w"] = cls_w
    params["cls/b"] = cls_b
    opt = AdamW(params, cfg.lr, weight_decay=cfg.weight_decay, total_steps=cfg.iterations,
                warmup_frac=cfg.warmup_frac, lr_floor=cfg.lr_floor)

    report = RunReport("pretrain", cfg.seed, ["iteration", "loss", "lr"])
    t0 = time.perf_counter()
    sampler = rng.child("batch")
    for step in range(1, cfg.iterations + 1):
        idx = train_idx[_sample_indices(sampler.child(step), train_idx.size, cfg.batch_size)]
        xl, xr = _pair_tensors(split.images_left[idx], split.images_right[idx])
        onehot = np.zeros((idx.size, n_cls), dtype=np.float32)
        onehot[np.arange(idx.size), labels[idx]] = 1.0
        opt.zero_grad()
        with Tape():
            h, _ = bundle.forward_pair(xl, xr)
            logits = matmul(h, cls_w) + cls_b
            ce = mul(reduce_mean(reduce_sum(mul(log_softmax(logits, axis=1), Tensor(onehot)), axis=1)), -1.0)
            backward(ce)
        lr = opt.step()
        report.log(step, ce.item(), lr)

    # held-out identity accuracy on seen subjects
    correct = 0
    emb_dim = 2 * bundle.spec.embed_dim
    held_emb = np.empty((held_idx.size, emb_dim), dtype=np.float32)
    for i in range(0, held_idx.size, 256):
        sl = held_idx[i : i + 256]
        with no_grad():
            h, _ = bundle.forward_pair(*_pair_tensors(split.images_left[sl], split.images_right[sl]))
            logits = h.data @ cls_w.data + cls_b.data
        held_emb[i : i + sl.size] = h.data
        correct += int((logits.argmax(axis=1) == labels[sl]).sum())
    report.extras["holdout_accuracy"] = correct / max(held_idx.size, 1)
    report.extras["intra_distance"], report.extras["inter_distance"] = embedding_distances(
        held_emb, split.subject_ids[held_idx]
    )
    report.wall_clock_s = time.perf_counter() - t0
    return bundle, report


def embedding_distances(embeddings: np.ndarray, subject_ids: np.ndarray, max_subjects: int = 32) -> tuple[float, float]:
    """Mean intra-subject vs inter-subject pairwise L2 distances."""
    subs = np.unique(subject_ids)[:max_subjects]
    mask = np.isin(subject_ids, subs)
    emb = embeddings[mask].astype(np.float64)
    sid = subject_ids[mask]
    d2 = np.sqrt(np.maximum(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1), 0.0))
    same = sid[:, None] == sid[None, :]
    iu = np.triu_indices(len(emb), k=1)
    same_u = same[iu]
    return float(d2[iu][same_u].mean()), float(d2[iu][~same_u].mean())


# ---------------------------------------------------------------------------
# linear probe


@dataclass
class LinearProbe:
    weights: np.ndarray  # (2E, 4), normalized-angle targets
    bias: np.ndarray  # (4,)

    def predict_normalized(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weights + self.bias


def fit_ridge(features: np.ndarray, targets: np.ndarray, ridge: float = 1e-4) -> LinearProbe:
    """Closed-form ridge regression with an unpenalized intercept."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    xm = x.mean(axis=0)
    ym = y.mean(axis=0)
    xc = x - xm
    yc = y - ym
    gram = xc.T @ xc + ridge * np.eye(x.shape[1])
    w = np.linalg.solve(gram, xc.T @ yc)
    b = ym - xm @ w
    return LinearProbe(w, b)


def linear_probe(foundation: ModelBundle, syn: Split, ridge: float = 1e-4, batch: int = 512):
    """Fit a frozen-feature ridge regressor on the labeled synthetic split."""
    if syn.gaze is None:
        raise PipelineError("linear probe needs the labeled synthetic split")
    embed = bundle_embedder(foundation)
    feats = np.empty((len(syn), 2 * foundation.spec.embed_dim), dtype=np.float64)
    for i in range(0, len(syn), batch):
        sl = slice(i, min(i + batch, len(syn)))
        feats[sl] = embed(syn.images_left[sl], syn.images_right[sl])
    probe = fit_ridge(feats, syn.gaze.astype(np.float64) / ANGLE_SCALE_DEG, ridge)

    def predict(il: np.ndarray, ir: np.ndarray) -> np.ndarray:
        f = embed(il, ir)
        return probe.predict_normalized(f) * ANGLE_SCALE_DEG

    return probe, predict


# ---------------------------------------------------------------------------
# stage 1 core loop (also powers synthetic finetuning and ablations)


def _stage1_loop(
    data: DatasetBundle,
    cfg: RunConfig,
    tier: str,
    foundation: ModelBundle | None,
) -> tuple[ModelBundle, ModelBundle, RunReport]:
    """Returns (student, ema_teacher, report).

    In the full recipe the student sees strong views (the teacher weak
    ones). The synthetic-supervision-only mode is the plain supervised
    baseline, which trains on weak views like any standard finetuning
    run."""
    syn_view = "weak" if cfg.synsup_only else "strong"
    cfg.validate()
    syn = data.syn
    real = data.real_train
    if syn.gaze is None:
        raise PipelineError("stage1 needs the labeled synthetic split")
    if real.gaze is not None:
        raise PipelineError("real-train split must not carry labels")

    hw = syn.images_left.shape[1:]
    student = ModelBundle(tier, role="student", proj_keys=("main",), seed=cfg.seed, input_hw=hw,
                          small_init_proj=("main",))
    if foundation is not None:
        if foundation.tier != tier:
            raise PipelineError(f"foundation tier {foundation.tier} != requested {tier}")
        for name, p in student.backbone.params.items():
            p.data[...] = foundation.backbone.params[name].data
    teacher = clone_bundle(student, role="teacher", requires_grad=False)

    opt = AdamW(student.parameters(), cfg.lr, weight_decay=cfg.weight_decay,
                total_steps=cfg.iterations, warmup_frac=cfg.warmup_frac, lr_floor=cfg.lr_floor)
    dino_state = DinoState.create(cfg.dino, cfg.seed) if cfg.dino_loss else None
    if dino_state is not None:
        opt.add_param("dino/prototypes", dino_state.prototypes)

    rng = RngStream(cfg.seed, 0).child("stage1")
    n_syn_batch = cfg.batch_size if cfg.synsup_only else max(1, int(round(cfg.batch_size * cfg.syn_fraction)))
    n_real_batch = 0 if cfg.synsup_only else max(1, cfg.batch_size - n_syn_batch)

    report = RunReport(
        cfg.stage, cfg.seed,
        ["iteration", "loss", "loss_synsup", "loss_sd", "loss_pseudo", "lam_synsup", "lam_sd", "lr"],
    )
    t0 = time.perf_counter()
    for step in range(1, cfg.iterations + 1):
        srng = rng.child("step", step)
        opt.zero_grad()
        with Tape():
            parts = []
            l_syn_v = l_sd_v = l_ps_v = 0.0
            if cfg.sd_pl_only:
                lam_syn, lam_sd = 0.0, 1.0
            elif cfg.synsup_only:
                lam_syn, lam_sd = 1.0, 0.0
            else:
                lam_syn, lam_sd = stage1_weights(
                    step, max(1.0, cfg.sched_stretch) * cfg.iterations, cfg.scheduler_off
                )

            use_syn = not cfg.sd_pl_only
            use_real = not cfg.synsup_only
            if use_syn:
                sidx = _sample_indices(srng.child("syn"), len(syn), n_syn_batch)
                sl, sr = _views(syn, sidx, srng.child("syn-aug"), cfg.aug, syn_view)
            if use_real:
                ridx = _sample_indices(srng.child("real"), len(real), n_real_batch)
                wl, wr = _views(real, ridx, srng.child("real-weak"), cfg.aug, "weak")
                stl, str_ = _views(real, ridx, srng.child("real-strong"), cfg.aug, "strong")
                with no_grad():
                    h_t, y_t = teacher.forward_pair(*_pair_tensors(wl, wr))
                    z_t = teacher.project(h_t, "main")

            # one student pass over the concatenated strong views
            if use_syn and use_real:
                xl = np.concatenate([sl, stl], axis=0)
                xr = np.concatenate([sr, str_], axis=0)
            elif use_syn:
                xl, xr = sl, sr
            else:
                xl, xr = stl, str_
            h_all, y_all = student.forward_pair(*_pair_tensors(xl, xr))

            if use_syn:
                y_s_syn = slice_rows(y_all, 0, n_syn_batch) if use_real else y_all
                l_synsup = gaze_loss(_norm_gaze(syn.gaze[sidx]), y_s_syn, cfg.gaze)
                parts.append(mul(l_synsup, lam_syn))
                l_syn_v = l_synsup.item()
            if use_real:
                lo = n_syn_batch if use_syn else 0
                h_s = slice_rows(h_all, lo, lo + n_real_batch) if use_syn else h_all
                y_s_real = slice_rows(y_all, lo, lo + n_real_batch) if use_syn else y_all
                z_s = student.project(h_s, "main")
                if dino_state is not None:
                    l_sd = dino_sd(z_t.detach(), z_s, dino_state)
                else:
                    l_sd = sd_mse(z_t, z_s)
                l_ps = pseudo_loss(y_t, y_s_real, cfg.gaze)
                parts.append(mul(l_sd + l_ps, lam_sd))
                l_sd_v = l_sd.item()
                l_ps_v = l_ps.item()

            total = parts[0] if len(parts) == 1 else parts[0] + parts[1]
            backward(total)
        lr = opt.step()
        maybe_ema_update(teacher, student, cfg.ema, step)
        report.log(step, total.item(), l_syn_v, l_sd_v, l_ps_v, lam_syn, lam_sd, lr)
    report.wall_clock_s = time.perf_counter() - t0
    return student, teacher, report


def synthetic_finetune(
    data: DatasetBundle,
    cfg: RunConfig,
    tier: str,
    foundation: ModelBundle | None,
) -> tuple[ModelBundle, RunReport]:
    """Supervised training on the synthetic split only; returns the model.

    Runs the stage-1 loop with the synthetic-only flag, so a stage-1 run
    with `synsup_only` produces an identical loss series by construction.
    """
    sub = replace(cfg, synsup_only=True, sd_pl_only=False)
    student, _teacher, report = _stage1_loop(data, sub, tier, foundation)
    return student, report


def stage1_optimize(
    data: DatasetBundle,
    cfg: RunConfig,
    foundation: ModelBundle | None,
) -> tuple[ModelBundle, RunReport]:
    """Optimize the teacher-tier model; returns the EMA teacher."""
    _student, teacher, report = _stage1_loop(data, cfg, cfg.teacher_tier, foundation)
    return teacher, report


# ---------------------------------------------------------------------------
# stage 2 core loop (also powers the distillation baselines)


def _stage2_loop(
    data: DatasetBundle,
    cfg: RunConfig,
    teacher: ModelBundle,
    student_init: ModelBundle,
    feature_loss: str,  # "vic" | "sp" | "none"
    use_ema_branch: bool,
) -> tuple[ModelBundle, RunReport]:
    cfg.validate()
    real = data.real_train
    if real.gaze is not None:
        raise PipelineError("real-train split must not carry labels")
    if teacher.tier not in ("teacher_s", "teacher_l"):
        raise PipelineError(f"stage2 teacher must be a teacher tier, got {teacher.tier!r}")
    if student_init.tier != "student":
        raise PipelineError(f"stage2 student must be student tier, got {student_init.tier!r}")

    hw = real.images_left.shape[1:]
    # student carries two projectors; backbone and head come from the init
    student = ModelBundle("student", role="student", proj_keys=("to_teacher", "to_ema"),
                          seed=cfg.seed, input_hw=hw, small_init_proj=("to_ema",))
    for name, p in student.backbone.params.items():
        p.data[...] = student_init.backbone.params[name].data
    for name, p in student.head.params.items():
        p.data[...] = student_init.head.params[name].data

    # teacher is frozen; its distillation projector is freshly seeded
    teacher = clone_bundle(teacher, role="teacher", requires_grad=False)
    fresh = ModelBundle(teacher.tier, role="teacher", proj_keys=("main",), seed=cfg.seed + 104729, input_hw=hw)
    for name, p in teacher.projectors["main"].params.items():
        p.data[...] = fresh.projectors["main"].params[name].data
    teacher_before = {k: v.data.copy() for k, v in teacher.parameters().items()}

    ema_student = clone_bundle(student, role="ema_student", requires_grad=False) if use_ema_branch else None

    opt = AdamW(student.parameters(), cfg.lr, weight_decay=cfg.weight_decay,
                total_steps=cfg.iterations, warmup_frac=cfg.warmup_frac, lr_floor=cfg.lr_floor)
    rng = RngStream(cfg.seed, 0).child("stage2")

    report = RunReport(
        cfg.stage, cfg.seed,
        ["iteration", "loss", "loss_kd", "loss_pseudo_t", "loss_sd", "loss_pseudo_e", "lam_t", "lam_e", "lr"],
    )
    t0 = time.perf_counter()
    for step in range(1, cfg.iterations + 1):
        srng = rng.child("step", step)
        ridx = _sample_indices(srng.child("batch"), len(real), cfg.batch_size)
        wl, wr = _views(real, ridx, srng.child("weak"), cfg.aug, "weak")
        stl, str_ = _views(real, ridx, srng.child("strong"), cfg.aug, "strong")
        opt.zero_grad()
        with Tape():
            with no_grad():
                h_t, y_t = teacher.forward_pair(*_pair_tensors(wl, wr))
                z_t = teacher.project(h_t, "main")
            h_s, y_s = student.forward_pair(*_pair_tensors(stl, str_))

            zero = Tensor(np.zeros((), dtype=np.float32))
            if feature_loss == "vic":
                l_kd = vic_kd(z_t, student.project(h_s, "to_teacher"), cfg.vic)
            elif feature_loss == "sp":
                l_kd = sp_kd(h_t, h_s)
            else:
                l_kd = zero
            l_pt = pseudo_loss(y_t, y_s, cfg.gaze)

            if use_ema_branch:
                with no_grad():
                    h_e, y_e = ema_student.forward_pair(*_pair_tensors(wl, wr))
                    z_e = ema_student.project(h_e, "to_ema")
                l_sd = sd_mse(z_e, student.project(h_s, "to_ema"))
                l_pe = pseudo_loss(y_e, y_s, cfg.gaze)
            else:
                l_sd = zero
                l_pe = zero
            total, lam_t, lam_e = stage2_total(l_kd, l_pt, l_sd, l_pe, step, cfg.iterations)
            backward(total)
        lr = opt.step()
        if use_ema_branch:
            maybe_ema_update(ema_student, student, cfg.ema, step)
        report.log(step, total.item(), l_kd.item(), l_pt.item(), l_sd.item(), l_pe.item(), lam_t, lam_e, lr)

    # the teacher must come out bit-identical
    for k, v in teacher.parameters().items():
        if not np.array_equal(v.data, teacher_before[k]):
            raise PipelineError(f"stage2 mutated frozen teacher parameter {k!r}")
    report.wall_clock_s = time.perf_counter() - t0
    return student, report


def stage2_distill(
    data: DatasetBundle,
    cfg: RunConfig,
    teacher: ModelBundle,
    student_init: ModelBundle,
) -> tuple[ModelBundle, RunReport]:
    return _stage2_loop(data, cfg, teacher, student_init, "vic", True)


def run_baseline(
    kind: str,
    data: DatasetBundle,
    cfg: RunConfig,
    teacher: ModelBundle | None = None,
    student_init: ModelBundle | None = None,
) -> tuple[ModelBundle, RunReport]:
    if kind == "pseudo_only":
        if teacher is None or student_init is None:
            raise PipelineError("pseudo_only needs a teacher and a student init")
        return _stage2_loop(data, cfg, teacher, student_init, "none", False)
    if kind == "sp_kd":
        if teacher is None or student_init is None:
            raise PipelineError("sp_kd needs a teacher and a student init")
        return _stage2_loop(data, cfg, teacher, student_init, "sp", False)
    if kind == "self_distill_no_vfm":
        student, teacher_out, report = _stage1_loop(data, cfg, "student", None)
        return teacher_out, report
    if kind == "fully_supervised":
        return fully_supervised(data, cfg)
    raise PipelineError(f"unknown baseline kind {kind!r}; expected one of {BASELINE_KINDS}")


def fully_supervised(data: DatasetBundle, cfg: RunConfig) -> tuple[ModelBundle, RunReport]:
    """Upper bound: trains on the eval pool's labels (unavailable in any
    deployment scenario; reported as a reference only)."""
    cfg.validate()
    split = data.real_eval
    if split.gaze is None:
        raise PipelineError("fully_supervised needs the labeled eval pool")
    hw = split.images_left.shape[1:]
    model = ModelBundle("student", role="student", proj_keys=("main",), seed=cfg.seed, input_hw=hw)
    opt = AdamW(model.parameters(), cfg.lr, weight_decay=cfg.weight_decay,
                total_steps=cfg.iterations, warmup_frac=cfg.warmup_frac, lr_floor=cfg.lr_floor)
    rng = RngStream(cfg.seed, 0).child("fully-supervised")
    report = RunReport(cfg.stage, cfg.seed, ["iteration", "loss", "lr"])
    t0 = time.perf_counter()
    for step in range(1, cfg.iterations + 1):
        srng = rng.child("step", step)
        idx = _sample_indices(srng.child("batch"), len(split), cfg.batch_size)
        sl, sr = _views(split, idx, srng.child("aug"), cfg.aug, "strong")
        opt.zero_grad()
        with Tape():
            _, y = model.forward_pair(*_pair_tensors(sl, sr))
            loss = gaze_loss(_norm_gaze(split.gaze[idx]), y, cfg.gaze)
            backward(loss)
        lr = opt.step()
        report.log(step, loss.item(), lr)
    report.wall_clock_s = time.perf_counter() - t0
    return model, report
