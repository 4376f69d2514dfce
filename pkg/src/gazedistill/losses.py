"""Training objectives and loss-weight schedules.

The gaze loss is a smooth-L1 with a third, down-weighted branch for gross
outliers: quadratic below `beta`, linear up to `gamma`, and scaled by
`k < 1` beyond. Distillation losses (feature MSE, VIC, similarity
preserving, prototype cross-entropy) all stop gradients on the
teacher/EMA side. Stage totals mix their terms under a cosine weight
transition.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np

from .tensorcore import (
    Tensor,
    absval,
    div,
    log_softmax,
    matmul,
    max_scalar,
    mul,
    reduce_mean,
    reduce_sum,
    reduce_var,
    sqrt,
    sub,
    transpose,
)
from .tensorcore.rng import RngStream
from .nets import PROJ_DIM


@dataclass
class GazeLossConfig:
    # defaults are normalized units: knee at 1 degree, outliers past 5 degrees
    beta: float = 1.0 / 45.0
    gamma: float = 5.0 / 45.0
    k: float = 0.5

    def validate(self) -> None:
        if not (0.0 < self.beta <= self.gamma):
            raise ValueError(f"need 0 < beta <= gamma, got beta={self.beta}, gamma={self.gamma}")
        if not (0.0 < self.k < 1.0):
            raise ValueError(f"outlier down-weight k must be in (0, 1), got {self.k}")


@dataclass
class VicConfig:
    lam_inv: float = 25.0
    lam_var: float = 25.0
    lam_cov: float = 1.0
    gamma_v: float = 1.0

    def validate(self) -> None:
        if min(self.lam_inv, self.lam_var, self.lam_cov) < 0:
            raise ValueError("VIC weights must be >= 0")


@dataclass
class DinoHeadConfig:
    prototypes: int = 256
    teacher_temp: float = 0.04
    student_temp: float = 0.1
    center_momentum: float = 0.9

    def validate(self) -> None:
        if self.prototypes < 2:
            raise ValueError("need at least 2 prototypes")
        if self.teacher_temp <= 0 or self.student_temp <= 0:
            raise ValueError("temperatures must be > 0")


@dataclass
class DinoState:
    """Shared prototype matrix plus the running teacher-logit center."""

    prototypes: Tensor
    center: np.ndarray
    cfg: DinoHeadConfig = field(default_factory=DinoHeadConfig)

    @staticmethod
    def create(cfg: DinoHeadConfig, seed: int = 0, in_dim: int = PROJ_DIM) -> "DinoState":
        cfg.validate()
        rng = RngStream(seed, 0).child("dino-protos")
        std = math.sqrt(1.0 / in_dim)
        protos = Tensor((std * rng.normal((in_dim, cfg.prototypes))).astype(np.float32), requires_grad=True)
        return DinoState(protos, np.zeros(cfg.prototypes, dtype=np.float32), cfg)


# ---------------------------------------------------------------------------


def gaze_loss(y: Tensor, y_hat: Tensor, cfg: GazeLossConfig) -> Tensor:
    """Piecewise robust regression loss, averaged over batch and components."""
    cfg.validate()
    if y.shape != y_hat.shape:
        raise ValueError(f"gaze_loss: shapes differ, {y.shape} vs {y_hat.shape}")
    e = sub(y.detach(), y_hat)
    a = absval(e)
    ad = a.data
    m_quad = (ad < cfg.beta).astype(ad.dtype)
    m_lin = ((ad >= cfg.beta) & (ad < cfg.gamma)).astype(ad.dtype)
    m_out = (ad >= cfg.gamma).astype(ad.dtype)
    quad = mul(mul(e, e), 1.0 / (2.0 * cfg.beta))
    lin = sub(a, cfg.beta / 2.0)
    per_elem = (
        mul(quad, Tensor(m_quad))
        + mul(lin, Tensor(m_lin))
        + mul(mul(lin, cfg.k), Tensor(m_out))
    )
    return reduce_mean(per_elem)


def pseudo_loss(y_teacher: Tensor, y_student: Tensor, cfg: GazeLossConfig) -> Tensor:
    """Gaze loss against detached teacher predictions."""
    return gaze_loss(y_teacher.detach(), y_student, cfg)


def sd_mse(z_t: Tensor, z_s: Tensor) -> Tensor:
    """Mean over the batch of squared L2 distance; teacher side detached."""
    if z_t.shape != z_s.shape:
        raise ValueError(f"sd_mse: shapes differ, {z_t.shape} vs {z_s.shape}")
    d = sub(z_t.detach(), z_s)
    if d.data.ndim == 1:
        return reduce_sum(mul(d, d))
    return reduce_mean(reduce_sum(mul(d, d), axis=1))


def vic_kd(z_t: Tensor, z_s: Tensor, cfg: VicConfig) -> Tensor:
    """Invariance + variance hinge + covariance penalty (teacher detached)."""
    cfg.validate()
    if z_t.shape != z_s.shape:
        raise ValueError(f"vic_kd: shapes differ, {z_t.shape} vs {z_s.shape}")
    if z_s.data.ndim != 2 or z_s.shape[0] < 2:
        raise ValueError("vic_kd: needs a batch of size >= 2")
    b, dim = z_s.shape
    inv = sd_mse(z_t, z_s)

    std = sqrt(reduce_var(z_s, axis=0))
    hinge = reduce_mean(max_scalar(sub(cfg.gamma_v, std), 0.0))

    zc = sub(z_s, reduce_mean(z_s, axis=0, keepdims=True))
    cov = mul(matmul(transpose(zc), zc), 1.0 / b)
    off = 1.0 - np.eye(dim, dtype=z_s.data.dtype)
    cov_pen = mul(reduce_sum(mul(mul(cov, cov), Tensor(off))), 1.0 / dim)

    return mul(inv, cfg.lam_inv) + mul(hinge, cfg.lam_var) + mul(cov_pen, cfg.lam_cov)


def sp_kd(h_t: Tensor, h_s: Tensor) -> Tensor:
    """Similarity-preserving loss on row-normalized Gram matrices."""
    if h_t.data.ndim != 2 or h_s.data.ndim != 2:
        raise ValueError("sp_kd: expects (B, D) feature batches")
    if h_t.shape[0] != h_s.shape[0]:
        raise ValueError(f"sp_kd: batch sizes differ, {h_t.shape[0]} vs {h_s.shape[0]}")
    b = h_t.shape[0]
    if b < 2:
        raise ValueError("sp_kd: needs a batch of size >= 2")

    def normalized_gram(h: Tensor) -> Tensor:
        g = matmul(h, transpose(h))
        norm = sqrt(reduce_sum(mul(g, g), axis=1, keepdims=True))
        return div(g, max_scalar(norm, 1e-12))

    gt = normalized_gram(h_t.detach())
    gs = normalized_gram(h_s)
    d = sub(gt, gs)
    return mul(reduce_sum(mul(d, d)), 1.0 / (b * b))


def dino_sd(z_t: Tensor, z_s: Tensor, state: DinoState, update_center: bool = True) -> Tensor:
    """Prototype cross-entropy between sharpened teacher and student views."""
    cfg = state.cfg
    cfg.validate()
    # teacher target: fully detached, centered, sharpened
    logits_t = z_t.data @ state.prototypes.data
    if not np.all(np.isfinite(logits_t)):
        raise FloatingPointError("dino_sd: non-finite teacher logits")
    lt = (logits_t - state.center) / cfg.teacher_temp
    lt -= lt.max(axis=1, keepdims=True)
    pt = np.exp(lt)
    pt /= pt.sum(axis=1, keepdims=True)

    protos = state.prototypes
    if z_s.data.dtype != protos.data.dtype:
        protos = Tensor(protos.data.astype(z_s.data.dtype))
    logits_s = matmul(z_s, protos)
    if not np.all(np.isfinite(logits_s.data)):
        raise FloatingPointError("dino_sd: non-finite student logits")
    logp_s = log_softmax(mul(logits_s, 1.0 / cfg.student_temp), axis=1)
    ce = mul(reduce_mean(reduce_sum(mul(logp_s, Tensor(pt.astype(z_s.data.dtype))), axis=1)), -1.0)

    if update_center:
        m = cfg.center_momentum
        state.center = (m * state.center + (1.0 - m) * logits_t.mean(axis=0)).astype(np.float32)
    return ce


# ---------------------------------------------------------------------------
# schedules


def cosine_weight(start: float, end: float, t: float, total: float) -> float:
    """end + (start - end) * 0.5 * (1 + cos(pi t / T)), t in [0, T]."""
    if total <= 0:
        raise ValueError("cosine_weight: total must be > 0")
    if t < 0 or t > total:
        raise ValueError(f"cosine_weight: t={t} outside [0, {total}]")
    return end + (start - end) * 0.5 * (1.0 + math.cos(math.pi * t / total))


def stage1_weights(t: float, total: float, scheduler_off: bool = False) -> tuple[float, float]:
    """(lambda_synsup, lambda_sd): 1 -> 0 and 0 -> 1 under the cosine transition."""
    if scheduler_off:
        return 0.5, 0.5
    return cosine_weight(1.0, 0.0, t, total), cosine_weight(0.0, 1.0, t, total)


def stage1_total(
    l_synsup: Tensor,
    l_sd: Tensor,
    l_pseudo: Tensor,
    t: float,
    total: float,
    scheduler_off: bool = False,
) -> tuple[Tensor, float, float]:
    lam_syn, lam_sd = stage1_weights(t, total, scheduler_off)
    out = mul(l_synsup, lam_syn) + mul(l_sd + l_pseudo, lam_sd)
    return out, lam_syn, lam_sd


def stage2_weights(t: float, total: float) -> tuple[float, float]:
    """(lambda_t, lambda_e): teacher term fixed at 1, EMA term ramps 0 -> 1."""
    return 1.0, cosine_weight(0.0, 1.0, t, total)


def stage2_total(
    l_kd: Tensor,
    l_pseudo_t: Tensor,
    l_sd: Tensor,
    l_pseudo_e: Tensor,
    t: float,
    total: float,
) -> tuple[Tensor, float, float]:
    lam_t, lam_e = stage2_weights(t, total)
    out = mul(l_kd + l_pseudo_t, lam_t) + mul(l_sd + l_pseudo_e, lam_e)
    return out, lam_t, lam_e
