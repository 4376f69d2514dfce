"""Flat key-value configuration with namespaced keys and typed defaults.

Files are one `key = value` per line with `#` comments. Unknown keys are
rejected; every run echoes its effective configuration (defaults merged
with overrides) next to its artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# key -> (type, default, help)
SCHEMA: dict[str, tuple[type, Any, str]] = {
    # dataset generation
    "data.seed": (int, 1234, "dataset seed (subjects, gaze draws, warp field, frame noise)"),
    "data.n_subjects_pretrain": (int, 200, "identity-pretraining subject pool"),
    "data.n_subjects_syn": (int, 60, "labeled synthetic subjects"),
    "data.n_subjects_real_train": (int, 120, "unlabeled real-domain training subjects"),
    "data.n_subjects_real_eval": (int, 40, "held-out labeled real-domain subjects"),
    "data.recordings_per_subject": (int, 1, "recordings per subject"),
    "data.frames_per_recording": (int, 64, "frames per recording"),
    "data.height": (int, 48, "image height"),
    "data.width": (int, 64, "image width"),
    "data.real_gaze_sigma": (float, 15.0, "stddev (deg) of the truncated-normal real gaze draw"),
    "data.tone_exponent": (float, 1.7, "real-domain tone curve exponent"),
    "data.vignette_strength": (float, 0.35, "real-domain vignette strength"),
    "data.noise_syn": (float, 0.015, "synthetic sensor noise sigma"),
    "data.noise_real": (float, 0.04, "real-domain sensor noise sigma"),
    "data.warp_px": (float, 2.0, "real-domain warp magnitude in pixels"),
    # augmentation
    "aug.gamma_lo": (float, 0.8, "weak: gamma jitter lower bound"),
    "aug.gamma_hi": (float, 1.25, "weak: gamma jitter upper bound"),
    "aug.scale_lo": (float, 0.9, "weak: rescale lower bound"),
    "aug.scale_hi": (float, 1.1, "weak: rescale upper bound"),
    "aug.strong_p": (float, 0.3, "strong: per-op probability"),
    "aug.blur_sigma_lo": (float, 0.5, "strong: Gaussian blur sigma lower bound"),
    "aug.blur_sigma_hi": (float, 1.5, "strong: Gaussian blur sigma upper bound"),
    "aug.brightness": (float, 0.15, "strong: brightness jitter amplitude"),
    "aug.contrast_lo": (float, 0.8, "strong: contrast factor lower bound"),
    "aug.contrast_hi": (float, 1.2, "strong: contrast factor upper bound"),
    "aug.shadow_lo": (float, 0.1, "strong: shadow strength lower bound"),
    "aug.shadow_hi": (float, 0.4, "strong: shadow strength upper bound"),
    "aug.dropout_count_max": (int, 3, "strong: max dropout rectangles"),
    "aug.dropout_frac_max": (float, 0.15, "strong: max dropout rectangle area fraction"),
    "aug.quant_block": (int, 8, "strong: quantization block size"),
    "aug.quant_levels": (int, 16, "strong: quantization levels per block"),
    # networks
    "net.teacher_tier": (str, "teacher_s", "teacher tier: teacher_s or teacher_l"),
    # losses
    "loss.beta": (float, 1.0 / 45.0, "gaze loss quadratic/linear knee (normalized units)"),
    "loss.gamma": (float, 5.0 / 45.0, "gaze loss outlier threshold (normalized units)"),
    "loss.k": (float, 0.5, "gaze loss outlier down-weight"),
    "loss.vic_inv": (float, 25.0, "VIC invariance weight"),
    "loss.vic_var": (float, 25.0, "VIC variance hinge weight"),
    "loss.vic_cov": (float, 1.0, "VIC covariance weight"),
    "loss.vic_gamma_v": (float, 1.0, "VIC variance hinge threshold"),
    "loss.dino_prototypes": (int, 256, "ablation: prototype count"),
    "loss.dino_teacher_temp": (float, 0.04, "ablation: teacher temperature"),
    "loss.dino_student_temp": (float, 0.1, "ablation: student temperature"),
    "loss.dino_center_momentum": (float, 0.9, "ablation: center EMA momentum"),
    # schedules / training
    "sched.syn_fraction": (float, 0.5, "stage1 mini-batch share drawn from the synthetic split"),
    "sched.stretch": (float, 2.0, "stage1 cosine-transition length as a multiple of the run; > 1 keeps a synthetic-supervision anchor at the end (collapse guard at desk scale)"),
    "run.iterations": (int, 0, "training steps; 0 = per-stage default"),
    "run.batch_size": (int, 0, "sample pairs per step; 0 = per-stage default"),
    "run.lr": (float, 1e-3, "base learning rate"),
    "run.lr_floor": (float, 1e-5, "cosine schedule floor"),
    "run.warmup_frac": (float, 0.10, "fraction of steps spent in linear warmup"),
    "run.weight_decay": (float, 1e-4, "AdamW decoupled weight decay"),
    "run.ema_momentum": (float, 0.95, "EMA momentum alpha (0.95..0.99)"),
    "run.ema_interval": (int, 25, "EMA update interval K in steps (desk-scale default keeps the update count proportional to a full-length run)"),
    "run.seed": (int, 0, "training seed"),
    "run.checkpoint": (str, "", "input checkpoint (foundation for probe/synft/stage1, teacher for stage2, model for eval)"),
    "run.student_init": (str, "", "student initialization checkpoint (stage2 and distillation baselines)"),
    "run.baseline_kind": (str, "pseudo_only", "baseline subcommand: pseudo_only | sp_kd | self_distill_no_vfm | fully_supervised"),
    "run.synsup_only": (bool, False, "ablation: synthetic supervision only"),
    "run.sd_pl_only": (bool, False, "ablation: self-distillation + pseudo-labels only"),
    "run.scheduler_off": (bool, False, "ablation: fixed 0.5/0.5 loss weights"),
    "run.dino_loss": (bool, False, "ablation: prototype cross-entropy instead of feature MSE"),
    # evaluation
    "eval.bootstrap_iters": (int, 1000, "hierarchical bootstrap replicates"),
    "eval.seed": (int, 7, "evaluation protocol seed (frame split, bootstrap)"),
    "eval.batch": (int, 512, "prediction batch size during evaluation"),
}


@dataclass
class Config:
    values: dict[str, Any]

    @staticmethod
    def defaults() -> "Config":
        return Config({k: v for k, (_t, v, _h) in SCHEMA.items()})

    def set(self, key: str, raw: str | Any) -> None:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
        typ = SCHEMA[key][0]
        if isinstance(raw, str):
            try:
                self.values[key] = _parse_bool(raw) if typ is bool else typ(raw)
            except ValueError:
                raise ConfigError(f"cannot parse value for {key}: {raw!r} (expected {typ.__name__})") from None
        else:
            self.values[key] = typ(raw)

    def __getitem__(self, key: str) -> Any:
        if key not in SCHEMA:
            raise ConfigError(f"unknown config key: {key!r}")
        return self.values[key]

    def get_int(self, key: str) -> int:
        return int(self[key])

    def get_float(self, key: str) -> float:
        return float(self[key])

    def get_str(self, key: str) -> str:
        return str(self[key])

    def get_bool(self, key: str) -> bool:
        return bool(self[key])

    def update_from_file(self, path: str | Path) -> None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in body.split("=", 1))
            self.set(key, raw)

    def echo(self) -> str:
        lines = [f"{k} = {self.values[k]}" for k in SCHEMA]
        return "\n".join(lines) + "\n"

    def write_echo(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.echo())


def reference_doc() -> str:
    """Config key reference (rendered into docs by the CLI)."""
    lines = ["# Configuration keys", ""]
    group = None
    for key, (typ, default, help_text) in SCHEMA.items():
        g = key.split(".")[0]
        if g != group:
            lines.append(f"\n## {g}.*\n")
            group = g
        lines.append(f"- `{key}` ({typ.__name__}, default `{default}`): {help_text}")
    return "\n".join(lines) + "\n"
