"""Model bundles: conv backbones at three size tiers, projectors, gaze heads.

A bundle is the trained/evaluated/checkpointed unit: one backbone shared
by both eyes, an optional set of projectors (training-time only), and a
gaze head reading the concatenated binocular embedding. Tier budgets refer
to inference-time parameters (backbone + head); projectors are excluded
because they are dropped at deployment.

Gaze is predicted in normalized units (degrees / 45), so +-45 deg maps to
+-1. Denormalization happens only at evaluation boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import Tensor, checkpoint, concat, conv2d, gelu, matmul, reduce_mean, relu, reshape, slice_rows
from .tensorcore.rng import RngStream

ANGLE_SCALE_DEG = 45.0

PROJ_DIM = 128
PROJ_HIDDEN = 128

TIER_ORDER = ("teacher_l", "teacher_s", "student")
ROLE_ORDER = ("teacher", "student", "ema_student")
PROJ_KEYS = ("main", "to_teacher", "to_ema")


@dataclass(frozen=True)
class BackboneSpec:
    tier: str
    convs: tuple[tuple[int, int], ...]  # (out_channels, stride) per 3x3 layer
    embed_dim: int
    head_hidden: int
    param_budget: int  # inference params (backbone + head)


TIERS: dict[str, BackboneSpec] = {
    "teacher_l": BackboneSpec(
        tier="teacher_l",
        convs=((16, 2), (32, 2), (64, 2), (128, 2), (192, 2), (192, 1)),
        embed_dim=192,
        head_hidden=1408,
        param_budget=1_200_000,
    ),
    "teacher_s": BackboneSpec(
        tier="teacher_s",
        convs=((12, 2), (24, 2), (48, 2), (128, 2), (128, 2)),
        embed_dim=128,
        head_hidden=1088,
        param_budget=500_000,
    ),
    "student": BackboneSpec(
        tier="student",
        convs=((12, 2), (24, 2), (48, 2), (64, 2)),
        embed_dim=64,
        head_hidden=256,
        param_budget=80_000,
    ),
}


class ArchitectureError(ValueError):
    pass


def _he_conv(rng: RngStream, out_c: int, in_c: int, k: int) -> np.ndarray:
    std = math.sqrt(2.0 / (in_c * k * k))
    return (std * rng.normal((out_c, in_c, k, k))).astype(np.float32)


def _he_linear(rng: RngStream, in_d: int, out_d: int) -> np.ndarray:
    std = math.sqrt(2.0 / in_d)
    return (std * rng.normal((in_d, out_d))).astype(np.float32)


_coord_cache: dict[tuple[int, int], np.ndarray] = {}


def coord_channels(h: int, w: int) -> np.ndarray:
    """Normalized (x, y) coordinate planes appended to the input image.

    Average pooling erases position, but gaze is a position readout; with
    coordinate channels a pooled product of a pupil mask and a coordinate
    plane recovers the pupil centroid.
    """
    key = (h, w)
    if key not in _coord_cache:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
        _coord_cache[key] = np.stack([xx / (w - 1) - 0.5, yy / (h - 1) - 0.5])
    return _coord_cache[key]


IN_CHANNELS = 3  # image + two coordinate planes


class Backbone:
    """Plain strided 3x3 conv stack with ReLU and global average pooling."""

    def __init__(self, spec: BackboneSpec, rng: RngStream, requires_grad: bool = True):
        self.spec = spec
        self.params: dict[str, Tensor] = {}
        in_c = IN_CHANNELS
        for i, (out_c, _stride) in enumerate(spec.convs):
            self.params[f"conv{i}/w"] = Tensor(_he_conv(rng.child("conv", i, "w"), out_c, in_c, 3), requires_grad)
            self.params[f"conv{i}/b"] = Tensor(np.zeros(out_c, dtype=np.float32), requires_grad)
            in_c = out_c

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for i, (out_c, stride) in enumerate(self.spec.convs):
            w = self.params[f"conv{i}/w"]
            b = self.params[f"conv{i}/b"]
            h = conv2d(h, w, stride=stride, padding=1)
            h = h + reshape(b, (1, out_c, 1, 1))
            h = relu(h)
        return reduce_mean(h, axis=(2, 3))


class Projector:
    """Three linear layers with GELU between them, output dim PROJ_DIM.

    `small_init_last` scales the output layer down 100x: self-distillation
    branches then start from nearly matched projections, so the
    sum-over-dim feature loss cannot swamp the gaze terms at init, while
    its gradient still flows (an exactly zero init would be a stationary
    point of the matched MSE).
    """

    def __init__(self, in_dim: int, rng: RngStream, requires_grad: bool = True,
                 small_init_last: bool = False):
        self.in_dim = in_dim
        last = _he_linear(rng.child("fc", 2), PROJ_HIDDEN, PROJ_DIM)
        if small_init_last:
            last = last * np.float32(0.01)
        self.params = {
            "fc0/w": Tensor(_he_linear(rng.child("fc", 0), in_dim, PROJ_HIDDEN), requires_grad),
            "fc0/b": Tensor(np.zeros(PROJ_HIDDEN, dtype=np.float32), requires_grad),
            "fc1/w": Tensor(_he_linear(rng.child("fc", 1), PROJ_HIDDEN, PROJ_HIDDEN), requires_grad),
            "fc1/b": Tensor(np.zeros(PROJ_HIDDEN, dtype=np.float32), requires_grad),
            "fc2/w": Tensor(last, requires_grad),
            "fc2/b": Tensor(np.zeros(PROJ_DIM, dtype=np.float32), requires_grad),
        }

    def forward(self, h: Tensor) -> Tensor:
        z = matmul(h, self.params["fc0/w"]) + self.params["fc0/b"]
        z = gelu(z)
        z = matmul(z, self.params["fc1/w"]) + self.params["fc1/b"]
        z = gelu(z)
        return matmul(z, self.params["fc2/w"]) + self.params["fc2/b"]


class GazeHead:
    """One hidden layer then a linear readout of 4 normalized angles."""

    def __init__(self, in_dim: int, hidden: int, rng: RngStream, requires_grad: bool = True):
        self.params = {
            "fc0/w": Tensor(_he_linear(rng.child("head", 0), in_dim, hidden), requires_grad),
            "fc0/b": Tensor(np.zeros(hidden, dtype=np.float32), requires_grad),
            # zero-init readout: predictions start at the bias
            "fc1/w": Tensor(np.zeros((hidden, 4), dtype=np.float32), requires_grad),
            "fc1/b": Tensor(np.zeros(4, dtype=np.float32), requires_grad),
        }

    def forward(self, h: Tensor) -> Tensor:
        z = matmul(h, self.params["fc0/w"]) + self.params["fc0/b"]
        z = gelu(z)
        return matmul(z, self.params["fc1/w"]) + self.params["fc1/b"]


class ModelBundle:
    """Backbone + projectors + gaze head with a role tag."""

    def __init__(
        self,
        tier: str,
        role: str = "student",
        proj_keys: tuple[str, ...] = ("main",),
        seed: int = 0,
        input_hw: tuple[int, int] = (48, 64),
        requires_grad: bool = True,
        small_init_proj: tuple[str, ...] = (),
    ):
        if tier not in TIERS:
            raise ArchitectureError(f"unknown tier {tier!r}")
        if role not in ROLE_ORDER:
            raise ArchitectureError(f"unknown role {role!r}")
        for k in proj_keys:
            if k not in PROJ_KEYS:
                raise ArchitectureError(f"unknown projector key {k!r}")
        self.tier = tier
        self.role = role
        self.spec = TIERS[tier]
        self.input_hw = tuple(input_hw)
        rng = RngStream(seed, 0).child("bundle", tier, role)
        self.backbone = Backbone(self.spec, rng.child("backbone"), requires_grad)
        self.head = GazeHead(2 * self.spec.embed_dim, self.spec.head_hidden, rng.child("head"), requires_grad)
        self.projectors: dict[str, Projector] = {
            k: Projector(
                2 * self.spec.embed_dim,
                rng.child("proj", k),
                requires_grad,
                small_init_last=(k in small_init_proj),
            )
            for k in proj_keys
        }

    # -- parameter plumbing -------------------------------------------------

    def parameters(self, inference_only: bool = False) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for k, v in self.backbone.params.items():
            out[f"backbone/{k}"] = v
        for k, v in self.head.params.items():
            out[f"head/{k}"] = v
        if not inference_only:
            for pk in self.projectors:
                for k, v in self.projectors[pk].params.items():
                    out[f"proj/{pk}/{k}"] = v
        return out

    def param_count(self, inference_only: bool = True) -> int:
        return sum(int(p.data.size) for p in self.parameters(inference_only).values())

    # -- forward ------------------------------------------------------------

    def embed(self, x: Tensor) -> Tensor:
        """Per-eye embedding through the shared backbone.

        Accepts (B, 1, H, W) images; coordinate planes are appended here.
        """
        h, w = self.input_hw
        if x.shape[2] != h or x.shape[3] != w:
            raise ArchitectureError(f"input dims {x.shape[2:]} do not match configured {self.input_hw}")
        if x.shape[1] == 1:
            coords = np.broadcast_to(coord_channels(h, w), (x.shape[0], 2, h, w))
            x = concat([x, Tensor(np.ascontiguousarray(coords))], axis=1)
        return self.backbone.forward(x)

    def forward_pair(self, x_left: Tensor, x_right: Tensor) -> tuple[Tensor, Tensor]:
        """Binocular embedding h = [f(X_L); f(X_R)] and 4 normalized angles.

        Both eyes run through the shared backbone as one stacked batch.
        """
        if x_left.shape != x_right.shape:
            raise ArchitectureError(f"eye batches differ: {x_left.shape} vs {x_right.shape}")
        b = x_left.shape[0]
        emb = self.embed(concat([x_left, x_right], axis=0))
        h = concat([slice_rows(emb, 0, b), slice_rows(emb, b, 2 * b)], axis=1)
        return h, self.head.forward(h)

    def project(self, h: Tensor, key: str = "main") -> Tensor:
        if key not in self.projectors:
            raise ArchitectureError(f"bundle has no projector {key!r}; available: {list(self.projectors)}")
        return self.projectors[key].forward(h)

    # -- persistence ----------------------------------------------------------

    def to_arrays(self) -> dict[str, np.ndarray]:
        arrays = {name: p.data for name, p in self.parameters().items()}
        meta = {
            "/meta/tier_id": np.array([TIER_ORDER.index(self.tier)], dtype=np.float32),
            "/meta/role_id": np.array([ROLE_ORDER.index(self.role)], dtype=np.float32),
            "/meta/embed_dim": np.array([self.spec.embed_dim], dtype=np.float32),
            "/meta/in_h": np.array([self.input_hw[0]], dtype=np.float32),
            "/meta/in_w": np.array([self.input_hw[1]], dtype=np.float32),
            "/meta/proj_flags": np.array(
                [1.0 if k in self.projectors else 0.0 for k in PROJ_KEYS], dtype=np.float32
            ),
        }
        arrays.update(meta)
        return arrays

    def save(self, path) -> None:
        checkpoint.save_arrays(path, self.to_arrays())

    @staticmethod
    def from_arrays(arrays: dict[str, np.ndarray]) -> "ModelBundle":
        tier = TIER_ORDER[int(arrays["/meta/tier_id"][0])]
        role = ROLE_ORDER[int(arrays["/meta/role_id"][0])]
        hw = (int(arrays["/meta/in_h"][0]), int(arrays["/meta/in_w"][0]))
        flags = arrays["/meta/proj_flags"]
        keys = tuple(k for k, f in zip(PROJ_KEYS, flags) if f > 0.5)
        bundle = ModelBundle(tier, role, keys, seed=0, input_hw=hw)
        params = bundle.parameters()
        for name, p in params.items():
            if name not in arrays:
                raise ArchitectureError(f"checkpoint missing parameter {name!r}")
            if tuple(arrays[name].shape) != tuple(p.data.shape):
                raise ArchitectureError(
                    f"checkpoint shape {arrays[name].shape} != expected {p.data.shape} for {name!r}"
                )
            p.data[...] = arrays[name]
        return bundle

    @staticmethod
    def load(path) -> "ModelBundle":
        return ModelBundle.from_arrays(checkpoint.load_arrays(path))


def clone_bundle(src: ModelBundle, role: str | None = None, requires_grad: bool = True) -> ModelBundle:
    """Deep copy with identical weights (optionally re-tagged)."""
    dst = ModelBundle(
        src.tier, role or src.role, tuple(src.projectors), seed=0, input_hw=src.input_hw,
        requires_grad=requires_grad,
    )
    sp = src.parameters()
    for name, p in dst.parameters().items():
        p.data[...] = sp[name].data
    return dst


def load_backbone_into(bundle: ModelBundle, arrays: dict[str, np.ndarray]) -> None:
    """Copy only backbone weights from a checkpoint (foundation init)."""
    for name, p in bundle.backbone.params.items():
        key = f"backbone/{name}"
        if key not in arrays:
            raise ArchitectureError(f"checkpoint missing backbone weight {key!r}")
        if tuple(arrays[key].shape) != tuple(p.data.shape):
            raise ArchitectureError(f"backbone shape mismatch for {key!r}")
        p.data[...] = arrays[key]


# ---------------------------------------------------------------------------
# EMA


@dataclass
class EmaConfig:
    momentum: float = 0.95  # alpha in [0.95, 0.99]
    interval: int = 100  # apply every K steps

    def validate(self) -> None:
        if not (0.0 < self.momentum < 1.0):
            raise ValueError("EMA momentum must be in (0, 1)")
        if self.interval < 1:
            raise ValueError("EMA interval must be >= 1")


def ema_update(target: ModelBundle, source: ModelBundle, momentum: float) -> None:
    """theta_t <- alpha * theta_t + (1 - alpha) * theta_s, elementwise.

    Computed as theta_t += (1 - alpha) * (theta_s - theta_t): identical in
    exact arithmetic, and exactly a fixed point when the bundles agree.
    """
    tp = target.parameters()
    sp = source.parameters()
    if tp.keys() != sp.keys():
        raise ArchitectureError("EMA bundles differ in parameter sets")
    b = np.float32(1.0 - momentum)
    for name, t in tp.items():
        s = sp[name]
        if t.data.shape != s.data.shape:
            raise ArchitectureError(f"EMA shape mismatch for {name!r}")
        t.data += b * (s.data - t.data)


def maybe_ema_update(target: ModelBundle, source: ModelBundle, cfg: EmaConfig, step: int) -> bool:
    """Apply the EMA update only when `step` is a multiple of the interval."""
    cfg.validate()
    if step % cfg.interval != 0:
        return False
    ema_update(target, source, cfg.momentum)
    return True
