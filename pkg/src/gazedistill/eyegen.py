"""Procedural binocular eye-image generator with a fixed synthetic-to-real gap.

Each subject is a deterministic function of (dataset seed, subject index):
iris/pupil geometry, eyelid aperture, sclera brightness, skin texture,
corner offsets, and glint layout. Gaze moves the iris/pupil center
proportionally to tan(angle) with cosine foreshortening of the iris
ellipse. The REAL domain applies a fixed tone curve, vignette, smooth
geometric warp, and stronger sensor noise on top of the SYN render, so the
domain gap is a deterministic, analytically invertible transform (up to
noise and interpolation).

REAL-train samples never carry gaze: labels are dropped before storage, so
no training path can read them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensorcore.rng import RngStream, derive_stream_id

SYN = "SYN"
REAL = "REAL"

MAGIC = b"EYE1"
VERSION = 1

GAZE_LIMIT_DEG = 40.0
_MAX_ABS_ANGLE = 45.0


class DatasetError(RuntimeError):
    pass


class BadMagicError(DatasetError):
    pass


class VersionError(DatasetError):
    pass


class TruncatedError(DatasetError):
    pass


@dataclass(frozen=True)
class SubjectParams:
    """Per-subject appearance, fixed across all of a subject's frames."""

    iris_radius_ratio: float  # iris radius as fraction of image height
    pupil_ratio: float  # pupil radius / iris radius
    eyelid_aperture: float
    sclera_brightness: float
    skin_seed: int
    corner_left: tuple[float, float]  # per-eye (dx, dy) pixel offsets
    corner_right: tuple[float, float]
    glints: tuple[tuple[float, float, float], ...]  # (dx, dy, amplitude)


@dataclass(frozen=True)
class GazeTarget:
    yaw_left: float
    pitch_left: float
    yaw_right: float
    pitch_right: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.yaw_left, self.pitch_left, self.yaw_right, self.pitch_right],
            dtype=np.float32,
        )


@dataclass
class Sample:
    image_left: np.ndarray
    image_right: np.ndarray
    gaze: GazeTarget | None
    subject_id: int
    recording_id: int
    frame_id: int
    domain: str


@dataclass
class DomainShift:
    """Parameters of the fixed SYN -> REAL transform."""

    tone_exponent: float = 1.7
    vignette_strength: float = 0.35
    noise_syn: float = 0.015
    noise_real: float = 0.04
    warp_px: float = 2.0


@dataclass
class DatasetSpec:
    n_subjects_pretrain: int = 200
    n_subjects_syn: int = 60
    n_subjects_real_train: int = 120
    n_subjects_real_eval: int = 40
    recordings_per_subject: int = 1
    frames_per_recording: int = 64
    height: int = 48
    width: int = 64
    seed: int = 1234
    real_gaze_sigma: float = 15.0
    shift: DomainShift = field(default_factory=DomainShift)

    def validate(self) -> None:
        for name in ("n_subjects_pretrain", "n_subjects_syn", "n_subjects_real_train", "n_subjects_real_eval"):
            if getattr(self, name) < 0:
                raise DatasetError(f"{name} must be >= 0")
        if self.recordings_per_subject < 1 or self.frames_per_recording < 1:
            raise DatasetError("recordings/frames per subject must be >= 1")
        if self.height < 16 or self.width < 16:
            raise DatasetError("images must be at least 16x16")


@dataclass
class Split:
    """Column-oriented sample storage for one pool."""

    images_left: np.ndarray  # (N, H, W) float32 in [0, 1]
    images_right: np.ndarray
    gaze: np.ndarray | None  # (N, 4) degrees, None when labels are withheld
    subject_ids: np.ndarray  # (N,) int32
    recording_ids: np.ndarray
    frame_ids: np.ndarray
    domain: str

    def __len__(self) -> int:
        return self.images_left.shape[0]

    @property
    def has_gaze(self) -> bool:
        return self.gaze is not None

    def sample(self, i: int) -> Sample:
        gaze = None
        if self.gaze is not None:
            yl, pl, yr, pr = (float(v) for v in self.gaze[i])
            gaze = GazeTarget(yl, pl, yr, pr)
        return Sample(
            self.images_left[i],
            self.images_right[i],
            gaze,
            int(self.subject_ids[i]),
            int(self.recording_ids[i]),
            int(self.frame_ids[i]),
            self.domain,
        )


@dataclass
class DatasetBundle:
    pretrain: Split
    syn: Split
    real_train: Split
    real_eval: Split
    spec: DatasetSpec | None = None

    def splits(self) -> dict[str, Split]:
        return {
            "pretrain": self.pretrain,
            "syn": self.syn,
            "real_train": self.real_train,
            "real_eval": self.real_eval,
        }


# ---------------------------------------------------------------------------
# subject derivation


def subject_params(dataset_seed: int, subject_id: int) -> SubjectParams:
    r = RngStream(dataset_seed, derive_stream_id("subject", subject_id))
    u = r.uniform((14,))
    iris = 0.18 + 0.12 * u[0]
    pupil = 0.25 + 0.30 * u[1]
    aperture = 0.55 + 0.45 * u[2]
    sclera = 0.60 + 0.35 * u[3]
    skin_seed = int(r.integers(2**63))
    corner_l = (float(u[4] * 6 - 3), float(u[5] * 6 - 3))
    corner_r = (float(u[6] * 6 - 3), float(u[7] * 6 - 3))
    # glints come from illumination-ring pairs: 2 or 4, point-symmetric
    # about the eye center so they do not bias the dark-pupil centroid
    n_pairs = 1 + int(r.integers(2))
    gl = []
    gu = r.uniform((n_pairs, 3))
    for k in range(n_pairs):
        ang = 2 * math.pi * gu[k, 0]
        rad = 2.5 + 3.5 * gu[k, 1]
        amp = 0.30 + 0.30 * gu[k, 2]
        dx, dy = rad * math.cos(ang), rad * math.sin(ang)
        gl.append((dx, dy, amp))
        gl.append((-dx, -dy, amp))
    return SubjectParams(
        iris_radius_ratio=float(iris),
        pupil_ratio=float(pupil),
        eyelid_aperture=float(aperture),
        sclera_brightness=float(sclera),
        skin_seed=skin_seed,
        corner_left=corner_l,
        corner_right=corner_r,
        glints=tuple(gl),
    )


# ---------------------------------------------------------------------------
# rendering


def _soft_inside(rho: np.ndarray, edge: float = 0.10) -> np.ndarray:
    """1 inside the unit ellipse (rho < 1), 0 outside, linear edge band."""
    return np.clip((1.0 - rho) / edge, 0.0, 1.0)


def gaze_gain_px(height: int, width: int) -> float:
    """Pixels of iris-center travel per unit tan(angle)."""
    rsx, rsy = 0.30 * width, 0.38 * height
    return 0.55 * min(rsx, rsy) / math.tan(math.radians(GAZE_LIMIT_DEG))


_grid_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
_skin_cache: dict[tuple[int, int, int], np.ndarray] = {}


def _grids(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    key = (h, w)
    if key not in _grid_cache:
        yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
        _grid_cache[key] = (yy, xx)
    return _grid_cache[key]


def _skin_texture(h: int, w: int, skin_seed: int) -> np.ndarray:
    key = (skin_seed, h, w)
    cached = _skin_cache.get(key)
    if cached is not None:
        return cached
    yy, xx = _grids(h, w)
    r = RngStream(skin_seed, derive_stream_id("skin"))
    u = r.uniform((8,))
    fx1, fy1 = 1.0 + 2.0 * u[0], 1.0 + 2.0 * u[1]
    fx2, fy2 = 3.0 + 3.0 * u[2], 3.0 + 3.0 * u[3]
    p1, p2, p3, p4 = (2 * math.pi * v for v in u[4:8])
    t = np.sin(2 * math.pi * fx1 * xx / w + p1) * np.sin(2 * math.pi * fy1 * yy / h + p2)
    t2 = np.sin(2 * math.pi * fx2 * xx / w + p3) * np.sin(2 * math.pi * fy2 * yy / h + p4)
    tex = (0.55 + 0.12 * t + 0.05 * t2).astype(np.float32)
    if len(_skin_cache) > 4096:
        _skin_cache.clear()
    _skin_cache[key] = tex
    return tex


def _warp_fields(shift: DomainShift, seed: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed smooth displacement fields (du, dv), |d| <= warp_px."""
    r = RngStream(seed, derive_stream_id("warpfield"))
    u = r.uniform((8,))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    fx1, fy1 = 1.0 + u[0], 1.0 + u[1]
    fx2, fy2 = 1.0 + u[2], 1.0 + u[3]
    du = np.sin(2 * np.pi * (fx1 * xx / w + u[4])) * np.cos(2 * np.pi * (fy1 * yy / h + u[5]))
    dv = np.sin(2 * np.pi * (fy2 * yy / h + u[6])) * np.cos(2 * np.pi * (fx2 * xx / w + u[7]))
    return (shift.warp_px * du).astype(np.float32), (shift.warp_px * dv).astype(np.float32)


_warp_cache: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def warp_fields(shift: DomainShift, seed: int, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    key = (seed, h, w, round(shift.warp_px, 6))
    if key not in _warp_cache:
        _warp_cache[key] = _warp_fields(shift, seed, h, w)
    return _warp_cache[key]


def _bilinear(img: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample img at float coords (sx, sy) with edge clamping."""
    h, w = img.shape
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0).astype(img.dtype)
    fy = (sy - y0).astype(img.dtype)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


_vig_cache: dict[tuple, np.ndarray] = {}


def _vignette(shift: DomainShift, h: int, w: int) -> np.ndarray:
    key = (round(shift.vignette_strength, 6), h, w)
    if key not in _vig_cache:
        yy, xx = _grids(h, w)
        rho = (((xx - w / 2) / (w / 2)) ** 2 + ((yy - h / 2) / (h / 2)) ** 2) / 2.0
        _vig_cache[key] = (1.0 - shift.vignette_strength * rho).astype(np.float32)
    return _vig_cache[key]


def apply_real_transform(img: np.ndarray, shift: DomainShift, warp_seed: int) -> np.ndarray:
    """Deterministic part of the REAL domain shift (no noise)."""
    h, w = img.shape
    yy, xx = _grids(h, w)
    toned = np.power(np.clip(img, 0.0, 1.0), shift.tone_exponent)
    shaded = toned * _vignette(shift, h, w)
    du, dv = warp_fields(shift, warp_seed, h, w)
    return _bilinear(shaded, xx + du, yy + dv).astype(np.float32)


def invert_real_transform(img: np.ndarray, shift: DomainShift, warp_seed: int, iters: int = 4) -> np.ndarray:
    """Analytic inverse of apply_real_transform (exact up to interpolation)."""
    h, w = img.shape
    yy, xx = _grids(h, w)
    du, dv = warp_fields(shift, warp_seed, h, w)
    # forward: out(p) = in(p + d(p)). To recover in at grid point q we need
    # the p with p + d(p) = q, found by fixed-point iteration p <- q - d(p).
    sx, sy = xx.copy(), yy.copy()
    for _ in range(iters):
        sx = xx - _bilinear(du, sx, sy)
        sy = yy - _bilinear(dv, sx, sy)
    unwarped = _bilinear(img, sx, sy)
    detoned = np.power(np.clip(unwarped / _vignette(shift, h, w), 0.0, 1.0), 1.0 / shift.tone_exponent)
    return detoned.astype(np.float32)


def render_eye(
    params: SubjectParams,
    yaw_deg: float,
    pitch_deg: float,
    eye: str,
    domain: str,
    shift: DomainShift,
    warp_seed: int,
    rng: RngStream,
    height: int = 48,
    width: int = 64,
) -> np.ndarray:
    """Render one eye image in [0, 1]. `eye` is "L" or "R"."""
    if abs(yaw_deg) > _MAX_ABS_ANGLE or abs(pitch_deg) > _MAX_ABS_ANGLE:
        raise ValueError(f"gaze out of range: yaw={yaw_deg}, pitch={pitch_deg} (|angle| <= {_MAX_ABS_ANGLE})")
    if domain not in (SYN, REAL):
        raise ValueError(f"unknown domain {domain!r}")
    h, w = height, width
    corner = params.corner_left if eye == "L" else params.corner_right
    yy, xx = _grids(h, w)
    cx = w / 2.0 + corner[0]
    cy = h / 2.0 + corner[1]

    img = _skin_texture(h, w, params.skin_seed ^ (7 if eye == "R" else 0)).copy()

    rsx, rsy = 0.30 * w, 0.38 * h
    rho_s = ((xx - cx) / rsx) ** 2 + ((yy - cy) / (rsy * params.eyelid_aperture)) ** 2
    m_open = _soft_inside(rho_s)
    img = img * (1 - m_open) + params.sclera_brightness * m_open

    gain = gaze_gain_px(h, w)
    yaw = math.radians(yaw_deg)
    pitch = math.radians(pitch_deg)
    icx = cx + gain * math.tan(yaw)
    icy = cy + gain * math.tan(pitch)
    r_iris = params.iris_radius_ratio * h
    rx = r_iris * max(math.cos(yaw), 0.2)
    ry = r_iris * max(math.cos(pitch), 0.2)
    rho_i = ((xx - icx) / rx) ** 2 + ((yy - icy) / ry) ** 2
    m_iris = _soft_inside(rho_i) * m_open
    iris_col = 0.30 + 0.06 * np.clip(rho_i, 0.0, 1.0)
    img = img * (1 - m_iris) + iris_col * m_iris

    rho_p = rho_i / (params.pupil_ratio**2)
    m_pup = _soft_inside(rho_p) * m_open
    img = img * (1 - m_pup) + 0.05 * m_pup

    for gdx, gdy, amp in params.glints:
        gx = cx + gdx + 0.3 * gain * math.tan(yaw)
        gy = cy + gdy + 0.3 * gain * math.tan(pitch)
        d2 = (xx - gx) ** 2 + (yy - gy) ** 2
        img = img + amp * np.exp(-d2 / (2.0 * 0.9**2)) * m_open
    img = np.clip(img, 0.0, 1.0).astype(np.float32)

    if domain == REAL:
        img = apply_real_transform(img, shift, warp_seed)
        sigma = shift.noise_real
    else:
        sigma = shift.noise_syn
    noise = rng.normal((h, w)).astype(np.float32)
    return np.clip(img + sigma * noise, 0.0, 1.0).astype(np.float32)


def frame_stream(dataset_seed: int, subject_id: int, recording_id: int, frame_id: int, eye: str) -> RngStream:
    return RngStream(dataset_seed, derive_stream_id("frame", subject_id, recording_id, frame_id, eye))


# ---------------------------------------------------------------------------
# dataset assembly


def _draw_syn_gaze(r: RngStream, n: int) -> np.ndarray:
    return (r.uniform((n, 4)) * 2 * GAZE_LIMIT_DEG - GAZE_LIMIT_DEG).astype(np.float32)


_VERGENCE_SIGMA = 1.5  # per-eye deviation from the common fixation direction


def _draw_real_gaze(r: RngStream, n: int, sigma: float) -> np.ndarray:
    """Truncated-normal real gaze with binocular structure.

    Real recordings fixate targets, so both eyes share a common direction
    up to a small vergence offset; each component is a truncated normal
    (sigma ~ `sigma`), redrawn until inside +-40 degrees.
    """
    common = sigma * r.normal((n, 2))
    delta = _VERGENCE_SIGMA * r.normal((n, 4))
    vals = np.concatenate([common, common], axis=1) + delta
    bad = np.abs(vals) > GAZE_LIMIT_DEG
    while bad.any():
        rows = np.unique(np.nonzero(bad)[0])
        common_r = sigma * r.normal((rows.size, 2))
        delta_r = _VERGENCE_SIGMA * r.normal((rows.size, 4))
        vals[rows] = np.concatenate([common_r, common_r], axis=1) + delta_r
        bad = np.abs(vals) > GAZE_LIMIT_DEG
    return vals.astype(np.float32)


def _render_split(
    spec: DatasetSpec,
    subject_ids: list[int],
    domain: str,
    keep_gaze: bool,
    gaze_kind: str,
) -> Split:
    n = len(subject_ids) * spec.recordings_per_subject * spec.frames_per_recording
    h, w = spec.height, spec.width
    il = np.empty((n, h, w), dtype=np.float32)
    ir = np.empty((n, h, w), dtype=np.float32)
    gz = np.empty((n, 4), dtype=np.float32)
    sid = np.empty(n, dtype=np.int32)
    rid = np.empty(n, dtype=np.int32)
    fid = np.empty(n, dtype=np.int32)
    k = 0
    for s in subject_ids:
        params = subject_params(spec.seed, s)
        for rec in range(spec.recordings_per_subject):
            gr = RngStream(spec.seed, derive_stream_id("gaze", s, rec))
            if gaze_kind == "uniform":
                gazes = _draw_syn_gaze(gr, spec.frames_per_recording)
            else:
                gazes = _draw_real_gaze(gr, spec.frames_per_recording, spec.real_gaze_sigma)
            for f in range(spec.frames_per_recording):
                ga = gazes[f]
                il[k] = render_eye(
                    params, float(ga[0]), float(ga[1]), "L", domain, spec.shift,
                    spec.seed, frame_stream(spec.seed, s, rec, f, "L"), h, w,
                )
                ir[k] = render_eye(
                    params, float(ga[2]), float(ga[3]), "R", domain, spec.shift,
                    spec.seed, frame_stream(spec.seed, s, rec, f, "R"), h, w,
                )
                gz[k] = ga
                sid[k], rid[k], fid[k] = s, rec, f
                k += 1
    return Split(il, ir, gz if keep_gaze else None, sid, rid, fid, domain)


def make_dataset(spec: DatasetSpec) -> DatasetBundle:
    """Render the four disjoint pools."""
    spec.validate()
    n0 = spec.n_subjects_pretrain
    n1 = n0 + spec.n_subjects_syn
    n2 = n1 + spec.n_subjects_real_train
    n3 = n2 + spec.n_subjects_real_eval
    pretrain_ids = list(range(0, n0))
    syn_ids = list(range(n0, n1))
    rt_ids = list(range(n1, n2))
    re_ids = list(range(n2, n3))
    return DatasetBundle(
        pretrain=_render_split(spec, pretrain_ids, SYN, True, "uniform"),
        syn=_render_split(spec, syn_ids, SYN, True, "uniform"),
        real_train=_render_split(spec, rt_ids, REAL, False, "truncnorm"),
        real_eval=_render_split(spec, re_ids, REAL, True, "truncnorm"),
        spec=spec,
    )


# ---------------------------------------------------------------------------
# shard file format


_SPLIT_FILES = {
    "pretrain": "pretrain.eye1",
    "syn": "syn.eye1",
    "real_train": "real_train.eye1",
    "real_eval": "real_eval.eye1",
}


def save_split(split: Split, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(split)
    h, w = split.images_left.shape[1:]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<HH", h, w))
        f.write(struct.pack("<Q", n))
        has_gaze = split.gaze is not None
        for i in range(n):
            f.write(
                struct.pack(
                    "<IIIBB",
                    int(split.subject_ids[i]),
                    int(split.recording_ids[i]),
                    int(split.frame_ids[i]),
                    1 if split.domain == REAL else 0,
                    1 if has_gaze else 0,
                )
            )
            if has_gaze:
                f.write(split.gaze[i].astype("<f4").tobytes())
            f.write(split.images_left[i].astype("<f4").tobytes())
            f.write(split.images_right[i].astype("<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"dataset shard truncated while reading {what}")
    return buf


def load_split(path: str | Path) -> Split:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad dataset magic {magic!r}, expected {MAGIC!r}")
        (ver,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if ver != VERSION:
            raise VersionError(f"unsupported dataset version {ver}")
        h, w = struct.unpack("<HH", _read_exact(f, 4, "dims"))
        (n,) = struct.unpack("<Q", _read_exact(f, 8, "record count"))
        il = np.empty((n, h, w), dtype=np.float32)
        ir = np.empty((n, h, w), dtype=np.float32)
        sid = np.empty(n, dtype=np.int32)
        rid = np.empty(n, dtype=np.int32)
        fid = np.empty(n, dtype=np.int32)
        gz: np.ndarray | None = None
        domain = SYN
        px = 4 * h * w
        for i in range(n):
            s, r, fr, dom, hg = struct.unpack("<IIIBB", _read_exact(f, 14, f"record {i} header"))
            sid[i], rid[i], fid[i] = s, r, fr
            domain = REAL if dom == 1 else SYN
            if hg:
                if gz is None:
                    gz = np.empty((n, 4), dtype=np.float32)
                gz[i] = np.frombuffer(_read_exact(f, 16, f"record {i} gaze"), dtype="<f4")
            il[i] = np.frombuffer(_read_exact(f, px, f"record {i} left image"), dtype="<f4").reshape(h, w)
            ir[i] = np.frombuffer(_read_exact(f, px, f"record {i} right image"), dtype="<f4").reshape(h, w)
    return Split(il, ir, gz, sid, rid, fid, domain)


def save_dataset(bundle: DatasetBundle, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, split in bundle.splits().items():
        save_split(split, out / _SPLIT_FILES[name])


def load_dataset(in_dir: str | Path) -> DatasetBundle:
    src = Path(in_dir)
    parts = {name: load_split(src / fname) for name, fname in _SPLIT_FILES.items()}
    return DatasetBundle(parts["pretrain"], parts["syn"], parts["real_train"], parts["real_eval"])
