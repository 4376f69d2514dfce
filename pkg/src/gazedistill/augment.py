"""Weak and strong view augmentation.

Weak = gamma jitter + random isotropic rescale (center re-crop to the
original size). Strong = weak, then seven photometric/sensor corruptions
each applied independently with probability `strong_p`: Gaussian blur,
directional motion blur, 8x8 block quantization, brightness/contrast
jitter, brightest-blob inpainting, a multiplicative linear shadow, and
coarse dropout.

All functions are pure in (images, rng): parameter draws happen in a fixed
order and fixed count regardless of which ops fire, so a forced
probability of zero reproduces the weak view draw-for-draw, and equal
streams give bitwise-equal outputs. Images stay in [0, 1] at the original
shape throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensorcore.rng import RngStream


@dataclass
class AugmentConfig:
    gamma_lo: float = 0.8
    gamma_hi: float = 1.25
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    strong_p: float = 0.3
    blur_sigma_lo: float = 0.5
    blur_sigma_hi: float = 1.5
    motion_lengths: tuple[int, ...] = (3, 5)
    quant_block: int = 8
    quant_levels: int = 16
    brightness: float = 0.15
    contrast_lo: float = 0.8
    contrast_hi: float = 1.2
    shadow_lo: float = 0.1
    shadow_hi: float = 0.4
    dropout_count_max: int = 3
    dropout_frac_max: float = 0.15

    def validate(self) -> None:
        if not 0.0 <= self.strong_p <= 1.0:
            raise ValueError("strong_p must be in [0, 1]")
        for lo, hi, name in [
            (self.gamma_lo, self.gamma_hi, "gamma"),
            (self.scale_lo, self.scale_hi, "scale"),
            (self.blur_sigma_lo, self.blur_sigma_hi, "blur_sigma"),
            (self.contrast_lo, self.contrast_hi, "contrast"),
            (self.shadow_lo, self.shadow_hi, "shadow"),
        ]:
            if hi < lo:
                raise ValueError(f"{name} range is degenerate: [{lo}, {hi}]")


def _batch_bilinear(imgs: np.ndarray, sx: np.ndarray, sy: np.ndarray) -> np.ndarray:
    """Sample each image of (B,H,W) at its own float coords, edge-clamped.

    Gathers go through one flat `take` per corner, which is markedly
    faster than multi-array fancy indexing in the training hot path.
    """
    b, h, w = imgs.shape
    sx = np.clip(sx, 0.0, w - 1.0).astype(np.float32, copy=False)
    sy = np.clip(sy, 0.0, h - 1.0).astype(np.float32, copy=False)
    x0 = sx.astype(np.int32)
    y0 = sy.astype(np.int32)
    fx = sx - x0
    fy = sy - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    flat = imgs.reshape(-1)
    base = (np.arange(b, dtype=np.int32) * (h * w))[:, None, None]
    row0 = base + y0 * w
    row1 = base + y1 * w
    top = flat.take(row0 + x0) * (1 - fx) + flat.take(row0 + x1) * fx
    bot = flat.take(row1 + x0) * (1 - fx) + flat.take(row1 + x1) * fx
    return top * (1 - fy) + bot * fy


def _weak_batch(imgs: np.ndarray, gammas: np.ndarray, scales: np.ndarray) -> np.ndarray:
    b, h, w = imgs.shape
    out = np.power(imgs, gammas[:, None, None].astype(imgs.dtype))
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    inv = (1.0 / scales).astype(np.float32)[:, None, None]
    sx = cx + (xx[None] - cx) * inv
    sy = cy + (yy[None] - cy) * inv
    out = _batch_bilinear(out, sx, sy)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def weak_augment_batch(imgs: np.ndarray, rng: RngStream, cfg: AugmentConfig) -> np.ndarray:
    """Gamma jitter + random rescale for a (B,H,W) batch."""
    cfg.validate()
    b = imgs.shape[0]
    u = rng.uniform((b, 2))
    gammas = cfg.gamma_lo + (cfg.gamma_hi - cfg.gamma_lo) * u[:, 0]
    scales = cfg.scale_lo + (cfg.scale_hi - cfg.scale_lo) * u[:, 1]
    return _weak_batch(imgs, gammas, scales)


def _gaussian_blur(sel: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    k, h, w = sel.shape
    radius = 3
    taps = np.arange(-radius, radius + 1, dtype=np.float32)
    kern = np.exp(-0.5 * (taps[None, :] / sigmas[:, None]) ** 2)
    kern /= kern.sum(axis=1, keepdims=True)
    padded = np.pad(sel, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    tmp = np.zeros_like(sel)
    for t in range(2 * radius + 1):
        tmp += kern[:, t, None, None] * padded[:, t : t + h, :]
    padded = np.pad(tmp, ((0, 0), (0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(sel)
    for t in range(2 * radius + 1):
        out += kern[:, t, None, None] * padded[:, :, t : t + w]
    return out


def _motion_blur(sel: np.ndarray, lengths: np.ndarray, angles: np.ndarray) -> np.ndarray:
    k, h, w = sel.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    out = np.zeros_like(sel)
    maxlen = int(lengths.max())
    counts = np.zeros(k, dtype=np.float32)
    for t in range(maxlen):
        active = t < lengths
        offs = t - (lengths - 1) / 2.0
        dx = (offs * np.cos(angles)).astype(np.float32)
        dy = (offs * np.sin(angles)).astype(np.float32)
        shifted = _batch_bilinear(sel, xx[None] + dx[:, None, None], yy[None] + dy[:, None, None])
        out += np.where(active[:, None, None], shifted, 0.0)
        counts += active
    return out / counts[:, None, None]


def _block_quantize(sel: np.ndarray, block: int, levels: int) -> np.ndarray:
    k, h, w = sel.shape
    bh, bw = h // block, w // block
    t = sel[:, : bh * block, : bw * block].reshape(k, bh, block, bw, block)
    mn = t.min(axis=(2, 4), keepdims=True)
    mx = t.max(axis=(2, 4), keepdims=True)
    span = np.maximum(mx - mn, 1e-8)
    q = np.round((t - mn) / span * (levels - 1)) / (levels - 1) * span + mn
    out = sel.copy()
    out[:, : bh * block, : bw * block] = q.reshape(k, bh * block, bw * block)
    return out


def _inpaint_brightest(sel: np.ndarray) -> np.ndarray:
    """Replace a small disk around the brightest pixel with the local median."""
    out = sel.copy()
    k, h, w = sel.shape
    for i in range(k):
        idx = int(np.argmax(sel[i]))
        py, px = divmod(idx, w)
        y0, y1 = max(0, py - 4), min(h, py + 5)
        x0, x1 = max(0, px - 4), min(w, px + 5)
        med = float(np.median(sel[i, y0:y1, x0:x1]))
        yy, xx = np.mgrid[y0:y1, x0:x1]
        disk = (yy - py) ** 2 + (xx - px) ** 2 <= 2.5**2
        patch = out[i, y0:y1, x0:x1]
        patch[disk] = med
    return out


def _shadow(sel: np.ndarray, strengths: np.ndarray, angles: np.ndarray) -> np.ndarray:
    k, h, w = sel.shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    proj = xx[None] * np.cos(angles)[:, None, None] + yy[None] * np.sin(angles)[:, None, None]
    pmin = proj.min(axis=(1, 2), keepdims=True)
    pmax = proj.max(axis=(1, 2), keepdims=True)
    ramp = (proj - pmin) / np.maximum(pmax - pmin, 1e-8)
    return sel * (1.0 - strengths[:, None, None] * ramp)


def apply_dropout_rect(img: np.ndarray, x0: int, y0: int, rw: int, rh: int) -> None:
    """Zero one rectangle in place."""
    img[y0 : y0 + rh, x0 : x0 + rw] = 0.0


def _coarse_dropout(sel: np.ndarray, counts: np.ndarray, rects: np.ndarray, max_frac: float) -> np.ndarray:
    out = sel.copy()
    k, h, w = sel.shape
    for i in range(k):
        for r in range(int(counts[i])):
            frac, aspect_u, ux, uy = rects[i, r]
            frac = 0.02 + (max_frac - 0.02) * frac
            aspect = 0.5 + aspect_u  # in [0.5, 1.5]
            rw = max(1, int(round(w * np.sqrt(frac * aspect))))
            rh = max(1, int(round(h * np.sqrt(frac / aspect))))
            rw, rh = min(rw, w), min(rh, h)
            x0 = int(ux * (w - rw + 1))
            y0 = int(uy * (h - rh + 1))
            apply_dropout_rect(out[i], x0, y0, rw, rh)
    return out


def strong_augment_batch(imgs: np.ndarray, rng: RngStream, cfg: AugmentConfig) -> np.ndarray:
    """Weak view plus probabilistic sensor/illumination corruptions."""
    out = weak_augment_batch(imgs, rng, cfg)
    b = imgs.shape[0]
    fire = rng.uniform((b, 7)) < cfg.strong_p

    # parameter draws happen for every image so stream positions are fixed
    blur_sigma = cfg.blur_sigma_lo + (cfg.blur_sigma_hi - cfg.blur_sigma_lo) * rng.uniform((b,))
    mlen_idx = rng.integers(len(cfg.motion_lengths), (b,))
    mangle = 2 * np.pi * rng.uniform((b,))
    bright = cfg.brightness * (2 * rng.uniform((b,)) - 1)
    contrast = cfg.contrast_lo + (cfg.contrast_hi - cfg.contrast_lo) * rng.uniform((b,))
    shadow_s = cfg.shadow_lo + (cfg.shadow_hi - cfg.shadow_lo) * rng.uniform((b,))
    shadow_a = 2 * np.pi * rng.uniform((b,))
    drop_counts = 1 + rng.integers(cfg.dropout_count_max, (b,))
    drop_rects = rng.uniform((b, cfg.dropout_count_max, 4))

    def apply(op_idx: int, fn) -> None:
        sel = np.flatnonzero(fire[:, op_idx])
        if sel.size:
            out[sel] = np.clip(fn(sel), 0.0, 1.0).astype(np.float32)

    apply(0, lambda s: _gaussian_blur(out[s], blur_sigma[s]))
    apply(1, lambda s: _motion_blur(out[s], np.asarray(cfg.motion_lengths)[mlen_idx[s]], mangle[s]))
    apply(2, lambda s: _block_quantize(out[s], cfg.quant_block, cfg.quant_levels))
    apply(3, lambda s: (out[s] - 0.5) * contrast[s, None, None] + 0.5 + bright[s, None, None])
    apply(4, lambda s: _inpaint_brightest(out[s]))
    apply(5, lambda s: _shadow(out[s], shadow_s[s], shadow_a[s]))
    apply(6, lambda s: _coarse_dropout(out[s], drop_counts[s], drop_rects[s], cfg.dropout_frac_max))
    return out


def weak_augment(img: np.ndarray, rng: RngStream, cfg: AugmentConfig | None = None) -> np.ndarray:
    """Single-image weak view."""
    return weak_augment_batch(img[None], rng, cfg or AugmentConfig())[0]


def strong_augment(img: np.ndarray, rng: RngStream, cfg: AugmentConfig | None = None) -> np.ndarray:
    """Single-image strong view."""
    return strong_augment_batch(img[None], rng, cfg or AugmentConfig())[0]
