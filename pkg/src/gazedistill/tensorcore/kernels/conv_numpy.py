"""im2col convolution kernels on plain numpy.

Forward lowers the convolution to one batched GEMM against an im2col
buffer; the buffer is kept for the backward pass. Input gradients go
through col2im implemented as nine strided adds (one per kernel tap),
which avoids `np.add.at` scatter.
"""

from __future__ import annotations

import numpy as np


def out_dims(h: int, w: int, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> tuple[int, int]:
    return (h + 2 * ph - kh) // sh + 1, (w + 2 * pw - kw) // sw + 1


def _pad_zeros(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if not (ph or pw):
        return x
    b, c, h, w = x.shape
    xp = np.zeros((b, c, h + 2 * ph, w + 2 * pw), dtype=x.dtype)
    xp[:, :, ph : ph + h, pw : pw + w] = x
    return xp


def _im2col(x: np.ndarray, kh: int, kw: int, sh: int, sw: int, ph: int, pw: int) -> np.ndarray:
    b, c, h, w = x.shape
    oh, ow = out_dims(h, w, kh, kw, sh, sw, ph, pw)
    xp = _pad_zeros(x, ph, pw)
    cols = np.empty((b, c, kh, kw, oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
    return cols.reshape(b, c * kh * kw, oh * ow)


def conv2d_forward(x: np.ndarray, w: np.ndarray, sh: int, sw: int, ph: int, pw: int):
    """Return (out, ctx). x: (B,C,H,W); w: (O,C,kh,kw); out: (B,O,OH,OW)."""
    b = x.shape[0]
    o, _, kh, kw = w.shape
    oh, ow = out_dims(x.shape[2], x.shape[3], kh, kw, sh, sw, ph, pw)
    cols = _im2col(x, kh, kw, sh, sw, ph, pw)
    out = np.matmul(w.reshape(o, -1), cols)
    return out.reshape(b, o, oh, ow), cols


def _col2im(gcols: np.ndarray, b, c, h, w_in, kh, kw, sh, sw, ph, pw, oh, ow, dtype):
    """Scatter cols-space gradients back onto the (padded) input grid."""
    hp, wp = h + 2 * ph, w_in + 2 * pw
    if sh == sw == 2:
        # phase decomposition: writes for each kernel tap land on one
        # (row parity, col parity) plane contiguously instead of stride-2
        hq, wq = (hp + 1) // 2, (wp + 1) // 2
        phases = np.zeros((2, 2, b, c, hq, wq), dtype=dtype)
        for i in range(kh):
            for j in range(kw):
                r0, c0 = i // 2, j // 2
                phases[i % 2, j % 2][:, :, r0 : r0 + oh, c0 : c0 + ow] += gcols[:, :, i, j]
        gxp = np.zeros((b, c, hp, wp), dtype=dtype)
        for pi in range(2):
            for pj in range(2):
                gxp[:, :, pi::2, pj::2] = phases[pi, pj][:, :, : (hp - pi + 1) // 2, : (wp - pj + 1) // 2]
        return gxp
    gxp = np.zeros((b, c, hp, wp), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += gcols[:, :, i, j]
    return gxp


def conv2d_backward(
    gy: np.ndarray,
    x_shape: tuple[int, ...],
    w: np.ndarray,
    cols: np.ndarray,
    sh: int,
    sw: int,
    ph: int,
    pw: int,
    need_gx: bool = True,
    need_gw: bool = True,
):
    """Return (gx, gw) for upstream gradient gy of shape (B,O,OH,OW)."""
    b, c, h, w_in = x_shape
    o, _, kh, kw = w.shape
    _, _, oh, ow = gy.shape
    g = gy.reshape(b, o, oh * ow)

    gw = None
    if need_gw:
        # weight grad as a single GEMM over the flattened batch
        g2 = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(o, b * oh * ow)
        c2 = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(cols.shape[1], b * oh * ow)
        gw = (g2 @ c2.T).reshape(w.shape)

    gx = None
    if need_gx:
        gcols = np.matmul(w.reshape(o, -1).T, g).reshape(b, c, kh, kw, oh, ow)
        gxp = _col2im(gcols, b, c, h, w_in, kh, kw, sh, sw, ph, pw, oh, ow, gy.dtype)
        gx = gxp[:, :, ph : h + ph, pw : w_in + pw] if (ph or pw) else gxp
        gx = np.ascontiguousarray(gx)
    return gx, gw
