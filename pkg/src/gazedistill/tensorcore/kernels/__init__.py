"""Convolution kernel backend selection.

The compiled extension (built from `_convcy.pyx`) and the numpy im2col
implementation compute the same convolutions; which one runs is decided
once at import. Set GD_BACKEND=numpy or GD_BACKEND=compiled to force a
choice; the default prefers the backend that benchmarked faster for this
package's layer shapes (im2col + BLAS, see benchmarks/bench_conv.py),
falling back to whatever is available.

float64 inputs (gradient-check shadow mode) always use the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

from . import conv_numpy

try:
    from . import _convcy  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:
    _convcy = None
    HAVE_COMPILED = False

_choice = os.environ.get("GD_BACKEND", "").strip().lower()
if _choice == "compiled" and not HAVE_COMPILED:
    raise ImportError("GD_BACKEND=compiled but the compiled kernels are not built; run `python setup.py build_ext --inplace`")
if _choice not in ("", "numpy", "compiled"):
    raise ValueError(f"GD_BACKEND must be 'numpy' or 'compiled', got {_choice!r}")

# im2col+BLAS wins on this package's shapes; the extension remains available
# for benchmarking and for forcing bit-identical single-threaded math.
BACKEND = _choice or "numpy"

out_dims = conv_numpy.out_dims


class ConvCtx:
    __slots__ = ("x_shape", "w", "sh", "sw", "ph", "pw", "cols", "x")

    def __init__(self, x_shape, w, sh, sw, ph, pw, cols=None, x=None):
        self.x_shape = x_shape
        self.w = w
        self.sh = sh
        self.sw = sw
        self.ph = ph
        self.pw = pw
        self.cols = cols
        self.x = x


def conv2d(x: np.ndarray, w: np.ndarray, sh: int, sw: int, ph: int, pw: int):
    """Run conv2d forward, returning (out, ctx) where ctx feeds backward."""
    if BACKEND == "compiled" and x.dtype == np.float32:
        out = _convcy.conv2d_forward_f32(x, w, sh, sw, ph, pw)
        return out, ConvCtx(x.shape, w, sh, sw, ph, pw, x=x)
    out, cols = conv_numpy.conv2d_forward(x, w, sh, sw, ph, pw)
    return out, ConvCtx(x.shape, w, sh, sw, ph, pw, cols=cols)


def conv2d_backward(ctx: ConvCtx, gy: np.ndarray, need_gx: bool = True, need_gw: bool = True):
    """Return (gx, gw) given the forward ctx and output gradient; entries
    for gradients that are not needed come back as None."""
    if ctx.cols is None:
        kh, kw = ctx.w.shape[2], ctx.w.shape[3]
        gx = gw = None
        if need_gx:
            gx = _convcy.conv2d_input_grad_f32(
                gy, ctx.w, ctx.x_shape[2], ctx.x_shape[3], ctx.sh, ctx.sw, ctx.ph, ctx.pw
            )
        if need_gw:
            gw = _convcy.conv2d_weight_grad_f32(gy, ctx.x, kh, kw, ctx.sh, ctx.sw, ctx.ph, ctx.pw)
        return gx, gw
    return conv_numpy.conv2d_backward(
        gy, ctx.x_shape, ctx.w, ctx.cols, ctx.sh, ctx.sw, ctx.ph, ctx.pw, need_gx, need_gw
    )
