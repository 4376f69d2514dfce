"""Benchmark the two convolution backends over this package's layer shapes.

Usage:
    python benchmarks/bench_conv.py [--budget SECONDS]

The compiled kernels must be built first (`python setup.py build_ext
--inplace`). Results inform the default backend choice in
`gazedistill.tensorcore.kernels`: on BLAS-backed numpy the im2col path has
won on every machine tried so far, because the channel-heavy layers reduce
to large GEMMs; the compiled path exists as a strictly sequential,
allocation-free alternative whose results do not depend on BLAS threading.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from gazedistill.nets import TIERS
from gazedistill.tensorcore import kernels


def layer_shapes(batch_images: int = 16, h: int = 48, w: int = 64):
    """Per-tier conv layer shapes as (name, B, C, H, W, O, stride)."""
    out = []
    for tier, spec in TIERS.items():
        ch, cw = h, w
        in_c = 3
        for i, (out_c, stride) in enumerate(spec.convs):
            out.append((f"{tier}/conv{i}", batch_images, in_c, ch, cw, out_c, stride))
            ch = (ch + 2 - 3) // stride + 1
            cw = (cw + 2 - 3) // stride + 1
            in_c = out_c
    return out


def bench(fn, budget: float) -> float:
    fn()  # warm up
    t0 = time.perf_counter()
    n = 0
    while time.perf_counter() - t0 < budget:
        fn()
        n += 1
    return (time.perf_counter() - t0) / n


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--budget", type=float, default=0.4, help="seconds per measurement")
    ap.add_argument("--batch", type=int, default=16, help="images per batch")
    args = ap.parse_args()

    if not kernels.HAVE_COMPILED:
        print("compiled kernels not built; run `python setup.py build_ext --inplace` first")
        return 1

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'layer':22s} {'MFLOP':>7s} {'numpy f+b':>10s} {'compiled f+b':>13s} {'ratio':>6s}")
    tot_np = tot_cy = 0.0
    for name, b, c, h, w, o, s in layer_shapes(args.batch):
        x = rng.random((b, c, h, w), dtype=np.float32)
        wgt = (rng.random((o, c, 3, 3), dtype=np.float32) - 0.5) * 0.2
        out_np, cols = kernels.conv_numpy.conv2d_forward(x, wgt, s, s, 1, 1)
        out_cy = kernels._convcy.conv2d_forward_f32(x, wgt, s, s, 1, 1)
        np.testing.assert_allclose(out_np, out_cy, rtol=2e-4, atol=2e-4)
        gy = rng.random(out_np.shape, dtype=np.float32)

        def np_fb():
            o2, cols2 = kernels.conv_numpy.conv2d_forward(x, wgt, s, s, 1, 1)
            kernels.conv_numpy.conv2d_backward(gy, x.shape, wgt, cols2, s, s, 1, 1)

        def cy_fb():
            kernels._convcy.conv2d_forward_f32(x, wgt, s, s, 1, 1)
            kernels._convcy.conv2d_input_grad_f32(gy, wgt, h, w, s, s, 1, 1)
            kernels._convcy.conv2d_weight_grad_f32(gy, x, 3, 3, s, s, 1, 1)

        t_np = bench(np_fb, args.budget)
        t_cy = bench(cy_fb, args.budget)
        tot_np += t_np
        tot_cy += t_cy
        oh, ow = out_np.shape[2:]
        mflop = 2 * 3 * b * oh * ow * o * c * 9 / 1e6  # fwd + input grad + weight grad
        print(f"{name:22s} {mflop:7.0f} {t_np*1e3:9.2f}ms {t_cy*1e3:12.2f}ms {t_cy/t_np:6.1f}x")
    print(f"{'TOTAL':22s} {'':7s} {tot_np*1e3:9.2f}ms {tot_cy*1e3:12.2f}ms {tot_cy/tot_np:6.1f}x")
    print(f"\nactive backend at import: {kernels.BACKEND!r} (override with GD_BACKEND)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
