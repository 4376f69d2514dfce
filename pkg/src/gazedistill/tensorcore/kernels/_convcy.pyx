# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Direct (im2col-free) float32 convolution kernels.

Single-threaded with a fixed accumulation order, so results are
bit-reproducible run to run. Inner loops run over raw pointers into the
C-contiguous buffers; tap-dependent loop bounds are hoisted so the loops
stay branch-free.
"""

import numpy as np
cimport numpy as cnp


cdef inline Py_ssize_t _lo(Py_ssize_t k, Py_ssize_t p, Py_ssize_t s) noexcept nogil:
    cdef Py_ssize_t num = p - k
    if num <= 0:
        return 0
    return (num + s - 1) // s


cdef inline Py_ssize_t _hi(Py_ssize_t k, Py_ssize_t p, Py_ssize_t s, Py_ssize_t n, Py_ssize_t limit) noexcept nogil:
    cdef Py_ssize_t num = n - 1 + p - k
    cdef Py_ssize_t v
    if num < 0:
        return 0
    v = num // s + 1
    return v if v < limit else limit


def conv2d_forward_f32(cnp.float32_t[:, :, :, ::1] x,
                       cnp.float32_t[:, :, :, ::1] w,
                       Py_ssize_t sh, Py_ssize_t sw,
                       Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef Py_ssize_t O = w.shape[0], KH = w.shape[2], KW = w.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - KH) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - KW) // sw + 1
    out_arr = np.zeros((B, O, OH, OW), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] out = out_arr
    cdef cnp.float32_t *px = &x[0, 0, 0, 0]
    cdef cnp.float32_t *pw_ = &w[0, 0, 0, 0]
    cdef cnp.float32_t *po = &out[0, 0, 0, 0]
    cdef Py_ssize_t b, o, c, i, j, oh, ow, lo_h, hi_h, lo_w, hi_w
    cdef Py_ssize_t xoff, ooff, base_in, base_out
    cdef cnp.float32_t wv
    with nogil:
        for b in range(B):
            for o in range(O):
                ooff = (b * O + o) * OH * OW
                for c in range(C):
                    xoff = (b * C + c) * H * W
                    for i in range(KH):
                        lo_h = _lo(i, ph, sh)
                        hi_h = _hi(i, ph, sh, H, OH)
                        for j in range(KW):
                            wv = pw_[((o * C + c) * KH + i) * KW + j]
                            lo_w = _lo(j, pw, sw)
                            hi_w = _hi(j, pw, sw, W, OW)
                            for oh in range(lo_h, hi_h):
                                base_in = xoff + (oh * sh + i - ph) * W + (j - pw)
                                base_out = ooff + oh * OW
                                for ow in range(lo_w, hi_w):
                                    po[base_out + ow] += wv * px[base_in + ow * sw]
    return out_arr


def conv2d_input_grad_f32(cnp.float32_t[:, :, :, ::1] gy,
                          cnp.float32_t[:, :, :, ::1] w,
                          Py_ssize_t H, Py_ssize_t W,
                          Py_ssize_t sh, Py_ssize_t sw,
                          Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t B = gy.shape[0], O = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3]
    cdef Py_ssize_t C = w.shape[1], KH = w.shape[2], KW = w.shape[3]
    gx_arr = np.zeros((B, C, H, W), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] gx = gx_arr
    cdef cnp.float32_t *pg = &gy[0, 0, 0, 0]
    cdef cnp.float32_t *pw_ = &w[0, 0, 0, 0]
    cdef cnp.float32_t *pgx = &gx[0, 0, 0, 0]
    cdef Py_ssize_t b, o, c, i, j, oh, ow, lo_h, hi_h, lo_w, hi_w
    cdef Py_ssize_t goff, xoff, base_in, base_out
    cdef cnp.float32_t wv
    with nogil:
        for b in range(B):
            for c in range(C):
                xoff = (b * C + c) * H * W
                for o in range(O):
                    goff = (b * O + o) * OH * OW
                    for i in range(KH):
                        lo_h = _lo(i, ph, sh)
                        hi_h = _hi(i, ph, sh, H, OH)
                        for j in range(KW):
                            wv = pw_[((o * C + c) * KH + i) * KW + j]
                            lo_w = _lo(j, pw, sw)
                            hi_w = _hi(j, pw, sw, W, OW)
                            for oh in range(lo_h, hi_h):
                                base_in = xoff + (oh * sh + i - ph) * W + (j - pw)
                                base_out = goff + oh * OW
                                for ow in range(lo_w, hi_w):
                                    pgx[base_in + ow * sw] += wv * pg[base_out + ow]
    return gx_arr


def conv2d_weight_grad_f32(cnp.float32_t[:, :, :, ::1] gy,
                           cnp.float32_t[:, :, :, ::1] x,
                           Py_ssize_t KH, Py_ssize_t KW,
                           Py_ssize_t sh, Py_ssize_t sw,
                           Py_ssize_t ph, Py_ssize_t pw):
    cdef Py_ssize_t B = gy.shape[0], O = gy.shape[1], OH = gy.shape[2], OW = gy.shape[3]
    cdef Py_ssize_t C = x.shape[1], H = x.shape[2], W = x.shape[3]
    gw_arr = np.zeros((O, C, KH, KW), dtype=np.float32)
    cdef cnp.float32_t[:, :, :, ::1] gw = gw_arr
    cdef cnp.float32_t *pg = &gy[0, 0, 0, 0]
    cdef cnp.float32_t *px = &x[0, 0, 0, 0]
    cdef Py_ssize_t b, o, c, i, j, oh, ow, lo_h, hi_h, lo_w, hi_w
    cdef Py_ssize_t goff, xoff, base_in, base_out
    cdef double acc
    with nogil:
        for o in range(O):
            for c in range(C):
                for i in range(KH):
                    lo_h = _lo(i, ph, sh)
                    hi_h = _hi(i, ph, sh, H, OH)
                    for j in range(KW):
                        lo_w = _lo(j, pw, sw)
                        hi_w = _hi(j, pw, sw, W, OW)
                        acc = 0.0
                        for b in range(B):
                            goff = (b * O + o) * OH * OW
                            xoff = (b * C + c) * H * W
                            for oh in range(lo_h, hi_h):
                                base_in = xoff + (oh * sh + i - ph) * W + (j - pw)
                                base_out = goff + oh * OW
                                for ow in range(lo_w, hi_w):
                                    acc += pg[base_out + ow] * px[base_in + ow * sw]
                        gw[o, c, i, j] = <cnp.float32_t> acc
    return gw_arr
