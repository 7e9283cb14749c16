# Hot kernels: depth-buffer scatters, im2col/col2im, max pooling.
#
# Activations are channels-last (B, H, W, C); im2col emits (B*OH*OW,
# kh*kw*C) so convolutions are single 2-D GEMMs.  Accumulation orders are
# part of the contract: the pure-numpy fallback in _core_py.py walks
# elements in exactly the same order, so both backends produce
# bit-identical results.

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def depth_min(cnp.int64_t[::1] pix, cnp.float64_t[::1] z, Py_ssize_t size):
    """Per-pixel minimum of z; empty pixels stay +inf."""
    out = np.full(size, np.inf, dtype=np.float64)
    cdef cnp.float64_t[::1] o = out
    cdef Py_ssize_t i, p
    for i in range(pix.shape[0]):
        p = pix[i]
        if z[i] < o[p]:
            o[p] = z[i]
    return out


def depth_harmonic(cnp.int64_t[::1] pix, cnp.float64_t[::1] z, Py_ssize_t size):
    """Per-pixel sum of 1/z and hit counts, accumulated in array order."""
    wsum = np.zeros(size, dtype=np.float64)
    cnt = np.zeros(size, dtype=np.int64)
    cdef cnp.float64_t[::1] w = wsum
    cdef cnp.int64_t[::1] c = cnt
    cdef Py_ssize_t i, p
    for i in range(pix.shape[0]):
        p = pix[i]
        w[p] = w[p] + 1.0 / z[i]
        c[p] = c[p] + 1
    return wsum, cnt


def im2col(cnp.float64_t[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
           Py_ssize_t sh, Py_ssize_t sw, Py_ssize_t ph, Py_ssize_t pw):
    """(B,H,W,C) -> (B*OH*OW, kh*kw*C) patches; out-of-bounds reads are 0.

    For each (row, ki) the in-bounds kj range is one contiguous span in
    both source and destination, copied as a block.
    """
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t OH = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - kw) // sw + 1
    cols = np.zeros((B * OH * OW, kh * kw * C), dtype=np.float64)
    cdef cnp.float64_t[:, ::1] o = cols
    cdef const cnp.float64_t* xp = &x[0, 0, 0, 0]
    cdef cnp.float64_t* op
    cdef const cnp.float64_t* sp
    cdef Py_ssize_t b, ki, kj0, kj1, oh, ow, ih, iw0, row, n, t
    for b in range(B):
        for oh in range(OH):
            for ow in range(OW):
                row = (b * OH + oh) * OW + ow
                iw0 = ow * sw - pw
                kj0 = -iw0 if iw0 < 0 else 0
                kj1 = W - iw0 if iw0 + kw > W else kw
                if kj1 <= kj0:
                    continue
                n = (kj1 - kj0) * C
                for ki in range(kh):
                    ih = oh * sh - ph + ki
                    if ih < 0 or ih >= H:
                        continue
                    op = &o[row, (ki * kw + kj0) * C]
                    sp = xp + ((b * H + ih) * W + iw0 + kj0) * C
                    for t in range(n):
                        op[t] = sp[t]
    return cols


def col2im(cnp.float64_t[:, ::1] cols, Py_ssize_t B, Py_ssize_t H, Py_ssize_t W,
           Py_ssize_t C, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t sh, Py_ssize_t sw,
           Py_ssize_t ph, Py_ssize_t pw):
    """Adjoint of im2col: scatter-add patches back into (B,H,W,C).

    Accumulates kernel offsets (ki, kj) in row-major order, matching the
    fallback's slice-per-offset accumulation.
    """
    cdef Py_ssize_t OH = (H + 2 * ph - kh) // sh + 1
    cdef Py_ssize_t OW = (W + 2 * pw - kw) // sw + 1
    x = np.zeros((B, H, W, C), dtype=np.float64)
    cdef cnp.float64_t[:, :, :, ::1] o = x
    cdef cnp.float64_t* dp
    cdef const cnp.float64_t* sp
    cdef Py_ssize_t b, ki, kj, oh, ow, ih, iw, row, col0, t
    for ki in range(kh):
        for kj in range(kw):
            col0 = (ki * kw + kj) * C
            for b in range(B):
                for oh in range(OH):
                    ih = oh * sh - ph + ki
                    if ih < 0 or ih >= H:
                        continue
                    for ow in range(OW):
                        iw = ow * sw - pw + kj
                        if iw < 0 or iw >= W:
                            continue
                        row = (b * OH + oh) * OW + ow
                        dp = &o[b, ih, iw, 0]
                        sp = &cols[row, col0]
                        for t in range(C):
                            dp[t] = dp[t] + sp[t]
    return x


def maxpool_fwd(cnp.float64_t[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t s, Py_ssize_t p):
    """Channels-last max pool with per-channel argmax (flat index into H*W,
    first maximum in window row-major order wins)."""
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t OH = (H + 2 * p - k) // s + 1
    cdef Py_ssize_t OW = (W + 2 * p - k) // s + 1
    y = np.full((B, OH, OW, C), -np.inf, dtype=np.float64)
    arg = np.full((B, OH, OW, C), -1, dtype=np.int64)
    cdef cnp.float64_t[:, :, :, ::1] yo = y
    cdef cnp.int64_t[:, :, :, ::1] ao = arg
    cdef Py_ssize_t b, oh, ow, wi, wj, ih, iw, cc, flat
    cdef cnp.float64_t v
    for b in range(B):
        for oh in range(OH):
            for ow in range(OW):
                for wi in range(k):
                    ih = oh * s - p + wi
                    if ih < 0 or ih >= H:
                        continue
                    for wj in range(k):
                        iw = ow * s - p + wj
                        if iw < 0 or iw >= W:
                            continue
                        flat = ih * W + iw
                        for cc in range(C):
                            v = x[b, ih, iw, cc]
                            if v > yo[b, oh, ow, cc]:
                                yo[b, oh, ow, cc] = v
                                ao[b, oh, ow, cc] = flat
    return y, arg


def adam_step(cnp.float64_t[::1] p, cnp.float64_t[::1] g,
              cnp.float64_t[::1] m, cnp.float64_t[::1] v,
              double lr, double beta1, double beta2, double eps,
              double bc1, double bc2, double weight_decay):
    """In-place Adam update; scalar op sequence mirrors the numpy fallback
    exactly (elementwise, so backends agree bit-for-bit)."""
    cdef Py_ssize_t i
    cdef double gi, t, s, u
    cdef double omb1 = 1.0 - beta1, omb2 = 1.0 - beta2
    for i in range(p.shape[0]):
        gi = g[i]
        if weight_decay != 0.0:
            gi = gi + weight_decay * p[i]
        m[i] = beta1 * m[i] + omb1 * gi
        v[i] = beta2 * v[i] + omb2 * (gi * gi)
        t = v[i] / bc2
        s = sqrt(t) + eps
        u = m[i] / bc1
        u = u / s
        u = u * lr
        p[i] = p[i] - u


def maxpool_bwd(cnp.float64_t[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] arg,
                Py_ssize_t H, Py_ssize_t W):
    """Scatter pooled gradients back to their argmax locations."""
    cdef Py_ssize_t B = dy.shape[0], OH = dy.shape[1], OW = dy.shape[2], C = dy.shape[3]
    dx = np.zeros((B, H * W, C), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] o = dx
    cdef Py_ssize_t b, oh, ow, cc, a
    for b in range(B):
        for oh in range(OH):
            for ow in range(OW):
                for cc in range(C):
                    a = arg[b, oh, ow, cc]
                    o[b, a, cc] = o[b, a, cc] + dy[b, oh, ow, cc]
    return dx.reshape(B, H, W, C)
