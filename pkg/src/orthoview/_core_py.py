"""Pure-numpy fallback for the compiled kernels in _core.pyx.

Element accumulation orders match the compiled loops exactly (np.ufunc.at
is unbuffered and processes indices in order), so the two backends return
bit-identical arrays.
"""

import numpy as np


def depth_min(pix, z, size):
    out = np.full(size, np.inf)
    np.minimum.at(out, pix, z)
    return out


def depth_harmonic(pix, z, size):
    wsum = np.zeros(size)
    cnt = np.zeros(size, dtype=np.int64)
    np.add.at(wsum, pix, 1.0 / z)
    np.add.at(cnt, pix, 1)
    return wsum, cnt


def _out_hw(H, W, kh, kw, sh, sw, ph, pw):
    return (H + 2 * ph - kh) // sh + 1, (W + 2 * pw - kw) // sw + 1


def im2col(x, kh, kw, sh, sw, ph, pw):
    B, H, W, C = x.shape
    OH, OW = _out_hw(H, W, kh, kw, sh, sw, ph, pw)
    xp = np.zeros((B, H + 2 * ph, W + 2 * pw, C))
    xp[:, ph : ph + H, pw : pw + W, :] = x
    sB, sH, sW, sC = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, OH, OW, kh, kw, C),
        strides=(sB, sh * sH, sw * sW, sH, sW, sC),
        writeable=False,
    )
    return win.reshape(B * OH * OW, kh * kw * C).copy()


def col2im(cols, B, H, W, C, kh, kw, sh, sw, ph, pw):
    OH, OW = _out_hw(H, W, kh, kw, sh, sw, ph, pw)
    patches = cols.reshape(B, OH, OW, kh, kw, C)
    xp = np.zeros((B, H + 2 * ph, W + 2 * pw, C))
    for ki in range(kh):
        for kj in range(kw):
            xp[:, ki : ki + sh * OH : sh, kj : kj + sw * OW : sw, :] += patches[:, :, :, ki, kj, :]
    return xp[:, ph : ph + H, pw : pw + W, :].copy()


def maxpool_fwd(x, k, s, p):
    B, H, W, C = x.shape
    OH, OW = _out_hw(H, W, k, k, s, s, p, p)
    xp = np.full((B, H + 2 * p, W + 2 * p, C), -np.inf)
    xp[:, p : p + H, p : p + W, :] = x
    sB, sH, sW, sC = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp,
        shape=(B, OH, OW, k, k, C),
        strides=(sB, s * sH, s * sW, sH, sW, sC),
        writeable=False,
    ).reshape(B, OH, OW, k * k, C)
    flat_arg = win.argmax(axis=3)
    y = np.take_along_axis(win, flat_arg[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    # window-relative argmax -> flat index into the unpadded image
    wi, wj = flat_arg // k, flat_arg % k
    ih = np.arange(OH)[None, :, None, None] * s - p + wi
    iw = np.arange(OW)[None, None, :, None] * s - p + wj
    return y, (ih * W + iw).astype(np.int64)


def adam_step(p, g, m, v, lr, beta1, beta2, eps, bc1, bc2, weight_decay):
    if weight_decay != 0.0:
        g = g + weight_decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    t = v / bc2
    s = np.sqrt(t)
    s += eps
    u = m / bc1
    u /= s
    u *= lr
    p -= u


def maxpool_bwd(dy, arg, H, W):
    B, OH, OW, C = dy.shape
    dx = np.zeros((B, H * W, C))
    bi = np.broadcast_to(np.arange(B)[:, None, None, None], dy.shape)
    ci = np.broadcast_to(np.arange(C)[None, None, None, :], dy.shape)
    np.add.at(dx, (bi, arg, ci), dy)
    return dx.reshape(B, H, W, C)
