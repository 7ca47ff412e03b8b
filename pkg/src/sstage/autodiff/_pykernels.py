"""Pure-numpy fallback for the compiled convolution kernels.

Same signatures and numerics contract as ``_ckernels``: weights are laid out
[Cin, Cout, kh, kw] and reductions are carried out in float64.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, kh, kw, ph, pw):
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # [B, Cin, Ho, Wo, kh, kw]
    return sliding_window_view(xp, (kh, kw), axis=(2, 3))


def conv2d_forward(x, w, b, ph, pw):
    kh, kw = w.shape[2], w.shape[3]
    cols = _windows(x, kh, kw, ph, pw)
    y = np.einsum("nchwuv,couv->nohw", cols, w.astype(np.float64), optimize=True)
    y += b.astype(np.float64)[None, :, None, None]
    return y.astype(x.dtype)


def conv2d_backward(gy, x, w, ph, pw):
    B, Cin, H, W = x.shape
    kh, kw = w.shape[2], w.shape[3]
    Ho, Wo = gy.shape[2], gy.shape[3]
    g = gy.astype(np.float64)
    w64 = w.astype(np.float64)
    cols = _windows(x, kh, kw, ph, pw)
    gw = np.einsum("nchwuv,nohw->couv", cols, g, optimize=True)
    gb = g.sum(axis=(0, 2, 3))
    gxp = np.zeros((B, Cin, H + 2 * ph, W + 2 * pw))
    for u in range(kh):
        for v in range(kw):
            gxp[:, :, u:u + Ho, v:v + Wo] += np.einsum("nohw,co->nchw", g, w64[:, :, u, v])
    gx = gxp[:, :, ph:ph + H, pw:pw + W]
    dt = x.dtype
    return gx.astype(dt), gw.astype(dt), gb.astype(dt)
