"""Hot loops for convolution and pooling.

Each kernel exists twice: a numba ``@njit`` version and a vectorised numpy
version. Both accumulate in the same order, so for non-overlapping pooling and
for every im2col/col2im call they agree bit for bit.

The numba path is used when numba imports and ``MSDATF_DISABLE_NUMBA`` is unset
(or ``0``). Set ``MSDATF_DISABLE_NUMBA=1`` to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _numba_requested() -> bool:
    flag = os.environ.get("MSDATF_DISABLE_NUMBA", "").strip().lower()
    return flag in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and _numba_requested()


# ---------------------------------------------------------------- numpy path


def im2col_numpy(xp, k):
    """(N, C, Hp, Wp) -> (N, Ho, Wo, C*k*k), channel-major then kernel row/col."""
    n, c, hp, wp = xp.shape
    ho, wo = hp - k + 1, wp - k + 1
    win = sliding_window_view(xp, (k, k), axis=(2, 3))  # N,C,Ho,Wo,k,k
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * k * k)


def col2im_numpy(gcols, c, hp, wp, k):
    n, ho, wo, _ = gcols.shape
    gc = gcols.reshape(n, ho, wo, c, k, k)
    out = np.zeros((n, c, hp, wp))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + ho, j:j + wo] += gc[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def maxpool_forward_numpy(x, k, s):
    n, c, h, w = x.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
    flat = win.reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), arg.astype(np.int64)


def maxpool_backward_numpy(g, arg, h, w, k, s):
    n, c, ho, wo = g.shape
    gx = np.zeros((n, c, h, w))
    for q in range(k * k):
        i, j = divmod(q, k)
        gx[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += np.where(arg == q, g, 0.0)
    return gx


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def im2col_numba(xp, k):
        n, c, hp, wp = xp.shape
        ho = hp - k + 1
        wo = wp - k + 1
        out = np.empty((n, ho, wo, c * k * k))
        for b in range(n):
            for y in range(ho):
                for x in range(wo):
                    col = 0
                    for ch in range(c):
                        for i in range(k):
                            for j in range(k):
                                out[b, y, x, col] = xp[b, ch, y + i, x + j]
                                col += 1
        return out

    @numba.njit(cache=True)
    def col2im_numba(gcols, c, hp, wp, k):
        n, ho, wo, _ = gcols.shape
        out = np.zeros((n, c, hp, wp))
        for b in range(n):
            for ch in range(c):
                for i in range(k):
                    for j in range(k):
                        col = ch * k * k + i * k + j
                        for y in range(ho):
                            for x in range(wo):
                                out[b, ch, y + i, x + j] += gcols[b, y, x, col]
        return out

    @numba.njit(cache=True)
    def maxpool_forward_numba(x, k, s):
        n, c, h, w = x.shape
        ho = (h - k) // s + 1
        wo = (w - k) // s + 1
        out = np.empty((n, c, ho, wo))
        arg = np.empty((n, c, ho, wo), dtype=np.int64)
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        best = x[b, ch, oy * s, ox * s]
                        bi = 0
                        for i in range(k):
                            for j in range(k):
                                v = x[b, ch, oy * s + i, ox * s + j]
                                if v > best:
                                    best = v
                                    bi = i * k + j
                        out[b, ch, oy, ox] = best
                        arg[b, ch, oy, ox] = bi
        return out, arg

    @numba.njit(cache=True)
    def maxpool_backward_numba(g, arg, h, w, k, s):
        n, c, ho, wo = g.shape
        gx = np.zeros((n, c, h, w))
        for b in range(n):
            for ch in range(c):
                for oy in range(ho):
                    for ox in range(wo):
                        q = arg[b, ch, oy, ox]
                        gx[b, ch, oy * s + q // k, ox * s + q % k] += g[b, ch, oy, ox]
        return gx

else:  # pragma: no cover
    im2col_numba = im2col_numpy
    col2im_numba = col2im_numpy
    maxpool_forward_numba = maxpool_forward_numpy
    maxpool_backward_numba = maxpool_backward_numpy


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


def im2col(xp, k):
    xp = np.ascontiguousarray(xp, dtype=np.float64)
    return im2col_numba(xp, k) if USE_NUMBA else im2col_numpy(xp, k)


def col2im(gcols, c, hp, wp, k):
    gcols = np.ascontiguousarray(gcols, dtype=np.float64)
    return col2im_numba(gcols, c, hp, wp, k) if USE_NUMBA else col2im_numpy(gcols, c, hp, wp, k)


def maxpool_forward(x, k, s):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return maxpool_forward_numba(x, k, s) if USE_NUMBA else maxpool_forward_numpy(x, k, s)


def maxpool_backward(g, arg, h, w, k, s):
    g = np.ascontiguousarray(g, dtype=np.float64)
    if USE_NUMBA:
        return maxpool_backward_numba(g, arg, h, w, k, s)
    return maxpool_backward_numpy(g, arg, h, w, k, s)
