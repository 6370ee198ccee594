"""Convolution compute backend.

Two interchangeable implementations of the three conv primitives (forward,
input gradient, kernel gradient) on pre-padded arrays:

* numba direct kernels (used when numba imports): plain loops with the
  innermost dimension contiguous so they vectorize, strict IEEE ordering
  (no fastmath), single-threaded and therefore fork-safe and bit-reproducible;
* pure numpy im2col fallback with identical semantics.

Both are exact convolutions; they may differ in the last float bits because
summation order differs.  Within one process exactly one backend is active,
so all determinism guarantees hold per environment.
"""

from __future__ import annotations

import numpy as np

__all__ = ["conv_forward", "conv_dx_full", "conv_dw", "bn_forward", "bn_backward", "BACKEND"]


# -- pure numpy reference backend --------------------------------------------------


def _im2col(xp: np.ndarray, k: int, stride: int):
    """Unfold padded (N,C,Hp,Wp) into feature-major (C*k*k, N*OH*OW) columns."""
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, oh, ow, _, _ = win.shape
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * oh * ow)
    return cols, oh, ow


def _np_conv_forward(xp, weights, stride, oh, ow):
    n = xp.shape[0]
    cout, cin, k, _ = weights.shape
    cols, oh2, ow2 = _im2col(xp, k, stride)
    out = weights.reshape(cout, -1) @ cols
    return np.ascontiguousarray(out.reshape(cout, n, oh, ow).transpose(1, 0, 2, 3))


def _np_conv_dx_full(gp, weights):
    # Full correlation of the padded (dilated) output grad with the flipped
    # kernel, channels swapped: produces the gradient in padded coordinates.
    cout, cin, k, _ = weights.shape
    flipped = weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (cin, cout, k, k)
    return _np_conv_forward(gp, np.ascontiguousarray(flipped), 1,
                            gp.shape[2] - k + 1, gp.shape[3] - k + 1)


def _np_conv_dw(xp, g, stride, k):
    n = xp.shape[0]
    cout = g.shape[1]
    cols, oh, ow = _im2col(xp, k, stride)
    gmat = g.transpose(1, 0, 2, 3).reshape(cout, -1)
    return (gmat @ cols.T).reshape(cout, xp.shape[1], k, k)


# -- numba direct backend ------------------------------------------------------------

try:
    import numba

    @numba.njit(cache=True, fastmath=False)
    def _nb_conv_forward(xp, weights, stride, oh, ow):
        n, cin, hp, wp = xp.shape
        cout = weights.shape[0]
        k = weights.shape[2]
        out = np.zeros((n, cout, oh, ow))
        if stride == 1:
            for ni in range(n):
                for co in range(cout):
                    orows = out[ni, co]
                    for ci in range(cin):
                        for u in range(k):
                            for v in range(k):
                                kv = weights[co, ci, u, v]
                                for oy in range(oh):
                                    xrow = xp[ni, ci, oy + u]
                                    orow = orows[oy]
                                    for ox in range(ow):
                                        orow[ox] += kv * xrow[ox + v]
        else:
            # Gather each strided input row once into a contiguous buffer so
            # the accumulation loop vectorizes.
            tmp = np.empty(ow)
            for ni in range(n):
                for ci in range(cin):
                    for u in range(k):
                        for v in range(k):
                            for oy in range(oh):
                                xrow = xp[ni, ci, oy * stride + u]
                                for ox in range(ow):
                                    tmp[ox] = xrow[ox * stride + v]
                                for co in range(cout):
                                    kv = weights[co, ci, u, v]
                                    orow = out[ni, co, oy]
                                    for ox in range(ow):
                                        orow[ox] += kv * tmp[ox]
        return out

    def _nb_conv_dx_full(gp, weights):
        # Full correlation == forward pass with channel-swapped flipped kernel.
        k = weights.shape[2]
        flipped = np.ascontiguousarray(weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return _nb_conv_forward(gp, flipped, 1, gp.shape[2] - k + 1, gp.shape[3] - k + 1)

    @numba.njit(cache=True, fastmath=False)
    def _nb_conv_dw(xp, g, stride, k):
        n, cin, hp, wp = xp.shape
        cout, oh, ow = g.shape[1], g.shape[2], g.shape[3]
        dw = np.zeros((cout, cin, k, k))
        # Elementwise accumulation over the contiguous ox axis (vectorizes
        # without float reassociation); the small final sum is sequential.
        if stride == 1:
            for co in range(cout):
                for ci in range(cin):
                    local = np.zeros((k, k, ow))
                    for ni in range(n):
                        for oy in range(oh):
                            grow = g[ni, co, oy]
                            for u in range(k):
                                xrow = xp[ni, ci, oy + u]
                                for v in range(k):
                                    lrow = local[u, v]
                                    for ox in range(ow):
                                        lrow[ox] += grow[ox] * xrow[ox + v]
                    for u in range(k):
                        for v in range(k):
                            acc = 0.0
                            for ox in range(ow):
                                acc += local[u, v, ox]
                            dw[co, ci, u, v] = acc
        else:
            # Gather the strided taps once into a contiguous block, then run
            # the same vectorizable accumulation as the stride-1 path.
            taps = np.empty((n, cin, k, k, oh, ow))
            for ni in range(n):
                for ci in range(cin):
                    for u in range(k):
                        for v in range(k):
                            for oy in range(oh):
                                xrow = xp[ni, ci, oy * stride + u]
                                trow = taps[ni, ci, u, v, oy]
                                for ox in range(ow):
                                    trow[ox] = xrow[ox * stride + v]
            for co in range(cout):
                for ci in range(cin):
                    local = np.zeros((k, k, ow))
                    for ni in range(n):
                        for oy in range(oh):
                            grow = g[ni, co, oy]
                            for u in range(k):
                                for v in range(k):
                                    lrow = local[u, v]
                                    trow = taps[ni, ci, u, v, oy]
                                    for ox in range(ow):
                                        lrow[ox] += grow[ox] * trow[ox]
                    for u in range(k):
                        for v in range(k):
                            acc = 0.0
                            for ox in range(ow):
                                acc += local[u, v, ox]
                            dw[co, ci, u, v] = acc
        return dw

    @numba.njit(cache=True, fastmath=False)
    def _nb_bn_forward(x, gamma, beta, eps):
        n, c, h, w = x.shape
        count = n * h * w
        mean = np.zeros(c)
        var = np.zeros(c)
        for ci in range(c):
            acc = 0.0
            for ni in range(n):
                for y in range(h):
                    row = x[ni, ci, y]
                    for xx in range(w):
                        acc += row[xx]
            mean[ci] = acc / count
        for ci in range(c):
            m = mean[ci]
            acc = 0.0
            for ni in range(n):
                for y in range(h):
                    row = x[ni, ci, y]
                    for xx in range(w):
                        d = row[xx] - m
                        acc += d * d
            var[ci] = acc / count
        out = np.empty_like(x)
        xhat = np.empty_like(x)
        for ci in range(c):
            m = mean[ci]
            inv = 1.0 / np.sqrt(var[ci] + eps)
            ga = gamma[ci]
            be = beta[ci]
            for ni in range(n):
                for y in range(h):
                    row = x[ni, ci, y]
                    hrow = xhat[ni, ci, y]
                    orow = out[ni, ci, y]
                    for xx in range(w):
                        xh = (row[xx] - m) * inv
                        hrow[xx] = xh
                        orow[xx] = ga * xh + be
        return out, xhat, mean, var

    @numba.njit(cache=True, fastmath=False)
    def _nb_bn_backward(g, xhat, gamma, var, eps):
        n, c, h, w = g.shape
        count = n * h * w
        gsum = np.zeros(c)
        ghsum = np.zeros(c)
        for ci in range(c):
            a = 0.0
            b = 0.0
            for ni in range(n):
                for y in range(h):
                    grow = g[ni, ci, y]
                    hrow = xhat[ni, ci, y]
                    for xx in range(w):
                        a += grow[xx]
                        b += grow[xx] * hrow[xx]
            gsum[ci] = a
            ghsum[ci] = b
        dx = np.empty_like(g)
        for ci in range(c):
            inv = 1.0 / np.sqrt(var[ci] + eps)
            ga = gamma[ci]
            t1 = gsum[ci] / count
            t2 = ghsum[ci] / count
            for ni in range(n):
                for y in range(h):
                    grow = g[ni, ci, y]
                    hrow = xhat[ni, ci, y]
                    drow = dx[ni, ci, y]
                    for xx in range(w):
                        drow[xx] = inv * ga * (grow[xx] - t1 - hrow[xx] * t2)
        return dx, gsum, ghsum

    conv_forward = _nb_conv_forward
    conv_dx_full = _nb_conv_dx_full
    conv_dw = _nb_conv_dw
    bn_forward = _nb_bn_forward
    bn_backward = _nb_bn_backward
    BACKEND = "numba"
except ImportError:  # pragma: no cover - exercised only without numba
    conv_forward = _np_conv_forward
    conv_dx_full = _np_conv_dx_full
    conv_dw = _np_conv_dw
    bn_forward = None
    bn_backward = None
    BACKEND = "numpy"
