"""Forward and backward kernels for the supported layer kinds.

All arrays carry a leading batch axis. Spatial tensors are
``(N, C, D, H, W)``; flat tensors are ``(N, F)``.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _im2col(xp, k):
    # padded (N, C, D, H, W) -> (C*k^3, N*D'*H'*W'); channel-major so the
    # copy runs along contiguous W
    win = sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    n, c, d, h, w = win.shape[:5]
    cols = win.transpose(1, 5, 6, 7, 0, 2, 3, 4).reshape(c * k ** 3, n * d * h * w)
    return cols, (d, h, w)


def _pad(x, p):
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p), (p, p)))


def _conv_valid(xp, weight):
    n = xp.shape[0]
    o = weight.shape[0]
    k = weight.shape[2]
    cols, (d, h, w) = _im2col(xp, k)
    out = weight.reshape(o, -1) @ cols
    return np.ascontiguousarray(out.reshape(o, n, d, h, w).transpose(1, 0, 2, 3, 4))


def conv3d_forward(x, weight, bias, padding):
    out = _conv_valid(_pad(x, padding), weight)
    out += bias.reshape(1, -1, 1, 1, 1)
    return out


def conv3d_backward(gout, x, weight, padding, need_params=True, need_input=True):
    """Return ``(dx, dweight, dbias)``; skipped parts are None."""
    k = weight.shape[2]
    dx = dweight = dbias = None
    if need_params:
        o = weight.shape[0]
        cols, _ = _im2col(_pad(x, padding), k)
        g2 = gout.transpose(1, 0, 2, 3, 4).reshape(o, -1)
        dweight = (g2 @ cols.T).reshape(weight.shape)
        dbias = gout.sum(axis=(0, 2, 3, 4))
    if need_input:
        # full correlation with the flipped, channel-transposed kernel
        flipped = np.ascontiguousarray(weight[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
        dxp = _conv_valid(_pad(gout, k - 1), flipped)
        if padding:
            p = padding
            dxp = dxp[:, :, p:-p, p:-p, p:-p]
        dx = np.ascontiguousarray(dxp)
    return dx, dweight, dbias


def _pool_blocks(x, k, ceil_mode):
    n, c, d, h, w = x.shape
    if ceil_mode:
        tgt = [-(-s // k) * k for s in (d, h, w)]
        pads = [(0, 0), (0, 0)] + [(0, t - s) for t, s in zip(tgt, (d, h, w))]
        xp = np.pad(x, pads, constant_values=-np.inf) if tgt != [d, h, w] else x
    else:
        tgt = [(s // k) * k for s in (d, h, w)]
        xp = x[:, :, : tgt[0], : tgt[1], : tgt[2]]
    od, oh, ow = (t // k for t in tgt)
    blocks = xp.reshape(n, c, od, k, oh, k, ow, k).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    return blocks.reshape(n, c, od, oh, ow, k ** 3), tgt


def maxpool3d_forward(x, k, ceil_mode):
    """Non-overlapping max pooling; returns ``(out, argmax)``."""
    blocks, _ = _pool_blocks(x, k, ceil_mode)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool3d_backward(gout, arg, in_shape, k, ceil_mode):
    n, c, d, h, w = in_shape
    od, oh, ow = gout.shape[2:]
    gb = np.zeros(gout.shape + (k ** 3,), dtype=gout.dtype)
    np.put_along_axis(gb, arg[..., None], gout[..., None], axis=-1)
    gb = gb.reshape(n, c, od, oh, ow, k, k, k).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    gfull = gb.reshape(n, c, od * k, oh * k, ow * k)
    dx = np.zeros(in_shape, dtype=gout.dtype)
    sd, sh, sw = min(d, od * k), min(h, oh * k), min(w, ow * k)
    dx[:, :, :sd, :sh, :sw] = gfull[:, :, :sd, :sh, :sw]
    return dx


def _bn_axes(x):
    return (0,) + tuple(range(2, x.ndim))


def _bn_view(v, ndim):
    return v.reshape((1, -1) + (1,) * (ndim - 2))


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    """Return ``(y, aux, new_running)``; ``new_running`` is None in eval mode."""
    nd = x.ndim
    if train:
        axes = _bn_axes(x)
        m = x.size // x.shape[1]
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + BN_EPS)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        new_running = (
            (1 - BN_MOMENTUM) * running_mean + BN_MOMENTUM * mean,
            (1 - BN_MOMENTUM) * running_var + BN_MOMENTUM * unbiased,
        )
    else:
        mean, inv_std = running_mean, 1.0 / np.sqrt(running_var + BN_EPS)
        new_running = None
    xhat = (x - _bn_view(mean, nd)) * _bn_view(inv_std, nd)
    y = xhat * _bn_view(gamma, nd) + _bn_view(beta, nd)
    return y, (xhat, inv_std, train), new_running


def batchnorm_backward(gout, gamma, aux, need_params=True):
    xhat, inv_std, train = aux
    nd = gout.ndim
    axes = _bn_axes(gout)
    dgamma = (gout * xhat).sum(axis=axes) if need_params or train else None
    dbeta = gout.sum(axis=axes) if need_params or train else None
    scale = _bn_view(gamma * inv_std, nd)
    if not train:
        return gout * scale, dgamma, dbeta
    m = gout.size // gout.shape[1]
    dx = scale * (gout - _bn_view(dbeta / m, nd) - xhat * _bn_view(dgamma / m, nd))
    return dx, dgamma, dbeta


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(gout, x):
    return gout * (x > 0)


def gap_forward(x):
    return x.mean(axis=(2, 3, 4))


def gap_backward(gout, in_shape):
    z = in_shape[2] * in_shape[3] * in_shape[4]
    g = (gout / z)[:, :, None, None, None]
    return np.broadcast_to(g, in_shape).copy()


def dense_forward(x, weight, bias):
    return x.reshape(x.shape[0], -1) @ weight.T + bias


def dense_backward(gout, x, weight, need_params=True):
    flat = x.reshape(x.shape[0], -1)
    dx = (gout @ weight).reshape(x.shape)
    if not need_params:
        return dx, None, None
    return dx, gout.T @ flat, gout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
