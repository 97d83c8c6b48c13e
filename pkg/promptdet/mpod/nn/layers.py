"""Neural building blocks composed from the tensor ops."""
import logging

import numpy as np

from ..errs import ConfigError, DimensionError
from . import tensor as T

log = logging.getLogger(__name__)


def linear(x, w, b):
    '''y = x.w + b; a single vector x (d_in,) gives (d_out,)'''
    x, w, b = T.astensor(x), T.astensor(w), T.astensor(b)
    if x.ndim == 1:
        return linear(x.reshape(1, -1), w, b).reshape(-1)
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f'linear: input axis -1 ({x.shape[-1]}) does not match'
                             f' weight axis 0 ({w.shape[0]})')
    if b.shape != (w.shape[1],):
        raise DimensionError(f'linear: bias {b.shape} does not match weight axis 1'
                             f' ({w.shape[1]})')
    return T.matmul(x, w) + b


def lin(x, prm, path):
    return linear(x, prm[path + '.w'], prm[path + '.b'])


def norm(x, prm, path, eps=1e-5):
    return T.layer_norm(x, prm[path + '.g'], prm[path + '.b'], eps)


def ffn(x, prm, path):
    '''two-layer feed-forward with GELU'''
    return lin(T.gelu(lin(x, prm, path + '.l1')), prm, path + '.l2')


def multi_head_attention(q, k, v, prm, path, heads, return_weights=False):
    '''
    Scaled dot-product attention of `heads` heads with learned projections
    `{path}.{q,k,v,o}`; q is (m, d), k and v are (s, d).
    '''
    q, k, v = T.astensor(q), T.astensor(k), T.astensor(v)
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f'width {d} is not divisible by {heads} heads', 'NHEAD')
    if k.shape[0] < 1 or k.shape != v.shape:
        raise DimensionError(f'attention keys {k.shape} and values {v.shape} must agree'
                             ' and be non-empty')
    m, s, dh = q.shape[0], k.shape[0], d // heads

    def split(x, n):
        return x.reshape(n, heads, dh).transpose(1, 0, 2)

    Q = split(lin(q, prm, path + '.q'), m)
    K = split(lin(k, prm, path + '.k'), s)
    V = split(lin(v, prm, path + '.v'), s)
    A = T.softmax((Q @ K.transpose(0, 2, 1)) * (1 / np.sqrt(dh)), axis=-1) # (H, m, s)
    out = (A @ V).transpose(1, 0, 2).reshape(m, d)
    out = lin(out, prm, path + '.o')
    if return_weights:
        return out, A
    return out


def bilinear_sample(feat, pts):
    '''
    Sample an (h, w, d) map at normalised points (n, 2) given as (x, y) in [0, 1]^2,
    with pixel centres at (i + 0.5)/w (align-corners false) and border clamping.
    Differentiable with respect to both the map and the points.
    '''
    feat, pts = T.astensor(feat), T.astensor(pts)
    h, w, d = feat.shape
    if pts.ndim == 1:
        return bilinear_sample(feat, pts.reshape(1, 2))[0]
    px = T.clip(pts[:, 0] * w - 0.5, 0, w - 1)
    py = T.clip(pts[:, 1] * h - 0.5, 0, h - 1)
    x0 = np.minimum(np.floor(px.data), max(w - 2, 0)).astype(int)
    y0 = np.minimum(np.floor(py.data), max(h - 2, 0)).astype(int)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = (px - x0).reshape(-1, 1)
    ay = (py - y0).reshape(-1, 1)
    flat = feat.reshape(h * w, d)
    f00 = flat[y0*w + x0]
    f01 = flat[y0*w + x1]
    f10 = flat[y1*w + x0]
    f11 = flat[y1*w + x1]
    top = f00 + (f01-f00) * ax
    bot = f10 + (f11-f10) * ax
    return top + (bot-top) * ay


def conv2d(x, w, b, stride=1):
    '''3 x 3 convolution with zero padding of an (H, W, C) map; w is (9*C, Cout)'''
    x = T.astensor(x)
    H, W, _ = x.shape
    cols = T.im2col(x, k=3, stride=stride, pad=1)
    Ho, Wo = (H-1) // stride + 1, (W-1) // stride + 1
    return linear(cols, w, b).reshape(Ho, Wo, w.shape[1])
