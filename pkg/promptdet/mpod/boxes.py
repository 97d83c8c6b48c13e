"""
Bounding-box algebra on normalised (cx, cy, w, h) boxes:
corner conversions, IoU, GIoU and the sinusoidal box encoding.
"""
import logging
from collections import namedtuple

import numpy as np

from .errs import ConfigError, DimensionError
from .nn import tensor as T

log = logging.getLogger(__name__)


class Box(namedtuple('Box', 'cx cy w h')):
    """normalised box given by its centre and extent"""
    __slots__ = ()

    @property
    def xyxy(self):
        return cxcywh_to_xyxy(self)

    def check(self, tol=1e-12):
        '''raise ValueError unless 0 <= cx, cy <= 1 and 0 < w, h <= 1'''
        cx, cy, w, h = self
        if not all(np.isfinite(self)):
            raise ValueError(f'non-finite box {tuple(self)}')
        if not (-tol <= cx <= 1 + tol and -tol <= cy <= 1 + tol):
            raise ValueError(f'box centre ({cx}, {cy}) outside [0, 1]')
        if not (0 < w <= 1 + tol and 0 < h <= 1 + tol):
            raise ValueError(f'box extent ({w}, {h}) outside (0, 1]')
        return self


def _arr(b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape[-1:] != (4,):
        raise DimensionError(f'boxes need a trailing axis of 4, got {b.shape}')
    return b


def _out(b, like):
    if isinstance(like, tuple) and np.ndim(b) == 1:
        return tuple(float(v) for v in b)
    return b


def cxcywh_to_xyxy(b):
    '''(cx, cy, w, h) -> (x1, y1, x2, y2) for a Box/tuple or an (..., 4) array'''
    a = _arr(b)
    c, s = a[..., :2], a[..., 2:]
    return _out(np.concatenate([c - s/2, c + s/2], axis=-1), b)


def xyxy_to_cxcywh(b):
    a = _arr(b)
    lo, hi = a[..., :2], a[..., 2:]
    out = np.concatenate([(lo+hi) / 2, hi - lo], axis=-1)
    if isinstance(b, tuple) and out.ndim == 1:
        return Box(*(float(v) for v in out))
    return out


# ======================================================================
# overlaps (numpy, broadcasting over leading axes)
# ----------------------------------------------------------------------


def _overlaps(a, b):
    '''intersection, union and enclosing areas of cxcywh boxes'''
    pa, pb = cxcywh_to_xyxy(_arr(a)), cxcywh_to_xyxy(_arr(b))
    lo = np.maximum(pa[..., :2], pb[..., :2])
    hi = np.minimum(pa[..., 2:], pb[..., 2:])
    inter = np.prod(np.clip(hi - lo, 0, None), axis=-1)
    area_a = np.prod(pa[..., 2:] - pa[..., :2], axis=-1)
    area_b = np.prod(pb[..., 2:] - pb[..., :2], axis=-1)
    union = area_a + area_b - inter
    elo = np.minimum(pa[..., :2], pb[..., :2])
    ehi = np.maximum(pa[..., 2:], pb[..., 2:])
    encl = np.prod(ehi - elo, axis=-1)
    return inter, union, encl


def _scalar(v):
    return float(v) if np.ndim(v) == 0 else v


def iou(a, b):
    '''intersection over union; 0 for disjoint boxes'''
    inter, union, _ = _overlaps(a, b)
    return _scalar(np.divide(inter, union, out=np.zeros_like(union), where=union > 0))


def giou(a, b):
    '''IoU - (enclosing - union) / enclosing, in (-1, 1]'''
    inter, union, encl = _overlaps(a, b)
    v = np.divide(inter, union, out=np.zeros_like(union), where=union > 0)
    v -= np.divide(encl - union, encl, out=np.zeros_like(encl), where=encl > 0)
    return _scalar(v)


def iou_matrix(a, b):
    '''(n, 4) x (m, 4) -> (n, m)'''
    return iou(_arr(a)[:, None, :], _arr(b)[None, :, :])


def giou_matrix(a, b):
    '''(n, 4) x (m, 4) -> (n, m)'''
    return giou(_arr(a)[:, None, :], _arr(b)[None, :, :])


def giou_tensor(p, g):
    '''
    Differentiable GIoU of paired cxcywh boxes p (n, 4) [Tensor] and g (n, 4),
    composed from min/max so that coincident edges take a one-sided subgradient.
    '''
    p, g = T.astensor(p), T.astensor(g)
    if p.shape != g.shape or p.shape[-1] != 4:
        raise DimensionError(f'paired boxes {p.shape} and {g.shape} must agree as (n, 4)')

    def corners(b):
        c, s = b[..., 0:2], b[..., 2:4]
        return c - s*0.5, c + s*0.5

    plo, phi = corners(p)
    glo, ghi = corners(g)
    wh = T.relu(T.minimum(phi, ghi) - T.maximum(plo, glo))
    inter = wh[..., 0] * wh[..., 1]
    area_p = p[..., 2] * p[..., 3]
    area_g = g[..., 2] * g[..., 3]
    union = area_p + area_g - inter
    ewh = T.maximum(phi, ghi) - T.minimum(plo, glo)
    encl = ewh[..., 0] * ewh[..., 1]
    return inter/union - (encl-union) / encl


# ======================================================================
# sinusoidal encodings
# ----------------------------------------------------------------------


def sine_pe(x, m):
    '''
    Encode coordinates x (any shape) into m dims each:
    pe[2j] = sin(2 pi x / 10000^(2j/m)), pe[2j+1] = cos(...).
    '''
    if m % 2:
        raise ConfigError(f'encoding width {m} must be even')
    x = np.asarray(x, dtype=np.float64)[..., None]
    freq = 10000**(2 * np.arange(m // 2) / m)
    ang = 2 * np.pi * x / freq
    out = np.empty(x.shape[:-1] + (m,))
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def box_pe(b, d):
    '''
    Positional encoding of boxes (..., 4) into d dims: each of cx, cy, w, h
    takes d/4 dims, concatenated in that order.
    '''
    if d % 8:
        raise ConfigError(f'box encoding width {d} must be divisible by 8', 'D')
    a = _arr(b)
    m = d // 4
    return T.Tensor(np.concatenate([sine_pe(a[..., i], m) for i in range(4)], axis=-1))


def grid_pe(cx, cy, d):
    '''2D encoding of token centres: d/2 dims for x then d/2 for y'''
    if d % 4:
        raise ConfigError(f'position encoding width {d} must be divisible by 4', 'D')
    return np.concatenate([sine_pe(cx, d // 2), sine_pe(cy, d // 2)], axis=-1)
