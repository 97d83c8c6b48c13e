"""Classification, L1 and GIoU losses and their weighted total."""
import logging
from collections import namedtuple

import numpy as np

from .. import boxes
from ..nn import tensor as T
from .matcher import hungarian_match, match_cost

log = logging.getLogger(__name__)

LossBreakdown = namedtuple('LossBreakdown', 'cls l1 giou total lmbd_cls lmbd_l1 lmbd_giou')


def loss_cls(logits, pairs, labels, unmatched, bg_coef=0.1):
    '''
    Mean over matched queries of -log softmax(logits)[y] plus `bg_coef` times the
    mean over unmatched queries of -log softmax(logits)[background];
    the background is the last column of the (Q, K+1) logits.
    '''
    ls = T.log_softmax(logits, axis=-1)
    K = ls.shape[-1] - 1
    out = T.Tensor(0.0)
    if pairs:
        qi = np.array([i for i, _ in pairs])
        yi = np.array([labels[j] for _, j in pairs])
        out = out - ls[qi, yi].mean()
    if len(unmatched):
        out = out - bg_coef * ls[np.asarray(unmatched), np.full(len(unmatched), K)].mean()
    return out


def loss_l1(pb, gb):
    '''mean over pairs of the L1 distance of (cx, cy, w, h)'''
    pb = T.astensor(pb)
    return T.absolute(pb - np.asarray(gb, dtype=np.float64)).sum(axis=-1).mean()


def loss_giou(pb, gb):
    '''mean over pairs of 1 - GIoU'''
    return (1 - boxes.giou_tensor(pb, gb)).mean()


def total_loss(cls, l1, giou, lmbd=(2.0, 5.0, 2.0)):
    '''weighted sum; works on floats and on Tensors alike'''
    lc, ll, lg = lmbd
    if min(lmbd) < 0:
        raise ValueError(f'loss weights must be non-negative, got {lmbd}')
    return LossBreakdown(cls, l1, giou, lc*cls + ll*l1 + lg*giou, lc, ll, lg)


def as_floats(lb):
    '''LossBreakdown with every Tensor replaced by its value'''
    return lb._replace(**{
        k: float(getattr(lb, k).data) for k in ('cls', 'l1', 'giou', 'total')
        if isinstance(getattr(lb, k), T.Tensor)})


def loss_weights(Cnt):
    return (Cnt['LMBD_CLS'], Cnt['LMBD_L1'], Cnt['LMBD_GIOU'])


def image_loss(out, labels, gboxes, Cnt):
    '''
    Match the raw outputs of one image (DetOut) to its ground truth and
    return the LossBreakdown (Tensors) with the MatchResult.
    '''
    lmbd = loss_weights(Cnt)
    gboxes = np.asarray(gboxes, dtype=np.float64).reshape(-1, 4)
    lg = out.logits.data
    probs = np.exp(lg - lg.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    match = hungarian_match(match_cost(probs, out.boxes.data, labels, gboxes, lmbd))
    cls = loss_cls(out.logits, match.pairs, labels, match.unmatched, Cnt['BG_COEF'])
    if match.pairs:
        qi = np.array([i for i, _ in match.pairs])
        gi = np.array([j for _, j in match.pairs])
        pb = out.boxes[qi]
        l1 = loss_l1(pb, gboxes[gi])
        gl = loss_giou(pb, gboxes[gi])
    else:
        l1 = gl = T.Tensor(0.0)
    return total_loss(cls, l1, gl, lmbd), match
