"""Bipartite matching of predictions to ground truth."""
import logging
from collections import namedtuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .. import boxes

log = logging.getLogger(__name__)

# > pairs: (query, ground truth) sorted by query; unmatched: remaining query indices
MatchResult = namedtuple('MatchResult', 'pairs unmatched')


def match_cost(probs, pboxes, labels, gboxes, lmbd=(2.0, 5.0, 2.0)):
    '''
    Matching cost (Q, G):
    lmbd_cls (1 - p_i[y_j]) + lmbd_l1 |b_i - b_j|_1 + lmbd_giou (1 - GIoU(b_i, b_j)).

    Args:
      probs: (Q, C) class probabilities (the background column may be included).
      pboxes, gboxes: (Q, 4) and (G, 4) boxes in (cx, cy, w, h).
      labels: (G,) column index of each ground truth in `probs`.
    '''
    probs = np.asarray(probs, dtype=np.float64)
    pboxes = np.asarray(pboxes, dtype=np.float64).reshape(-1, 4)
    gboxes = np.asarray(gboxes, dtype=np.float64).reshape(-1, 4)
    labels = np.asarray(labels, dtype=int)
    if probs.shape[0] < 1 or labels.size < 1:
        raise ValueError('matching needs at least one prediction and one ground truth')
    if labels.shape[0] != gboxes.shape[0]:
        raise ValueError(f'{labels.shape[0]} labels for {gboxes.shape[0]} ground-truth boxes')
    if labels.min() < 0 or labels.max() >= probs.shape[1]:
        raise ValueError(f'labels {labels.tolist()} out of range [0, {probs.shape[1]})')
    lc, l1, lg = lmbd
    c_cls = 1 - probs[:, labels]
    c_l1 = np.abs(pboxes[:, None, :] - gboxes[None, :, :]).sum(axis=-1)
    c_giou = 1 - boxes.giou_matrix(pboxes, gboxes)
    return lc*c_cls + l1*c_l1 + lg*c_giou


def _completion(cost, fixed, i, j):
    '''
    Cheapest assignment holding the decided rows of `fixed` and the pair (i, j),
    as a dict row -> column; None when it cannot reach min(Q, G) pairs.
    '''
    Q, G = cost.shape
    pairs = {r: c for r, c in fixed.items() if c is not None}
    pairs[i] = j
    used = set(pairs.values())
    rf = [r for r in range(Q) if r not in fixed and r != i]
    cf = [c for c in range(G) if c not in used]
    if rf and cf:
        rows, cols = linear_sum_assignment(cost[np.ix_(rf, cf)])
        pairs.update((rf[r], cf[c]) for r, c in zip(rows, cols))
    return pairs if len(pairs) == min(Q, G) else None


def _total(cost, pairs):
    return sum(cost[r, c] for r, c in pairs.items())


def hungarian_match(cost):
    '''
    Minimum-cost one-to-one assignment; with fewer queries than ground truths
    only min(Q, G) pairs are formed. Among optimal assignments the one with the
    lexicographically smallest (query, ground truth) pairs is returned: each query
    in turn takes the lowest ground truth that still admits an optimal completion.
    '''
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f'cost must be a matrix, got shape {cost.shape}')
    if not np.all(np.isfinite(cost)):
        raise ValueError('cost matrix has non-finite entries')
    Q, G = cost.shape
    rows, cols = linear_sum_assignment(cost)
    cur = dict(zip(rows.tolist(), cols.tolist()))
    best = _total(cost, cur)
    tol = 1e-13 * max(1.0, abs(best))
    fixed = {}
    for i in range(Q):
        taken = {c for c in fixed.values() if c is not None}
        for j in range(G if i not in cur else cur[i]):
            if j in taken:
                continue
            sol = _completion(cost, fixed, i, j)
            if sol is not None and _total(cost, sol) <= best + tol:
                cur = sol
                break
        fixed[i] = cur.get(i)
    pairs = sorted((int(r), int(c)) for r, c in cur.items())
    unmatched = [i for i in range(Q) if i not in cur]
    return MatchResult(pairs, unmatched)


def match_total(cost, match):
    return float(sum(cost[i, j] for i, j in match.pairs))
