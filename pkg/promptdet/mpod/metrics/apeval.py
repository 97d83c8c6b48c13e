"""
Average precision of detections: greedy matching by confidence,
all-point interpolated AP per category, AP50 and mAP over IoU thresholds.
"""
import csv
import json
import logging
from collections import namedtuple
from os import fspath

import numpy as np

from .. import boxes

log = logging.getLogger(__name__)

# > per_category: name -> AP per threshold; curves: name -> (recall, precision) at the first
# > threshold; categories without ground truth are left out of everything
APResult = namedtuple('APResult', 'per_category ap50 map thresholds curves')


def _det_key(iid, d):
    return (-d.confidence, iid, tuple(d.box))


def match_detections(dets, gts, category, iou_thresh):
    '''
    Greedy matching of the detections of one category, highest confidence first
    (ties by image id, then box); each takes the unmatched ground truth of
    highest IoU when it reaches `iou_thresh`.

    Args:
      dets: image id -> list of Detection.
      gts: image id -> list of Annotation.
    Returns:
      (tp flags in ranking order, confidences in ranking order, number of ground truths)
    '''
    ranked = sorted(((iid, d) for iid, ds in dets.items() for d in ds if d.label == category),
                    key=lambda x: _det_key(*x))
    gbox = {
        iid: np.array([list(a.box) for a in anns if a.category == category]).reshape(-1, 4)
        for iid, anns in gts.items()}
    used = {iid: np.zeros(len(b), dtype=bool) for iid, b in gbox.items()}
    ngt = sum(len(b) for b in gbox.values())
    flags = np.zeros(len(ranked), dtype=bool)
    for r, (iid, d) in enumerate(ranked):
        g = gbox.get(iid)
        if g is None or not len(g):
            continue
        ov = np.where(used[iid], -1.0, boxes.iou(np.asarray(d.box)[None, :], g))
        j = int(np.argmax(ov))
        if ov[j] >= iou_thresh:
            used[iid][j] = True
            flags[r] = True
    return flags, np.array([d.confidence for _, d in ranked]), ngt


def pr_curve(flags, ngt):
    '''recall and precision after each ranked detection'''
    tp = np.cumsum(flags).astype(np.float64)
    fp = np.cumsum(~np.asarray(flags, dtype=bool)).astype(np.float64)
    return tp / max(ngt, 1), np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp+fp) > 0)


def average_precision(flags, ngt):
    '''
    Area under the interpolated precision p(r) = max_{r' >= r} precision(r');
    None when there is no ground truth (the category is then left out).
    '''
    if ngt < 1:
        return None
    if len(flags) == 0:
        return 0.0
    rec, prec = pr_curve(flags, ngt)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    i = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[i + 1] - mrec[i]) * mpre[i + 1]))


def evaluate(dets, gts, names, thresholds=None):
    '''
    Per-category AP at every IoU threshold with the AP50 and mAP aggregates.

    Args:
      dets: image id -> list of Detection (labels must be in `names`).
      gts: image id -> list of Annotation, or a sequence of scenes.
      names: category names, in report order.
      thresholds: IoU thresholds (default 0.50:0.05:0.95); the first one gives AP50.
    '''
    if thresholds is None:
        thresholds = tuple(round(0.5 + 0.05*i, 2) for i in range(10))
    if not isinstance(gts, dict):
        gts = {s.index: s.annotations for s in gts}
    if not gts:
        raise ValueError('cannot evaluate on an empty dataset')
    known = set(names)
    for iid, ds in dets.items():
        for d in ds:
            if d.label not in known:
                raise ValueError(f'detection in image {iid} has unknown category {d.label!r}')

    per, curves = {}, {}
    for k in names:
        aps = []
        for t in thresholds:
            flags, _, ngt = match_detections(dets, gts, k, t)
            aps.append(average_precision(flags, ngt))
            if t == thresholds[0] and ngt:
                curves[k] = pr_curve(flags, ngt)
        if aps[0] is None:
            log.debug('category %s has no ground truth; left out', k)
            continue
        per[k] = aps
    if not per:
        return APResult({}, 0.0, 0.0, tuple(thresholds), {})
    ap50 = float(np.mean([v[0] for v in per.values()]))
    mAP = float(np.mean([np.mean(v) for v in per.values()]))
    return APResult(per, ap50, mAP, tuple(thresholds), curves)


# ======================================================================
# reports
# ----------------------------------------------------------------------


def report_dict(res, meta=None):
    out = {
        'per_category': {
            k: {'ap50': v[0], 'ap': float(np.mean(v))} for k, v in sorted(res.per_category.items())},
        'ap50': res.ap50, 'map': res.map, 'thresholds': list(res.thresholds)}
    if meta:
        out['meta'] = meta
    return out


def write_report(fpth, res, meta=None):
    with open(fspath(fpth), 'w') as f:
        json.dump(report_dict(res, meta), f, indent=1, sort_keys=True)
    log.info('AP50 %.4f, mAP %.4f -> %s', res.ap50, res.map, fpth)


def write_pr_csv(fpth, res, meta=None):
    '''precision-recall points per category at the first threshold'''
    with open(fspath(fpth), 'w', newline='') as f:
        if meta:
            f.write(f'# {json.dumps(meta, sort_keys=True)}\n')
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['category', 'rank', 'recall', 'precision'])
        for k in sorted(res.curves):
            for i, (r, p) in enumerate(zip(*res.curves[k])):
                w.writerow([k, i, repr(float(r)), repr(float(p))])
