"""
Prompt-conditioned detection: query selection, classification against the
category prompts, box prediction and the end-to-end `detect` chain.
"""
import json
import logging
from os import fspath

import numpy as np

from .. import boxes
from ..errs import ConfigError
from ..nn import layers as nl
from ..nn import params as npr
from ..nn import tensor as T
from ..prompts.ptypes import CategoryPrompt, prompt_vectors
from .backbone import backbone_forward, init_backbone
from .decoder import decoder_states, init_decoder
from .dtypes import Detection, DetOut, Query
from .encoder import encoder_forward, init_encoder, token_grid

log = logging.getLogger(__name__)


def init_head(prm, Cnt, rng):
    d = Cnt['D']
    npr.init_linear(prm, 'boxhead.l1', d, d, rng)
    npr.init_linear(prm, 'boxhead.l2', d, d, rng)
    npr.init_linear(prm, 'boxhead.l3', d, 4, rng)
    prm.add('bg_prompt', rng.normal(0, 1, size=d))


def init_detector(prm, Cnt, rng):
    init_backbone(prm, Cnt, rng)
    init_encoder(prm, Cnt, rng)
    init_decoder(prm, Cnt, rng)
    init_head(prm, Cnt, rng)


def image_features(image, prm, Cnt):
    '''backbone followed by the encoder'''
    return encoder_forward(backbone_forward(image, prm, Cnt), prm, Cnt)


# ======================================================================
# similarities
# ----------------------------------------------------------------------


def _reduced(p, reduce):
    '''normalised prompt rows: all tokens (max reduction) or their mean'''
    P = prompt_vectors(p)
    if reduce == 'mean' and P.shape[0] > 1:
        P = P.mean(axis=0, keepdims=True)
    elif reduce not in ('max', 'mean'):
        raise ConfigError(f'unknown textual reduction {reduce!r}', 'TXT_REDUCE')
    return T.l2_normalize(P)


def prompt_similarities(x, prompts, bg=None, reduce='max'):
    '''
    Cosine similarities (n, K) of the rows of x (n, d) to each prompt; a textual
    prompt takes the maximum over its tokens. The background vector `bg`, when given,
    is appended as column K+1.
    '''
    x = T.astensor(x)
    xn = T.l2_normalize(x)
    cols = []
    for p in prompts:
        c = xn @ _reduced(p, reduce).T
        cols.append(T.amax(c, axis=-1) if c.shape[-1] > 1 else c[:, 0])
    if bg is not None:
        cols.append((xn @ T.l2_normalize(T.astensor(bg).reshape(1, -1)).T)[:, 0])
    return T.stack(cols, axis=1)


def category_similarity(x, p, reduce='max'):
    '''cosine similarity of one vector x (d,) to a category prompt'''
    x = T.astensor(x)
    return prompt_similarities(x.reshape(1, -1), [p], reduce=reduce)[0, 0]


def classify(qh, prompts, bg, tau, reduce='max'):
    '''softmax over K+1 slots (prompts, then background) of cos(q, P_k)/tau'''
    if not tau > 0:
        raise ConfigError(f'temperature must be positive, got {tau}', 'TAU')
    return T.softmax(prompt_similarities(qh, prompts, bg, reduce) * (1/tau), axis=-1)


def predict_box(qh, prm):
    '''3-layer MLP then sigmoid: (n, d) -> (n, 4) boxes (cx, cy, w, h)'''
    h = T.gelu(nl.lin(qh, prm, 'boxhead.l1'))
    h = T.gelu(nl.lin(h, prm, 'boxhead.l2'))
    return T.sigmoid(nl.lin(h, prm, 'boxhead.l3'))


# ======================================================================
# query selection
# ----------------------------------------------------------------------


def token_scores(f, prompts, reduce='max'):
    '''maximum over prompts of the similarity of every encoder token'''
    if not prompts:
        raise ValueError('query selection needs at least one prompt')
    with T.no_grad():
        return prompt_similarities(T.Tensor(f.tokens.data), prompts, None, reduce).data.max(axis=1)


def select_queries(f, prompts, Cnt, num_queries=None):
    '''
    Top-Q encoder tokens by their best prompt similarity, ties going to the lower
    flat token index; each query starts from the token feature and a reference box
    at the token centre with the per-level extent.
    '''
    nq = num_queries or Cnt['NQ']
    score = token_scores(f, prompts, Cnt['TXT_REDUCE'])
    if nq > score.size:
        raise ValueError(f'{nq} queries requested from {score.size} tokens')
    order = np.argsort(-score, kind='stable')[:nq]
    lvl, idx, ctr = token_grid(f.shapes)
    ext = Cnt['REF_EXT']
    content = f.tokens[order]
    pos = f.pos[order]
    return [
        Query(content[i], boxes.Box(ctr[t, 0], ctr[t, 1], ext[lvl[t]], ext[lvl[t]]), idx[t],
              pos[i]) for i, t in enumerate(order)]


# ======================================================================
# end-to-end
# ----------------------------------------------------------------------


def forward(image, prompts, prm, Cnt, feats=None):
    '''
    Full pipeline up to the raw outputs: logits (Q, K+1) = similarities / tau
    with the background last, and boxes (Q, 4).
    '''
    for p in prompts:
        if not isinstance(p, CategoryPrompt):
            raise TypeError(f'not a category prompt: {type(p).__name__}')
    tau = Cnt['TAU']
    if not tau > 0:
        raise ConfigError(f'temperature must be positive, got {tau}', 'TAU')
    f = feats if feats is not None else image_features(image, prm, Cnt)
    queries = select_queries(f, prompts, Cnt)
    qh = decoder_states(queries, f, prm, Cnt)
    sims = prompt_similarities(qh, prompts, prm['bg_prompt'], Cnt['TXT_REDUCE'])
    return DetOut(sims * (1/tau), predict_box(qh, prm), queries)


def detect(image, prompts, prm, Cnt, tau=None, conf_threshold=None, names=None):
    '''
    Detections whose best foreground score reaches the threshold; no suppression.
    `names` relabels the prompts (defaults to their category names).
    '''
    tau = Cnt['TAU'] if tau is None else tau
    thr = Cnt['CONF_THR'] if conf_threshold is None else conf_threshold
    names = names or [p.category_name for p in prompts]
    with T.no_grad():
        out = forward(image, prompts, prm, dict(Cnt, TAU=tau))
    sc = np.exp(out.logits.data - out.logits.data.max(axis=1, keepdims=True))
    sc /= sc.sum(axis=1, keepdims=True)
    fg = sc[:, :-1]
    dets = []
    for i in range(fg.shape[0]):
        k = int(np.argmax(fg[i]))
        if fg[i, k] >= thr:
            b = boxes.Box(*(float(v) for v in out.boxes.data[i]))
            dets.append(Detection(b, tuple(float(s) for s in fg[i]), names[k], float(fg[i, k])))
    log.debug('%d of %d queries above %.3f', len(dets), fg.shape[0], thr)
    return dets


# ======================================================================
# output
# ----------------------------------------------------------------------


def detection_records(image_id, dets):
    return [{
        'image': image_id, 'category': d.label, 'box': [float(v) for v in d.box],
        'score': d.confidence, 'scores': [float(s) for s in d.scores]} for d in dets]


def write_detections(fpth, per_image, meta=None):
    '''
    JSON lines, one object per detection; `per_image` maps image id to detections.
    The optional `meta` goes on a first line under the key 'meta'.
    '''
    n = 0
    with open(fspath(fpth), 'w') as f:
        if meta:
            f.write(json.dumps({'meta': meta}, sort_keys=True) + '\n')
        for iid in sorted(per_image):
            for r in detection_records(iid, per_image[iid]):
                f.write(json.dumps(r, sort_keys=True) + '\n')
                n += 1
    log.info('wrote %d detections to %s', n, fpth)


def read_detections(fpth):
    '''inverse of `write_detections`: image id -> list of Detection'''
    out = {}
    with open(fspath(fpth)) as f:
        for ln in f:
            r = json.loads(ln)
            if 'meta' in r:
                continue
            out.setdefault(r['image'], []).append(
                Detection(boxes.Box(*r['box']), tuple(r.get('scores', ())), r['category'],
                          r['score']))
    return out
