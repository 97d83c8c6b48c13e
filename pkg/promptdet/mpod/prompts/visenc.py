"""
Visual prompt encoder: an exemplar box is embedded, combined with a learnable
content vector and used as the query of a deformable attention over the encoded
multi-scale features.
"""
import logging

import numpy as np

from .. import boxes
from ..errs import ConfigError, DimensionError
from ..nn import layers as nl
from ..nn import params as npr
from ..nn import tensor as T
from .ptypes import VisualPrompt

log = logging.getLogger(__name__)


def init_vpe(prm, Cnt, rng, nlvl=None):
    '''
    Parameters of the visual prompt encoder under `vpe.`; offset biases start on
    rays around the box centre, one direction per head, growing with the point index.
    '''
    d, H, P = Cnt['D'], Cnt['NHEAD'], Cnt['NPTS']
    L = nlvl or Cnt['NLVL']
    npr.init_linear(prm, 'vpe.mlp.l1', d, d, rng)
    npr.init_linear(prm, 'vpe.mlp.l2', d, d, rng)
    prm.add('vpe.content', rng.normal(0, 1, size=d))
    npr.init_linear(prm, 'vpe.proj', 2 * d, d, rng)

    prm.add('vpe.dattn.off.w', np.zeros((d, H * L * P * 2)))
    ang = 2 * np.pi * np.arange(H) / H
    ray = np.stack([np.cos(ang), np.sin(ang)], axis=-1)          # (H, 2)
    reach = (np.arange(P) + 1) / P                                # (P,)
    off = ray[:, None, None, :] * reach[None, None, :, None] * np.ones((1, L, 1, 1))
    prm.add('vpe.dattn.off.b', off.reshape(-1))
    prm.add('vpe.dattn.att.w', np.zeros((d, H * L * P)))
    prm.add('vpe.dattn.att.b', np.zeros(H * L * P))
    npr.init_linear(prm, 'vpe.dattn.out', d, d, rng)

    npr.init_ffn(prm, 'vpe.ffn', d, Cnt['FFN_MULT'], rng)
    npr.init_ln(prm, 'vpe.ln', d)


def deformable_attention(r, ref, feats, prm, Cnt, path='vpe.dattn', return_weights=False):
    '''
    Aggregate features around the reference box for the query r (d,).

    Each of the H heads owns a d/H channel slice; per head and level, NPTS offsets
    (linear in r, in units of half the box extent) move the sampling points away from
    the box centre and a softmax over all levels x points weights the bilinear samples.

    Args:
      r: query Tensor (d,).
      ref: reference Box (cx, cy, w, h).
      feats: list of (h, w, d) maps.
    '''
    if not feats:
        raise ConfigError('deformable attention needs at least one feature level', 'NLVL')
    r = T.astensor(r)
    d, H, P, L = r.shape[-1], Cnt['NHEAD'], Cnt['NPTS'], len(feats)
    if d % H:
        raise ConfigError(f'width {d} is not divisible by {H} heads', 'NHEAD')
    dh = d // H
    for f in feats:
        if f.shape[-1] != d:
            raise DimensionError(f'feature width {f.shape[-1]} does not match query width {d}')

    cx, cy, w, h = (float(v) for v in ref)
    off = nl.lin(r, prm, path + '.off').reshape(H, L, P, 2)
    pts = off * np.array([w / 2, h / 2]) + np.array([cx, cy])
    att = T.softmax(nl.lin(r, prm, path + '.att').reshape(H, L * P), axis=-1)

    hix = np.arange(H)
    smp = []
    for l, f in enumerate(feats):
        s = nl.bilinear_sample(f, pts[:, l].reshape(H * P, 2)).reshape(H, P, H, dh)
        # > each head keeps only its own channel slice
        smp.append(s[hix, :, hix, :])                             # (H, P, dh)
    smp = T.concat(smp, axis=1)                                   # (H, L*P, dh)
    agg = (smp * att.reshape(H, L * P, 1)).sum(axis=1).reshape(d)
    out = nl.lin(agg, prm, path + '.out')
    if return_weights:
        return out, att, agg
    return out


def encode_visual(b, feats, prm, Cnt, name='', source=''):
    '''
    Visual prompt v_k of an exemplar box b over encoded features `feats`
    (MultiScaleFeatures or a list of maps):
    e = MLP(PE(b)); r = proj([e; c]); z = deformable attention; v = LN(z + FFN(z)).
    '''
    b = boxes.Box(*b).check()
    levels = getattr(feats, 'levels', feats)
    d = Cnt['D']
    pe = boxes.box_pe(b, d)
    e = nl.lin(T.gelu(nl.lin(pe, prm, 'vpe.mlp.l1')), prm, 'vpe.mlp.l2')
    r = nl.lin(T.concat([e, prm['vpe.content']]), prm, 'vpe.proj')
    z = deformable_attention(r, b, levels, prm, Cnt)
    v = nl.norm(z + nl.ffn(z, prm, 'vpe.ffn'), prm, 'vpe.ln', Cnt['LN_EPS'])
    return VisualPrompt(name, v, source)


def mean_visual(name, prompts, source=None):
    '''elementwise mean of several visual embeddings of one category'''
    if not prompts:
        raise ValueError(f'no visual prompts to average for {name}')
    emb = prompts[0].embedding if len(prompts) == 1 else \
        T.stack([p.embedding for p in prompts]).mean(axis=0)
    return VisualPrompt(name, emb, source or f'aggregated({len(prompts)})')
