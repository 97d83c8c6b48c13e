"""
Prompt-independent transformer encoder over the flattened multi-scale tokens.
"""
import logging

import numpy as np

from .. import boxes
from ..nn import layers as nl
from ..nn import params as npr
from ..nn import tensor as T

log = logging.getLogger(__name__)


def init_encoder(prm, Cnt, rng):
    d = Cnt['D']
    prm.add('encoder.level_embed', rng.normal(0, 1, size=(Cnt['NLVL'], d)))
    for i in range(Cnt['NENC']):
        p = f'encoder.layer{i}'
        npr.init_mha(prm, p + '.attn', d, rng)
        npr.init_ln(prm, p + '.ln1', d)
        npr.init_ffn(prm, p + '.ffn', d, Cnt['FFN_MULT'], rng)
        npr.init_ln(prm, p + '.ln2', d)


def token_grid(shapes):
    '''
    Geometry of the flattened tokens of all levels (row-major per level):
    returns the level index, (level, row, col) and normalised centres (cx, cy).
    '''
    lvl, idx, ctr = [], [], []
    for l, (h, w) in enumerate(shapes):
        r, c = np.meshgrid(np.arange(h), np.arange(w), indexing='ij')
        r, c = r.reshape(-1), c.reshape(-1)
        lvl.append(np.full(r.size, l))
        idx.extend(zip([l] * r.size, r.tolist(), c.tolist()))
        ctr.append(np.stack([(c+0.5) / w, (r+0.5) / h], axis=-1))
    return np.concatenate(lvl), idx, np.concatenate(ctr)


def encoder_layer(x, prm, path, Cnt):
    eps = Cnt['LN_EPS']
    x = nl.norm(x + nl.multi_head_attention(x, x, x, prm, path + '.attn', Cnt['NHEAD']), prm,
                path + '.ln1', eps)
    return nl.norm(x + nl.ffn(x, prm, path + '.ffn'), prm, path + '.ln2', eps)


def encoder_forward(f, prm, Cnt):
    '''
    Flatten all levels into one token sequence, add level embeddings and the 2D
    sinusoidal position encoding, apply NENC self-attention layers and reshape back.
    No prompt enters the encoder.
    '''
    d = Cnt['D']
    shapes = [tuple(lv.shape[:2]) for lv in f.levels]
    lvl, _, ctr = token_grid(shapes)
    lemb = prm['encoder.level_embed']
    pos = lemb[lvl] + boxes.grid_pe(ctr[:, 0], ctr[:, 1], d)
    x = T.concat([lv.reshape(-1, d) for lv in f.levels], axis=0)
    x = x + pos
    for i in range(Cnt['NENC']):
        x = encoder_layer(x, prm, f'encoder.layer{i}', Cnt)
    cuts = np.cumsum([0] + [h * w for h, w in shapes])
    levels = [x[cuts[l]:cuts[l + 1]].reshape(h, w, d) for l, (h, w) in enumerate(shapes)]
    return f._replace(levels=levels, level_embed=lemb, tokens=x, pos=pos, shapes=shapes)
