"""Multimodal prompt fusion by a single cross-attention layer with a learnable query."""
import logging

from ..errs import DimensionError
from ..nn import layers as nl
from ..nn import params as npr
from ..nn import tensor as T
from .ptypes import FusedPrompt

log = logging.getLogger(__name__)

# > fusion strategies known to the detector pipeline
FUSIONS = ('attn', 'avg')


def init_fusion(prm, Cnt, rng):
    d = Cnt['D']
    prm.add('fusion.query', rng.normal(0, 1, size=d))
    npr.init_mha(prm, 'fusion.attn', d, rng)
    npr.init_ln(prm, 'fusion.ln', d)


def _slots(g, v):
    if g.category_name and v.category_name and g.category_name != v.category_name:
        log.warning('fusing prompts of different categories: %s and %s', g.category_name,
                    v.category_name)
    d = g.features.shape[-1]
    if v.embedding.shape != (d,):
        raise DimensionError(f'visual prompt {v.embedding.shape} does not match textual width {d}')
    return T.concat([g.features, v.embedding.reshape(1, d)], axis=0)


def fuse(g, v, prm, Cnt, return_weights=False):
    '''
    Fuse the textual tokens G_k with the visual prompt v_k:
    S = [g_1 .. g_n; v]; u = LN(u + MHA(u, S, S)) with the learnable query u.
    '''
    S = _slots(g, v)
    d = S.shape[-1]
    u = prm['fusion.query'].reshape(1, d)
    a, A = nl.multi_head_attention(u, S, S, prm, 'fusion.attn', Cnt['NHEAD'], return_weights=True)
    out = nl.norm(u + a, prm, 'fusion.ln', Cnt['LN_EPS']).reshape(d)
    fp = FusedPrompt(g.category_name, out)
    if return_weights:
        return fp, A
    return fp


def fuse_avg(g, v):
    '''averaging baseline: v_k added to every token feature, then mean-pooled'''
    S = _slots(g, v)
    n = S.shape[0] - 1
    return FusedPrompt(g.category_name, (S[:n] + S[n]).mean(axis=0))


def fuse_prompt(g, v, prm, Cnt, strategy='attn'):
    if strategy == 'attn':
        return fuse(g, v, prm, Cnt)
    if strategy == 'avg':
        return fuse_avg(g, v)
    raise ValueError(f'unknown fusion strategy {strategy!r}; use one of {FUSIONS}')
