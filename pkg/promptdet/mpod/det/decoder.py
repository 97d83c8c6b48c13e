"""Transformer decoder refining the selected queries against the encoder memory."""
import logging

from ..nn import layers as nl
from ..nn import params as npr
from ..nn import tensor as T

log = logging.getLogger(__name__)


def init_decoder(prm, Cnt, rng):
    d = Cnt['D']
    for i in range(Cnt['NDEC']):
        p = f'decoder.layer{i}'
        npr.init_mha(prm, p + '.self_attn', d, rng)
        npr.init_ln(prm, p + '.ln1', d)
        npr.init_mha(prm, p + '.cross_attn', d, rng)
        npr.init_ln(prm, p + '.ln2', d)
        npr.init_ffn(prm, p + '.ffn', d, Cnt['FFN_MULT'], rng)
        npr.init_ln(prm, p + '.ln3', d)


def decoder_layer(tgt, qpos, mem, prm, path, Cnt):
    '''
    self-attention over the queries, cross-attention to all encoder tokens
    (keys and values carry the token position encodings), FFN; post-norm residuals
    '''
    H, eps = Cnt['NHEAD'], Cnt['LN_EPS']
    q = tgt + qpos
    tgt = nl.norm(tgt + nl.multi_head_attention(q, q, tgt, prm, path + '.self_attn', H), prm,
                  path + '.ln1', eps)
    tgt = nl.norm(tgt + nl.multi_head_attention(tgt + qpos, mem, mem, prm, path + '.cross_attn', H),
                  prm, path + '.ln2', eps)
    return nl.norm(tgt + nl.ffn(tgt, prm, path + '.ffn'), prm, path + '.ln3', eps)


def decoder_states(queries, f, prm, Cnt):
    '''refined query features as one (Q, d) Tensor'''
    if not queries:
        raise ValueError('the decoder needs at least one query')
    tgt = T.stack([q.content for q in queries])
    qpos = T.stack([q.pos for q in queries])
    mem = f.tokens + f.pos
    for i in range(Cnt['NDEC']):
        tgt = decoder_layer(tgt, qpos, mem, prm, f'decoder.layer{i}', Cnt)
    return tgt


def decoder_forward(queries, f, prm, Cnt):
    '''queries with their content replaced by the decoded features'''
    h = decoder_states(queries, f, prm, Cnt)
    return [q._replace(content=h[i]) for i, q in enumerate(queries)]
