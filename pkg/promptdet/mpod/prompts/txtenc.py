"""Textual prompt encoder: hashed tokens, one self-attention and one FFN sublayer."""
import logging
import re

import numpy as np

from ..nn import layers as nl
from ..nn import params as npr
from .ptypes import TextualPrompt

log = logging.getLogger(__name__)

FNV_OFFSET = 2166136261
FNV_PRIME = 16777619


def fnv1a(s):
    '''32-bit FNV-1a hash of the UTF-8 bytes of `s`'''
    h = FNV_OFFSET
    for c in s.encode('utf-8'):
        h = ((h ^ c) * FNV_PRIME) & 0xFFFFFFFF
    return h


def tokenize(name, vocab=1024):
    '''
    Lower-case the name, split it on whitespace, hyphens and underscores
    and hash each token into `vocab` ids.
    '''
    if not isinstance(name, str):
        raise TypeError(f'category name must be a string, got {type(name).__name__}')
    words = [w for w in re.split(r'[\s\-_]+', name.lower()) if w]
    if not words:
        raise ValueError(f'empty category name: {name!r}')
    return [fnv1a(w) % vocab for w in words]


def init_text(prm, Cnt, rng):
    d = Cnt['D']
    prm.add('text.embed', rng.normal(0, 1, size=(Cnt['VOCAB'], d)))
    npr.init_mha(prm, 'text.attn', d, rng)
    npr.init_ln(prm, 'text.ln1', d)
    npr.init_ffn(prm, 'text.ffn', d, Cnt['FFN_MULT'], rng)
    npr.init_ln(prm, 'text.ln2', d)


def encode_text(name, prm, Cnt):
    '''
    Encode a category name into its token features G_k of shape (n_k, d):
    embedding lookup, then self-attention and FFN, each with residual + layer norm.
    '''
    tokens = tokenize(name, Cnt['VOCAB'])
    x = prm['text.embed'][np.array(tokens)]
    x = nl.norm(x + nl.multi_head_attention(x, x, x, prm, 'text.attn', Cnt['NHEAD']), prm,
                'text.ln1', Cnt['LN_EPS'])
    x = nl.norm(x + nl.ffn(x, prm, 'text.ffn'), prm, 'text.ln2', Cnt['LN_EPS'])
    return TextualPrompt(name, tokens, x)


def encode_texts(names, prm, Cnt):
    return [encode_text(n, prm, Cnt) for n in names]