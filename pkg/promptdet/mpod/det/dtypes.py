"""Records passed along the detection pipeline."""
from collections import namedtuple

# > levels: list of (h, w, d) maps; level_embed: (L, d) Tensor;
# > tokens/pos: flattened encoder tokens and their position encodings (after encoding)
MultiScaleFeatures = namedtuple('MultiScaleFeatures', 'levels level_embed tokens pos shapes')

# > source_index: (level, row, col) of the encoder token the query was selected from
Query = namedtuple('Query', 'content ref_box source_index pos')

# > scores: foreground scores, one per prompt; label: name of the best prompt
Detection = namedtuple('Detection', 'box scores label confidence')

# > raw pipeline output for training: logits (Q, K+1) and boxes (Q, 4)
DetOut = namedtuple('DetOut', 'logits boxes queries')
