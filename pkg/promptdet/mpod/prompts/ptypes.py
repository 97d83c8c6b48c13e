"""Category prompt records: textual token features, visual and fused vectors."""
from collections import namedtuple


class TextualPrompt(namedtuple('TextualPrompt', 'category_name tokens features')):
    """token ids of a category name and their encoded features (n_k, d)"""
    __slots__ = ()
    kind = 'text'


class VisualPrompt(namedtuple('VisualPrompt', 'category_name embedding source')):
    """
    Vector (d,) extracted from an exemplar box; `source` is the instance id or
    'aggregated(n)' for means of cached instances.
    """
    __slots__ = ()
    kind = 'visual'


class FusedPrompt(namedtuple('FusedPrompt', 'category_name embedding')):
    """single vector (d,) combining the textual tokens with a visual prompt"""
    __slots__ = ()
    kind = 'fused'


# > the tagged union of all prompt variants
CategoryPrompt = (TextualPrompt, VisualPrompt, FusedPrompt)


def prompt_vectors(p):
    '''
    Features of a prompt as an (n, d) Tensor: the tokens of a textual prompt,
    else the single embedding as one row.
    '''
    if not isinstance(p, CategoryPrompt):
        raise TypeError(f'not a category prompt: {type(p).__name__}')
    if isinstance(p, TextualPrompt):
        return p.features
    return p.embedding.reshape(1, p.embedding.shape[-1])
