"""Prompt construction for inference and detection over whole datasets."""
import logging

from tqdm.auto import tqdm

from ..errs import ConfigError
from ..nn import tensor as T
from ..prompts.cache import aggregate
from ..prompts.fusion import fuse_prompt
from ..prompts.txtenc import encode_text, encode_texts
from .pipe import detect

log = logging.getLogger(__name__)

# > inference prompt modes; 'text-alias' queries the text encoder with alternative names
INFER_MODES = ('text', 'text-alias', 'visual', 'multimodal')


def build_prompts(mode, names, prm, Cnt, cache=None, n=1, rng=None, fusion='attn',
                  text_names=None):
    '''
    One prompt per category name:
      text       - encoded category names (or `text_names` in their place);
      visual     - mean of n prompts drawn from the cache;
      multimodal - textual tokens fused with the cached visual mean.
    '''
    if mode not in INFER_MODES:
        raise ConfigError(f'unknown prompt mode {mode!r}', 'prompt_mode')
    if mode in ('visual', 'multimodal') and cache is None:
        raise ConfigError(f'{mode} prompts need a prompt cache', 'cache')
    if mode in ('visual', 'multimodal'):
        cache.check_covers(names)
    tnames = text_names or names
    with T.no_grad():
        if mode in ('text', 'text-alias'):
            return encode_texts(tnames, prm, Cnt)
        vis = [aggregate(cache, k, n, rng) for k in names]
        if mode == 'visual':
            return vis
        return [
            fuse_prompt(encode_text(t, prm, Cnt), v, prm, Cnt, fusion) for t, v in zip(tnames, vis)]


def detect_scenes(scenes, prompts, names, prm, Cnt):
    '''image index -> detections labelled by `names`'''
    out = {}
    for scn in tqdm(scenes, desc='detect', unit='scene',
                    disable=log.getEffectiveLevel() > logging.INFO, leave=False):
        out[scn.index] = detect(scn.image, prompts, prm, Cnt, names=names)
    log.debug('%d detections in %d scenes', sum(len(v) for v in out.values()), len(out))
    return out
