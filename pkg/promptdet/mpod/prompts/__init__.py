"""Textual, visual and fused category prompts and the visual prompt cache"""
__all__ = [
    # ptypes
    'CategoryPrompt', 'FusedPrompt', 'TextualPrompt', 'VisualPrompt', 'prompt_vectors',
    # txtenc
    'encode_text', 'encode_texts', 'init_text', 'tokenize',
    # visenc
    'deformable_attention', 'encode_visual', 'init_vpe', 'mean_visual',
    # fusion
    'FUSIONS', 'fuse', 'fuse_avg', 'fuse_prompt', 'init_fusion',
    # cache
    'PromptCache', 'aggregate', 'build_cache']  # yapf: disable

from .cache import PromptCache, aggregate, build_cache
from .fusion import FUSIONS, fuse, fuse_avg, fuse_prompt, init_fusion
from .ptypes import CategoryPrompt, FusedPrompt, TextualPrompt, VisualPrompt, prompt_vectors
from .txtenc import encode_text, encode_texts, init_text, tokenize
from .visenc import deformable_attention, encode_visual, init_vpe, mean_visual
