"""Prompt-conditioned DETR-style detector"""
__all__ = [
    # dtypes
    'Detection', 'DetOut', 'MultiScaleFeatures', 'Query',
    # stages of the pipeline
    'backbone_forward', 'decoder_forward', 'encoder_forward', 'select_queries',
    # pipe
    'category_similarity', 'classify', 'detect', 'forward', 'image_features', 'init_detector',
    'predict_box', 'prompt_similarities', 'read_detections', 'write_detections',
    # infer
    'INFER_MODES', 'build_prompts', 'detect_scenes']  # yapf: disable

from .backbone import backbone_forward
from .decoder import decoder_forward
from .dtypes import Detection, DetOut, MultiScaleFeatures, Query
from .encoder import encoder_forward
from .infer import INFER_MODES, build_prompts, detect_scenes
from .pipe import (
    category_similarity,
    classify,
    detect,
    forward,
    image_features,
    init_detector,
    predict_box,
    prompt_similarities,
    read_detections,
    select_queries,
    write_detections,
)
