#!/usr/bin/env python
"""initialise the prompt-conditioned open-vocabulary detector package"""
# version detector. Precedence: installed dist, git, 'UNKNOWN'
try:
    from ._dist_ver import __version__
except ImportError:
    try:
        from setuptools_scm import get_version

        __version__ = get_version(root="../..", relative_to=__file__)
    except (ImportError, LookupError):
        __version__ = "UNKNOWN"
__all__ = [
    # utils
    'LOG_FORMAT', 'resources', 'get_mpod_constants',
    # package
    'ablate', 'boxes', 'data', 'det', 'metrics', 'mpodaux', 'nn', 'prompts', 'train',
    # errs
    'CheckFailure', 'ConfigError', 'DatasetError', 'DimensionError', 'PrerequisiteError',
    # boxes
    'Box', 'giou', 'iou',
    # data
    'DatasetSpec', 'iter_scenes', 'reference_spec',
    # det
    'detect', 'forward',
    # prompts
    'PromptCache', 'encode_text', 'encode_visual', 'fuse',
    # train
    'hungarian_match', 'run_stage', 'stage_config',
    # metrics
    'evaluate',
    # mpodaux
    'get_mpodparams', 'init_params', 'load_config']  # yapf: disable

from . import ablate, boxes, data, det, metrics, mpodaux, nn, prompts, resources, train
from .boxes import Box, giou, iou
from .data import DatasetSpec, iter_scenes, reference_spec
from .det import detect, forward
from .errs import CheckFailure, ConfigError, DatasetError, DimensionError, PrerequisiteError
from .metrics import evaluate
from .mpodaux import get_mpodparams, init_params, load_config
from .prompts import PromptCache, encode_text, encode_visual, fuse
from .resources import LOG_FORMAT, get_mpod_constants
from .train import hungarian_match, run_stage, stage_config
