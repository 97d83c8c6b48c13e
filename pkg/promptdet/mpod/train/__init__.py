"""Matching, losses and the three training stages"""
__all__ = [
    # matcher
    'MatchResult', 'hungarian_match', 'match_cost',
    # losses
    'LossBreakdown', 'image_loss', 'loss_cls', 'loss_giou', 'loss_l1', 'total_loss',
    # stages
    'StageConfig', 'run_stage', 'sample_stage2_instances', 'stage_config', 'stage_rng',
    'write_loss_log']  # yapf: disable

from .losses import LossBreakdown, image_loss, loss_cls, loss_giou, loss_l1, total_loss
from .matcher import MatchResult, hungarian_match, match_cost
from .stages import (
    StageConfig,
    run_stage,
    sample_stage2_instances,
    stage_config,
    stage_rng,
    write_loss_log,
)
