"""Convolutional backbone producing three feature levels."""
import logging

from ..errs import DimensionError
from ..nn import layers as nl
from ..nn import params as npr
from ..nn import tensor as T
from .dtypes import MultiScaleFeatures

log = logging.getLogger(__name__)

# > conv stages; the outputs of the last three are the feature levels
NCONV = 4


def init_backbone(prm, Cnt, rng):
    d = Cnt['D']
    for i in range(1, NCONV + 1):
        cin = 3 if i == 1 else d
        npr.init_linear(prm, f'backbone.conv{i}', 9 * cin, d, rng)


def backbone_forward(image, prm, Cnt):
    '''
    Four stride-2 3x3 convolutions with GELU; a 64 x 64 x 3 image gives
    levels of 16 x 16, 8 x 8 and 4 x 4 (strides 4, 8, 16) with d channels.
    '''
    x = T.astensor(image)
    sz = Cnt['IMSZ']
    if x.shape != (sz, sz, 3):
        raise DimensionError(f'image must be ({sz}, {sz}, 3), got {x.shape}')
    levels = []
    for i in range(1, NCONV + 1):
        x = T.gelu(nl.conv2d(x, prm[f'backbone.conv{i}.w'], prm[f'backbone.conv{i}.b'], stride=2))
        if i > 1:
            levels.append(x)
    levels = levels[-Cnt['NLVL']:]
    lvl = prm['encoder.level_embed'] if 'encoder.level_embed' in prm else None
    return MultiScaleFeatures(levels, lvl, None, None, [lv.shape[:2] for lv in levels])
