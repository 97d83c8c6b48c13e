"""
Stage-wise training with parameter freezing:
  I   - detector and text encoder with textual prompts;
  II  - visual prompt encoder alone, prompts from exemplars of the same image;
  III - fusion module alone, visual prompts drawn from the prompt cache.
"""
import csv
import json
import logging
from collections import namedtuple
from numbers import Integral
from os import fspath

import numpy as np
from tqdm.auto import trange

from ..det.pipe import forward, image_features
from ..errs import ConfigError
from ..nn import params as npr
from ..nn import tensor as T
from ..prompts.cache import aggregate
from ..prompts.fusion import fuse_prompt
from ..prompts.txtenc import encode_text
from ..prompts.visenc import encode_visual, mean_visual
from .losses import as_floats, image_loss, total_loss

log = logging.getLogger(__name__)

# > parameter groups by path prefix
DETECTOR = ('backbone.', 'bg_prompt', 'boxhead.', 'decoder.', 'encoder.')
TEXT = ('text.',)
VPE = ('vpe.',)
FUSION = ('fusion.',)

PROMPT_MODES = ('text', 'visual', 'multimodal', 'joint')


class StageConfig(
        namedtuple('StageConfig', 'stage epochs lr frozen prompt_mode instances_per_category'
                   ' fusion_train_prompt_count joint_text_prob max_steps')):
    """
    Settings of one training stage. `frozen` holds path prefixes; the 'joint'
    prompt mode (Stage II with the detector left trainable) picks textual prompts
    with probability `joint_text_prob` per step, else visual ones.
    """
    __slots__ = ()

    @property
    def frozen_detector(self):
        return all(p in self.frozen for p in DETECTOR + TEXT)

    def check(self):
        if self.stage not in (1, 2, 3):
            raise ConfigError(f'unknown stage {self.stage}', 'stage')
        if self.epochs < 0:
            raise ConfigError(f'epochs must be >= 0, got {self.epochs}', f'stages.{self.stage}')
        if not self.lr > 0:
            raise ConfigError(f'learning rate must be positive, got {self.lr}',
                              f'stages.{self.stage}.lr')
        if self.prompt_mode not in PROMPT_MODES:
            raise ConfigError(f'unknown prompt mode {self.prompt_mode!r}',
                              f'stages.{self.stage}.prompt_mode')
        if self.instances_per_category < 1:
            raise ConfigError('instances per category must be >= 1',
                              f'stages.{self.stage}.instances_per_category')
        n = self.fusion_train_prompt_count
        if not (n == 'random' or (isinstance(n, Integral) and n >= 1)):
            raise ConfigError(f'prompt count must be a positive integer or "random", got {n!r}',
                              f'stages.{self.stage}.fusion_train_prompt_count')
        frz = set(self.frozen)
        if self.stage == 2 and self.prompt_mode == 'visual' and not self.frozen_detector:
            raise ConfigError('stage 2 with visual prompts freezes the detector and text encoder',
                              'stages.2.frozen')
        if self.stage == 3 and (not frz.issuperset(DETECTOR + TEXT + VPE) or FUSION[0] in frz):
            raise ConfigError('stage 3 freezes everything except the fusion module',
                              'stages.3.frozen')
        return self

    def to_dict(self):
        out = self._asdict()
        out['frozen'] = list(self.frozen)
        return out

    @classmethod
    def from_dict(cls, raw, stage=None):
        base = stage_config(raw.get('stage', stage))
        extra = set(raw) - set(cls._fields) - {'frozen_detector'}
        if extra:
            raise ConfigError(f'unknown fields {sorted(extra)}', f'stages.{base.stage}')
        if 'frozen_detector' in raw:
            base = stage_config(base.stage, frozen_detector=raw['frozen_detector'])
        kw = {k: v for k, v in raw.items() if k in cls._fields}
        if 'frozen' in kw:
            kw['frozen'] = tuple(kw['frozen'])
        return base._replace(**kw).check()


def stage_config(stage, frozen_detector=True, **kw):
    '''
    Defaults of each stage: 30 epochs for Stage I, 10 for Stages II and III;
    one exemplar per category in Stage II; 32 cached prompts in Stage III.
    `frozen_detector=False` gives the joint Stage II variant.
    '''
    if stage == 1:
        cfg = StageConfig(1, 30, 1e-3, VPE + FUSION, 'text', 1, 32, 0.5, None)
    elif stage == 2:
        if frozen_detector:
            cfg = StageConfig(2, 10, 1e-3, DETECTOR + TEXT + FUSION, 'visual', 1, 32, 0.5, None)
        else:
            cfg = StageConfig(2, 10, 1e-3, FUSION, 'joint', 1, 32, 0.5, None)
    elif stage == 3:
        cfg = StageConfig(3, 10, 1e-3, DETECTOR + TEXT + VPE, 'multimodal', 1, 32, 0.5, None)
    else:
        raise ConfigError(f'unknown stage {stage}', 'stage')
    return cfg._replace(**kw).check()


def stage_rng(seed, stage):
    '''generator of one stage, so that stages run apart or together draw alike'''
    return np.random.default_rng([int(seed), int(stage)])


# ======================================================================
# prompts per step
# ----------------------------------------------------------------------


def sample_stage2_instances(annotations, m, rng):
    '''
    For each category present (in order of first appearance), min(m, available)
    of its boxes drawn uniformly without replacement.
    '''
    if not annotations:
        raise ValueError('sampling exemplars needs at least one annotation')
    per = {}
    for a in annotations:
        per.setdefault(a.category, []).append(a.box)
    out = {}
    for name, bxs in per.items():
        idx = rng.choice(len(bxs), size=min(m, len(bxs)), replace=False)
        out[name] = [bxs[i] for i in idx]
    return out


def _labels(scn, names):
    return [names.index(a.category) for a in scn.annotations]


def _gboxes(scn):
    return np.array([list(a.box) for a in scn.annotations])


def _visual_step_loss(scn, prm, Cnt, m, rng):
    feats = image_features(scn.image, prm, Cnt)
    ex = sample_stage2_instances(scn.annotations, m, rng)
    present = list(ex)
    prompts = [
        mean_visual(k, [encode_visual(b, feats, prm, Cnt, k) for b in ex[k]]) for k in present]
    out = forward(scn.image, prompts, prm, Cnt, feats=feats)
    return image_loss(out, _labels(scn, present), _gboxes(scn), Cnt)


def _prompted_step_loss(scn, prompts, names, prm, Cnt):
    out = forward(scn.image, prompts, prm, Cnt)
    return image_loss(out, _labels(scn, names), _gboxes(scn), Cnt)


def step_loss(cfg, batch, names, prm, Cnt, rng, cache=None, text=None):
    '''
    Mean LossBreakdown (Tensors) over the scenes of one batch under the prompts
    of the stage; random draws come from `rng` in a fixed order.
    '''
    mode = cfg.prompt_mode
    if mode == 'joint':
        mode = 'text' if rng.random() < cfg.joint_text_prob else 'visual'

    if mode == 'text':
        prompts = [encode_text(k, prm, Cnt) for k in names]
    elif mode == 'multimodal':
        n = cfg.fusion_train_prompt_count
        if n == 'random':
            n = int(rng.integers(1, Cnt['NVIS_MAX'] + 1))
        text = text or [encode_text(k, prm, Cnt) for k in names]
        prompts = [
            fuse_prompt(g, aggregate(cache, k, n, rng), prm, Cnt, 'attn')
            for k, g in zip(names, text)]

    parts = []
    for scn in batch:
        if mode == 'visual':
            lb, _ = _visual_step_loss(scn, prm, Cnt, cfg.instances_per_category, rng)
        else:
            lb, _ = _prompted_step_loss(scn, prompts, names, prm, Cnt)
        parts.append(lb)
    nb = len(parts)
    return total_loss(
        sum((p.cls for p in parts), T.Tensor(0.0)) * (1/nb),
        sum((p.l1 for p in parts), T.Tensor(0.0)) * (1/nb),
        sum((p.giou for p in parts), T.Tensor(0.0)) * (1/nb),
        (parts[0].lmbd_cls, parts[0].lmbd_l1, parts[0].lmbd_giou))


def run_stage(cfg, prm, scenes, names, Cnt, rng, cache=None):
    '''
    Train the unfrozen parameters of `prm` in place for one stage.

    Args:
      cfg: StageConfig.
      scenes: list of SyntheticScene (random access).
      names: category names; labels index into this list.
      rng: numpy Generator of the stage (see `stage_rng`).
      cache: PromptCache, required by Stage III.
    Returns:
      (prm, list of LossBreakdown of floats, one per step)
    '''
    cfg.check()
    if not scenes:
        raise ValueError('cannot train on an empty dataset')
    if cfg.prompt_mode == 'multimodal' and cache is None:
        raise ConfigError('multimodal training needs a prompt cache', 'cache')
    if cfg.prompt_mode == 'multimodal':
        cache.check_covers(names)
    prm.freeze(cfg.frozen)
    opt = npr.Adam(prm, lr=cfg.lr, betas=Cnt['BETAS'], eps=Cnt['ADAM_EPS'])
    bs = Cnt['BATCH']
    nbatch = -(-len(scenes) // bs)
    nstep = cfg.epochs * nbatch
    if cfg.max_steps is not None:
        nstep = min(nstep, cfg.max_steps)
    log.info('stage %d: %d steps (%d epochs of %d batches), %d of %d parameters trainable',
             cfg.stage, nstep, cfg.epochs, nbatch,
             sum(t.size for _, t in prm.trainable()), prm.nparams())

    # > textual prompts of a frozen text encoder are constant through the stage
    text = None
    if cfg.prompt_mode == 'multimodal':
        text = [encode_text(k, prm, Cnt) for k in names]

    losses = []
    order = None
    for step in trange(nstep, desc=f'stage {cfg.stage}', unit='step',
                       disable=log.getEffectiveLevel() > logging.INFO, leave=False):
        b = step % nbatch
        if b == 0:
            order = rng.permutation(len(scenes))
        batch = [scenes[i] for i in order[b * bs:(b+1) * bs]]
        prm.zero_grad()
        lb = step_loss(cfg, batch, names, prm, Cnt, rng, cache, text)
        if lb.total.requires_grad:
            lb.total.backward()
            gn = npr.clip_grad_norm(prm, Cnt['CLIP'])
            opt.step()
        else:
            gn = 0.0
        lf = as_floats(lb)
        losses.append(lf)
        log.debug('stage %d step %d: total %.5f (cls %.5f, l1 %.5f, giou %.5f), |g| %.3e',
                  cfg.stage, step, lf.total, lf.cls, lf.l1, lf.giou, gn)
    prm.zero_grad()
    if losses:
        log.info('stage %d: loss %.4f -> %.4f', cfg.stage, losses[0].total, losses[-1].total)
    return prm, losses


def write_loss_log(fpth, losses, meta=None):
    '''CSV of step, cls, l1, giou, total; `meta` goes on a leading comment line'''
    with open(fspath(fpth), 'w', newline='') as f:
        if meta:
            f.write(f'# {json.dumps(meta, sort_keys=True)}\n')
        w = csv.writer(f, lineterminator='\n')
        w.writerow(['step', 'cls', 'l1', 'giou', 'total'])
        for i, lb in enumerate(losses):
            w.writerow([i, repr(lb.cls), repr(lb.l1), repr(lb.giou), repr(lb.total)])
