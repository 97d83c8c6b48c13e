"""auxiliary functions: parameter initialisation, run configuration and artefact helpers."""
import hashlib
import json
import logging
import os
from collections import namedtuple
from pathlib import Path

import numpy as np

from . import resources
from .data import dsio
from .data.shapes import DatasetSpec, iter_scenes, reference_spec
from .det.pipe import init_detector
from .errs import ConfigError, PrerequisiteError
from .nn.params import ParamStore
from .prompts.cache import PromptCache, build_cache
from .prompts.fusion import FUSIONS, init_fusion
from .prompts.txtenc import init_text
from .prompts.visenc import init_vpe
from .train.stages import (
    PROMPT_MODES,
    StageConfig,
    run_stage,
    stage_config,
    stage_rng,
    write_loss_log,
)

log = logging.getLogger(__name__)

# > file names of the artefacts inside the output directory
CKPT = 'stage{}.pdps'
CACHE = 'prompt_cache.json'
LOSSES = 'stage{}_losses.csv'
DETS = 'detections.jsonl'
METRICS = 'metrics.json'
PRCSV = 'pr_curve.csv'
ABLATION = 'ablation.csv'
GRADCHECK = 'gradcheck.json'
RUNLOG = 'run.log'
CKPT_META = 'stage{}.json'


def create_dir(pth):
    if not os.path.exists(pth):
        os.makedirs(pth)


def init_params(Cnt, seed=None):
    '''
    Fresh parameters of the whole model: detector, text encoder,
    visual prompt encoder and fusion module, drawn in that order.
    '''
    if Cnt['D'] % Cnt['NHEAD']:
        raise ConfigError(f"width {Cnt['D']} is not divisible by {Cnt['NHEAD']} heads", 'Cnt.NHEAD')
    if Cnt['D'] % 8:
        raise ConfigError(f"width {Cnt['D']} must be divisible by 8", 'Cnt.D')
    rng = np.random.default_rng(Cnt['SEED'] if seed is None else seed)
    prm = ParamStore()
    init_detector(prm, Cnt, rng)
    init_text(prm, Cnt, rng)
    init_vpe(prm, Cnt, rng)
    init_fusion(prm, Cnt, rng)
    log.info('initialised %d parameters in %d tensors', prm.nparams(), len(prm))
    return prm


def get_mpodparams(cfg=None):
    '''
    Get the constants and stage settings in one dictionary, with the `Cnt`
    and `stages` blocks of a configuration dictionary applied on top.
    '''
    cfg = cfg or {}
    Cnt = resources.get_mpod_constants()
    for k, v in (cfg.get('Cnt') or {}).items():
        if k not in Cnt:
            raise ConfigError(f'unknown constant {k}', f'Cnt.{k}')
        Cnt[k] = tuple(v) if isinstance(Cnt[k], tuple) else v
    if not Cnt['TAU'] > 0:
        raise ConfigError(f"temperature must be positive, got {Cnt['TAU']}", 'Cnt.TAU')
    stages = {}
    for s in (1, 2, 3):
        raw = (cfg.get('stages') or {}).get(str(s), (cfg.get('stages') or {}).get(s))
        stages[s] = stage_config(s, lr=Cnt['LR']) if raw is None else \
            StageConfig.from_dict(dict({'lr': Cnt['LR']}, **raw), s)
    return {'Cnt': Cnt, 'stages': stages}


# ======================================================================
# run configuration
# ----------------------------------------------------------------------

RunConfig = namedtuple(
    'RunConfig', 'dataset stages train_stages prompt_mode n fusion tau conf_threshold'
    ' checkpoint cache out seed Cnt raw')

DEFAULTS = {
    'dataset': None, 'stages': {}, 'train_stages': [1, 2, 3], 'prompt_mode': 'text', 'n': 8,
    'fusion': 'attn', 'tau': None, 'conf_threshold': None, 'checkpoint': None, 'cache': None,
    'out': 'mpod_out', 'seed': None, 'Cnt': {}, 'ablate': {}}


def parse_value(s):
    '''JSON when it parses, else the plain string'''
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def apply_overrides(raw, sets):
    '''apply `a.b.c=value` overrides in order; the last one wins'''
    out = json.loads(json.dumps(raw))
    for s in sets or ():
        if '=' not in s:
            raise ConfigError(f'override {s!r} is not of the form key=value', 'set')
        key, val = s.split('=', 1)
        parts = key.strip().split('.')
        node = out
        for p in parts[:-1]:
            if not isinstance(node.setdefault(p, {}), dict):
                raise ConfigError(f'{p} is not a mapping', key)
            node = node[p]
        node[parts[-1]] = parse_value(val)
    return out


def load_config(fpth=None, sets=None, seed=None, out=None):
    '''
    Read the JSON run configuration (defaults when `fpth` is None), then apply
    the dotted overrides and the --seed/--out flags, which all win over the file.
    '''
    raw = dict(DEFAULTS)
    if fpth is not None:
        fpth = Path(fpth)
        if not fpth.is_file():
            raise PrerequisiteError(f'configuration file not found: {fpth}')
        with open(fpth) as f:
            try:
                raw.update(json.load(f))
            except json.JSONDecodeError as exc:
                raise ConfigError(f'not valid JSON ({exc})', str(fpth)) from None
    raw = apply_overrides(raw, sets)
    if seed is not None:
        raw['seed'] = seed
    if out is not None:
        raw['out'] = str(out)
    return run_config(raw)


def run_config(raw):
    '''validate a raw configuration dictionary into a RunConfig'''
    extra = set(raw) - set(DEFAULTS)
    if extra:
        raise ConfigError(f'unknown fields {sorted(extra)}', 'config')
    raw = dict(DEFAULTS, **raw)
    params = get_mpodparams(raw)
    Cnt = params['Cnt']
    if raw['seed'] is not None:
        if not isinstance(raw['seed'], int) or raw['seed'] < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {raw['seed']!r}", 'seed')
        Cnt['SEED'] = raw['seed']
    if raw['tau'] is not None:
        if not raw['tau'] > 0:
            raise ConfigError(f"temperature must be positive, got {raw['tau']}", 'tau')
        Cnt['TAU'] = raw['tau']
    if raw['conf_threshold'] is not None:
        Cnt['CONF_THR'] = raw['conf_threshold']
    if raw['prompt_mode'] not in PROMPT_MODES[:3]:
        raise ConfigError(f"unknown prompt mode {raw['prompt_mode']!r}", 'prompt_mode')
    if not isinstance(raw['n'], int) or raw['n'] < 1:
        raise ConfigError(f"visual prompt count must be a positive integer, got {raw['n']!r}", 'n')
    if raw['fusion'] not in FUSIONS:
        raise ConfigError(f"unknown fusion strategy {raw['fusion']!r}", 'fusion')
    for s in raw['train_stages']:
        if s not in (1, 2, 3):
            raise ConfigError(f'unknown stage {s}', 'train_stages')
    for k in ('dataset', 'checkpoint', 'cache'):
        if raw[k] is not None and not Path(raw[k]).exists():
            raise PrerequisiteError(f'{k} not found: {raw[k]}')
    return RunConfig(raw['dataset'], params['stages'], list(raw['train_stages']),
                     raw['prompt_mode'], raw['n'], raw['fusion'], Cnt['TAU'], Cnt['CONF_THR'],
                     raw['checkpoint'], raw['cache'], Path(raw['out']), Cnt['SEED'], Cnt, raw)


def config_hash(raw):
    '''SHA-256 of the canonical JSON of a configuration'''
    return hashlib.sha256(json.dumps(raw, sort_keys=True, default=str).encode('utf-8')).hexdigest()


def artefact_meta(rc):
    '''stamp embedded in every artefact'''
    return {'config_hash': config_hash(rc.raw), 'seed': rc.seed}


# ======================================================================
# datasets
# ----------------------------------------------------------------------


def get_spec(rc):
    '''
    The DatasetSpec of a run: from an exported dataset folder, a spec JSON file
    or, without either, the reference spec under the run seed.
    '''
    if rc.dataset is None:
        return reference_spec(seed=rc.seed)
    pth = Path(rc.dataset)
    if pth.is_dir():
        return dsio.dataset_spec(pth)
    with open(pth) as f:
        try:
            return DatasetSpec.from_dict(json.load(f))
        except json.JSONDecodeError as exc:
            raise ConfigError(f'not valid JSON ({exc})', 'dataset') from None


def get_scenes(rc, split='train'):
    '''scenes of a split: read from an exported folder (train) or generated'''
    spec = get_spec(rc)
    if split == 'train' and rc.dataset is not None and Path(rc.dataset).is_dir():
        return list(dsio.load_dataset(rc.dataset))
    return list(iter_scenes(spec.split(split)))


def require(pth, what):
    '''the path of a prerequisite artefact; PrerequisiteError naming it when missing'''
    pth = Path(pth)
    if not pth.is_file():
        raise PrerequisiteError(f'{what} not found: {pth}')
    return pth


# ======================================================================
# checkpoints and staged training
# ----------------------------------------------------------------------


def save_checkpoint(prm, outpath, stage, meta):
    '''parameter store of a stage with a JSON sidecar holding the artefact stamp'''
    fpth = Path(outpath) / CKPT.format(stage)
    prm.save(fpth)
    with open(Path(outpath) / CKPT_META.format(stage), 'w') as f:
        json.dump(dict(meta, stage=stage, frozen=sorted(prm.frozen)), f, indent=1, sort_keys=True)
    log.info('stage %d checkpoint: %s', stage, fpth)
    return fpth


def latest_checkpoint(rc, need=1, outpath=None):
    '''
    The configured checkpoint, else the one of the latest stage >= `need`
    found in the output folder.
    '''
    if rc.checkpoint is not None:
        return require(rc.checkpoint, 'checkpoint')
    outpath = Path(outpath or rc.out)
    for s in (3, 2, 1):
        if s >= need and (outpath / CKPT.format(s)).is_file():
            return outpath / CKPT.format(s)
    return require(outpath / CKPT.format(need), f'stage {need} checkpoint')


def load_prompt_cache(rc, outpath=None):
    '''the configured prompt cache, else the one in the output folder'''
    fpth = rc.cache if rc.cache is not None else Path(outpath or rc.out) / CACHE
    return PromptCache.load(require(fpth, 'prompt cache'))


def train_stages(rc, stages, scenes, names, outpath=None, cfgs=None, prm=None, cache=None):
    '''
    Run consecutive training stages in order with a checkpoint after each one.

    Stage I starts from fresh parameters, later stages from the checkpoint of
    the preceding stage (the configured one, else the one in `outpath`).
    The prompt cache needed by Stage III is rebuilt right after a Stage II of
    the same call, otherwise it is read from the configuration or `outpath`.

    Args:
      rc: RunConfig.
      stages: stage numbers, e.g. [1, 2, 3] or [2].
      outpath: folder of the checkpoints, cache and loss logs (default `rc.out`).
      cfgs: stage number -> StageConfig (default `rc.stages`).
    Returns:
      (prm, cache)
    '''
    stages = sorted(set(stages))
    if not stages or stages != list(range(stages[0], stages[-1] + 1)):
        raise ConfigError(f'stages must be consecutive, got {stages}', 'train_stages')
    outpath = Path(outpath or rc.out)
    create_dir(outpath)
    cfgs = cfgs or rc.stages
    meta = artefact_meta(rc)

    if prm is None:
        if stages[0] == 1:
            prm = init_params(rc.Cnt)
        else:
            prev = Path(rc.checkpoint) if rc.checkpoint is not None else \
                outpath / CKPT.format(stages[0] - 1)
            prm = ParamStore.load(require(prev, f'stage {stages[0] - 1} checkpoint'))

    for s in stages:
        if s == 3 and cache is None:
            if 2 in stages:
                cache = build_cache(scenes, prm, rc.Cnt, meta)
                cache.save(outpath / CACHE)
            else:
                cache = load_prompt_cache(rc, outpath)
        log.info('stage %d of %s', s, stages)
        prm, losses = run_stage(cfgs[s], prm, scenes, names, rc.Cnt, stage_rng(rc.seed, s), cache)
        save_checkpoint(prm, outpath, s, meta)
        write_loss_log(outpath / LOSSES.format(s), losses, meta)
    return prm, cache
