"""
Ablation sweeps: visual prompt count, frozen vs joint Stage II, learned fusion vs
averaging, exemplars per category in Stage II, prompts per step in Stage III and
text prompting under alias category names.
"""
import csv
import json
import logging
from collections import namedtuple
from numbers import Integral
from os import fspath
from pathlib import Path

import numpy as np

from . import mpodaux
from .det.infer import build_prompts, detect_scenes
from .errs import ConfigError
from .metrics.apeval import evaluate
from .nn.params import ParamStore
from .prompts.cache import PromptCache, build_cache
from .train.stages import stage_config

log = logging.getLogger(__name__)

# > one row of the sweep; n is 0 for textual prompting, fusion is empty unless multimodal
Cell = namedtuple('Cell', 'prompt_mode n frozen fusion stage2_m stage3_count')
COLUMNS = Cell._fields + ('ap50', 'map')

ABLATE_DEFAULTS = {
    'visual_n': [1, 4, 8, 16, 32], 'stage2_m': [1, 4, 8], 'stage3_count': [1, 'random', 32],
    'eval_n': 32, 'aliases': True}


def ablate_settings(raw=None):
    '''the `ablate` block of a configuration over the defaults'''
    raw = raw or {}
    extra = set(raw) - set(ABLATE_DEFAULTS)
    if extra:
        raise ConfigError(f'unknown fields {sorted(extra)}', 'ablate')
    acfg = dict(ABLATE_DEFAULTS, **raw)
    for k in ('visual_n', 'stage2_m'):
        if not acfg[k] or not all(isinstance(v, Integral) and v >= 1 for v in acfg[k]):
            raise ConfigError(f'expected a list of positive integers, got {acfg[k]!r}',
                              f'ablate.{k}')
    if not acfg['stage3_count'] or not all(
            v == 'random' or (isinstance(v, Integral) and v >= 1) for v in acfg['stage3_count']):
        raise ConfigError(f"expected positive integers or 'random', got {acfg['stage3_count']!r}",
                          'ablate.stage3_count')
    if not isinstance(acfg['eval_n'], Integral) or acfg['eval_n'] < 1:
        raise ConfigError(f"expected a positive integer, got {acfg['eval_n']!r}", 'ablate.eval_n')
    return acfg


def sweep_grid(acfg, stage2_m=1, stage3_count=32):
    '''
    Ordered configurations of the sweep, each one once.

    Args:
      acfg: sweep settings (see `ablate_settings`).
      stage2_m: exemplars per category of the reference Stage II.
      stage3_count: prompts per step of the reference Stage III.
    '''
    n = acfg['eval_n']
    m0, c0 = stage2_m, stage3_count
    cells = [Cell('text', 0, True, '', m0, c0)]
    cells += [Cell('visual', v, True, '', m0, c0) for v in acfg['visual_n']]
    cells.append(Cell('multimodal', n, True, 'attn', m0, c0))
    # > frozen vs jointly trained detector in Stage II
    cells += [Cell('visual', n, frz, '', m0, c0) for frz in (True, False)]
    # > learned fusion vs averaging
    cells += [Cell('multimodal', n, True, fu, m0, c0) for fu in ('attn', 'avg')]
    cells += [Cell('visual', n, True, '', m, c0) for m in acfg['stage2_m']]
    cells += [Cell('multimodal', n, True, 'attn', m0, c) for c in acfg['stage3_count']]
    if acfg['aliases']:
        cells += [Cell('text-alias', 0, True, '', m0, c0), Cell('visual', n, True, '', m0, c0)]
    return list(dict.fromkeys(cells))


def cell_rng(seed, cell):
    '''generator of the prompt draws of one cell, independent of the grid around it'''
    key = int(mpodaux.config_hash(cell._asdict())[:12], 16)
    return np.random.default_rng([int(seed), key])


# ======================================================================
# trained variants
# ----------------------------------------------------------------------


class Variants:
    """
    Checkpoints and caches the cells are evaluated with, trained on first use
    into subfolders of `outpath` and reused when already present there.
    """
    def __init__(self, rc, scenes, names, outpath):
        self.rc = rc
        self.scenes = scenes
        self.names = names
        self.outpath = Path(outpath)
        self._mem = {}

    def _train(self, key, stage, cfg, prm, cache=None):
        fldr = self.outpath / key
        ckpt = fldr / mpodaux.CKPT.format(stage)
        if ckpt.is_file():
            log.info('reusing %s', ckpt)
            return ParamStore.load(ckpt)
        prm, _ = mpodaux.train_stages(self.rc, [stage], self.scenes, self.names, outpath=fldr,
                                      cfgs={stage: cfg}, prm=prm.copy(), cache=cache)
        return prm

    def stage1(self):
        if 's1' not in self._mem:
            main = self.rc.out / mpodaux.CKPT.format(1)
            if main.is_file():
                log.info('reusing %s', main)
                self._mem['s1'] = ParamStore.load(main)
            else:
                self._mem['s1'] = self._train('s1', 1, self.rc.stages[1], mpodaux.init_params(
                    self.rc.Cnt))
        return self._mem['s1']

    def stage2(self, frozen, m):
        '''(parameters, prompt cache) after Stage II'''
        key = f"s2-{'frozen' if frozen else 'joint'}-m{m}"
        if key not in self._mem:
            base = self.rc.stages[2]
            if frozen:
                cfg = base._replace(instances_per_category=m).check()
            else:
                cfg = stage_config(2, frozen_detector=False, epochs=base.epochs, lr=base.lr,
                                   instances_per_category=m, max_steps=base.max_steps)
            prm = self._train(key, 2, cfg, self.stage1())
            cpth = self.outpath / key / mpodaux.CACHE
            if cpth.is_file():
                cache = PromptCache.load(cpth)
            else:
                cache = build_cache(self.scenes, prm, self.rc.Cnt, mpodaux.artefact_meta(self.rc))
                cache.save(cpth)
            self._mem[key] = (prm, cache)
        return self._mem[key]

    def stage3(self, frozen, m, count):
        key = f"s3-{'frozen' if frozen else 'joint'}-m{m}-c{count}"
        if key not in self._mem:
            prm, cache = self.stage2(frozen, m)
            cfg = self.rc.stages[3]._replace(fusion_train_prompt_count=count).check()
            self._mem[key] = (self._train(key, 3, cfg, prm, cache), cache)
        return self._mem[key]

    def for_cell(self, cell):
        '''(parameters, cache) a cell is evaluated with'''
        if cell.prompt_mode == 'multimodal' and cell.fusion == 'attn':
            return self.stage3(cell.frozen, cell.stage2_m, cell.stage3_count)
        return self.stage2(cell.frozen, cell.stage2_m)


# ======================================================================
# sweep
# ----------------------------------------------------------------------


def evaluate_cell(cell, prm, cache, scenes, spec, Cnt, rng):
    '''APResult of one cell on `scenes`'''
    mode = cell.prompt_mode
    prompts = build_prompts(mode, spec.names, prm, Cnt, cache=cache, n=max(cell.n, 1), rng=rng,
                            fusion=cell.fusion or 'attn',
                            text_names=spec.aliases() if mode == 'text-alias' else None)
    dets = detect_scenes(scenes, prompts, spec.names, prm, Cnt)
    return evaluate(dets, scenes, spec.names, Cnt['IOU_THRS'])


def run_ablation(rc, outpath=None, acfg=None):
    '''
    Evaluate every cell of the sweep on the test split and write the CSV report.
    Returns the list of rows (dictionaries keyed by COLUMNS) in grid order.
    '''
    outpath = Path(outpath or rc.out)
    mpodaux.create_dir(outpath)
    acfg = acfg or ablate_settings(rc.raw.get('ablate'))
    spec = mpodaux.get_spec(rc)
    scenes = mpodaux.get_scenes(rc, 'train')
    test = mpodaux.get_scenes(rc, 'test')
    grid = sweep_grid(acfg, rc.stages[2].instances_per_category,
                      rc.stages[3].fusion_train_prompt_count)
    log.info('ablation: %d configurations', len(grid))

    variants = Variants(rc, scenes, spec.names, outpath / 'ablate')
    rows = []
    for cell in grid:
        prm, cache = variants.for_cell(cell)
        res = evaluate_cell(cell, prm, cache, test, spec, rc.Cnt, cell_rng(rc.seed, cell))
        rows.append(dict(cell._asdict(), ap50=res.ap50, map=res.map))
        log.info('%s: AP50 %.4f, mAP %.4f', cell, res.ap50, res.map)
    write_ablation(outpath / mpodaux.ABLATION, rows, mpodaux.artefact_meta(rc))
    return rows


def write_ablation(fpth, rows, meta=None):
    with open(fspath(fpth), 'w', newline='') as f:
        if meta:
            f.write(f'# {json.dumps(meta, sort_keys=True)}\n')
        w = csv.writer(f, lineterminator='\n')
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([
                r['prompt_mode'], r['n'], int(r['frozen']), r['fusion'], r['stage2_m'],
                r['stage3_count'],
                repr(float(r['ap50'])),
                repr(float(r['map']))])
    log.info('ablation report: %s', fpth)


def read_ablation(fpth):
    '''rows of an ablation report as dictionaries of strings'''
    with open(fspath(fpth), newline='') as f:
        return list(csv.DictReader(ln for ln in f if not ln.startswith('#')))
