"""
Command line of the prompt detector:

    mpod [--config PATH] [--seed N] [--out DIR] [--set key=value ...] <command>

Commands: gen-data, train, build-cache, detect, eval, ablate, gradcheck.
Exit status: 0 success, 2 invalid configuration, 3 missing prerequisite, 4 failed check.
"""
import argparse
import json
import logging
import sys

import numpy as np
from tqdm.contrib.logging import logging_redirect_tqdm

from . import ablate, mpodaux, resources
from .data import dsio
from .data.shapes import iter_scenes
from .det.infer import build_prompts, detect_scenes
from .det.pipe import write_detections
from .errs import CheckFailure, ConfigError, DatasetError, PrerequisiteError
from .metrics.apeval import evaluate, write_pr_csv, write_report
from .nn import gradchk
from .nn.params import ParamStore
from .prompts.cache import build_cache
from .train import stages as trs

log = logging.getLogger(__name__)

# > gradient check defaults
GRAD_TOL = 1e-4
GRAD_EPS = 1e-3

EXIT_OK, EXIT_CONFIG, EXIT_PREREQ, EXIT_CHECK = 0, 2, 3, 4


# ======================================================================
# commands
# ----------------------------------------------------------------------


def cmd_gen_data(rc, args):
    '''export the scenes of a split of the configured dataset spec'''
    spec = mpodaux.get_spec(rc).split(args.split)
    fldr = rc.out / ('dataset' if args.split == 'train' else f'dataset_{args.split}')
    return dsio.export_dataset(spec, fldr, mpodaux.artefact_meta(rc))


def cmd_train(rc, args):
    '''run the requested stages in order, checkpointing after each'''
    spec = mpodaux.get_spec(rc)
    stages = args.stages or rc.train_stages
    prm, _ = mpodaux.train_stages(rc, stages, mpodaux.get_scenes(rc, 'train'), spec.names)
    return prm


def cmd_build_cache(rc, args):
    '''encode every training instance with a Stage II (or later) checkpoint'''
    prm = ParamStore.load(mpodaux.latest_checkpoint(rc, need=2))
    cache = build_cache(mpodaux.get_scenes(rc, 'train'), prm, rc.Cnt, mpodaux.artefact_meta(rc))
    cache.save(rc.out / mpodaux.CACHE)
    return cache


def inference_prompts(rc, spec):
    '''(parameters, prompts) for the configured prompt mode'''
    need = {'text': 1, 'visual': 2, 'multimodal': 3 if rc.fusion == 'attn' else 2}
    prm = ParamStore.load(mpodaux.latest_checkpoint(rc, need=need[rc.prompt_mode]))
    cache = None if rc.prompt_mode == 'text' else mpodaux.load_prompt_cache(rc)
    prompts = build_prompts(rc.prompt_mode, spec.names, prm, rc.Cnt, cache=cache, n=rc.n,
                            rng=np.random.default_rng([rc.seed, 1]), fusion=rc.fusion)
    return prm, prompts


def cmd_detect(rc, args):
    '''detections of a split as JSON lines'''
    spec = mpodaux.get_spec(rc)
    prm, prompts = inference_prompts(rc, spec)
    scenes = mpodaux.get_scenes(rc, args.split)
    dets = detect_scenes(scenes, prompts, spec.names, prm, rc.Cnt)
    write_detections(rc.out / mpodaux.DETS, dets, mpodaux.artefact_meta(rc))
    return dets, scenes


def cmd_eval(rc, args):
    '''detect, then write the metrics report and the precision-recall points'''
    dets, scenes = cmd_detect(rc, args)
    spec = mpodaux.get_spec(rc)
    res = evaluate(dets, scenes, spec.names, rc.Cnt['IOU_THRS'])
    meta = dict(mpodaux.artefact_meta(rc), prompt_mode=rc.prompt_mode, n=rc.n, split=args.split)
    write_report(rc.out / mpodaux.METRICS, res, meta)
    write_pr_csv(rc.out / mpodaux.PRCSV, res, mpodaux.artefact_meta(rc))
    print(f'AP50 {res.ap50:.4f}  mAP {res.map:.4f}')
    return res


def cmd_ablate(rc, args):
    rows = ablate.run_ablation(rc)
    for r in rows:
        print(' '.join(f'{k}={r[k]}' for k in ablate.COLUMNS))
    return rows


# ----------------------------------------------------------------------
# gradient check
# ----------------------------------------------------------------------


def gradcheck_objectives(scn, prm, Cnt, seed):
    '''
    Loss of one training step on the scene `scn` under the freezing of each stage;
    the unfrozen parameters of the three objectives partition the store.

    Returns:
      list of (StageConfig, objective taking the ParamStore)
    '''
    names = list(dict.fromkeys(a.category for a in scn.annotations))
    with_cache = build_cache([scn], prm, Cnt)
    out = []
    for s in (1, 2, 3):
        cfg = trs.stage_config(s, fusion_train_prompt_count=1)

        def f(p, cfg=cfg, s=s):
            lb = trs.step_loss(cfg, [scn], names, p, Cnt, trs.stage_rng(seed, s), with_cache)
            return lb.total

        out.append((cfg, f))
    return out


def run_gradcheck(prm, scn, Cnt, seed, eps=GRAD_EPS, n_samples=None):
    '''relative gradient error of every parameter path'''
    errs = {}
    for cfg, f in gradcheck_objectives(scn, prm, Cnt, seed):
        prm.freeze(cfg.frozen)
        log.info('stage %d objective: %d parameter paths', cfg.stage, len(prm.trainable()))
        errs.update(gradchk.grad_errors(f, prm, eps=eps, n_samples=n_samples,
                                        rng=np.random.default_rng([seed, cfg.stage])))
    prm.freeze(())
    return errs


def module_errors(errs):
    '''maximum error per top-level module (first component of the path)'''
    out = {}
    for k, v in errs.items():
        m = k.split('.')[0]
        out[m] = max(out.get(m, 0.0), v)
    return out


def cmd_gradcheck(rc, args):
    '''finite-difference check of all parameters from a fresh initialisation'''
    prm = mpodaux.init_params(rc.Cnt)
    scn = next(iter_scenes(mpodaux.get_spec(rc), 0, 1))
    errs = run_gradcheck(prm, scn, rc.Cnt, rc.seed, eps=args.eps, n_samples=args.samples)
    mods = module_errors(errs)
    bad = sorted(k for k, v in errs.items() if not v < args.tol)
    report = {
        'eps': args.eps, 'tolerance': args.tol, 'samples': args.samples, 'paths': errs,
        'modules': mods, 'failed': bad, 'meta': mpodaux.artefact_meta(rc)}
    with open(rc.out / mpodaux.GRADCHECK, 'w') as f:
        json.dump(report, f, indent=1, sort_keys=True)
    for m in sorted(mods):
        print(f"{m:12s} {mods[m]:.3e} {'ok' if mods[m] < args.tol else 'FAIL'}")
    if bad:
        worst = max(bad, key=errs.get)
        raise CheckFailure(f'{len(bad)} parameter paths at or above {args.tol:g};'
                           f' worst {worst} ({errs[worst]:.3e})')
    return report


COMMANDS = {
    'gen-data': cmd_gen_data, 'train': cmd_train, 'build-cache': cmd_build_cache,
    'detect': cmd_detect, 'eval': cmd_eval, 'ablate': cmd_ablate, 'gradcheck': cmd_gradcheck}


# ======================================================================
# entry point
# ----------------------------------------------------------------------


def get_parser():
    parser = argparse.ArgumentParser(prog='mpod', description=__doc__.split('\n\n')[0].strip())
    parser.add_argument('--config', help='run configuration (JSON)')
    parser.add_argument('--seed', type=int, help='master seed (overrides the configuration)')
    parser.add_argument('--out', help='output directory (overrides the configuration)')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE', dest='sets',
                        help='override a dotted configuration path (repeatable; values as JSON)')
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='INFO with -v, DEBUG with -vv')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-data', help='export a synthetic dataset split')
    p.add_argument('--split', default='train', choices=('train', 'test'))
    p = sub.add_parser('train', help='run training stages')
    p.add_argument('--stages', type=int, nargs='+', choices=(1, 2, 3),
                   help='stages to run (default: train_stages of the configuration)')
    sub.add_parser('build-cache', help='build the visual prompt cache')
    for name in ('detect', 'eval'):
        p = sub.add_parser(name, help=f'{name} on a split with the configured prompt mode')
        p.add_argument('--split', default='test', choices=('train', 'test'))
    sub.add_parser('ablate', help='ablation sweeps (CSV report)')
    p = sub.add_parser('gradcheck', help='finite-difference check of all gradients')
    p.add_argument('--eps', type=float, default=GRAD_EPS)
    p.add_argument('--tol', type=float, default=GRAD_TOL)
    p.add_argument('--samples', type=int, default=4,
                   help='entries checked per parameter path (0 for all)')
    return parser


def main(argv=None):
    args = get_parser().parse_args(argv)
    if getattr(args, 'samples', None) == 0:
        args.samples = None
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level, format=resources.LOG_FORMAT)
    logging.getLogger('promptdet').setLevel(level)

    fhdl = None
    try:
        rc = mpodaux.load_config(args.config, args.sets, seed=args.seed, out=args.out)
        mpodaux.create_dir(rc.out)
        fhdl = logging.FileHandler(rc.out / mpodaux.RUNLOG, mode='w')
        fhdl.setFormatter(logging.Formatter(resources.RUNLOG_FORMAT))
        logging.getLogger('promptdet').addHandler(fhdl)
        log.info('%s: config hash %s, seed %d, output %s', args.command,
                 mpodaux.config_hash(rc.raw), rc.seed, rc.out)
        with logging_redirect_tqdm():
            COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        log.error('invalid configuration: %s', exc)
        return EXIT_CONFIG
    except (PrerequisiteError, DatasetError) as exc:
        log.error('%s', exc)
        return EXIT_PREREQ
    except CheckFailure as exc:
        log.error('check failed: %s', exc)
        return EXIT_CHECK
    finally:
        if fhdl is not None:
            logging.getLogger('promptdet').removeHandler(fhdl)
            fhdl.close()
    return EXIT_OK


if __name__ == '__main__':
    sys.exit(main())
