"""Per-category cache of instance-level visual prompts and its inference-time averaging."""
import json
import logging
from os import fspath

import numpy as np
from tqdm.auto import tqdm

from .. import resources
from ..errs import DatasetError
from ..nn import tensor as T
from .ptypes import VisualPrompt
from .visenc import encode_visual

log = logging.getLogger(__name__)


def instance_id(scene_index, ann_index):
    return f'{scene_index:06d}-{ann_index:02d}'


class PromptCache:
    """
    Map category name -> list of (instance id, vector (d,)) in insertion order.
    """
    def __init__(self, dim, meta=None):
        self.dim = int(dim)
        self.version = resources.CACHE_VERSION
        self.entries = {}
        self.meta = dict(meta or {})

    def add(self, name, iid, vec):
        vec = np.array(vec, dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f'cache entry {name}/{iid} has shape {vec.shape}, expected'
                             f' ({self.dim},)')
        if not np.all(np.isfinite(vec)):
            raise ValueError(f'cache entry {name}/{iid} is not finite')
        ent = self.entries.setdefault(name, [])
        if any(i == iid for i, _ in ent):
            raise KeyError(f'duplicate instance {iid} in category {name}')
        ent.append((iid, vec))

    def __getitem__(self, name):
        try:
            return self.entries[name]
        except KeyError:
            raise KeyError(f'category {name!r} is not in the prompt cache') from None

    def __contains__(self, name):
        return name in self.entries

    def __len__(self):
        return sum(len(v) for v in self.entries.values())

    def categories(self):
        return sorted(self.entries)

    def check_covers(self, names):
        '''raise DatasetError unless every category in `names` has cached prompts'''
        missing = [k for k in names if k not in self.entries]
        if missing:
            raise DatasetError(f'no cached prompts of {missing}; rebuild the cache on a dataset'
                               ' holding every category')
        return self

    # ------------------------------------------------------------------
    def to_dict(self):
        out = {
            'version': self.version, 'dim': self.dim, 'entries': {
                k: [{'id': i, 'vec': v.tolist()} for i, v in self.entries[k]]
                for k in sorted(self.entries)}}
        if self.meta:
            out['meta'] = self.meta
        return out

    def save(self, fpth):
        with open(fspath(fpth), 'w') as f:
            json.dump(self.to_dict(), f, sort_keys=True)
        log.info('saved prompt cache (%d instances) to %s', len(self), fpth)

    @classmethod
    def from_dict(cls, raw, name='cache'):
        if raw.get('version') != resources.CACHE_VERSION:
            raise DatasetError(f'{name}: unsupported cache version {raw.get("version")}')
        out = cls(raw['dim'], raw.get('meta'))
        for k, ents in raw['entries'].items():
            if not ents:
                raise DatasetError(f'{name}: category {k} has no entries')
            for e in ents:
                out.add(k, e['id'], e['vec'])
        return out

    @classmethod
    def load(cls, fpth):
        with open(fspath(fpth)) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as exc:
                raise DatasetError(f'{fpth}: corrupt prompt cache ({exc})') from None
        return cls.from_dict(raw, fpth)


def build_cache(dataset, prm, Cnt, meta=None):
    '''
    Encode every annotated instance of the dataset with the visual prompt encoder.
    Instances are keyed '{scene:06d}-{annotation:02d}' and inserted in dataset order.
    '''
    from ..det.pipe import image_features

    out = PromptCache(Cnt['D'], meta)
    nscn = 0
    with T.no_grad():
        for scn in tqdm(dataset, desc='prompt cache', unit='scene',
                        disable=log.getEffectiveLevel() > logging.INFO):
            feats = image_features(scn.image, prm, Cnt)
            for j, ann in enumerate(scn.annotations):
                iid = instance_id(scn.index, j)
                v = encode_visual(ann.box, feats, prm, Cnt, ann.category, iid)
                out.add(ann.category, iid, v.embedding.data)
            nscn += 1
    if not nscn:
        raise ValueError('cannot build a prompt cache from an empty dataset')
    log.info('prompt cache: %d instances in %d categories from %d scenes', len(out),
             len(out.entries), nscn)
    return out


def aggregate(cache, name, n, rng):
    '''
    Mean of min(n, available) cached prompts of category `name`,
    drawn uniformly without replacement.
    '''
    ent = cache[name]
    if n < 1:
        raise ValueError(f'visual prompt count must be >= 1, got {n}')
    if n > len(ent):
        log.warning('category %s has %d cached prompts, %d requested', name, len(ent), n)
    k = min(n, len(ent))
    idx = rng.choice(len(ent), size=k, replace=False)
    vec = np.mean([ent[i][1] for i in idx], axis=0)
    return VisualPrompt(name, T.Tensor(vec), f'aggregated({k})')
