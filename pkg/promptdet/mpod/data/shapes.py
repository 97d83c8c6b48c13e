"""
Deterministic synthetic scenes: anti-aliased coloured shapes over a
low-frequency noise background, with exact rasterisation bounds as boxes.
"""
import logging
from collections import namedtuple

import numpy as np
import scipy.ndimage as ndi

from .. import resources
from ..boxes import Box, iou
from ..errs import ConfigError

log = logging.getLogger(__name__)

MASK64 = 0xFFFFFFFFFFFFFFFF
# > supersampling factor of the rasteriser
SSMP = 4
# > half-size range of objects in pixels
RPX = (5, 12)
# > salts deriving the seeds of further splits from the master seed
SPLIT_SALT = {'train': 0, 'test': 0x7E57}

CategorySpec = namedtuple('CategorySpec', 'name shape color_lo color_hi aliases',
                          defaults=((0.1, 0.1, 0.1), (0.9, 0.9, 0.9), ()))
Annotation = namedtuple('Annotation', 'category box')
SyntheticScene = namedtuple('SyntheticScene', 'image annotations seed index')


def splitmix64(x):
    '''one step of the SplitMix64 generator'''
    z = (int(x) + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def scene_seed(master, index):
    return splitmix64((int(master) + splitmix64(index)) & MASK64)


class DatasetSpec(
        namedtuple('DatasetSpec', 'categories scenes min_objects max_objects noise seed part',
                   defaults=(1, 4, 0.15, resources.get_mpod_constants()['SEED'], 'train'))):
    """
    Recipe of a synthetic dataset: categories (CategorySpec), number of scenes,
    objects per scene, background noise amplitude and the master seed.
    """
    __slots__ = ()

    def check(self):
        if len(self.categories) < 2:
            raise ConfigError('a dataset needs at least two categories', 'dataset.categories')
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ConfigError(f'duplicate category names in {names}', 'dataset.categories')
        for c in self.categories:
            if c.shape not in resources.SHAPES:
                raise ConfigError(f'unknown shape {c.shape!r} of {c.name}; use one of'
                                  f' {resources.SHAPES}', 'dataset.categories')
        if self.scenes < 1:
            raise ConfigError(f'scene count must be positive, got {self.scenes}', 'dataset.scenes')
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError(f'need 1 <= min_objects <= max_objects, got {self.min_objects},'
                              f' {self.max_objects}', 'dataset.min_objects')
        if self.noise < 0:
            raise ConfigError(f'noise amplitude must be >= 0, got {self.noise}', 'dataset.noise')
        return self

    @property
    def names(self):
        return [c.name for c in self.categories]

    def aliases(self):
        '''alternative name of each category (the name itself when it has none)'''
        return [c.aliases[0] if c.aliases else c.name for c in self.categories]

    def split(self, name, scenes=None):
        '''the same recipe under a seed derived for split `name`'''
        if name not in SPLIT_SALT:
            raise ConfigError(f'unknown split {name!r}', 'split')
        if name == self.part:
            return self if scenes is None else self._replace(scenes=scenes)
        if self.part != 'train':
            raise ConfigError(f'splits derive from the train recipe, not {self.part!r}', 'split')
        seed = self.seed if name == 'train' else splitmix64(self.seed ^ SPLIT_SALT[name])
        if scenes is None:
            scenes = self.scenes if name == 'train' else max(1, self.scenes // 5)
        return self._replace(seed=seed, scenes=scenes, part=name)

    def to_dict(self):
        return {
            'categories': [{
                'name': c.name, 'shape': c.shape, 'color_lo': list(c.color_lo),
                'color_hi': list(c.color_hi), 'aliases': list(c.aliases)} for c in self.categories],
            'scenes': self.scenes, 'min_objects': self.min_objects,
            'max_objects': self.max_objects, 'noise': self.noise, 'seed': self.seed,
            'part': self.part}

    @classmethod
    def from_dict(cls, raw):
        try:
            cats = [
                CategorySpec(c['name'], c['shape'], tuple(c.get('color_lo', (0.1,) * 3)),
                             tuple(c.get('color_hi', (0.9,) * 3)), tuple(c.get('aliases', ())))
                for c in raw['categories']]
            return cls(cats, int(raw['scenes']), int(raw.get('min_objects', 1)),
                       int(raw.get('max_objects', 4)), float(raw.get('noise', 0.15)),
                       int(raw.get('seed', resources.get_mpod_constants()['SEED'])),
                       raw.get('part', 'train')).check()
        except (KeyError, TypeError) as exc:
            raise ConfigError(f'malformed dataset spec ({exc!r})', 'dataset') from None


# ======================================================================
# presets
# ----------------------------------------------------------------------


def reference_spec(scenes=500, seed=None):
    '''five shape categories; the test split (100 scenes) is `split('test')`'''
    cats = [
        CategorySpec('square', 'square', aliases=('box',)),
        CategorySpec('disk', 'disk', aliases=('circle',)),
        CategorySpec('triangle', 'triangle', aliases=('wedge',)),
        CategorySpec('cross', 'cross', aliases=('plus sign',)),
        CategorySpec('ring', 'ring', aliases=('annulus',))]
    seed = resources.get_mpod_constants()['SEED'] if seed is None else seed
    return DatasetSpec(cats, scenes, 1, 4, 0.15, seed).check()


def small_spec(ncat=3, scenes=12, seed=None):
    '''the first `ncat` reference categories over a few scenes'''
    ref = reference_spec(seed=seed)
    return ref._replace(categories=ref.categories[:ncat], scenes=scenes).check()


def fine_grained_spec(scenes=500, seed=None):
    '''two square categories told apart only by their colour band, plus disks'''
    cats = [
        CategorySpec('red square', 'square', (0.7, 0.05, 0.05), (0.95, 0.3, 0.3), ('red box',)),
        CategorySpec('blue square', 'square', (0.05, 0.05, 0.7), (0.3, 0.3, 0.95),
                     ('blue box',)),
        CategorySpec('disk', 'disk', aliases=('circle',))]
    seed = resources.get_mpod_constants()['SEED'] if seed is None else seed
    return DatasetSpec(cats, scenes, 1, 4, 0.15, seed).check()


# ======================================================================
# rasteriser
# ----------------------------------------------------------------------


def shape_mask(kind, dx, dy, r):
    '''inside test of a shape of half-size r at offsets (dx, dy) from its centre'''
    ax, ay = np.abs(dx), np.abs(dy)
    if kind == 'square':
        return (ax <= r) & (ay <= r)
    if kind == 'disk':
        return dx**2 + dy**2 <= r**2
    if kind == 'triangle':
        return (dy <= r) & (ax <= (dy+r) / 2)
    if kind == 'cross':
        arm = r / 3
        return ((ax <= r) & (ay <= arm)) | ((ay <= r) & (ax <= arm))
    if kind == 'ring':
        d2 = dx**2 + dy**2
        return (d2 <= r**2) & (d2 >= (0.55 * r)**2)
    raise ValueError(f'unknown shape kind {kind!r}')


def coverage(kind, cx, cy, r, sz):
    '''
    Fraction of every pixel of an sz x sz image covered by the shape,
    from an SSMP x SSMP supersampled inside test (pixel units).
    '''
    s = (np.arange(sz * SSMP) + 0.5) / SSMP
    X, Y = np.meshgrid(s, s)
    m = shape_mask(kind, X - cx, Y - cy, r).astype(np.float64)
    return m.reshape(sz, SSMP, sz, SSMP).mean(axis=(1, 3))


def coverage_box(cov):
    '''exact bounds of the non-zero coverage as a normalised Box'''
    sz = cov.shape[0]
    rows = np.flatnonzero(cov.any(axis=1))
    cols = np.flatnonzero(cov.any(axis=0))
    x0, x1 = cols[0], cols[-1] + 1
    y0, y1 = rows[0], rows[-1] + 1
    return Box((x0+x1) / (2*sz), (y0+y1) / (2*sz), (x1-x0) / sz, (y1-y0) / sz)


def background(rng, sz, amp):
    '''grey field with smooth, low-frequency colour noise'''
    n = ndi.gaussian_filter(rng.normal(size=(sz, sz, 3)), sigma=(sz / 10, sz / 10, 0),
                            mode='wrap')
    n /= max(np.abs(n).max(), 1e-12)
    return np.clip(0.5 + amp*n, 0, 1)


def generate_scene(spec, index, sz=64, max_tries=50):
    '''
    Scene `index` of the dataset: a pure function of (spec, index).
    Objects are placed by rejection sampling to keep their boxes apart (IoU <= 0.3),
    accepting an overlap once the tries run out.
    '''
    if not 0 <= index < spec.scenes:
        raise IndexError(f'scene {index} outside [0, {spec.scenes})')
    seed = scene_seed(spec.seed, index)
    rng = np.random.default_rng(seed)
    img = background(rng, sz, spec.noise)
    nobj = int(rng.integers(spec.min_objects, spec.max_objects + 1))
    anns = []
    for _ in range(nobj):
        cat = spec.categories[int(rng.integers(len(spec.categories)))]
        for _ in range(max_tries):
            r = rng.uniform(*RPX)
            cx, cy = rng.uniform(r + 1, sz - r - 1, size=2)
            cov = coverage(cat.shape, cx, cy, r, sz)
            if not cov.any():
                continue
            b = coverage_box(cov)
            if all(iou(b, a.box) <= 0.3 for a in anns):
                break
        col = rng.uniform(cat.color_lo, cat.color_hi)
        img = img * (1 - cov[..., None]) + col * cov[..., None]
        anns.append(Annotation(cat.name, b))
    return SyntheticScene(img, anns, seed, index)


def iter_scenes(spec, start=0, stop=None):
    '''scenes of a spec streamed without touching the disk'''
    stop = spec.scenes if stop is None else min(stop, spec.scenes)
    for i in range(start, stop):
        yield generate_scene(spec, i)
