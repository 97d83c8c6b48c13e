"""
On-disk datasets: manifest.json plus scenes/NNNNNN.bin (little-endian f64 image)
and scenes/NNNNNN.json (annotations), each record guarded by a SHA-256 digest.
"""
import hashlib
import json
import logging
from pathlib import Path

import numpy as np
from tqdm.auto import tqdm

from .. import resources
from ..boxes import Box
from ..errs import DatasetError, PrerequisiteError
from .shapes import Annotation, DatasetSpec, SyntheticScene, iter_scenes

log = logging.getLogger(__name__)

MANIFEST = 'manifest.json'


def _record_bytes(scn):
    img = np.ascontiguousarray(scn.image, dtype='<f8').tobytes()
    ann = json.dumps({
        'index': scn.index, 'seed': scn.seed, 'shape': list(scn.image.shape),
        'annotations': [{'category': a.category, 'box': list(a.box)} for a in scn.annotations]},
                     sort_keys=True).encode('utf-8')
    return img, ann


def export_dataset(spec, fldr, meta=None):
    '''
    Write all scenes of `spec` under `fldr`; the manifest records the spec,
    its master seed and one digest per record.
    '''
    fldr = Path(fldr)
    (fldr / 'scenes').mkdir(parents=True, exist_ok=True)
    records = []
    for scn in tqdm(iter_scenes(spec), total=spec.scenes, desc='export', unit='scene',
                    disable=log.getEffectiveLevel() > logging.INFO):
        img, ann = _record_bytes(scn)
        name = f'{scn.index:06d}'
        (fldr / 'scenes' / f'{name}.bin').write_bytes(img)
        (fldr / 'scenes' / f'{name}.json').write_bytes(ann)
        records.append({'name': name, 'sha256': hashlib.sha256(img + ann).hexdigest()})
    man = {
        'version': resources.DATASET_VERSION, 'spec': spec.to_dict(), 'seed': spec.seed,
        'records': records}
    if meta:
        man['meta'] = meta
    with open(fldr / MANIFEST, 'w') as f:
        json.dump(man, f, indent=1, sort_keys=True)
    log.info('exported %d scenes to %s', len(records), fldr)
    return fldr / MANIFEST


def read_manifest(fldr):
    fman = Path(fldr) / MANIFEST
    if not fman.is_file():
        raise PrerequisiteError(f'dataset manifest not found: {fman}')
    with open(fman) as f:
        try:
            man = json.load(f)
        except json.JSONDecodeError as exc:
            raise DatasetError(f'{fman}: corrupt manifest ({exc})') from None
    if man.get('version') != resources.DATASET_VERSION:
        raise DatasetError(f'{fman}: unsupported dataset version {man.get("version")}')
    return man


def load_dataset(fldr):
    '''
    Iterate the scenes of an exported dataset, verifying every record;
    a missing, tampered or malformed record raises DatasetError naming it.
    '''
    fldr = Path(fldr)
    man = read_manifest(fldr)
    for rec in man['records']:
        name = rec['name']
        fbin, fjsn = fldr / 'scenes' / f'{name}.bin', fldr / 'scenes' / f'{name}.json'
        try:
            img, ann = fbin.read_bytes(), fjsn.read_bytes()
        except OSError as exc:
            raise DatasetError(f'record {name}: cannot be read ({exc})') from None
        if hashlib.sha256(img + ann).hexdigest() != rec['sha256']:
            raise DatasetError(f'record {name}: digest mismatch (file altered)')
        try:
            raw = json.loads(ann)
            image = np.frombuffer(img, dtype='<f8').reshape(raw['shape']).astype(np.float64)
            anns = [Annotation(a['category'], Box(*a['box'])) for a in raw['annotations']]
            scn = SyntheticScene(image, anns, int(raw['seed']), int(raw['index']))
        except (ValueError, KeyError, TypeError) as exc:
            raise DatasetError(f'record {name}: malformed ({exc})') from None
        yield scn


def dataset_spec(fldr):
    return DatasetSpec.from_dict(read_manifest(fldr)['spec'])
