"""Synthetic shape scenes and their on-disk format"""
__all__ = [
    # shapes
    'Annotation', 'CategorySpec', 'DatasetSpec', 'SyntheticScene', 'fine_grained_spec',
    'generate_scene', 'iter_scenes', 'reference_spec', 'small_spec',
    # dsio
    'dataset_spec', 'export_dataset', 'load_dataset']  # yapf: disable

from .dsio import dataset_spec, export_dataset, load_dataset
from .shapes import (
    Annotation,
    CategorySpec,
    DatasetSpec,
    SyntheticScene,
    fine_grained_spec,
    generate_scene,
    iter_scenes,
    reference_spec,
    small_spec,
)
