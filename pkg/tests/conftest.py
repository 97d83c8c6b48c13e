from os import getenv
from pathlib import Path

import pytest

from promptdet.mpod import get_mpod_constants, init_params
from promptdet.mpod.data import iter_scenes, small_spec

HOME = Path(getenv("DATA_ROOT", "~")).expanduser()

# > narrow model for fast tests; the image side stays that of the scenes
SMALL = {
    "D": 16, "NHEAD": 2, "NQ": 6, "NENC": 1, "NDEC": 1, "FFN_MULT": 2, "NPTS": 2, "VOCAB": 64,
    "BATCH": 2}

# > command-line overrides giving the same narrow model
SMALL_SETS = [f"Cnt.{k}={v}" for k, v in SMALL.items()]


@pytest.fixture(scope="session")
def Cnt():
    Cnt = get_mpod_constants()
    Cnt.update(SMALL)
    return Cnt


@pytest.fixture(scope="session")
def base_prm(Cnt):
    return init_params(Cnt)


@pytest.fixture
def prm(base_prm):
    """fresh copy of the initialised parameters, safe to train or freeze"""
    return base_prm.copy()


@pytest.fixture(scope="session")
def spec():
    return small_spec(ncat=3, scenes=6)


@pytest.fixture(scope="session")
def scenes(spec):
    return list(iter_scenes(spec))


@pytest.fixture(scope="session")
def scene(scenes):
    return next(s for s in scenes if len(s.annotations) >= 2)


@pytest.fixture(scope="session")
def folder_ref():
    mpod_reference = HOME / "mpod_reference"
    if not (mpod_reference / "stage3.pdps").is_file():
        pytest.skip(f"""Cannot find mpod_reference in ${{DATA_ROOT:-~}} ({HOME}).
Try running `python -m tests` to train it.
""")
    return mpod_reference
