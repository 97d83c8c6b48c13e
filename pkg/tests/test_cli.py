import json
from functools import partial
from itertools import count
from pathlib import Path

import numpy as np
import pytest

from promptdet.mpod import ablate, cli, get_mpod_constants, mpodaux
from promptdet.mpod.data import iter_scenes, small_spec
from promptdet.mpod.errs import ConfigError, PrerequisiteError
from promptdet.mpod.nn import tensor as T

from .conftest import SMALL_SETS

STEPS = [f"stages.{s}.max_steps=2" for s in (1, 2, 3)]


def covering_spec(ncat=3, scenes=4):
    '''small spec whose training scenes hold every category (so the prompt cache covers all)'''
    for seed in count():
        spec = small_spec(ncat, scenes, seed=seed)
        if {a.category for s in iter_scenes(spec) for a in s.annotations} == set(spec.names):
            return spec


@pytest.fixture(scope="session")
def small_sets(tmp_path_factory):
    """overrides for a narrow model trained for a few steps on four scenes"""
    fpth = tmp_path_factory.mktemp("spec") / "spec.json"
    fpth.write_text(json.dumps(covering_spec().to_dict()))
    return SMALL_SETS + STEPS + [f"dataset={fpth}"]


def run(sets, out, *cmd):
    argv = ["--out", str(out)]
    for s in sets:
        argv += ["--set", s]
    return cli.main(argv + list(cmd))


@pytest.fixture(scope="session")
def trained(small_sets, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    assert run(small_sets, out, "train", "--stages", "1", "2") == 0
    assert run(small_sets, out, "build-cache") == 0
    return out


# ======================================================================
# configuration
# ----------------------------------------------------------------------


def test_config_overrides(tmp_path):
    rc = mpodaux.load_config(None, ["n=4", "n=2", "Cnt.TAU=0.5", "stages.2.epochs=3"], seed=7,
                             out=tmp_path)
    assert rc.n == 2
    assert rc.tau == 0.5 and rc.Cnt["TAU"] == 0.5
    assert rc.stages[2].epochs == 3 and rc.stages[1].epochs == 30
    assert rc.seed == 7 and rc.Cnt["SEED"] == 7
    assert rc.out == tmp_path
    fcfg = tmp_path / "run.json"
    fcfg.write_text(json.dumps({"n": 5, "seed": 3, "prompt_mode": "visual"}))
    rc = mpodaux.load_config(fcfg, ["n=6"])
    assert (rc.n, rc.seed, rc.prompt_mode) == (6, 3, "visual")
    assert mpodaux.load_config(fcfg, seed=9).seed == 9
    assert mpodaux.config_hash(rc.raw) != mpodaux.config_hash(
        mpodaux.load_config(fcfg, ["n=7"]).raw)


@pytest.mark.parametrize("sets", [
    ["bogus=1"], ["n=0"], ["n=two"], ["prompt_mode=joint"], ["fusion=sum"], ["Cnt.NOPE=1"],
    ["tau=0"], ["seed=-1"], ["n"], ["train_stages=[4]"], ["stages.3.frozen=[]"],
    ["Cnt.NHEAD=3"]])
def test_config_errors(sets):
    with pytest.raises(ConfigError):
        rc = mpodaux.load_config(None, sets)
        mpodaux.init_params(rc.Cnt)


def test_config_prerequisites(tmp_path):
    with pytest.raises(PrerequisiteError):
        mpodaux.load_config(tmp_path / "missing.json")
    with pytest.raises(PrerequisiteError):
        mpodaux.load_config(None, [f"checkpoint={tmp_path / 'stage1.pdps'}"])


def test_constants_read():
    '''every constant is read by some module other than the one defining it'''
    pkg = Path(mpodaux.__file__).parent
    src = "".join(f.read_text() for f in pkg.rglob("*.py") if f.name != "resources.py")
    unread = [k for k in get_mpod_constants() if f"'{k}'" not in src]
    assert unread == []
    with pytest.raises(ConfigError):
        mpodaux.load_config(None, ["Cnt.STRIDES=[4, 8, 16]"])


def test_exit_codes(small_sets, tmp_path):
    assert run(small_sets + ["prompt_mode=joint"], tmp_path, "eval") == cli.EXIT_CONFIG
    assert run(small_sets, tmp_path, "eval") == cli.EXIT_PREREQ
    assert run(small_sets, tmp_path, "build-cache") == cli.EXIT_PREREQ
    assert run(small_sets, tmp_path, "train", "--stages", "2") == cli.EXIT_PREREQ
    assert run(small_sets, tmp_path, "train", "--stages", "1", "3") == cli.EXIT_CONFIG
    assert (tmp_path / "run.log").is_file()
    with pytest.raises(SystemExit):
        cli.main(["--out", str(tmp_path), "fit"])


# ======================================================================
# commands
# ----------------------------------------------------------------------


def test_gen_data(small_sets, tmp_path):
    assert run(small_sets, tmp_path, "gen-data") == 0
    assert run(small_sets, tmp_path, "gen-data", "--split", "test") == 0
    man = json.loads((tmp_path / "dataset" / "manifest.json").read_text())
    assert len(man["records"]) == 4 and man["seed"] == covering_spec().seed
    assert man["meta"]["seed"] == mpodaux.load_config(None, small_sets).seed
    man = json.loads((tmp_path / "dataset_test" / "manifest.json").read_text())
    assert len(man["records"]) == 1 and man["spec"]["part"] == "test"


def test_train_resume(small_sets, trained, tmp_path):
    assert run(small_sets, tmp_path, "train", "--stages", "1") == 0
    assert run(small_sets, tmp_path, "train", "--stages", "2") == 0
    for fname in ("stage1.pdps", "stage2.pdps"):
        assert (tmp_path / fname).read_bytes() == (trained / fname).read_bytes()
    for fname in ("stage1_losses.csv", "stage2_losses.csv"):
        a = (tmp_path / fname).read_text().splitlines()
        b = (trained / fname).read_text().splitlines()
        assert a[0].startswith("# ")
        assert a[1:] == b[1:] and len(a) == 4
    meta = json.loads((trained / "stage2.json").read_text())
    assert meta["stage"] == 2 and "backbone." in meta["frozen"] and "seed" in meta


def test_train_stage3(small_sets, trained, tmp_path):
    for fname in ("stage2.pdps", "prompt_cache.json"):
        (tmp_path / fname).write_bytes((trained / fname).read_bytes())
    assert run(small_sets, tmp_path, "train", "--stages", "3") == 0
    assert (tmp_path / "stage3.pdps").is_file()
    assert run(small_sets + ["prompt_mode=multimodal", "n=2"], tmp_path, "eval") == 0


def test_eval_deterministic(small_sets, trained):
    files = ("detections.jsonl", "metrics.json", "pr_curve.csv")
    assert run(small_sets, trained, "eval") == 0
    first = [(trained / f).read_bytes() for f in files]
    assert run(small_sets, trained, "eval") == 0
    assert [(trained / f).read_bytes() for f in files] == first
    rep = json.loads(first[1])
    assert 0 <= rep["ap50"] <= 1 and 0 <= rep["map"] <= 1
    assert rep["meta"]["prompt_mode"] == "text"
    assert len(rep["meta"]["config_hash"]) == 64


@pytest.mark.parametrize("sets, status", [
    (["prompt_mode=visual", "n=2"], 0),
    (["prompt_mode=multimodal", "fusion=avg", "n=3"], 0),
    (["prompt_mode=multimodal"], cli.EXIT_PREREQ)])
def test_eval_modes(small_sets, trained, sets, status):
    assert run(small_sets + sets, trained, "detect") == status


def test_gradcheck(small_sets, base_prm, tmp_path):
    status = run(small_sets, tmp_path, "gradcheck", "--samples", "1")
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert status == cli.EXIT_OK
    assert rep["failed"] == []
    assert sorted(rep["paths"]) == list(base_prm)
    assert set(rep["modules"]) == {k.split(".")[0] for k in base_prm}
    assert max(rep["paths"].values()) < cli.GRAD_TOL
    assert rep["tolerance"] == cli.GRAD_TOL


def test_gradcheck_corrupt(small_sets, tmp_path, monkeypatch):
    gelu = T.gelu

    def bad_gelu(x):
        out = gelu(x)
        return T._make(out.data, (T.astensor(x),), lambda g: (g * 0.5,))

    monkeypatch.setattr(T, "gelu", bad_gelu)
    assert run(small_sets, tmp_path, "gradcheck", "--samples", "1") == cli.EXIT_CHECK
    rep = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rep["failed"]


# ======================================================================
# ablation
# ----------------------------------------------------------------------


def test_sweep_grid():
    grid = ablate.sweep_grid(ablate.ablate_settings())
    assert len(grid) == len(set(grid)) == 14
    assert grid[0] == ablate.Cell("text", 0, True, "", 1, 32)
    assert [c.n for c in grid if c.prompt_mode == "visual"][:5] == [1, 4, 8, 16, 32]
    assert ablate.Cell("multimodal", 32, True, "avg", 1, 32) in grid
    assert ablate.Cell("visual", 32, False, "", 1, 32) in grid
    assert {c.stage3_count for c in grid} == {1, "random", 32}
    assert grid[-1].prompt_mode == "text-alias"
    grid = ablate.sweep_grid(ablate.ablate_settings({"aliases": False, "visual_n": [2]}))
    assert all(c.prompt_mode != "text-alias" for c in grid)
    cell = grid[1]
    assert ablate.cell_rng(1, cell).integers(1 << 30) == ablate.cell_rng(1, cell).integers(1 << 30)


@pytest.mark.parametrize("raw", [
    {"visual_n": [0]}, {"visual_n": []}, {"stage2_m": [1.5]}, {"stage3_count": ["all"]},
    {"eval_n": 0}, {"colour": 1}])
def test_ablate_settings_errors(raw):
    with pytest.raises(ConfigError):
        ablate.ablate_settings(raw)


def test_ablate(small_sets, tmp_path):
    sets = small_sets + [
        "ablate.visual_n=[1,2]", "ablate.stage2_m=[1]", "ablate.stage3_count=[1]",
        "ablate.eval_n=2"]
    call = partial(run, sets, tmp_path, "ablate")
    assert call() == 0
    acfg = ablate.ablate_settings({
        "visual_n": [1, 2], "stage2_m": [1], "stage3_count": [1], "eval_n": 2})
    rows = ablate.read_ablation(tmp_path / "ablation.csv")
    assert [r["prompt_mode"] for r in rows] == [c.prompt_mode for c in ablate.sweep_grid(acfg)]
    assert list(rows[0]) == list(ablate.COLUMNS)
    ap = np.array([float(r["ap50"]) for r in rows])
    assert np.all((ap >= 0) & (ap <= 1))
    assert (tmp_path / "ablate" / "s2-joint-m1" / "stage2.pdps").is_file()
    assert (tmp_path / "ablate" / "s3-frozen-m1-c1" / "stage3.pdps").is_file()
    first = (tmp_path / "ablation.csv").read_bytes()
    # > a second run reuses the trained variants
    assert call() == 0
    assert (tmp_path / "ablation.csv").read_bytes() == first
