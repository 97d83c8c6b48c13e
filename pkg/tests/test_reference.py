"""Checks against the reference run trained by `python -m tests`."""
import csv

import numpy as np
import pytest

from promptdet.mpod import get_mpod_constants
from promptdet.mpod.ablate import read_ablation
from promptdet.mpod.data import iter_scenes, reference_spec
from promptdet.mpod.det import build_prompts, detect_scenes
from promptdet.mpod.metrics import evaluate
from promptdet.mpod.nn import ParamStore
from promptdet.mpod.train.stages import DETECTOR, FUSION, TEXT, VPE

# > AP50 trends are asserted within this noise margin
NOISE = 0.02


def frozen_bytes(prm, prefixes):
    return b"".join(prm.state_bytes(p) for p in prefixes)


@pytest.fixture(scope="session")
def ablation(folder_ref):
    fcsv = folder_ref / "ablation.csv"
    if not fcsv.is_file():
        pytest.skip(f"Cannot find {fcsv}.\nTry running `python -m tests` to produce it.")
    rows = read_ablation(fcsv)

    def ap50(mode, n, frozen=True, fusion=""):
        sel = [
            float(r["ap50"]) for r in rows
            if (r["prompt_mode"], int(r["n"]), bool(int(r["frozen"])), r["fusion"], r["stage2_m"],
                r["stage3_count"]) == (mode, n, frozen, fusion, "1", "32")]
        assert len(sel) == 1, f"no unique row for {mode} {n} {frozen} {fusion}"
        return sel[0]

    return ap50


def test_stage1_text(folder_ref):
    Cnt = get_mpod_constants()
    prm = ParamStore.load(folder_ref / "stage1.pdps")
    spec = reference_spec()
    scenes = list(iter_scenes(spec.split("test")))
    assert len(scenes) == 100
    prompts = build_prompts("text", spec.names, prm, Cnt)
    res = evaluate(detect_scenes(scenes, prompts, spec.names, prm, Cnt), scenes, spec.names)
    assert res.ap50 >= 0.70


def test_frozen_checkpoints(folder_ref):
    s1, s2, s3 = (ParamStore.load(folder_ref / f"stage{s}.pdps") for s in (1, 2, 3))
    assert frozen_bytes(s2, DETECTOR + TEXT + FUSION) == frozen_bytes(s1, DETECTOR + TEXT + FUSION)
    assert frozen_bytes(s3, DETECTOR + TEXT + VPE) == frozen_bytes(s2, DETECTOR + TEXT + VPE)
    assert s2.state_bytes("vpe.") != s1.state_bytes("vpe.")
    assert s3.state_bytes("fusion.") != s2.state_bytes("fusion.")


def test_visual_count(ablation):
    v1, v4, v8 = (ablation("visual", n) for n in (1, 4, 8))
    assert v4 >= v1 - NOISE and v8 >= v4 - NOISE
    assert v8 - v1 >= 0.05


def test_multimodal_best(ablation):
    mm = ablation("multimodal", 32, fusion="attn")
    assert mm >= max(ablation("text", 0), ablation("visual", 32)) - NOISE


def test_frozen_stage2(ablation):
    assert ablation("visual", 32, frozen=True) > ablation("visual", 32, frozen=False)


def test_learned_fusion(ablation):
    assert ablation("multimodal", 32, fusion="attn") >= ablation("multimodal", 32, fusion="avg")


def test_stage1_loss_falls(folder_ref):
    lines = (folder_ref / "stage1_losses.csv").read_text().splitlines()
    total = np.array([float(r["total"]) for r in csv.DictReader(
        ln for ln in lines if not ln.startswith("#"))])
    assert total.size > 2025

    # > batch losses are noisy; compare means over 50 steps around each point
    def near(step):
        return total[step - 25:step + 25].mean()

    assert near(2000) < 0.5 * near(100)
