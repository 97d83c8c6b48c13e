import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from promptdet.mpod.boxes import Box
from promptdet.mpod.data import Annotation, SyntheticScene
from promptdet.mpod.det import image_features
from promptdet.mpod.errs import ConfigError, DatasetError, DimensionError
from promptdet.mpod.nn import ParamStore, finite_diff_check, no_grad
from promptdet.mpod.nn import layers as nl
from promptdet.mpod.nn import tensor as T
from promptdet.mpod.prompts import (
    PromptCache,
    TextualPrompt,
    VisualPrompt,
    aggregate,
    build_cache,
    deformable_attention,
    encode_text,
    encode_visual,
    fuse,
    fuse_avg,
    fuse_prompt,
    init_vpe,
    mean_visual,
    tokenize,
)
from promptdet.mpod.prompts.txtenc import fnv1a


def identity_linear(prm, path, d):
    prm[path + ".w"].data[...] = np.eye(d)
    prm[path + ".b"].data[...] = 0


def test_tokenize():
    assert tokenize("Helicopter") == tokenize("helicopter")
    assert len(tokenize("long-vehicle")) == 2
    assert len(tokenize("storage_tank  area")) == 3
    h = 0x811C9DC5
    for c in b"ship":
        h = ((h^c) * 0x01000193) % 2**32
    assert fnv1a("ship") == h
    assert tokenize("ship") == [h % 1024]
    with pytest.raises(ValueError):
        tokenize(" - ")
    with pytest.raises(TypeError):
        tokenize(3)


def test_encode_text(prm, Cnt):
    g = encode_text("plus sign", prm, Cnt)
    assert isinstance(g, TextualPrompt)
    assert g.features.shape == (2, Cnt["D"])
    assert_array_equal(g.features.data, encode_text("plus sign", prm, Cnt).features.data)


def test_encode_text_trace(prm, Cnt):
    d = Cnt["D"]
    for n in "qkvo":
        identity_linear(prm, f"text.attn.{n}", d)
    g = encode_text("ship", prm, Cnt)
    x = prm["text.embed"].data[tokenize("ship", Cnt["VOCAB"])]

    def ln(y, path):
        y = (y - y.mean(-1, keepdims=True)) / np.sqrt(y.var(-1, keepdims=True) + Cnt["LN_EPS"])
        return y * prm[path + ".g"].data + prm[path + ".b"].data

    def gelu(y):
        return 0.5 * y * (1 + np.tanh(np.sqrt(2 / np.pi) * (y + 0.044715 * y**3)))

    # > a single key: attention returns its value, here the token itself
    x = ln(x + x, "text.ln1")
    h = gelu(x @ prm["text.ffn.l1.w"].data + prm["text.ffn.l1.b"].data)
    x = ln(x + h @ prm["text.ffn.l2.w"].data + prm["text.ffn.l2.b"].data, "text.ln2")
    assert_allclose(g.features.data, x, atol=1e-10)


@pytest.fixture
def dattn(Cnt):
    """single head, point and level with zero offsets"""
    C = dict(Cnt, NHEAD=1, NPTS=1)
    prm = ParamStore()
    init_vpe(prm, C, np.random.default_rng(0), nlvl=1)
    prm["vpe.dattn.off.b"].data[...] = 0
    return prm, C


def test_deformable_attention_forced(dattn):
    prm, C = dattn
    d = C["D"]
    feat = np.random.default_rng(1).normal(size=(8, 8, d))
    r = np.random.default_rng(2).normal(size=d)
    b = Box(0.4, 0.55, 0.3, 0.2)
    out = deformable_attention(r, b, [T.Tensor(feat)], prm, C)
    ref = nl.lin(nl.bilinear_sample(feat, [b.cx, b.cy]), prm, "vpe.dattn.out")
    assert_allclose(out.data, ref.data, atol=1e-12)


def test_deformable_attention_weights(prm, Cnt):
    rng = np.random.default_rng(3)
    d = Cnt["D"]
    prm["vpe.dattn.att.w"].data[...] = rng.normal(size=prm["vpe.dattn.att.w"].shape)
    prm["vpe.dattn.off.w"].data[...] = rng.normal(size=prm["vpe.dattn.off.w"].shape) * 0.1
    c = rng.normal(size=d)
    feats = [T.Tensor(np.broadcast_to(c, (s, s, d))) for s in (16, 8, 4)]
    _, att, agg = deformable_attention(rng.normal(size=d), Box(0.5, 0.5, 0.4, 0.4), feats, prm,
                                       Cnt, return_weights=True)
    assert_allclose(att.data.sum(-1), 1, atol=1e-12)
    assert_allclose(agg.data, c, atol=1e-12)
    with pytest.raises(ConfigError):
        deformable_attention(c, Box(0.5, 0.5, 0.4, 0.4), [], prm, Cnt)


def test_encode_visual(prm, Cnt):
    d = Cnt["D"]
    feat = np.zeros((16, 16, d))
    feat[:, :8] = 1.0
    feat[:, 8:] = -1.0
    feats = [T.Tensor(feat)]
    C = dict(Cnt, NLVL=1)
    P = ParamStore()
    init_vpe(P, C, np.random.default_rng(5), nlvl=1)
    a = encode_visual(Box(0.2, 0.5, 0.1, 0.1), feats, P, C, "square")
    b = encode_visual(Box(0.8, 0.5, 0.1, 0.1), feats, P, C, "square")
    assert isinstance(a, VisualPrompt) and a.embedding.shape == (d,)
    assert_array_equal(a.embedding.data,
                       encode_visual(Box(0.2, 0.5, 0.1, 0.1), feats, P, C).embedding.data)
    assert np.abs(a.embedding.data - b.embedding.data).max() > 1e-6


def test_encode_visual_grad(Cnt):
    C = dict(Cnt, NLVL=1)
    P = ParamStore()
    init_vpe(P, C, np.random.default_rng(6), nlvl=1)
    # > sampling points stay put; the prompt query reaches the output through the weights
    P["vpe.dattn.att.w"].data[...] = np.random.default_rng(9).normal(
        size=P["vpe.dattn.att.w"].shape)
    P.freeze(["vpe.content", "vpe.proj", "vpe.dattn", "vpe.ffn", "vpe.ln"])
    feats = [T.Tensor(np.random.default_rng(7).normal(size=(8, 8, C["D"])))]
    wts = np.random.default_rng(8).normal(size=C["D"])
    err = finite_diff_check(
        lambda p: (encode_visual(Box(0.45, 0.5, 0.3, 0.3), feats, p, C).embedding * wts).sum(),
        P)
    assert err < 1e-4


def test_mean_visual(Cnt):
    vs = [VisualPrompt("disk", T.Tensor(np.full(4, float(i))), "x") for i in range(3)]
    assert_allclose(mean_visual("disk", vs).embedding.data, np.full(4, 1.0))
    with pytest.raises(ValueError):
        mean_visual("disk", [])


def test_fuse(prm, Cnt):
    d = Cnt["D"]
    g = encode_text("plus sign", prm, Cnt)
    v = VisualPrompt("plus sign", T.Tensor(np.random.default_rng(9).normal(size=d)), "x")
    fp, A = fuse(g, v, prm, Cnt, return_weights=True)
    assert fp.embedding.shape == (d,)
    assert A.shape == (Cnt["NHEAD"], 1, 3)
    assert_allclose(A.data.sum(-1), 1, atol=1e-12)

    # > independent single-layer cross-attention
    S = np.concatenate([g.features.data, v.embedding.data[None]])
    u = prm["fusion.query"].data[None]
    W = {n: (prm[f"fusion.attn.{n}.w"].data, prm[f"fusion.attn.{n}.b"].data) for n in "qkvo"}
    H, dh = Cnt["NHEAD"], d // Cnt["NHEAD"]
    Q, K, V = u @ W["q"][0] + W["q"][1], S @ W["k"][0] + W["k"][1], S @ W["v"][0] + W["v"][1]
    heads = []
    for h in range(H):
        sl = slice(h * dh, (h+1) * dh)
        s = Q[:, sl] @ K[:, sl].T / np.sqrt(dh)
        a = np.exp(s - s.max())
        heads.append((a / a.sum()) @ V[:, sl])
    y = u + np.concatenate(heads, axis=1) @ W["o"][0] + W["o"][1]
    y = (y - y.mean()) / np.sqrt(y.var() + Cnt["LN_EPS"])
    assert_allclose(fp.embedding.data, y[0], atol=1e-10)


def test_fuse_single_slot(prm, Cnt):
    d = Cnt["D"]
    for n in "qkvo":
        identity_linear(prm, f"fusion.attn.{n}", d)
    vec = np.random.default_rng(10).normal(size=d)
    g = TextualPrompt("x", [0], T.Tensor(vec[None]))
    v = VisualPrompt("x", T.Tensor(vec), "x")
    y = prm["fusion.query"].data + vec
    y = (y - y.mean()) / np.sqrt(y.var() + Cnt["LN_EPS"])
    assert_allclose(fuse(g, v, prm, Cnt).embedding.data, y, atol=1e-10)


def test_fuse_avg(prm, Cnt):
    g = TextualPrompt("x", [0, 1], T.Tensor([[1.0, 2.0], [3.0, 4.0]]))
    v = VisualPrompt("x", T.Tensor([10.0, 20.0]), "x")
    assert_allclose(fuse_avg(g, v).embedding.data, [12.0, 23.0])
    assert_allclose(fuse_prompt(g, v, prm, Cnt, "avg").embedding.data, [12.0, 23.0])
    with pytest.raises(DimensionError):
        fuse_avg(g, VisualPrompt("x", T.Tensor([1.0, 2.0, 3.0]), "x"))
    with pytest.raises(ValueError):
        fuse_prompt(g, v, prm, Cnt, "concat")


def test_cache(scenes, prm, Cnt, tmp_path):
    cache = build_cache(scenes[:3], prm, Cnt, meta={"seed": 1})
    n = {}
    for s in scenes[:3]:
        for a in s.annotations:
            n[a.category] = n.get(a.category, 0) + 1
    assert {k: len(cache[k]) for k in cache.categories()} == n
    cache.save(tmp_path / "a.json")
    build_cache(scenes[:3], prm, Cnt, meta={"seed": 1}).save(tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    # > any entry equals a fresh encoding of its instance
    scn = scenes[0]
    with no_grad():
        v = encode_visual(scn.annotations[0].box, image_features(scn.image, prm, Cnt), prm, Cnt)
    iid, vec = next((i, e) for i, e in cache[scn.annotations[0].category] if i == "000000-00")
    assert_array_equal(vec, v.embedding.data)

    out = PromptCache.load(tmp_path / "a.json")
    assert out.categories() == cache.categories() and len(out) == len(cache)
    with pytest.raises(KeyError):
        out["hexagon"]
    raw = json.loads((tmp_path / "a.json").read_text())
    raw["version"] = 99
    with pytest.raises(ValueError):
        PromptCache.from_dict(raw)


def test_cache_three_squares(prm, Cnt, scene):
    boxes = [Box(0.25, 0.25, 0.2, 0.2), Box(0.7, 0.3, 0.2, 0.2), Box(0.5, 0.75, 0.3, 0.2)]
    scn = SyntheticScene(scene.image, [Annotation("square", b) for b in boxes], 0, 0)
    cache = build_cache([scn], prm, Cnt)
    assert len(cache["square"]) == 3
    assert cache.check_covers(["square"]) is cache
    with pytest.raises(DatasetError, match="disk"):
        cache.check_covers(["square", "disk"])
    with pytest.raises(ValueError):
        build_cache([], prm, Cnt)


def test_aggregate():
    rng = np.random.default_rng(0)
    cache = PromptCache(3)
    es = [np.array([1.0, 0, 0]), np.array([0, 2.0, 0]), np.array([0, 0, 3.0])]
    for i, e in enumerate(es):
        cache.add("ring", f"{i}", e)
    one = aggregate(cache, "ring", 1, rng).embedding.data
    assert any(np.array_equal(one, e) for e in es)
    assert_allclose(aggregate(cache, "ring", 3, rng).embedding.data, sum(es) / 3, atol=1e-15)
    # > fewer cached prompts than requested: the tag counts those averaged
    assert aggregate(cache, "ring", 8, rng).source == "aggregated(3)"
    assert aggregate(cache, "ring", 2, rng).source == "aggregated(2)"
    same = PromptCache(3)
    for i in range(4):
        same.add("disk", f"{i}", es[1])
    for n in (1, 2, 4):
        assert_array_equal(aggregate(same, "disk", n, rng).embedding.data, es[1])
    with pytest.raises(KeyError):
        cache.add("ring", "0", es[0])
    with pytest.raises(ValueError):
        cache.add("ring", "9", [np.nan, 0, 0])
