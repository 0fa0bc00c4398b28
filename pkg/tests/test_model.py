import numpy as np
import pytest

from scopeseg.graph import build_grid_graph
from scopeseg.losses import cross_entropy_loss
from scopeseg.nn import (
    CheckpointError,
    PixelClassifier,
    ScopeNet,
    init_params,
    load_checkpoint,
    param_shapes,
    save_checkpoint,
    softmax,
)
from scopeseg.nn.checkpoint import MAGIC
from scopeseg.nn.layers import normalized_adjacency
from scopeseg.nn.model import gcn_inputs


def zero_net():
    return ScopeNet({k: np.zeros(s) for k, s in param_shapes().items()})


def test_wiring_widths():
    shapes = param_shapes()
    assert shapes["gcn1.weight"] == (64, 32)
    for j in (2, 3, 4):
        assert shapes[f"gcn{j}.weight"] == (32, 32)
    for j in range(5, 11):
        assert shapes[f"gcn{j}.weight"] == (64, 32)
        assert gcn_inputs()[j] == (j - 4, j - 1)
    assert shapes["gcn11.weight"] == (96, 2)
    assert gcn_inputs()[11] == (0, 10)
    assert sum(1 for k in shapes if k.startswith("gcn") and k.endswith("weight")) == 11


def test_zero_params_give_even_split():
    g = build_grid_graph(8, 8, 1)
    logits, _ = zero_net().forward(np.random.default_rng(0).random((8, 8)), g)
    np.testing.assert_array_equal(softmax(logits), np.full((64, 2), 0.5))


@pytest.mark.parametrize("n", [1, 2, 4])
def test_logit_shape(n):
    net = ScopeNet(seed=1)
    g = build_grid_graph(8, 12, n)
    logits, _ = net.forward(np.random.default_rng(n).random((8, 12)), g)
    assert logits.shape == (g.num_nodes, 2)


def test_precomputed_features_skip_convs():
    net = ScopeNet(seed=2)
    img = np.random.default_rng(2).random((8, 8))
    g = build_grid_graph(8, 8, 2)
    feats = net.features(img)
    a, _ = net.forward(img, g)
    b, cache = net.forward(feats, g)
    np.testing.assert_array_equal(a, b)
    grads = net.backward(cache, np.ones_like(b))
    assert not grads["conv1.weight"].any()


def test_zero_grad_and_determinism():
    net = ScopeNet(seed=3)
    g = build_grid_graph(6, 6, 1)
    img = np.random.default_rng(3).random((6, 6))
    logits, cache = net.forward(img, g)
    assert all(not v.any() for v in net.backward(cache, np.zeros_like(logits)).values())
    up = np.random.default_rng(4).normal(size=logits.shape)
    first = net.backward(cache, up)
    logits2, cache2 = net.forward(img, g)
    second = net.backward(cache2, up)
    assert logits.tobytes() == logits2.tobytes()
    assert all(first[k].tobytes() == second[k].tobytes() for k in first)


def test_stale_cache_rejected():
    net = ScopeNet(seed=0)
    _, cache = net.forward(np.zeros((4, 4)), build_grid_graph(4, 4, 1))
    with pytest.raises(ValueError):
        net.backward(cache, np.zeros((4, 2)))


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    net = ScopeNet(seed=6)
    n = 12
    e = rng.integers(0, n, size=(30, 2))
    e = np.unique(np.sort(e[e[:, 0] != e[:, 1]], axis=1), axis=0)
    feats = rng.normal(size=(n, 64))
    perm = rng.permutation(n)
    inv = np.argsort(perm)
    base = net.graph_forward(normalized_adjacency(e, n), feats)
    permuted = net.graph_forward(normalized_adjacency(inv[e], n), feats[perm])
    np.testing.assert_allclose(permuted, base[perm], atol=1e-12)


def test_bad_param_shapes():
    params = init_params(0)
    params["gcn5.weight"] = np.zeros((32, 32))
    with pytest.raises(ValueError):
        ScopeNet(params)


def test_init_reproducible_and_bounded():
    a, b = init_params(9), init_params(9)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert any(not np.array_equal(a[k], init_params(10)[k]) for k in a)
    for name, p in a.items():
        if name.endswith("bias"):
            assert not p.any()
            continue
        fan_in, fan_out = (9 * p.shape[2], 9 * p.shape[3]) if p.ndim == 4 else p.shape
        assert np.abs(p).max() <= np.sqrt(6 / (fan_in + fan_out))


def test_init_mean_statistics():
    # 10k draws from a symmetric uniform: sample mean within 3 standard errors of 0
    draws = np.concatenate([init_params(s)["gcn2.weight"].ravel() for s in range(10)])
    bound = np.sqrt(6 / 64)
    assert draws.size >= 10_000
    assert abs(draws.mean()) < 3 * bound / np.sqrt(3) / np.sqrt(draws.size)
    assert draws.var() == pytest.approx(bound**2 / 3, rel=0.05)


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(4)
    path = tmp_path / "m.scope"
    save_checkpoint(params, path)
    assert path.read_bytes().startswith(MAGIC)
    back = load_checkpoint(path)
    assert list(back) == list(param_shapes())
    assert all(back[k].tobytes() == params[k].tobytes() for k in params)
    save_checkpoint(back, tmp_path / "again.scope")
    assert (tmp_path / "again.scope").read_bytes() == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    path = tmp_path / "m.scope"
    save_checkpoint(init_params(0), path)
    blob = path.read_bytes()
    cases = {"magic": b"XXXXXXX" + blob[7:], "trunc": blob[:-5], "trail": blob + b"\0", "head": blob[:9]}
    for name, data in cases.items():
        bad = tmp_path / f"{name}.scope"
        bad.write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(bad)


def test_checkpoint_shape_mismatch(tmp_path, monkeypatch):
    import scopeseg.nn.checkpoint as ck

    path = tmp_path / "m.scope"
    save_checkpoint(init_params(0), path)
    shapes = dict(param_shapes())
    shapes["gcn11.weight"] = (96, 3)
    monkeypatch.setattr(ck, "param_shapes", lambda: shapes)
    with pytest.raises(CheckpointError):
        ck.load_checkpoint(path)


def test_pixel_classifier_gradient():
    rng = np.random.default_rng(7)
    clf = PixelClassifier(seed=7)
    for k in clf.params:
        if k.endswith("bias"):
            clf.params[k][...] = rng.normal(scale=0.1, size=clf.params[k].shape)
    img = rng.random((5, 5))
    labels = (rng.random(25) < 0.5).astype(int)

    def loss():
        return cross_entropy_loss(clf.forward(img)[0], labels)[0]

    logits, state = clf.forward(img)
    grads = clf.backward(state, cross_entropy_loss(logits, labels)[1])
    h = 1e-6
    for name in ("head.weight", "conv3.weight", "conv1.bias"):
        p = clf.params[name]
        for _ in range(4):
            idx = tuple(rng.integers(0, s) for s in p.shape)
            old = p[idx]
            p[idx] = old + h
            up = loss()
            p[idx] = old - h
            dn = loss()
            p[idx] = old
            num = (up - dn) / (2 * h)
            assert abs(num - grads[name][idx]) <= 1e-5 * max(abs(num), 1e-3)
