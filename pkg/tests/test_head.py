import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ssmzsl import tensor as T
from ssmzsl.encoder import FeatureMap
from ssmzsl.head import (SemanticSpace, ZslHead, attention_map, ce_loss, class_scores, grl_forward,
                         predict, sef_fuse, semantic_constraint_loss, slp_forward, total_loss)
from ssmzsl.tensor import Tensor


def make_head(K=3, d_s=2, d_v=4, seed=0):
    return ZslHead(K, d_s, d_v, np.random.default_rng(seed), np.float64)


def fmap(values):
    return FeatureMap(Tensor(np.asarray(values, dtype=np.float64)))


def mlp_np(mlp, x):
    return np.maximum(x @ mlp.fc1.w.data + mlp.fc1.b.data, 0) @ mlp.fc2.w.data + mlp.fc2.b.data


def slp_by_hand(head, F, S):
    """F is (r, r, d_v) for one image; explicit loops over attributes and regions."""
    d_v = F.shape[-1]
    regions = F.reshape(-1, d_v)
    K = S.shape[0]
    q = S @ head.w1.data
    key = S @ head.w2.data
    fs = np.zeros(K)
    for k in range(K):
        logits = np.array([q[k] @ regions[j] for j in range(len(regions))])
        m = np.exp(logits - logits.max())
        m /= m.sum()
        v = sum(m[j] * regions[j] for j in range(len(regions)))
        fs[k] = key[k] @ v
    return mlp_np(head.mlp_ls, fs)


# ---------------------------------------------------------------- SLP

def test_slp_single_region_attention_is_one():
    head = make_head()
    F = np.random.default_rng(1).normal(size=(2, 1, 1, 4))
    S = np.random.default_rng(2).normal(size=(3, 2))
    attn = attention_map(fmap(F), S, head).data
    np.testing.assert_array_equal(attn, 1.0)
    fs = (S @ head.w2.data) @ F[0, 0, 0]
    np.testing.assert_allclose(slp_forward(fmap(F), S, head).data[0], mlp_np(head.mlp_ls, fs), rtol=1e-12)


def test_slp_constant_regions_give_uniform_attention():
    head = make_head()
    F = np.broadcast_to(np.array([1.0, -2.0, 0.5, 3.0]), (1, 2, 2, 4)).copy()
    attn = attention_map(fmap(F), np.random.default_rng(3).normal(size=(3, 2)), head).data
    np.testing.assert_allclose(attn, 0.25, rtol=1e-14)


def test_slp_matches_by_hand_oracle():
    head = make_head(K=3, d_s=2, d_v=4, seed=5)
    gen = np.random.default_rng(6)
    F = gen.normal(size=(2, 2, 2, 4))
    S = gen.normal(size=(3, 2))
    out = slp_forward(fmap(F), S, head).data
    for b in range(2):
        np.testing.assert_allclose(out[b], slp_by_hand(head, F[b], S), rtol=1e-10, atol=1e-12)


@settings(max_examples=30)
@given(arrays(np.float64, (2, 3, 3, 4), elements=st.floats(-10, 10)))
def test_attention_rows_sum_to_one(F):
    attn = attention_map(fmap(F), np.random.default_rng(0).normal(size=(3, 2)), make_head()).data
    assert np.abs(attn.sum(axis=-1) - 1).max() < 1e-9


def test_slp_dimension_mismatch():
    with pytest.raises(ValueError):
        slp_forward(fmap(np.zeros((1, 2, 2, 5))), np.zeros((3, 2)), make_head())
    with pytest.raises(ValueError):
        slp_forward(fmap(np.zeros((1, 2, 2, 4))), np.zeros((3, 3)), make_head())


# ---------------------------------------------------------------- GRL

def test_grl_constant_channels_gives_bias_pathway():
    head = make_head()
    F = np.full((1, 2, 2, 4), 7.0)
    np.testing.assert_allclose(grl_forward(fmap(F), head).data[0], mlp_np(head.mlp_gs, np.zeros(4)), atol=1e-12)


def test_grl_single_site_pooling_is_identity():
    head = make_head()
    F = np.random.default_rng(0).normal(size=(1, 1, 1, 4))
    f = F[0, 0, 0]
    normed = (f - f.mean()) / np.sqrt(f.var() + 1e-5)
    np.testing.assert_allclose(grl_forward(fmap(F), head).data[0], mlp_np(head.mlp_gs, normed), rtol=1e-12)


def test_grl_matches_sequential_primitives():
    head = make_head(K=5, d_v=32, seed=2)
    head.norm.gain.data[:] = np.random.default_rng(3).normal(size=32)
    head.norm.bias.data[:] = np.random.default_rng(4).normal(size=32)
    F = np.random.default_rng(5).normal(size=(2, 4, 4, 32))
    mu = F.mean(axis=-1, keepdims=True)
    var = ((F - mu) ** 2).mean(axis=-1, keepdims=True)
    normed = (F - mu) / np.sqrt(var + 1e-5) * head.norm.gain.data + head.norm.bias.data
    pooled = normed.mean(axis=(1, 2))
    np.testing.assert_allclose(grl_forward(fmap(F), head).data, mlp_np(head.mlp_gs, pooled), rtol=1e-10)


# ---------------------------------------------------------------- fusion

def test_sef_examples():
    np.testing.assert_allclose(sef_fuse(Tensor([0.0, 0.0]), Tensor([3.0, 4.0])).data, [0.6, 0.8])
    g = Tensor([1.0, -2.0])
    np.testing.assert_array_equal(sef_fuse(g, Tensor([0.0, 0.0])).data, g.data)


@given(arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, (3, 5), elements=st.floats(-1e3, 1e3)))
def test_sef_residual_has_unit_or_zero_norm(glob, local):
    out = sef_fuse(Tensor(glob), Tensor(local)).data
    norms = np.linalg.norm(out - glob, axis=-1)
    for n, row in zip(norms, local):
        if np.linalg.norm(row) > 1e-12:
            assert n == pytest.approx(1.0, abs=1e-9)
        elif not row.any():
            assert n == 0


# ---------------------------------------------------------------- losses and scores

def test_semantic_constraint_examples():
    p = np.array([[0.2, 0.4, 1.0]])
    assert semantic_constraint_loss(Tensor(p), p).item() == 0
    assert semantic_constraint_loss(Tensor(p + np.array([1, -1, 1])), p).item() == pytest.approx(1.0)
    got = semantic_constraint_loss(Tensor([[0.5, 1.0, -1.0]]), [[0.0, 1.0, 1.0]]).item()
    assert got == pytest.approx(2.5 / 3, abs=1e-12)
    assert round(got, 4) == 0.8333


def test_class_scores_examples():
    protos = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 1.0], [1.0, 0.0, 0.0]])  # K=3, C=3
    s = class_scores(Tensor(protos[:, [0]].T), protos).data[0]
    assert s[0] == pytest.approx(1.0) and s[0] == s.max()
    assert s[1] == 0.0
    gen = np.random.default_rng(0)
    a = gen.normal(size=(4, 3))
    got = class_scores(Tensor(a), protos).data
    for b in range(4):
        for c in range(3):
            ref = a[b] @ protos[:, c] / (np.linalg.norm(a[b]) * np.linalg.norm(protos[:, c]))
            assert got[b, c] == pytest.approx(ref, rel=1e-12)
    np.testing.assert_allclose(class_scores(Tensor(a), protos, [2, 0]).data, got[:, [2, 0]])
    with pytest.raises(ValueError, match="empty"):
        class_scores(Tensor(a), protos, [])


def test_ce_examples():
    assert ce_loss(Tensor([[1.0, -1.0]]), [0]).item() == pytest.approx(math.log1p(math.exp(-2)), abs=1e-12)
    assert ce_loss(Tensor([[1.0, -1.0]]), [0]).item() == pytest.approx(0.126928, abs=1e-6)
    for tau in (0.5, 1.0, 10.0):
        assert ce_loss(Tensor(np.full((2, 5), 0.3)), [1, 4], tau).item() == pytest.approx(math.log(5))
    assert ce_loss(Tensor([[1.0, 0.5, -1.0]]), [0], 1e4).item() < 1e-100
    with pytest.raises(ValueError, match="range"):
        ce_loss(Tensor([[1.0, 0.0]]), [2])


def test_total_loss():
    ce, sc = Tensor(0.3), Tensor(0.2)
    assert total_loss(ce, sc, 1.0).item() == pytest.approx(0.5)
    assert total_loss(ce, sc, 0.0) is ce
    with pytest.raises(ValueError):
        total_loss(ce, sc, -0.1)


# ---------------------------------------------------------------- prediction

def test_predict_examples():
    scores = np.array([[0.9, 0.2, 0.5], [0.1, 0.8, 0.85]])
    mask = np.array([False, True, True])
    np.testing.assert_array_equal(predict(scores, mask, 0.0), [0, 2])
    np.testing.assert_array_equal(predict(scores, mask, 3.0), [2, 2])
    np.testing.assert_array_equal(predict(scores, mask, 0.0, "czsl"), predict(scores, mask, 5.0, "czsl"))
    np.testing.assert_array_equal(predict(scores, mask, mode="czsl"), [2, 2])
    assert predict(np.array([0.5, 0.5, 0.1]), np.zeros(3, bool)) == 0  # tie -> lowest index
    with pytest.raises(ValueError, match="empty"):
        predict(scores, np.zeros(3, bool), mode="czsl")
    with pytest.raises(ValueError, match="mode"):
        predict(scores, mask, mode="other")


# dyadic scores keep shifts exact, so ties survive them
table = arrays(np.float64, (6, 5), elements=st.integers(-16, 16).map(lambda k: k / 16))
masks = arrays(bool, 5).filter(lambda m: m.any())


@given(table, masks, st.integers(-8, 8).map(lambda k: k / 4), st.integers(0, 8).map(lambda k: k / 4))
def test_predict_shift_invariant(scores, mask, c, lam):
    for mode in ("czsl", "gzsl"):
        np.testing.assert_array_equal(predict(scores + c, mask, lam, mode), predict(scores, mask, lam, mode))


@given(table, masks, st.lists(st.floats(0, 3), min_size=2, max_size=10))
def test_predicted_unseen_set_grows_with_lambda(scores, mask, lams):
    prev = None
    for lam in sorted(lams):
        unseen = mask[predict(scores, mask, lam)]
        if prev is not None:
            assert np.all(unseen >= prev)
        prev = unseen


def test_semantic_space_validation():
    sem = SemanticSpace(np.zeros((4, 3)), np.zeros((4, 2)))
    assert (sem.attribute_count, sem.class_count, sem.embed_dim) == (4, 3, 2)
    with pytest.raises(ValueError, match="K=4.*K=5"):
        SemanticSpace(np.zeros((4, 3)), np.zeros((5, 2)))


def test_head_gradients():
    head = make_head(K=4, d_s=3, d_v=8, seed=1)
    gen = np.random.default_rng(2)
    F = fmap(gen.normal(size=(2, 2, 2, 8)))
    S = gen.normal(size=(4, 3))
    protos = gen.integers(0, 2, (4, 3)).astype(float)
    protos[0] = 1

    def loss():
        out = head(F, S)
        ce = ce_loss(class_scores(out.fused, protos), [0, 2])
        return total_loss(ce, semantic_constraint_loss(out.fused, protos[:, [0, 2]].T), 1.0)

    errs = T.gradient_errors(loss, head.parameters())
    assert max(errs) < 1e-4
