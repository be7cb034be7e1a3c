import numpy as np
import pytest

from mdcvae import nn
from mdcvae.config import TrainConfig
from mdcvae.data import FoldInPair, RatingMatrix
from mdcvae.metrics import random_recall_expectation
from mdcvae.model import build_model
from mdcvae.predictor import (UnsupportedOperation, coldstart_eval, extend_items, fold_in, rank_from_scores,
                              recommend, recommend_many, score)
from mdcvae.user_vae import encode_users


def make(mode="symmetric", J=12, S=5, seed=0):
    m = build_model(TrainConfig(mode=mode, k_u=3, k_v=4, uae_hidden=(5,)), J, S, nn.make_rng(seed))
    rng = np.random.default_rng(seed)
    for v in m.tensors().values():
        v += 0.3 * rng.standard_normal(v.shape)
    return m


def test_empty_history_uses_bias_path():
    m = make()
    mu = fold_in(m, [[]])
    h = np.tanh(m.uvae.params["emb_bias"])
    for l in range(len(m.uvae.enc_spec.layer_dims) - 1):
        a = h @ m.uvae.params[f"enc.{l}.W"].T + m.uvae.params[f"enc.{l}.b"]
        h = a if l == len(m.uvae.enc_spec.layer_dims) - 2 else np.tanh(a)
    assert np.allclose(mu[0], h[:3], rtol=0, atol=1e-15)


def test_fold_in_matches_encoder_and_is_deterministic():
    m = make()
    hist = [[0, 4, 7], [2]]
    mat = RatingMatrix.from_rows([np.array(h) for h in hist], 12)
    assert np.array_equal(fold_in(m, hist), encode_users(m.uvae, mat).mu)
    assert np.array_equal(fold_in(m, hist), fold_in(m, hist))


def test_rank_example_and_ties():
    r = rank_from_scores(np.array([[9.0, 5.0, 7.0]]), RatingMatrix.from_rows([np.array([0])], 3), 2)[0]
    assert r.items.tolist() == [2, 1]
    r = rank_from_scores(np.zeros((1, 4)), RatingMatrix.from_rows([np.array([], dtype=np.int64)], 4), 4)[0]
    assert r.items.tolist() == [0, 1, 2, 3]


def test_recommend_excludes_history_and_flags_truncation():
    m = make(J=5)
    r = recommend(m, [0, 1, 2], 4)
    assert set(r.items.tolist()) == {3, 4} and r.truncated
    assert not recommend(m, [0], 2).truncated


def test_recommend_rejects_bad_ids():
    with pytest.raises(nn.DimensionError):
        recommend(make(J=5), [5], 2)


def test_catalog_permutation_permutes_ranking():
    m = make()
    perm = np.random.default_rng(1).permutation(12)  # new id k holds old item perm[k]
    inv = np.argsort(perm)
    pm = m.copy()
    for name in ("V", "item_bias"):
        pm.uvae.params[name] = m.uvae.params[name][perm]
    hist = [0, 5, 9]
    a = recommend(m, hist, 12).items
    b = recommend(pm, inv[hist], 12).items
    assert np.array_equal(perm[b], a)


def test_extension_shapes_and_prefix():
    m = make(J=3)
    ext = extend_items(m, np.random.default_rng(0).standard_normal((1, 5)))
    assert ext.uvae.params["V"].shape == (4, 4)
    assert np.array_equal(ext.uvae.params["V"][:3], m.uvae.params["V"])
    assert ext.uvae.params["item_bias"][3] == m.uvae.params["item_bias"].mean()
    assert ext.uvae.table is ext.uvae.params["V"]


def test_extension_keeps_old_logits_bit_identical():
    m = make()
    ext = extend_items(m, np.random.default_rng(0).standard_normal((3, 5)))
    hist = [[0, 4], [1, 2, 11], []]
    before, after = score(m, hist), score(ext, hist)
    assert np.array_equal(after[:, :12], before)
    for h in hist:
        old = [j for j in recommend(ext, h, 15).items if j < 12]
        assert old == recommend(m, h, 12).items.tolist()


def test_empty_extension_is_a_copy():
    m = make()
    ext = extend_items(m, np.zeros((0, 5)))
    assert ext.n_items == m.n_items and ext.uvae.params["V"] is not m.uvae.params["V"]


def test_normal_mode_extension_rejected():
    with pytest.raises(UnsupportedOperation, match="symmetric"):
        extend_items(make("normal"), np.zeros((1, 5)))


def test_coldstart_groups_and_exclusions():
    m = make()
    cold = np.array([9, 10, 11])
    pairs = [FoldInPair(0, np.array([0, 1]), np.array([2, 10])),
             FoldInPair(1, np.array([3]), np.array([4])),        # no cold holdout
             FoldInPair(2, np.array([5, 9]), np.array([11]))]
    res = coldstart_eval(m, cold, pairs, (2,))
    assert res["cold"][("recall", 2)].count == 2
    assert res["normal"][("recall", 2)].count == 2
    # a pool of 2 cold candidates always contains the single cold holdout at M=2
    assert res["cold"][("recall", 2)].values[1] == 1.0
    assert res["random_cold"][2] == pytest.approx(random_recall_expectation([3, 2], [1, 1], 2))


def test_batch_recommend_matches_single():
    m = make()
    hist = [[0], [3, 4], [7, 8, 9]]
    many = recommend_many(m, hist, 5)
    for h, r in zip(hist, many):
        assert np.array_equal(recommend(m, h, 5).items, r.items)
