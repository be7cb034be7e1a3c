import numpy as np
import pytest

from mdcvae import nn
from mdcvae.checks import check_b_step
from mdcvae.data import RatingMatrix
from mdcvae.user_vae import BetaSchedule, UserVAE, b_step, decode_users, encode_users, first_layer, kl_anneal

from oracles import multivae_elbo


def rows(J, *items):
    return RatingMatrix.from_rows([np.array(r, dtype=np.int64) for r in items], J)


@pytest.mark.parametrize("mode", ["normal", "symmetric"])
def test_first_layer_examples(mode, rng):
    uvae = UserVAE(6, 2, 3, (), mode, rng=nn.make_rng(0))
    uvae.params["emb_bias"][:] = rng.standard_normal(3)
    out = first_layer(uvae, rows(6, [], [4]))
    assert np.array_equal(out[0], uvae.params["emb_bias"])
    assert np.array_equal(out[1], uvae.table[4] + uvae.params["emb_bias"])


def test_symmetric_table_is_the_decoder_table():
    uvae = UserVAE(6, 2, 3, (), "symmetric", rng=nn.make_rng(0))
    assert uvae.table is uvae.params["V"] and "emb" not in uvae.params
    assert UserVAE(6, 2, 3, (), "normal", rng=nn.make_rng(0)).table is not None


def test_symmetric_embedding_sum_equals_explicit_product(rng):
    uvae = UserVAE(9, 2, 4, (), "symmetric", rng=nn.make_rng(0))
    batch = rows(9, [0, 3, 8], [1, 2], [5])
    explicit = np.zeros((3, 4))
    for u in range(3):
        for j in batch.row(u):
            explicit[u] += uvae.params["V"][j]
    assert np.array_equal(first_layer(uvae, batch), explicit + uvae.params["emb_bias"])
    dense = batch.to_dense() @ uvae.params["V"] + uvae.params["emb_bias"]
    assert np.allclose(first_layer(uvae, batch), dense, rtol=1e-14, atol=1e-15)


def test_zero_embeddings_give_bias_logits():
    uvae = UserVAE(5, 2, 3, (), rng=nn.make_rng(0))
    uvae.params["V"][...] = 0.0
    uvae.params["item_bias"][:] = [0.1, 0.3, 0.3, -1, 0]
    assert np.array_equal(decode_users(uvae, np.ones((2, 2))), np.tile(uvae.params["item_bias"], (2, 1)))


def test_logits_are_embedding_times_decoder_output():
    # K_v = 1, V = (1, 2): logits are (h, 2h) for the decoder output h
    uvae = UserVAE(2, 1, 1, (), rng=nn.make_rng(0))
    uvae.params["V"][:] = [[1.0], [2.0]]
    uvae.params["dec.0.W"][:] = [[0.8]]
    u = np.array([[1.5]])
    h = np.tanh(0.8 * 1.5)
    assert np.array_equal(decode_users(uvae, u)[0], [h, 2 * h])


def test_item_permutation_permutes_logits(rng):
    uvae = UserVAE(7, 2, 3, (4,), rng=nn.make_rng(0))
    uvae.params["item_bias"][:] = rng.standard_normal(7)
    u = rng.standard_normal((3, 2))
    perm = rng.permutation(7)
    permuted = uvae.copy()
    permuted.params["V"] = uvae.params["V"][perm]
    permuted.params["item_bias"] = uvae.params["item_bias"][perm]
    assert np.array_equal(decode_users(permuted, u), decode_users(uvae, u)[:, perm])


def test_encode_shapes_and_width_check():
    uvae = UserVAE(6, 2, 3, (4,), rng=nn.make_rng(0))
    post = encode_users(uvae, rows(6, [0, 1], [2]))
    assert post.mu.shape == (2, 2)
    with pytest.raises(nn.DimensionError):
        encode_users(uvae, rows(7, [0]))


@pytest.mark.parametrize("normalize", [False, True])
def test_ablation_matches_independent_multivae(normalize, rng):
    uvae = UserVAE(10, 3, 4, (5,), "normal", normalize, rng=nn.make_rng(2))
    for v in uvae.params.values():
        v += 0.2 * rng.standard_normal(v.shape)
    batch = rows(10, [0, 2, 7], [1], [3, 4, 5, 9], [])
    eps = rng.standard_normal((4, 3))
    obj, _, _ = b_step(uvae, batch, None, 0.0, 0.03, 0.4, 0.2, nn.make_rng(5), dropout_p=0.5, eps=eps)
    # the dropout mask comes from the same stream: one uniform per stored interaction, row-major
    keep = nn.make_rng(5).random(batch.nnz) >= 0.5
    mask = np.zeros((4, 10))
    for u in range(4):
        for p in range(batch.indptr[u], batch.indptr[u + 1]):
            mask[u, batch.indices[p]] = keep[p] / 0.5
    ref = multivae_elbo(uvae.params, 2, batch.to_dense(), eps, 0.4, 0.03, 0.2, mask, normalize)
    assert abs(obj - ref) <= 1e-10 * max(1.0, abs(ref))


def test_coupling_term_matches_definition(rng):
    uvae = UserVAE(6, 2, 3, (), "symmetric", rng=nn.make_rng(0))
    zt = rng.standard_normal((6, 3))
    _, _, terms = b_step(uvae, rows(6, [1, 2]), zt, 50.0, 0.0, 0.2, 0.5, eps=np.zeros((1, 2)))
    assert terms["coupling"] == pytest.approx(-0.5 * 0.5 * 50.0 * np.sum((uvae.params["V"] - zt) ** 2), rel=1e-13)


def test_large_coupling_dominates_embedding_gradient(rng):
    uvae = UserVAE(6, 2, 3, (), "normal", rng=nn.make_rng(0))
    zt = uvae.params["V"] + rng.standard_normal((6, 3))
    _, g, _ = b_step(uvae, rows(6, [1, 2], [0]), zt, 50.0, 0.0, 0.2, 1.0, eps=np.zeros((2, 2)))
    penalty = -50.0 * (uvae.params["V"] - zt)
    assert np.linalg.norm(g["V"] - penalty) < 0.1 * np.linalg.norm(penalty)


def test_negative_hyperparameters_rejected():
    uvae = UserVAE(6, 2, 3, rng=nn.make_rng(0))
    with pytest.raises(nn.ConfigError):
        b_step(uvae, rows(6, [1]), None, -1.0, 0.0, 0.2, 1.0, eps=np.zeros((1, 2)))


@pytest.mark.parametrize("mode", ["normal", "symmetric"])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_b_step_gradient(mode, seed):
    assert check_b_step(seed, mode).passed


def test_b_step_gradient_with_normalized_input():
    assert check_b_step(3, "normal", normalize_input=True).passed


@pytest.mark.parametrize("step,expected", [(0, 0.0), (100, 0.2), (50, 0.1), (500, 0.2)])
def test_beta_schedule(step, expected):
    assert kl_anneal(step, BetaSchedule(0.2, 100)) == pytest.approx(expected, abs=1e-15)
