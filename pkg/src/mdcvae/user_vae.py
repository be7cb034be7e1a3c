"""User-oriented VAE whose decoder output weights are the item embeddings V.

In ``symmetric`` mode the encoder's first layer reads the same ``V`` table
(one array, so the tie cannot drift); in ``normal`` mode the encoder has its
own untied ``emb`` table. The first layer is an embedding sum over the
user's (dropout-masked) items, computed by the compiled kernel.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels, nn
from .data import RatingMatrix
from .nn import ConfigError, Dense, DimensionError, GaussianPosterior, MLPSpec

MODES = ("normal", "symmetric")


@dataclass(frozen=True)
class BetaSchedule:
    beta_max: float = 0.2
    anneal_steps: int = 1

    def __post_init__(self):
        if self.beta_max < 0:
            raise ConfigError("beta_max must be >= 0")


def kl_anneal(step: int, schedule: BetaSchedule) -> float:
    if schedule.anneal_steps <= 0:
        return schedule.beta_max
    return schedule.beta_max * min(1.0, step / schedule.anneal_steps)


class UserVAE:
    """Parameter table:

    ``V`` (J, K_v) and ``item_bias`` (J,): decoder output layer.
    ``emb`` (J, K_v): untied encoder input table (normal mode only).
    ``emb_bias`` (K_v,): encoder first-layer bias (never tied).
    ``enc.{l}.*``: K_v -> hidden... -> 2*K_u.  ``dec.{l}.*``: K_u -> reversed(hidden)... -> K_v, tanh throughout.
    """

    def __init__(self, n_items: int, k_u: int = 100, k_v: int = 100, hidden=(), mode: str = "normal",
                 normalize_input: bool = False, rng=None, params: dict | None = None):
        if mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
        self.mode = mode
        self.n_items = int(n_items)
        self.k_u = int(k_u)
        self.k_v = int(k_v)
        self.hidden = tuple(int(h) for h in hidden)
        self.normalize_input = bool(normalize_input)
        self.enc_spec = MLPSpec((self.k_v, *self.hidden, 2 * self.k_u), output="linear")
        self.dec_spec = MLPSpec((self.k_u, *reversed(self.hidden), self.k_v), output="tanh")
        if params is None:
            rng = rng if rng is not None else nn.make_rng(0)
            params = {"V": nn.xavier_uniform(rng, self.n_items, self.k_v), "item_bias": np.zeros(self.n_items)}
            if mode == "normal":
                params["emb"] = nn.xavier_uniform(rng, self.n_items, self.k_v)
            params["emb_bias"] = np.zeros(self.k_v)
            for prefix, spec in (("enc", self.enc_spec), ("dec", self.dec_spec)):
                for l, layer in enumerate(nn.init_mlp(spec, rng)):
                    params[f"{prefix}.{l}.W"] = layer.W
                    params[f"{prefix}.{l}.b"] = layer.b
        self.params = params

    @property
    def table(self) -> np.ndarray:
        """Encoder first-layer weights, one row per item (``V`` itself when tied)."""
        return self.params["V"] if self.mode == "symmetric" else self.params["emb"]

    def _layers(self, prefix, spec):
        n = len(spec.layer_dims) - 1
        return [Dense(self.params[f"{prefix}.{l}.W"], self.params[f"{prefix}.{l}.b"]) for l in range(n)]

    def enc_layers(self):
        return self._layers("enc", self.enc_spec)

    def dec_layers(self):
        return self._layers("dec", self.dec_spec)

    def weight_names(self):
        names = [k for k in self.params if k.endswith(".W")] + ["V"]
        return names + (["emb"] if self.mode == "normal" else [])

    def copy(self) -> "UserVAE":
        return UserVAE(self.n_items, self.k_u, self.k_v, self.hidden, self.mode, self.normalize_input,
                       params={k: v.copy() for k, v in self.params.items()})


def _input_weights(uvae: UserVAE, batch: RatingMatrix, dropout_p: float, rng):
    """Per-nonzero input values after (inverted) dropout and optional L2 norm."""
    data = np.ones(batch.nnz)
    if uvae.normalize_input:
        counts = batch.row_counts()
        data = data / np.repeat(np.sqrt(np.maximum(counts, 1)), counts)
    if dropout_p > 0:
        keep = rng.random(batch.nnz) >= dropout_p
        data = data * keep / (1.0 - dropout_p)
    return data


def _check_batch(uvae: UserVAE, batch: RatingMatrix):
    if batch.shape[1] != uvae.n_items:
        raise DimensionError(f"rating rows have width {batch.shape[1]}, model has {uvae.n_items} items")


def _encode(uvae: UserVAE, batch: RatingMatrix, data):
    a1 = kernels.embed_sum(batch.indptr, batch.indices, data, uvae.table) + uvae.params["emb_bias"]
    h1 = np.tanh(a1)
    enc_layers = uvae.enc_layers()
    out, cache = nn.mlp_forward(uvae.enc_spec, enc_layers, h1)
    post = GaussianPosterior.from_raw(out[:, :uvae.k_u], out[:, uvae.k_u:])
    return post, (h1, enc_layers, cache)


def encode_users(uvae: UserVAE, batch: RatingMatrix, dropout_p: float = 0.0, rng=None) -> GaussianPosterior:
    _check_batch(uvae, batch)
    return _encode(uvae, batch, _input_weights(uvae, batch, dropout_p, rng))[0]


def first_layer(uvae: UserVAE, batch: RatingMatrix) -> np.ndarray:
    """Pre-activation of the encoder's embedding-sum layer (no dropout)."""
    _check_batch(uvae, batch)
    data = _input_weights(uvae, batch, 0.0, None)
    return kernels.embed_sum(batch.indptr, batch.indices, data, uvae.table) + uvae.params["emb_bias"]


def decode_users(uvae: UserVAE, u: np.ndarray) -> np.ndarray:
    """Item logits ``V @ MLP_gen(u) + item_bias``; softmax is left to the caller."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != uvae.k_u:
        raise DimensionError(f"expected user codes of width {uvae.k_u}, got {u.shape}")
    g, _ = nn.mlp_forward(uvae.dec_spec, uvae.dec_layers(), u)
    return g @ uvae.params["V"].T + uvae.params["item_bias"]


def b_step(uvae: UserVAE, batch: RatingMatrix, zt_hat: np.ndarray | None, lambda_v: float, lambda_w: float,
           beta: float, batch_fraction: float, rng=None, dropout_p: float = 0.0, eps: np.ndarray | None = None):
    """Rating-side MAP objective on a batch of users and its ascent gradients.

    objective = sum_users [log p(r|u) - beta KL(q(u|r) || N(0,I))]
                - batch_fraction * lambda_v/2 * ||V - zt_hat||^2
                - batch_fraction * lambda_w/2 * sum ||W||^2

    ``zt_hat`` (J, K_v) is a constant; ``None`` means a zero target. In
    symmetric mode the gradient for ``V`` sums the decoder, encoder and
    penalty paths. Returns ``(objective, grads, terms)``.
    """
    if beta < 0 or lambda_v < 0 or lambda_w < 0:
        raise ConfigError("beta, lambda_v and lambda_w must be >= 0")
    _check_batch(uvae, batch)
    p = uvae.params
    V = p["V"]
    data = _input_weights(uvae, batch, dropout_p, rng)
    post, (h1, enc_layers, enc_cache) = _encode(uvae, batch, data)
    u, eps = nn.sample_gaussian(post, rng, eps)
    dec_layers = uvae.dec_layers()
    g, dec_cache = nn.mlp_forward(uvae.dec_spec, dec_layers, u)
    logits = g @ V.T + p["item_bias"]
    r = batch.to_dense()
    ll, dlogits = nn.multinomial_ll(logits, r)
    kl = nn.kl_diag_gaussian(post)

    diff = V if zt_hat is None else V - zt_hat
    coupling = -0.5 * batch_fraction * lambda_v * np.sum(diff * diff)
    wnames = uvae.weight_names()
    decay = -0.5 * batch_fraction * lambda_w * sum(np.sum(p[k] ** 2) for k in wnames)
    obj = float(ll.sum() - beta * kl.sum() + coupling + decay)

    grads = {"V": dlogits.T @ g, "item_bias": dlogits.sum(axis=0)}
    dg = dlogits @ V
    du, dec_grads = nn.mlp_backward(dec_cache, dec_layers, dg)
    kl_mu, kl_ls = nn.kl_diag_gaussian_grad(post)
    dmu = du - beta * kl_mu
    dls = (du * eps * post.sigma - beta * kl_ls) * post.clip_mask
    dh1, enc_grads = nn.mlp_backward(enc_cache, enc_layers, np.hstack([dmu, dls]), pre_activation=True)
    da1 = dh1 * (1.0 - h1 * h1)
    grads["emb_bias"] = da1.sum(axis=0)
    dtable = kernels.embed_scatter(batch.indptr, batch.indices, data, da1, uvae.n_items)
    if uvae.mode == "symmetric":
        grads["V"] += dtable
    else:
        grads["emb"] = dtable
    for prefix, gl in (("enc", enc_grads), ("dec", dec_grads)):
        for l, gr in enumerate(gl):
            grads[f"{prefix}.{l}.W"] = gr.W
            grads[f"{prefix}.{l}.b"] = gr.b
    grads["V"] -= batch_fraction * lambda_v * diff
    for k in wnames:
        grads[k] = grads[k] - batch_fraction * lambda_w * p[k]
    terms = {"multinomial_ll": float(ll.sum()), "beta_kl": float(beta * kl.sum()),
             "coupling": float(coupling), "weight_decay": float(decay)}
    return obj, grads, terms
