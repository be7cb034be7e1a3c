"""Dual item-content VAE: q(z_t | x) encoder, p(x | z_t) decoder, greedy
layerwise pretraining and the content-side objective (t_step)."""
from __future__ import annotations

import numpy as np

from . import nn
from .nn import ConfigError, Dense, DimensionError, GaussianPosterior, MLPSpec


class ItemVAE:
    """Parameters of the content VAE, held in a flat name -> array table.

    Encoder: ``S -> hidden... -> 2*K_v`` (mean and raw log-sigma).
    Decoder: ``K_v -> reversed(hidden)... -> S``; the last layer is linear and
    is read as the Gaussian mean or the Bernoulli logit.
    """

    def __init__(self, n_features: int, k_v: int, hidden=(), likelihood: str = "gaussian",
                 lambda_x: float = 1.0, rng=None, params: dict | None = None):
        if likelihood not in ("gaussian", "bernoulli"):
            raise ConfigError(f"unknown content likelihood {likelihood!r}")
        self.n_features = int(n_features)
        self.k_v = int(k_v)
        self.hidden = tuple(int(h) for h in hidden)
        self.likelihood = likelihood
        self.lambda_x = float(lambda_x)
        dims = (self.n_features, *self.hidden)
        self.enc_spec = MLPSpec((*dims, 2 * self.k_v), output="linear")
        self.dec_spec = MLPSpec((self.k_v, *reversed(dims)), output="linear")
        if params is None:
            rng = rng if rng is not None else nn.make_rng(0)
            params = {}
            for prefix, spec in (("enc", self.enc_spec), ("dec", self.dec_spec)):
                for l, layer in enumerate(nn.init_mlp(spec, rng)):
                    params[f"{prefix}.{l}.W"] = layer.W
                    params[f"{prefix}.{l}.b"] = layer.b
        self.params = params

    def _layers(self, prefix, spec):
        n = len(spec.layer_dims) - 1
        return [Dense(self.params[f"{prefix}.{l}.W"], self.params[f"{prefix}.{l}.b"]) for l in range(n)]

    def enc_layers(self):
        return self._layers("enc", self.enc_spec)

    def dec_layers(self):
        return self._layers("dec", self.dec_spec)

    def weight_names(self):
        return [k for k in self.params if k.endswith(".W")]

    def copy(self) -> "ItemVAE":
        return ItemVAE(self.n_features, self.k_v, self.hidden, self.likelihood, self.lambda_x,
                       params={k: v.copy() for k, v in self.params.items()})


def _check_width(X, width, what):
    if X.ndim != 2 or X.shape[1] != width:
        raise DimensionError(f"{what}: expected width {width}, got shape {X.shape}")


def encode_content(vae: ItemVAE, X: np.ndarray) -> GaussianPosterior:
    """Posterior (mu, log sigma) over the K_v content embedding, one row per item."""
    X = np.asarray(X, dtype=np.float64)
    _check_width(X, vae.n_features, "encode_content")
    out, _ = nn.mlp_forward(vae.enc_spec, vae.enc_layers(), X)
    return GaussianPosterior.from_raw(out[:, :vae.k_v], out[:, vae.k_v:])


def decode_content(vae: ItemVAE, z: np.ndarray) -> np.ndarray:
    """Reconstructed features: the mean (gaussian) or probabilities (bernoulli)."""
    z = np.asarray(z, dtype=np.float64)
    _check_width(z, vae.k_v, "decode_content")
    out, _ = nn.mlp_forward(vae.dec_spec, vae.dec_layers(), z)
    return nn.sigmoid(out) if vae.likelihood == "bernoulli" else out


def t_step(vae: ItemVAE, X: np.ndarray, V_hat: np.ndarray | None, lambda_v: float, lambda_w: float,
           rng=None, eps: np.ndarray | None = None, batch_fraction: float = 1.0):
    """Content-side MAP objective on a batch of items and its ascent gradients.

    ``V_hat`` holds the current item-embedding rows for the batch and is a
    constant here. The coupling term uses the sampled ``z_t``. Weight decay
    is a global term, so each batch applies ``batch_fraction`` of it.

    Returns ``(objective, grads, terms)``.
    """
    if lambda_v < 0 or lambda_w < 0:
        raise ConfigError("lambda_v and lambda_w must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    _check_width(X, vae.n_features, "t_step")
    enc_layers, dec_layers = vae.enc_layers(), vae.dec_layers()
    out, enc_cache = nn.mlp_forward(vae.enc_spec, enc_layers, X)
    post = GaussianPosterior.from_raw(out[:, :vae.k_v], out[:, vae.k_v:])
    z, eps = nn.sample_gaussian(post, rng, eps)
    x_out, dec_cache = nn.mlp_forward(vae.dec_spec, dec_layers, z)
    ll, dll = nn.content_ll(X, x_out, vae.likelihood, vae.lambda_x)
    kl = nn.kl_diag_gaussian(post)

    if V_hat is None or lambda_v == 0:
        diff = np.zeros_like(z)
    else:
        diff = V_hat - z
    coupling = -0.5 * lambda_v * np.sum(diff * diff)
    wnames = vae.weight_names()
    decay = -0.5 * batch_fraction * lambda_w * sum(np.sum(vae.params[k] ** 2) for k in wnames)
    obj = float(ll.sum() + coupling - kl.sum() + decay)

    dz, dec_grads = nn.mlp_backward(dec_cache, dec_layers, dll, pre_activation=True)
    dz = dz + lambda_v * diff
    kl_mu, kl_ls = nn.kl_diag_gaussian_grad(post)
    dmu = dz - kl_mu
    dls = (dz * eps * post.sigma - kl_ls) * post.clip_mask
    _, enc_grads = nn.mlp_backward(enc_cache, enc_layers, np.hstack([dmu, dls]), pre_activation=True)

    grads = {}
    for prefix, gl in (("enc", enc_grads), ("dec", dec_grads)):
        for l, g in enumerate(gl):
            grads[f"{prefix}.{l}.W"] = g.W
            grads[f"{prefix}.{l}.b"] = g.b
    for k in wnames:
        grads[k] = grads[k] - batch_fraction * lambda_w * vae.params[k]
    terms = {"content_ll": float(ll.sum()), "content_kl": float(kl.sum()),
             "content_coupling": float(coupling), "content_decay": float(decay)}
    return obj, grads, terms


def reconstruction_error(vae: ItemVAE, X: np.ndarray) -> float:
    """Mean squared error of the deterministic (posterior-mean) reconstruction."""
    X_hat = decode_content(vae, encode_content(vae, X).mu)
    return float(np.mean((X - X_hat) ** 2))


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[s:s + batch_size] for s in range(0, n, batch_size)]


def _train_level(codes, d_in, d_out, code_act, recon, vae, epochs, batch_size, lr, lambda_w, rng):
    """Train one encoder/decoder pair as a shallow auto-encoder on ``codes``.

    ``recon`` is ``"content"`` for the bottom level (uses the VAE's content
    likelihood) or ``"tanh"`` for reconstructing tanh codes with squared error.
    """
    spec = MLPSpec((d_in, d_out, d_in), hidden=code_act, output="linear" if recon == "content" else "tanh")
    layers = nn.init_mlp(spec, rng)
    params = {"e.W": layers[0].W, "e.b": layers[0].b, "d.W": layers[1].W, "d.b": layers[1].b}
    opt = nn.Adam(lr=lr, maximize=True)
    n = len(codes)
    for _ in range(epochs):
        for idx in _batches(n, batch_size, rng):
            c = codes[idx]
            y, cache = nn.mlp_forward(spec, layers, c)
            if recon == "content":
                _, dy = nn.content_ll(c, y, vae.likelihood, vae.lambda_x)
                _, g = nn.mlp_backward(cache, layers, dy, pre_activation=True)
            else:
                _, g = nn.mlp_backward(cache, layers, c - y)
            frac = len(idx) / n
            opt.step(params, {"e.W": g[0].W - frac * lambda_w * layers[0].W, "e.b": g[0].b,
                              "d.W": g[1].W - frac * lambda_w * layers[1].W, "d.b": g[1].b})
    return layers


def pretrain_layerwise(X: np.ndarray, vae: ItemVAE, epochs_per_layer: int, rng,
                       finetune_epochs: int = 0, batch_size: int = 500, lr: float = 1e-3,
                       lambda_w: float = 0.0) -> ItemVAE:
    """Greedy stacked auto-encoder pretraining followed by joint VAE fine-tuning.

    Level ``l`` learns ``d_l -> d_{l+1}`` on the codes of level ``l-1``; the top
    level learns the posterior-mean map. Trained pairs are copied into the
    encoder (mean rows of the last layer) and the mirrored decoder. Returns a
    new ``ItemVAE``; ``vae`` is left untouched.
    """
    out = vae.copy()
    if epochs_per_layer <= 0 and finetune_epochs <= 0:
        return out
    X = np.asarray(X, dtype=np.float64)
    dims = (vae.n_features, *vae.hidden, vae.k_v)
    n_levels = len(dims) - 1
    if epochs_per_layer > 0:
        codes = X
        for l in range(n_levels):
            top = l == n_levels - 1
            layers = _train_level(codes, dims[l], dims[l + 1], "linear" if top else "tanh",
                                  "content" if l == 0 else "tanh", vae, epochs_per_layer,
                                  batch_size, lr, lambda_w, rng)
            enc_W, enc_b = out.params[f"enc.{l}.W"], out.params[f"enc.{l}.b"]
            enc_W[:dims[l + 1]] = layers[0].W
            enc_b[:dims[l + 1]] = layers[0].b
            if top:
                # start with small, equal posterior variances
                enc_W[dims[l + 1]:] *= 0.01
                enc_b[dims[l + 1]:] = -2.0
            dec_idx = n_levels - 1 - l
            out.params[f"dec.{dec_idx}.W"][...] = layers[1].W
            out.params[f"dec.{dec_idx}.b"][...] = layers[1].b
            pre = codes @ layers[0].W.T + layers[0].b
            codes = pre if top else np.tanh(pre)
    if finetune_epochs > 0:
        opt = nn.Adam(lr=lr, maximize=True)
        n = len(X)
        for _ in range(finetune_epochs):
            for idx in _batches(n, batch_size, rng):
                _, grads, _ = t_step(out, X[idx], None, 0.0, lambda_w, rng, batch_fraction=len(idx) / n)
                opt.step(out.params, grads)
    return out
