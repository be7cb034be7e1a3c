"""Finite-difference suites for the two alternating objectives on toy shapes."""
from __future__ import annotations

import numpy as np

from . import nn
from .data import RatingMatrix
from .item_vae import ItemVAE, t_step
from .user_vae import UserVAE, b_step

TOY = {"n_users": 8, "n_items": 12, "n_features": 6, "k_u": 3, "k_v": 4, "hidden": (5,)}


def _toy_ratings(rng, n_users, n_items):
    dense = rng.random((n_users, n_items)) < 0.35
    dense[np.arange(n_users), rng.integers(n_items, size=n_users)] = True
    u, j = np.nonzero(dense)
    return RatingMatrix.from_pairs(u, j, (n_users, n_items))


def _jitter(params, rng, scale=0.3):
    # xavier init leaves biases at zero; perturb everything so no path is trivially flat
    for v in params.values():
        v += scale * rng.standard_normal(v.shape)


def check_t_step(seed: int = 0, likelihood: str = "gaussian", **kw) -> nn.GradCheckReport:
    rng = nn.make_rng(seed)
    s = TOY
    vae = ItemVAE(s["n_features"], s["k_v"], s["hidden"], likelihood, lambda_x=0.7, rng=rng)
    _jitter(vae.params, rng)
    X = rng.random((s["n_items"], s["n_features"]))
    if likelihood == "gaussian":
        X = rng.standard_normal(X.shape)
    V_hat = rng.standard_normal((s["n_items"], s["k_v"]))
    eps = rng.standard_normal((s["n_items"], s["k_v"]))

    def objective(_):
        return t_step(vae, X, V_hat, 1.3, 0.05, eps=eps, batch_fraction=0.5)[0]

    _, grads, _ = t_step(vae, X, V_hat, 1.3, 0.05, eps=eps, batch_fraction=0.5)
    return nn.finite_diff_check(objective, vae.params, grads, seed=seed, **kw)


def check_b_step(seed: int = 0, mode: str = "normal", normalize_input: bool = False, **kw) -> nn.GradCheckReport:
    rng = nn.make_rng(seed)
    s = TOY
    uvae = UserVAE(s["n_items"], s["k_u"], s["k_v"], s["hidden"], mode, normalize_input, rng=rng)
    _jitter(uvae.params, rng)
    batch = _toy_ratings(rng, s["n_users"], s["n_items"])
    zt_hat = rng.standard_normal((s["n_items"], s["k_v"]))
    eps = rng.standard_normal((s["n_users"], s["k_u"]))
    args = (uvae, batch, zt_hat, 0.9, 0.05, 0.3, 0.25)

    def objective(_):
        return b_step(*args, dropout_p=0.0, eps=eps)[0]

    _, grads, _ = b_step(*args, dropout_p=0.0, eps=eps)
    return nn.finite_diff_check(objective, uvae.params, grads, seed=seed, **kw)


def gradcheck_suite(seed: int = 0, **kw) -> dict:
    """All suites; ``name -> GradCheckReport``."""
    return {
        "t_step/gaussian": check_t_step(seed, "gaussian", **kw),
        "t_step/bernoulli": check_t_step(seed, "bernoulli", **kw),
        "b_step/normal": check_b_step(seed, "normal", **kw),
        "b_step/symmetric": check_b_step(seed, "symmetric", **kw),
        "b_step/symmetric+norm": check_b_step(seed, "symmetric", normalize_input=True, **kw),
    }
