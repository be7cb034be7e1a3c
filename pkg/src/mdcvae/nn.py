"""Numerical kernel: dense layers with analytic backward passes, likelihoods,
Gaussian KL, reparameterized sampling, Adam, and a finite-difference checker.

Conventions: a layer computes ``Y = X @ W.T + b`` with ``W`` of shape
``(out, in)``. Objectives are maximized; "gradients" returned by the model
code are ascent directions of the objective.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

LOG_SIGMA_MIN = -10.0
LOG_SIGMA_MAX = 10.0
BERNOULLI_EPS = 1e-7

ACTIVATIONS = ("linear", "tanh", "sigmoid", "softmax")


class DimensionError(ValueError):
    pass


class CacheError(RuntimeError):
    """Backward called with a cache that does not belong to the given layers."""


class ConfigError(ValueError):
    pass


class NumericalError(FloatingPointError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    """Seeded 64-bit PRNG (PCG64). Identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass
class Dense:
    W: np.ndarray
    b: np.ndarray


@dataclass(frozen=True)
class MLPSpec:
    layer_dims: tuple[int, ...]
    output: str = "linear"
    hidden: str = "tanh"

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ConfigError("an MLP needs at least one layer")
        if self.output not in ACTIVATIONS or self.hidden not in ACTIVATIONS:
            raise ConfigError(f"unknown activation in {self.hidden}/{self.output}")


def xavier_uniform(rng, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_mlp(spec: MLPSpec, rng) -> list[Dense]:
    dims = spec.layer_dims
    return [Dense(xavier_uniform(rng, o, i), np.zeros(o)) for i, o in zip(dims[:-1], dims[1:])]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name: str, a: np.ndarray) -> np.ndarray:
    if name == "linear":
        return a
    if name == "tanh":
        return np.tanh(a)
    if name == "sigmoid":
        return sigmoid(a)
    return softmax(a)


def _activation_grad(name: str, y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    if name == "linear":
        return dy
    if name == "tanh":
        return dy * (1.0 - y * y)
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    # softmax Jacobian-vector product
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


@dataclass
class MLPCache:
    spec: MLPSpec
    inputs: list
    outputs: list
    layer_ids: tuple
    used: bool = False


def mlp_forward(spec: MLPSpec, layers: list[Dense], X: np.ndarray):
    """Run the MLP on ``X`` of shape (batch, in).

    Returns ``(Y, cache)``; the cache is consumed by :func:`mlp_backward`.
    """
    if len(layers) != len(spec.layer_dims) - 1:
        raise DimensionError(f"spec has {len(spec.layer_dims) - 1} layers, got {len(layers)}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.layer_dims[0]:
        raise DimensionError(f"expected input width {spec.layer_dims[0]}, got shape {X.shape}")
    inputs, outputs = [], []
    h = X
    for idx, layer in enumerate(layers):
        if layer.W.shape != (spec.layer_dims[idx + 1], spec.layer_dims[idx]):
            raise DimensionError(f"layer {idx} weight shape {layer.W.shape} does not match spec")
        inputs.append(h)
        act = spec.output if idx == len(layers) - 1 else spec.hidden
        h = _activate(act, h @ layer.W.T + layer.b)
        outputs.append(h)
    cache = MLPCache(spec, inputs, outputs, tuple(id(l.W) for l in layers))
    return h, cache


def mlp_backward(cache: MLPCache, layers: list[Dense], dY: np.ndarray, pre_activation: bool = False):
    """Backpropagate ``dY`` through a cached forward pass.

    With ``pre_activation=True`` the incoming gradient is taken with respect
    to the last layer's pre-activation, which is how fused heads (softmax
    with multinomial, sigmoid with Bernoulli) pass their gradient in.

    Returns ``(dX, grads)`` with ``grads`` a list of ``Dense`` holding dW, db.
    """
    if cache.used:
        raise CacheError("cache already consumed; run mlp_forward again")
    if tuple(id(l.W) for l in layers) != cache.layer_ids:
        raise CacheError("layers differ from those used in the forward pass")
    cache.used = True
    grads: list[Dense] = [None] * len(layers)  # type: ignore[list-item]
    d = np.asarray(dY, dtype=np.float64)
    for idx in range(len(layers) - 1, -1, -1):
        last = idx == len(layers) - 1
        act = cache.spec.output if last else cache.spec.hidden
        if not (last and pre_activation):
            d = _activation_grad(act, cache.outputs[idx], d)
        x = cache.inputs[idx]
        grads[idx] = Dense(d.T @ x, d.sum(axis=0))
        d = d @ layers[idx].W
    return d, grads


@dataclass
class GaussianPosterior:
    """Diagonal Gaussian per row. ``clip_mask`` marks entries of the raw
    log-sigma that were inside the clamp range (gradient passes there)."""

    mu: np.ndarray
    log_sigma: np.ndarray
    clip_mask: np.ndarray | None = None

    @classmethod
    def from_raw(cls, mu, raw_log_sigma):
        mask = (raw_log_sigma > LOG_SIGMA_MIN) & (raw_log_sigma < LOG_SIGMA_MAX)
        return cls(mu, np.clip(raw_log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX), mask)

    @property
    def sigma(self):
        return np.exp(self.log_sigma)


def sample_gaussian(post: GaussianPosterior, rng=None, eps: np.ndarray | None = None):
    """One reparameterized draw per row: ``z = mu + eps * sigma``.

    Returns ``(z, eps)``; pass ``eps`` explicitly to freeze the noise.
    """
    if eps is None:
        eps = rng.standard_normal(post.mu.shape)
    return post.mu + eps * post.sigma, eps


def kl_diag_gaussian(post: GaussianPosterior) -> np.ndarray:
    """KL(q || N(0, I)) per row."""
    mu, ls = post.mu, post.log_sigma
    # expm1 keeps sigma^2 - 1 - log sigma^2 >= 0 for tiny log-sigma
    return 0.5 * np.sum(mu * mu + (np.expm1(2.0 * ls) - 2.0 * ls), axis=1)


def kl_diag_gaussian_grad(post: GaussianPosterior):
    """Gradient of the summed KL with respect to (mu, log_sigma)."""
    return post.mu, np.expm1(2.0 * post.log_sigma)


def multinomial_ll(logits: np.ndarray, r: np.ndarray):
    """Per-row ``sum_j r_j log softmax(logits)_j`` and its gradient wrt logits."""
    logp = log_softmax(logits)
    ll = np.sum(r * logp, axis=1)
    grad = r - r.sum(axis=1, keepdims=True) * np.exp(logp)
    return ll, grad


def content_ll(x: np.ndarray, out: np.ndarray, mode: str = "gaussian", lambda_x: float = 1.0):
    """Per-row content log-likelihood (constants dropped) and gradient.

    ``out`` is the decoder's pre-activation output. In gaussian mode it is the
    mean; in bernoulli mode it is the logit and the probability is clamped to
    ``[1e-7, 1 - 1e-7]`` inside the log. The gradient is with respect to
    ``out`` in both modes.
    """
    if mode == "gaussian":
        diff = x - out
        return -0.5 * lambda_x * np.sum(diff * diff, axis=1), lambda_x * diff
    if mode == "bernoulli":
        if np.any((x < 0) | (x > 1)):
            raise ConfigError("bernoulli content likelihood requires features in [0, 1]")
        p = np.clip(sigmoid(out), BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
        ll = np.sum(x * np.log(p) + (1.0 - x) * np.log(1.0 - p), axis=1)
        return ll, x - sigmoid(out)
    raise ConfigError(f"unknown content likelihood {mode!r}")


@dataclass
class Adam:
    """Bias-corrected Adam over a dict of named arrays.

    By default ``step`` descends along ``grads``. With ``maximize=True`` it
    ascends, which is how the trainer applies the MAP-objective gradients.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    maximize: bool = False
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = np.argwhere(~np.isfinite(g))[0]
                raise NumericalError(f"non-finite gradient for {name!r} at index {tuple(bad)}")
            if params[name].shape != g.shape:
                raise DimensionError(f"gradient shape {g.shape} != parameter shape for {name!r}")
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in sorted(grads):
            g = -grads[name] if self.maximize else grads[name]
            m = self.m.get(name)
            if m is None or m.shape != g.shape:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class GradCheckReport:
    max_rel_err: float
    n_checked: int
    worst: tuple
    passed: bool


def finite_diff_check(objective: Callable[[dict], float], params: dict, grads: dict,
                      h: float = 1e-5, tol: float = 1e-4, n_coords: int = 200,
                      seed: int = 0, floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic ``grads`` with central differences of ``objective``.

    Checks every coordinate when there are at most ``n_coords`` of them,
    otherwise a seeded random subsample of ``n_coords``. Relative error is
    ``|a - n| / max(|a|, |n|, floor)``. ``params`` is perturbed in place and
    restored.
    """
    coords = [(name, idx) for name in sorted(grads) for idx in np.ndindex(params[name].shape)]
    if len(coords) > n_coords:
        pick = np.random.default_rng(seed).choice(len(coords), size=n_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]
    worst, max_err = None, 0.0
    for name, idx in coords:
        p = params[name]
        orig = p[idx]
        p[idx] = orig + h
        fp = objective(params)
        p[idx] = orig - h
        fm = objective(params)
        p[idx] = orig
        num = (fp - fm) / (2.0 * h)
        ana = grads[name][idx]
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        if err > max_err or worst is None:
            max_err, worst = err, (name, idx, ana, num)
    return GradCheckReport(float(max_err), len(coords), worst, bool(max_err < tol))
