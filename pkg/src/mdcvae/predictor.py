"""Fold-in recommendation, catalog extension with content surrogates, and
normal/cold split evaluation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .data import ColdPartition, FoldInPair, RatingMatrix
from .item_vae import encode_content
from .metrics import evaluate_rankings, random_recall_expectation
from .model import Model
from .nn import DimensionError
from .user_vae import UserVAE, decode_users, encode_users

CHUNK = 1024


class UnsupportedOperation(RuntimeError):
    pass


@dataclass(frozen=True)
class Ranking:
    items: np.ndarray
    scores: np.ndarray
    truncated: bool = False


def _as_matrix(model: Model, rows) -> RatingMatrix:
    if isinstance(rows, RatingMatrix):
        if rows.shape[1] != model.n_items:
            raise DimensionError(f"rows have width {rows.shape[1]}, catalog has {model.n_items} items")
        return rows
    rows = [np.asarray(r, dtype=np.int64) for r in rows]
    for r in rows:
        if len(r) and (r.min() < 0 or r.max() >= model.n_items):
            raise DimensionError(f"item id out of range for a catalog of {model.n_items}")
    return RatingMatrix.from_rows(rows, model.n_items)


def fold_in(model: Model, rows) -> np.ndarray:
    """Posterior means of the user codes (no dropout, no sampling)."""
    return encode_users(model.uvae, _as_matrix(model, rows), 0.0).mu


def score(model: Model, rows) -> np.ndarray:
    """Item logits for each history row, from the posterior mean."""
    mat = _as_matrix(model, rows)
    out = np.empty((mat.shape[0], model.n_items))
    for s in range(0, mat.shape[0], CHUNK):
        part = mat.take_rows(range(s, min(s + CHUNK, mat.shape[0])))
        out[s:s + CHUNK] = decode_users(model.uvae, fold_in(model, part))
    return out


def rank_from_scores(scores: np.ndarray, exclude: RatingMatrix, M: int, allowed=None) -> list:
    items, vals, counts = kernels.topk_masked(scores, M, exclude.indptr, exclude.indices, allowed)
    return [Ranking(items[r, :counts[r]], vals[r, :counts[r]], bool(counts[r] < M)) for r in range(len(counts))]


def recommend_many(model: Model, rows, M: int, allowed=None) -> list:
    """Top-``M`` rankings for each history; history items are never returned."""
    if M < 1:
        raise ValueError("M must be >= 1")
    mat = _as_matrix(model, rows)
    return rank_from_scores(score(model, mat), mat, M, allowed)


def recommend(model: Model, history, M: int) -> Ranking:
    return recommend_many(model, [history], M)[0]


def extend_items(model: Model, features_new: np.ndarray) -> Model:
    """Append new items using their content posterior means as surrogate embeddings.

    Requires the tied (symmetric) model: only then do the encoder input and the
    decoder output both read the item-embedding table. The returned model
    shares nothing with ``model``; new item biases are the mean existing bias.
    """
    if model.mode != "symmetric":
        raise UnsupportedOperation(
            "online item extension requires symmetric (MDsym) mode: an untied model's "
            "encoder has no content-regularized weights for unseen items and must be "
            "retrained once interactions for the new items are collected")
    if model.ivae is None:
        raise UnsupportedOperation("online item extension requires the content VAE")
    features_new = np.asarray(features_new, dtype=np.float64).reshape(-1, model.ivae.n_features)
    out = model.copy()
    if len(features_new) == 0:
        return out
    p = out.uvae.params
    V_new = encode_content(model.ivae, features_new).mu
    bias = p["item_bias"]
    params = dict(p)
    params["V"] = np.vstack([p["V"], V_new])
    params["item_bias"] = np.concatenate([bias, np.full(len(V_new), bias.mean())])
    u = out.uvae
    out.uvae = UserVAE(u.n_items + len(V_new), u.k_u, u.k_v, u.hidden, u.mode, u.normalize_input, params=params)
    return out


def evaluate(model: Model, pairs: list, M_list=(20, 40, 100)) -> dict:
    """In-matrix metrics over fold-in pairs (holdout ranked against all non-input items)."""
    pairs = [p for p in pairs if not p.excluded]
    if not pairs:
        return evaluate_rankings([], [], M_list)
    inputs = RatingMatrix.from_rows([p.input_items for p in pairs], model.n_items)
    rankings = rank_from_scores(score(model, inputs), inputs, max(M_list))
    return evaluate_rankings([r.items for r in rankings], [p.holdout_items for p in pairs], M_list)


def coldstart_eval(model: Model, partition: ColdPartition | np.ndarray, pairs: list, M_list=(20, 100)) -> dict:
    """Metrics for normal and cold items, each ranked within its own candidate pool.

    Returns ``{"normal": reports, "cold": reports, "random_cold": {M: expectation}}``.
    Users without holdout items in a group are excluded from that group.
    """
    cold_ids = partition.cold_item_ids if isinstance(partition, ColdPartition) else np.asarray(partition)
    is_cold = np.zeros(model.n_items, dtype=bool)
    is_cold[cold_ids] = True
    pairs = [p for p in pairs if not p.excluded]
    inputs = RatingMatrix.from_rows([p.input_items for p in pairs], model.n_items)
    scores = score(model, inputs) if pairs else np.zeros((0, model.n_items))
    out = {}
    for group, mask in (("normal", ~is_cold), ("cold", is_cold)):
        sel = [k for k, p in enumerate(pairs) if mask[p.holdout_items].any()]
        ex = inputs.take_rows(sel)
        rankings = rank_from_scores(scores[sel], ex, max(M_list), mask.astype(np.uint8)) if sel else []
        holdouts = [pairs[k].holdout_items[mask[pairs[k].holdout_items]] for k in sel]
        out[group] = evaluate_rankings([r.items for r in rankings], holdouts, M_list, group=group)
        if group == "cold":
            pools = [int(mask.sum() - mask[pairs[k].input_items].sum()) for k in sel]
            out["random_cold"] = {M: random_recall_expectation(pools, [len(h) for h in holdouts], M)
                                  for M in M_list}
    return out
