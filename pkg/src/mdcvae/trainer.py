"""Alternating (EM-like) training, validation-based model selection and sweeps."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import TrainConfig, stage_seed
from .data import RatingMatrix, UserSplit, fold_in_split
from .item_vae import encode_content, pretrain_layerwise, t_step
from .model import Model, build_model
from .predictor import evaluate
from .user_vae import BetaSchedule, b_step, kl_anneal

log = logging.getLogger(__name__)

SELECT_METRICS = (("recall", 20), ("recall", 40), ("ndcg", 100))


class TrainingError(nn.NumericalError):
    """Non-finite objective; ``last_good`` holds the model from the last finished epoch."""

    def __init__(self, msg, last_good: Model):
        super().__init__(msg)
        self.last_good = last_good


@dataclass
class Snapshot:
    epoch: int
    score: float
    model: Model | None = None
    metrics: dict = field(default_factory=dict)


def validate_select(snapshots: list) -> Snapshot:
    """Highest score wins; ties go to the earliest epoch."""
    if not snapshots:
        raise ValueError("no snapshots to select from")
    best = snapshots[0]
    for s in snapshots[1:]:
        if s.score > best.score:
            best = s
    return best


def selection_score(reports: dict) -> tuple:
    vals = {f"{m}@{M}": reports[(m, M)].mean for m, M in SELECT_METRICS}
    return float(np.mean(list(vals.values()))), vals


def _check(value, what, last_good):
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what}", last_good)


def train(config: TrainConfig, ratings: RatingMatrix, features: np.ndarray | None,
          split: UserSplit | None = None, val_pairs: list | None = None):
    """Train a model; returns ``(model, history)``.

    Per epoch: refresh the content means, one b_step pass over shuffled
    training users, freeze the item-embedding rows, one t_step pass over
    shuffled items, then score validation users. ``history`` has one dict
    per epoch with every loss term. With ``select_best`` the returned model
    is the best validation snapshot.
    """
    n_users, J = ratings.shape
    if features is not None and len(features) != J:
        raise ValueError(f"{len(features)} feature rows for a catalog of {J} items")
    seed = config.seed
    use_content = config.use_content and features is not None
    model = build_model(config, J, features.shape[1] if use_content else None,
                        nn.make_rng(stage_seed(seed, "init")))
    if use_content:
        model.ivae = pretrain_layerwise(features, model.ivae, config.pretrain_epochs,
                                        nn.make_rng(stage_seed(seed, "pretrain")), config.finetune_epochs,
                                        config.batch_items, config.lr, config.lambda_w)
    history: list = []
    if config.epochs == 0:
        return model, history

    train_users = np.arange(n_users) if split is None else np.asarray(split.train_users)
    if val_pairs is None and split is not None and len(split.val_users):
        val_pairs = fold_in_split(ratings, split.val_users, 0.2, stage_seed(seed, "holdout"))
    rng = nn.make_rng(stage_seed(seed, "train"))
    uopt = nn.Adam(lr=config.lr, maximize=True)
    iopt = nn.Adam(lr=config.lr, maximize=True)
    n_train = len(train_users)
    n_batches = math.ceil(n_train / config.batch_users)
    schedule = BetaSchedule(config.beta_max, round(config.anneal_frac * config.epochs * n_batches))
    step = 0
    uvae, ivae = model.uvae, model.ivae
    best: Snapshot | None = None
    last_good = model.copy()

    for epoch in range(config.epochs):
        rec = {"epoch": epoch}
        zt_hat = encode_content(ivae, features).mu if use_content else None
        b_obj, b_terms = 0.0, {}
        perm = rng.permutation(train_users)
        for s in range(0, n_train, config.batch_users):
            users = perm[s:s + config.batch_users]
            beta = kl_anneal(step, schedule)
            obj, grads, terms = b_step(uvae, ratings.take_rows(users), zt_hat, config.lambda_v, config.lambda_w,
                                       beta, len(users) / n_train, rng, config.dropout_p)
            _check(obj, "b_step objective", last_good)
            uopt.step(uvae.params, grads)
            step += 1
            b_obj += obj
            for k, v in terms.items():
                b_terms[k] = b_terms.get(k, 0.0) + v
        rec.update(b_terms)
        rec["beta"] = beta
        rec["b_objective"] = b_obj

        t_obj = 0.0
        if use_content:
            V_hat = uvae.params["V"].copy()
            t_terms = {}
            for idx in np.array_split(rng.permutation(J), max(1, math.ceil(J / config.batch_items))):
                obj, grads, terms = t_step(ivae, features[idx], V_hat[idx], config.lambda_v, config.lambda_w,
                                           rng, batch_fraction=len(idx) / J)
                _check(obj, "t_step objective", last_good)
                iopt.step(ivae.params, grads)
                t_obj += obj
                for k, v in terms.items():
                    t_terms[k] = t_terms.get(k, 0.0) + v
            rec.update(t_terms)
        rec["t_objective"] = t_obj
        rec["map_objective"] = b_obj + t_obj

        if val_pairs:
            reports = evaluate(model, val_pairs, (20, 40, 100))
            score, vals = selection_score(reports)
            rec.update({f"val_{k}": v for k, v in vals.items()})
            rec["val_score"] = score
            if config.select_best and (best is None or score > best.score):
                best = Snapshot(epoch, score, model.copy(), vals)
        history.append(rec)
        last_good = model.copy()
        log.info("epoch %d map=%.4f %s", epoch, rec["map_objective"],
                 "" if not val_pairs else f"val={rec['val_score']:.4f}")

    if config.select_best and best is not None:
        return best.model, history
    return model, history


def sweep(base: TrainConfig, lambda_v_grid, arch_grid, ratings: RatingMatrix, features, split: UserSplit,
          evaluator=None) -> list:
    """Train and validate one model per (architecture, lambda_v) grid point.

    ``arch_grid`` holds dicts of config overrides (e.g. ``{"k_u": 50, "k_v": 50}``).
    ``evaluator(model) -> dict`` may add extra columns (e.g. cold-item metrics).
    """
    rows = []
    for arch in arch_grid or [{}]:
        for lam in lambda_v_grid:
            cfg = base.replace(lambda_v=float(lam), **arch)
            model, history = train(cfg, ratings, features, split)
            row = {"lambda_v": float(lam), **{k: v for k, v in arch.items()}}
            scored = [h for h in history if "val_score" in h]
            if scored:
                best = validate_select([Snapshot(h["epoch"], h["val_score"]) for h in scored])
                row["best_epoch"] = best.epoch
                row["val_score"] = best.score
                row.update({k: v for k, v in scored[best.epoch].items() if k.startswith("val_")})
            if evaluator is not None:
                row.update(evaluator(model))
            rows.append(row)
    return rows
