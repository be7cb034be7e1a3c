import numpy as np
import pytest

from mdcvae import data, nn
from mdcvae.config import TrainConfig, stage_seed
from mdcvae.item_vae import pretrain_layerwise
from mdcvae.model import build_model, checkpoint_bytes
from mdcvae.trainer import Snapshot, TrainingError, sweep, train, validate_select

SMALL = dict(k_u=4, k_v=4, epochs=3, batch_users=16, batch_items=20, pretrain_epochs=2, finetune_epochs=2, lr=3e-3)


@pytest.fixture(scope="module")
def synth():
    syn = data.gen_synthetic(60, 40, 3, 8, sparsity=0.3, noise=0.2, seed=0)
    return syn, data.split_users(syn.interactions, seed=1)


def test_zero_epochs_returns_pretrained_model(synth):
    syn, split = synth
    cfg = TrainConfig(**{**SMALL, "epochs": 0})
    model, history = train(cfg, syn.interactions.matrix(), syn.features, split)
    assert history == []
    ref = build_model(cfg, 40, 8, nn.make_rng(stage_seed(cfg.seed, "init")))
    ref_ivae = pretrain_layerwise(syn.features, ref.ivae, cfg.pretrain_epochs, nn.make_rng(stage_seed(cfg.seed, "pretrain")),
                                  cfg.finetune_epochs, cfg.batch_items, cfg.lr, cfg.lambda_w)
    assert all(np.array_equal(model.ivae.params[k], ref_ivae.params[k]) for k in ref_ivae.params)
    assert all(np.array_equal(model.uvae.params[k], ref.uvae.params[k]) for k in ref.uvae.params)


@pytest.mark.parametrize("mode", ["normal", "symmetric"])
def test_same_seed_same_checkpoint(synth, mode):
    syn, split = synth
    cfg = TrainConfig(**SMALL, mode=mode)
    a, ha = train(cfg, syn.interactions.matrix(), syn.features, split)
    b, hb = train(cfg, syn.interactions.matrix(), syn.features, split)
    assert checkpoint_bytes(a) == checkpoint_bytes(b) and ha == hb
    c, _ = train(cfg.replace(seed=1), syn.interactions.matrix(), syn.features, split)
    assert checkpoint_bytes(c) != checkpoint_bytes(a)


def test_history_records_every_term(synth):
    syn, split = synth
    _, history = train(TrainConfig(**SMALL), syn.interactions.matrix(), syn.features, split)
    assert [h["epoch"] for h in history] == [0, 1, 2]
    for key in ("multinomial_ll", "beta_kl", "coupling", "weight_decay", "content_ll", "content_kl",
                "content_coupling", "content_decay", "map_objective", "val_recall@20", "val_score"):
        assert all(np.isfinite(h[key]) for h in history), key
    for h in history:
        assert h["map_objective"] == pytest.approx(h["b_objective"] + h["t_objective"])


def test_select_best_returns_best_snapshot(synth):
    syn, split = synth
    cfg = TrainConfig(**{**SMALL, "epochs": 4})
    best, history = train(cfg, syn.interactions.matrix(), syn.features, split)
    last, _ = train(cfg.replace(select_best=False), syn.interactions.matrix(), syn.features, split)
    scores = [h["val_score"] for h in history]
    best_epoch = int(np.argmax(scores))
    if best_epoch == len(scores) - 1:
        assert checkpoint_bytes(best) == checkpoint_bytes(last)
    else:
        assert checkpoint_bytes(best) != checkpoint_bytes(last)


def test_content_off_trains_without_item_vae(synth):
    syn, split = synth
    model, history = train(TrainConfig(**SMALL, use_content=False), syn.interactions.matrix(), syn.features, split)
    assert model.ivae is None and all(h["t_objective"] == 0.0 for h in history)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_objective_raises_with_last_good(synth):
    syn, split = synth
    bad = syn.features.copy()
    bad[0, 0] = 1e200
    cfg = TrainConfig(**{**SMALL, "pretrain_epochs": 0, "finetune_epochs": 0})
    with pytest.raises(TrainingError) as info:
        train(cfg, syn.interactions.matrix(), bad, split)
    assert info.value.last_good is not None


def test_feature_rows_must_match(synth):
    syn, split = synth
    with pytest.raises(ValueError):
        train(TrainConfig(**SMALL), syn.interactions.matrix(), syn.features[:-1], split)


def test_validate_select_examples():
    assert validate_select([Snapshot(0, 0.5)]).epoch == 0
    assert validate_select([Snapshot(0, 0.1), Snapshot(1, 0.3), Snapshot(2, 0.2)]).epoch == 1
    assert validate_select([Snapshot(0, 0.3), Snapshot(1, 0.3)]).epoch == 0


def test_sweep_rows(synth):
    syn, split = synth
    base = TrainConfig(**{**SMALL, "epochs": 1})
    assert len(sweep(base, [1.0], None, syn.interactions.matrix(), syn.features, split)) == 1
    rows = sweep(base, [0.1, 1, 2, 5, 10], [{"k_u": 3, "k_v": 3}], syn.interactions.matrix(), syn.features, split,
                 evaluator=lambda m: {"n_items": m.n_items})
    assert [r["lambda_v"] for r in rows] == [0.1, 1, 2, 5, 10]
    assert all(r["k_u"] == 3 and r["n_items"] == 40 and "val_score" in r for r in rows)


@pytest.mark.slow
def test_sparse_data_prefers_nontrivial_coupling():
    syn = data.gen_synthetic(300, 200, 5, 20, sparsity=0.3, noise=0.3, zipf_a=0.5, seed=0)
    sub = data.subsample_interactions(syn.interactions, 0.01, seed=100)
    split = data.split_users(sub, seed=0)
    base = TrainConfig(k_u=20, k_v=20, epochs=30, batch_users=10, batch_items=50, pretrain_epochs=20,
                       finetune_epochs=20, lr=3e-3)
    rows = sweep(base, [0.1, 1, 2, 5, 10], None, sub.matrix(), syn.features, split)
    best = max(rows, key=lambda r: r["val_score"])
    assert best["lambda_v"] > 0.1
