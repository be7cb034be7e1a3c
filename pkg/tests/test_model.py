import numpy as np
import pytest

from mdcvae import nn
from mdcvae.config import TrainConfig
from mdcvae.model import CheckpointError, build_model, checkpoint_bytes, load_checkpoint, model_from_bytes, save_checkpoint
from mdcvae.predictor import score


@pytest.fixture(params=["normal", "symmetric"])
def model(request):
    cfg = TrainConfig(mode=request.param, k_u=3, k_v=4, uae_hidden=(5,), item_hidden=(6,))
    m = build_model(cfg, 12, 7, nn.make_rng(0))
    rng = np.random.default_rng(0)
    for v in m.tensors().values():
        v += 0.1 * rng.standard_normal(v.shape)
    return m


def test_save_load_save_identical_bytes(model, tmp_path):
    save_checkpoint(model, tmp_path / "a.ckpt")
    save_checkpoint(load_checkpoint(tmp_path / "a.ckpt"), tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_round_trip_preserves_logits_and_tie(model, tmp_path):
    save_checkpoint(model, tmp_path / "a.ckpt")
    back = load_checkpoint(tmp_path / "a.ckpt")
    hist = [[0, 3], [5], []]
    assert np.array_equal(score(back, hist), score(model, hist))
    assert back.config == model.config
    if model.mode == "symmetric":
        assert back.uvae.table is back.uvae.params["V"]


def test_truncated_checkpoint_rejected(model):
    buf = checkpoint_bytes(model)
    for cut in (3, len(buf) // 2, len(buf) - 1):
        with pytest.raises(CheckpointError):
            model_from_bytes(buf[:cut])


def test_bad_magic_and_trailing_bytes(model):
    buf = checkpoint_bytes(model)
    with pytest.raises(CheckpointError, match="magic"):
        model_from_bytes(b"X" + buf[1:])
    with pytest.raises(CheckpointError, match="trailing"):
        model_from_bytes(buf + b"\0")


def test_failed_write_keeps_previous_file(model, tmp_path, monkeypatch):
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    before = path.read_bytes()

    def boom(*a, **k):
        raise OSError("disk full")

    monkeypatch.setattr("mdcvae.model.os.replace", boom)
    with pytest.raises(OSError):
        save_checkpoint(model, path)
    assert path.read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]
