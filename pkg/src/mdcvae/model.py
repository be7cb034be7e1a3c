"""The combined model (user VAE + optional content VAE) and its checkpoint format.

Checkpoint layout, little-endian::

    b"MDCVAE\\0"  u32 version  u32 tensor_count
    per tensor:  u16 name_len, name (utf-8), u8 rank, u64 dims[rank], f64 data (row-major)
    u32 config_len, config block (utf-8 "key=value" lines)
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .item_vae import ItemVAE
from .user_vae import UserVAE

MAGIC = b"MDCVAE\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Model:
    config: TrainConfig
    uvae: UserVAE
    ivae: ItemVAE | None = None

    @property
    def mode(self) -> str:
        return self.uvae.mode

    @property
    def n_items(self) -> int:
        return self.uvae.n_items

    def copy(self) -> "Model":
        return Model(self.config, self.uvae.copy(), self.ivae.copy() if self.ivae is not None else None)

    def tensors(self) -> dict:
        out = {f"uvae.{k}": v for k, v in self.uvae.params.items()}
        if self.ivae is not None:
            out.update({f"ivae.{k}": v for k, v in self.ivae.params.items()})
        return out


def build_model(config: TrainConfig, n_items: int, n_features: int | None, rng) -> Model:
    uvae = UserVAE(n_items, config.k_u, config.k_v, config.uae_hidden, config.mode,
                   config.normalize_input, rng=rng)
    ivae = None
    if config.use_content and n_features:
        ivae = ItemVAE(n_features, config.k_v, config.item_hidden, config.likelihood, config.lambda_x, rng=rng)
    return Model(config, uvae, ivae)


def _config_block(model: Model) -> bytes:
    lines = [f"{k}={v}" for k, v in model.config.to_items()]
    lines.append(f"n_items={model.n_items}")
    lines.append(f"n_features={model.ivae.n_features if model.ivae is not None else 0}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def checkpoint_bytes(model: Model) -> bytes:
    tensors = model.tensors()
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    block = _config_block(model)
    parts.append(struct.pack("<I", len(block)) + block)
    return b"".join(parts)


def atomic_write(path, data: bytes | str) -> None:
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(model: Model, path) -> None:
    atomic_write(path, checkpoint_bytes(model))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_from_bytes(buf: bytes) -> Model:
    rd = _Reader(buf)
    if rd.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not an MDCVAE checkpoint (bad magic)")
    version, count = rd.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    tensors = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        (rank,) = rd.unpack("<B")
        shape = rd.unpack(f"<{rank}Q")
        n = int(np.prod(shape)) if rank else 1
        tensors[name] = np.frombuffer(rd.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    (blen,) = rd.unpack("<I")
    block = rd.take(blen).decode("utf-8")
    if rd.pos != len(buf):
        raise CheckpointError("trailing bytes after config block")
    items = dict(line.split("=", 1) for line in block.splitlines() if line)
    n_items = int(items.pop("n_items"))
    n_features = int(items.pop("n_features"))
    config = TrainConfig.from_items(items)
    uparams = {k[5:]: v for k, v in tensors.items() if k.startswith("uvae.")}
    iparams = {k[5:]: v for k, v in tensors.items() if k.startswith("ivae.")}
    uvae = UserVAE(n_items, config.k_u, config.k_v, config.uae_hidden, config.mode,
                   config.normalize_input, params=_ordered(uparams))
    ivae = None
    if iparams:
        ivae = ItemVAE(n_features, config.k_v, config.item_hidden, config.likelihood, config.lambda_x,
                       params=_ordered(iparams))
    return Model(config, uvae, ivae)


def _ordered(params: dict) -> dict:
    return {k: params[k] for k in sorted(params)}


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
