"""Training configuration and the flat ``key = value`` run-config file."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass

from .nn import ConfigError

log = logging.getLogger(__name__)

# per-stage seed offsets, all derived from the single ``seed`` key
SEED_OFFSETS = {"split": 11, "holdout": 23, "init": 101, "pretrain": 211, "train": 307,
                "cold": 401, "subsample": 503, "synth": 601}


def stage_seed(seed: int, stage: str) -> int:
    return int(seed) + SEED_OFFSETS[stage]


@dataclass
class TrainConfig:
    mode: str = "normal"
    k_u: int = 100
    k_v: int = 100
    uae_hidden: tuple = ()
    item_hidden: tuple = ()
    lambda_v: float = 1.0
    lambda_w: float = 0.01
    lambda_x: float = 1.0
    likelihood: str = "gaussian"
    use_content: bool = True
    beta_max: float = 0.2
    anneal_frac: float = 0.4
    epochs: int = 100
    batch_users: int = 500
    batch_items: int = 500
    lr: float = 1e-3
    dropout_p: float = 0.5
    normalize_input: bool = False
    pretrain_epochs: int = 10
    finetune_epochs: int = 10
    select_best: bool = True
    seed: int = 0

    def __post_init__(self):
        self.uae_hidden = _int_tuple(self.uae_hidden)
        self.item_hidden = _int_tuple(self.item_hidden)
        self.validate()

    def validate(self):
        if self.mode not in ("normal", "symmetric"):
            raise ConfigError(f"mode must be normal|symmetric, got {self.mode!r}")
        if self.likelihood not in ("gaussian", "bernoulli"):
            raise ConfigError(f"likelihood must be gaussian|bernoulli, got {self.likelihood!r}")
        for name in ("lambda_v", "lambda_w", "lambda_x", "beta_max", "lr"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.epochs < 0 or self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if min(self.k_u, self.k_v, self.batch_users, self.batch_items) <= 0:
            raise ConfigError("sizes must be positive")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must be in [0, 1)")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_items(self) -> list:
        """Canonical ``(key, text)`` pairs, in field order."""
        out = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                text = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                text = "true" if v else "false"
            else:
                text = repr(v) if isinstance(v, float) else str(v)
            out.append((f.name, text))
        return out

    @classmethod
    def from_items(cls, items: dict, strict: bool = True) -> "TrainConfig":
        types = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, text in items.items():
            if key not in types:
                if strict:
                    raise ConfigError(f"unknown config key {key!r}")
                continue
            kwargs[key] = _coerce(types[key], text)
        return cls(**kwargs)


def _int_tuple(v) -> tuple:
    if isinstance(v, str):
        return tuple(int(x) for x in v.split(",") if x.strip())
    return tuple(int(x) for x in v)


def _coerce(f: dataclasses.Field, text):
    if not isinstance(text, str):
        return text
    default = f.default
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return _int_tuple(text)
    except ValueError:
        raise ConfigError(f"bad value for {f.name}: {text!r}") from None
    return text.strip()


DATA_KEYS = ("interactions", "features", "out", "history", "checkpoint", "n_cold", "m_list",
             "new_features", "lambda_v_grid", "arch_grid", "density")


def parse_run_config(path) -> dict:
    """Read ``key = value`` lines (``#`` comments). Unknown keys are rejected."""
    allowed = {f.name for f in dataclasses.fields(TrainConfig)} | set(DATA_KEYS)
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in allowed:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    missing = [f.name for f in dataclasses.fields(TrainConfig) if f.name not in out]
    if missing:
        log.info("config %s: defaults used for %s", path, ", ".join(missing))
    return out
