"""``mdcvae`` command line: one binary, one subcommand per workflow.

Values come from built-in defaults, then ``--config``, then explicit flags.
Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import nn
from .checks import gradcheck_suite
from .config import TrainConfig, parse_run_config, stage_seed
from .data import (DataError, InteractionSet, RatingMatrix, density_stats, fold_in_split, gen_synthetic,
                   load_features, load_interactions, mark_cold_items, split_users, subsample_interactions)
from .metrics import metric_lines
from .model import CheckpointError, atomic_write, load_checkpoint, save_checkpoint
from .predictor import UnsupportedOperation, coldstart_eval, evaluate, extend_items, recommend_many
from .trainer import sweep, train

log = logging.getLogger("mdcvae")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SUBCOMMANDS = ("prepare", "synth", "train", "eval", "sweep", "coldstart", "add-items", "recommend", "gradcheck")

# flag -> (config key, type, default, help); ``None`` defaults mean "not set"
COMMON = {
    "--config": (None, str, None, "run-config file (key = value lines)"),
    "--seed": ("seed", int, 0, "master seed; every stage derives its own from it"),
    "--out": ("out", str, "out", "output directory"),
    "--mode": ("mode", str, "normal", "normal | symmetric"),
    "--lambda-v": ("lambda_v", float, 1.0, "embedding/content coupling strength"),
    "--epochs": ("epochs", int, 100, "alternating training epochs"),
    "--batch-users": ("batch_users", int, 500, "users per b_step batch"),
    "--m-list": ("m_list", str, "20,40,100", "cut-offs for Recall@M / NDCG@M"),
    "--n-cold": ("n_cold", int, None, "items held out as cold"),
}

DATA = {
    "--interactions": ("interactions", str, None, "user<TAB>item file"),
    "--features": ("features", str, None, "item content file (dense or triplets)"),
    "--checkpoint": ("checkpoint", str, None, "model checkpoint"),
}

EXTRA = {
    "prepare": {"--density": ("density", float, None, "subsample to at most this density")},
    "synth": {
        "--n-users": ("n_users", int, 300, "users"),
        "--n-items": ("n_items", int, 200, "items"),
        "--n-clusters": ("n_clusters", int, 5, "preference clusters"),
        "--n-features": ("n_features", int, 20, "content dimensions"),
        "--sparsity": ("sparsity", float, 0.1, "in-cluster interaction rate"),
        "--noise": ("noise", float, 0.1, "content noise std"),
    },
    "sweep": {
        "--lambda-v-grid": ("lambda_v_grid", str, "0.1,1,2,5,10", "comma-separated lambda_v values"),
        "--arch-grid": ("arch_grid", str, "", "';'-separated K or K/H1,H2 (latent size / hidden widths)"),
    },
    "add-items": {"--new-features": ("new_features", str, None, "content rows of the new items")},
    "recommend": {
        "--history": ("history", str, None, "user<TAB>item history file (internal item ids)"),
        "--top": ("top", int, 20, "items per user"),
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# shown instead of "unset" when an unset flag falls back to a computed value
DEFAULT_TEXT = {"n_cold": "10%% of the catalog"}


def _flag_help(spec):
    key, _, default, text = spec
    shown = default if default is not None else DEFAULT_TEXT.get(key, "unset")
    return f"{text} (default: {shown})"


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mdcvae", description="Hybrid VAE recommender with content-regularized item embeddings.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="{" + ",".join(SUBCOMMANDS) + "}")
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=f"{name} workflow")
        for flags in (COMMON, DATA, EXTRA.get(name, {})):
            for flag, spec in flags.items():
                p.add_argument(flag, type=spec[1], default=None, help=_flag_help(spec))
    return parser


def _settings(ns) -> dict:
    """Merge defaults < config file < flags into one flat dict of strings/values."""
    specs = {**COMMON, **DATA, **EXTRA.get(ns.command, {})}
    merged = {spec[0]: spec[2] for spec in specs.values() if spec[0] and spec[2] is not None}
    if ns.config:
        merged.update(parse_run_config(ns.config))
    for flag, spec in specs.items():
        value = getattr(ns, flag[2:].replace("-", "_"))
        if spec[0] and value is not None:
            merged[spec[0]] = value
    return merged


def _train_config(s: dict) -> TrainConfig:
    keys = {f for f in TrainConfig.__dataclass_fields__}
    return TrainConfig.from_items({k: v for k, v in s.items() if k in keys})


def _m_list(s) -> tuple:
    try:
        out = tuple(int(x) for x in str(s["m_list"]).split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad --m-list {s['m_list']!r}") from None
    if not out or min(out) < 1:
        raise UsageError("--m-list needs positive integers")
    return out


def _need(s, key):
    if not s.get(key):
        raise UsageError(f"missing required setting {key!r} (flag --{key.replace('_', '-')} or config key)")
    return s[key]


def _load_data(s, num_items=None):
    features = load_features(s["features"]) if s.get("features") else None
    if features is not None:
        if num_items is not None and len(features) != num_items:
            raise DataError(f"{s['features']}: {len(features)} feature rows, catalog has {num_items} items")
        num_items = len(features)
    return load_interactions(_need(s, "interactions"), num_items), features


def _jsonl(lines) -> str:
    return "".join(line + "\n" for line in lines)


def _out(s, name) -> str:
    return os.path.join(s["out"], name)


# ------------------------------------------------------------------ commands

def cmd_prepare(s):
    inter, features = _load_data(s)
    seed = int(s["seed"])
    if s.get("density") is not None:
        inter = subsample_interactions(inter, float(s["density"]), stage_seed(seed, "subsample"))
    split = split_users(inter, seed=stage_seed(seed, "split"))
    buf = io.StringIO()
    for u, j in zip(inter.users, inter.items):
        buf.write(f"{u}\t{j}\n")
    atomic_write(_out(s, "interactions.tsv"), buf.getvalue())
    if inter.user_ids:
        atomic_write(_out(s, "user_ids.tsv"), "".join(f"{e}\t{i}\n" for i, e in enumerate(inter.user_ids)))
    if inter.item_ids:
        atomic_write(_out(s, "item_ids.tsv"), "".join(f"{e}\t{i}\n" for i, e in enumerate(inter.item_ids)))
    stats = density_stats(inter.matrix())
    manifest = {"seed": seed, "num_users": inter.num_users, "num_items": inter.num_items,
                "n_interactions": inter.n_pairs, "density": stats.density,
                "item_count_percentiles": stats.percentiles,
                "train_users": split.train_users.tolist(), "val_users": split.val_users.tolist(),
                "test_users": split.test_users.tolist()}
    atomic_write(_out(s, "split.json"), json.dumps(manifest, indent=1) + "\n")
    if features is not None:
        atomic_write(_out(s, "features.txt"), _features_text(features))
    print(f"{inter.num_users} users, {inter.num_items} items, density {stats.density:.5f}")
    return EXIT_OK


def _features_text(X) -> str:
    rows = [f"{X.shape[0]} {X.shape[1]}"] + [" ".join(repr(float(v)) for v in row) for row in X]
    return "\n".join(rows) + "\n"


def cmd_synth(s):
    syn = gen_synthetic(int(s["n_users"]), int(s["n_items"]), int(s["n_clusters"]), int(s["n_features"]),
                        sparsity=float(s["sparsity"]), noise=float(s["noise"]), seed=stage_seed(int(s["seed"]), "synth"))
    inter = syn.interactions
    atomic_write(_out(s, "interactions.tsv"), "".join(f"{u}\t{j}\n" for u, j in zip(inter.users, inter.items)))
    atomic_write(_out(s, "features.txt"), _features_text(syn.features))
    atomic_write(_out(s, "item_clusters.tsv"), "".join(f"{j}\t{c}\n" for j, c in enumerate(syn.item_clusters)))
    print(f"wrote {inter.n_pairs} interactions for {inter.num_users} users x {inter.num_items} items")
    return EXIT_OK


def _split(inter: InteractionSet, seed: int):
    return split_users(inter, seed=stage_seed(seed, "split"))


def _test_pairs(mat: RatingMatrix, users, seed: int):
    return fold_in_split(mat, users, 0.2, stage_seed(seed, "holdout") + 1)


def cmd_train(s):
    cfg = _train_config(s)
    inter, features = _load_data(s)
    split = _split(inter, cfg.seed)
    model, history = train(cfg, inter.matrix(), features, split)
    save_checkpoint(model, _out(s, "model.ckpt"))
    atomic_write(_out(s, "history.jsonl"), _jsonl(json.dumps(h) for h in history))
    print(f"trained {len(history)} epochs; checkpoint {_out(s, 'model.ckpt')}")
    return EXIT_OK


def cmd_eval(s):
    _need(s, "interactions")
    model = load_checkpoint(_need(s, "checkpoint"))
    inter, _ = _load_data(s, model.n_items)
    seed = int(s["seed"])
    pairs = _test_pairs(inter.matrix(), _split(inter, seed).test_users, seed)
    lines = metric_lines(evaluate(model, pairs, _m_list(s)))
    atomic_write(_out(s, "metrics.jsonl"), _jsonl(lines))
    sys.stdout.write(_jsonl(lines))
    return EXIT_OK


def _arch_grid(text: str) -> list:
    grid = []
    for entry in filter(None, (e.strip() for e in text.split(";"))):
        k, _, hidden = entry.partition("/")
        try:
            arch = {"k_u": int(k), "k_v": int(k)}
            if hidden:
                arch["uae_hidden"] = arch["item_hidden"] = tuple(int(h) for h in hidden.split(","))
        except ValueError:
            raise UsageError(f"bad --arch-grid entry {entry!r}") from None
        grid.append(arch)
    return grid


def cmd_sweep(s):
    cfg = _train_config(s)
    inter, features = _load_data(s)
    split = _split(inter, cfg.seed)
    try:
        grid = [float(x) for x in str(s["lambda_v_grid"]).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"bad --lambda-v-grid {s['lambda_v_grid']!r}") from None
    rows = sweep(cfg, grid, _arch_grid(str(s.get("arch_grid", ""))), inter.matrix(), features, split)
    cols = sorted({k for r in rows for k in r}, key=lambda c: (c != "lambda_v", c))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (",".join(map(str, v)) if isinstance(v, tuple) else v) for k, v in r.items()})
    atomic_write(_out(s, "sweep.csv"), buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _coldstart_lines(res: dict) -> list:
    lines = metric_lines(res["normal"]) + metric_lines(res["cold"])
    lines += [json.dumps({"metric": "random_recall", "M": M, "group": "cold", "mean": v})
              for M, v in res["random_cold"].items()]
    return lines


def cmd_coldstart(s):
    cfg = _train_config(s)
    inter, features = _load_data(s)
    n_cold = int(s["n_cold"]) if s.get("n_cold") is not None else max(1, inter.num_items // 10)
    part = mark_cold_items(inter, n_cold, stage_seed(cfg.seed, "cold"))
    split = _split(inter, cfg.seed)
    model, history = train(cfg, part.train_matrix, features, split)
    eval_users = np.concatenate([split.val_users, split.test_users])
    pairs = _test_pairs(inter.matrix(), eval_users, cfg.seed)
    lines = _coldstart_lines(coldstart_eval(model, part, pairs, _m_list(s)))
    save_checkpoint(model, _out(s, "model.ckpt"))
    atomic_write(_out(s, "cold_items.tsv"), "".join(f"{j}\n" for j in part.cold_item_ids))
    atomic_write(_out(s, "coldstart.jsonl"), _jsonl(lines))
    sys.stdout.write(_jsonl(lines))
    return EXIT_OK


def cmd_add_items(s):
    ckpt, new_path = _need(s, "checkpoint"), _need(s, "new_features")
    model = load_checkpoint(ckpt)
    new = load_features(new_path)
    extended = extend_items(model, new)
    save_checkpoint(extended, _out(s, "extended.ckpt"))
    print(f"catalog {model.n_items} -> {extended.n_items} items")
    if s.get("interactions"):
        inter = load_interactions(s["interactions"], extended.n_items)
        seed = int(s["seed"])
        split = _split(inter, seed)
        pairs = _test_pairs(inter.matrix(), np.concatenate([split.val_users, split.test_users]), seed)
        res = coldstart_eval(extended, np.arange(model.n_items, extended.n_items), pairs, _m_list(s))
        lines = _coldstart_lines(res)
        atomic_write(_out(s, "add_items.jsonl"), _jsonl(lines))
        sys.stdout.write(_jsonl(lines))
    return EXIT_OK


def cmd_recommend(s):
    ckpt, history = _need(s, "checkpoint"), _need(s, "history")
    model = load_checkpoint(ckpt)
    users, rows = _read_history(history, model.n_items)
    rankings = recommend_many(model, rows, int(s["top"]))
    lines = [f"{u}\t" + ",".join(f"{j}:{v:.6g}" for j, v in zip(r.items, r.scores)) for u, r in zip(users, rankings)]
    atomic_write(_out(s, "recommendations.tsv"), _jsonl(lines))
    return EXIT_OK


def _read_history(path, n_items):
    order, hist = [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                u, j = (int(x) for x in line.split("\t"))
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected 'user<TAB>item' integers") from None
            if not 0 <= j < n_items:
                raise DataError(f"{path}:{lineno}: item {j} outside the catalog of {n_items}")
            if u not in hist:
                order.append(u)
                hist[u] = []
            hist[u].append(j)
    return order, [np.unique(hist[u]) for u in order]


def cmd_gradcheck(s):
    reports = gradcheck_suite(int(s["seed"]))
    ok = True
    for name, r in reports.items():
        print(f"{name:24s} max_rel_err={r.max_rel_err:.3e} coords={r.n_checked} {'ok' if r.passed else 'FAIL'}")
        ok &= r.passed
    return EXIT_OK if ok else EXIT_NUMERIC


COMMANDS = {"prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "coldstart": cmd_coldstart, "add-items": cmd_add_items, "recommend": cmd_recommend,
            "gradcheck": cmd_gradcheck}


def run(argv) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[ns.command](_settings(ns))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, nn.ConfigError, UnsupportedOperation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError, nn.DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (nn.NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    logging.basicConfig(level=os.environ.get("MDCVAE_LOG", "WARNING"), format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
