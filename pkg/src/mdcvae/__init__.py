"""Hybrid VAE recommender with item-content-regularized item embeddings.

Two variants share one code path: ``normal`` mode (untied encoder input
weights) and ``symmetric`` mode, where the encoder's first layer reuses the
decoder's item-embedding table so new items can be added from content alone.
"""
from .config import TrainConfig
from .data import (ColdPartition, FoldInPair, InteractionSet, RatingMatrix, UserSplit, density_stats,
                   fold_in_split, gen_synthetic, holdout_items, load_features, load_interactions,
                   mark_cold_items, split_users)
from .kernels import BACKEND
from .model import Model, load_checkpoint, save_checkpoint
from .predictor import coldstart_eval, evaluate, extend_items, fold_in, recommend
from .trainer import sweep, train, validate_select

__version__ = "0.1.0"
