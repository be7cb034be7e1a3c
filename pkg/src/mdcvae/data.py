"""Interaction/feature ingestion, user splits, fold-in holdouts, cold-item
partitioning, long-tail statistics and a seeded synthetic generator."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .nn import ConfigError

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RatingMatrix:
    """Binary CSR matrix; stored values are implicitly 1."""

    indptr: np.ndarray
    indices: np.ndarray
    shape: tuple[int, int]

    @classmethod
    def from_pairs(cls, users, items, shape) -> "RatingMatrix":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        key = np.unique(users * shape[1] + items)
        u, j = np.divmod(key, shape[1])
        indptr = np.zeros(shape[0] + 1, dtype=np.int64)
        np.add.at(indptr, u + 1, 1)
        return cls(np.cumsum(indptr), j.astype(np.int64), (int(shape[0]), int(shape[1])))

    @classmethod
    def from_rows(cls, rows, n_items: int) -> "RatingMatrix":
        rows = [np.unique(np.asarray(r, dtype=np.int64)) for r in rows]
        indptr = np.zeros(len(rows) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(r) for r in rows])
        indices = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
        return cls(indptr, indices.astype(np.int64), (len(rows), int(n_items)))

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    def row(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def row_counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def take_rows(self, rows) -> "RatingMatrix":
        return RatingMatrix.from_rows([self.row(i) for i in rows], self.shape[1])

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        rows = np.repeat(np.arange(self.shape[0]), self.row_counts())
        out[rows, self.indices] = 1.0
        return out

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.shape[1])

    def density(self) -> float:
        return self.nnz / float(self.shape[0] * self.shape[1])


@dataclass(frozen=True)
class InteractionSet:
    users: np.ndarray
    items: np.ndarray
    num_users: int
    num_items: int
    user_ids: tuple = ()
    item_ids: tuple = ()

    @property
    def n_pairs(self) -> int:
        return len(self.users)

    def matrix(self) -> RatingMatrix:
        return RatingMatrix.from_pairs(self.users, self.items, (self.num_users, self.num_items))

    @classmethod
    def from_matrix(cls, mat: RatingMatrix) -> "InteractionSet":
        users = np.repeat(np.arange(mat.shape[0], dtype=np.int64), mat.row_counts())
        return cls(users, mat.indices.copy(), mat.shape[0], mat.shape[1])


@dataclass(frozen=True)
class UserSplit:
    train_users: np.ndarray
    val_users: np.ndarray
    test_users: np.ndarray
    seed: int


@dataclass(frozen=True)
class FoldInPair:
    user_id: int
    input_items: np.ndarray
    holdout_items: np.ndarray

    @property
    def excluded(self) -> bool:
        return len(self.holdout_items) == 0


@dataclass(frozen=True)
class ColdPartition:
    cold_item_ids: np.ndarray
    train_matrix: RatingMatrix
    removed_users: np.ndarray
    removed_items: np.ndarray

    def is_cold(self) -> np.ndarray:
        mask = np.zeros(self.train_matrix.shape[1], dtype=bool)
        mask[self.cold_item_ids] = True
        return mask


@dataclass(frozen=True)
class LongTailStats:
    per_item_counts: np.ndarray
    percentiles: list
    density: float


# --------------------------------------------------------------------- io

def _compact(values):
    """Map external ids to dense ids in ascending id order."""
    ids, out = np.unique(np.asarray(values, dtype=np.int64), return_inverse=True)
    return out.astype(np.int64), tuple(int(v) for v in ids)


def load_interactions(path, num_items: int | None = None) -> InteractionSet:
    """Read ``user<TAB>item`` lines; ``#`` lines and blank lines are skipped.

    User ids are always compacted. Item ids are compacted too, unless
    ``num_items`` fixes the catalog (e.g. from a feature file): then they are
    kept as-is and must lie in ``[0, num_items)``, so items without any
    interaction still keep their feature row.
    """
    users, items = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not all(p.strip().lstrip("-").isdigit() for p in parts):
                raise DataError(f"{path}:{lineno}: expected 'user<TAB>item' integers, got {line!r}")
            users.append(int(parts[0]))
            items.append(int(parts[1]))
            if num_items is not None and not 0 <= items[-1] < num_items:
                raise DataError(f"{path}:{lineno}: item {items[-1]} outside the catalog of {num_items}")
    if not users:
        raise DataError(f"{path}: empty dataset")
    u, user_ids = _compact(users)
    if num_items is None:
        j, item_ids = _compact(items)
        n_items = len(item_ids)
    else:
        j, item_ids, n_items = np.asarray(items, dtype=np.int64), (), int(num_items)
    key = u * n_items + j
    uniq, first = np.unique(key, return_index=True)
    n_dup = len(key) - len(uniq)
    if n_dup:
        log.warning("%s: collapsed %d duplicate interactions", path, n_dup)
    keep = np.sort(first)
    return InteractionSet(u[keep], j[keep], len(user_ids), n_items, user_ids, item_ids)


def write_interactions(inter: InteractionSet, path) -> None:
    uid = inter.user_ids or tuple(range(inter.num_users))
    iid = inter.item_ids or tuple(range(inter.num_items))
    with open(path, "w", encoding="utf-8") as fh:
        for u, j in zip(inter.users, inter.items):
            fh.write(f"{uid[u]}\t{iid[j]}\n")


def write_id_map(ids, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for internal, external in enumerate(ids):
            fh.write(f"{external}\t{internal}\n")


def read_id_map(path) -> dict:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ext, internal = line.rstrip("\n").split("\t")
                out[int(ext)] = int(internal)
    return out


def load_features(path, num_items: int | None = None) -> np.ndarray:
    """Read a ``J S`` header followed by dense rows or ``j s value`` triplets.

    The layout is detected from the token count of the first data line
    (3 tokens with S != 3 means triplets).
    """
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in (l.strip() for l in fh) if ln and not ln.startswith("#")]
    if not lines:
        raise DataError(f"{path}: empty feature file")
    try:
        J, S = (int(t) for t in lines[0].split())
    except ValueError:
        raise DataError(f"{path}: header must be 'J S'") from None
    if num_items is not None and J != num_items:
        raise DataError(f"{path}: {J} feature rows but {num_items} items")
    body = lines[1:]
    triplets = bool(body) and len(body[0].split()) == 3 and S != 3
    X = np.zeros((J, S))
    if triplets:
        for lineno, ln in enumerate(body, 2):
            j, s, val = ln.split()
            j, s, val = int(j), int(s), float(val)
            if not (0 <= j < J and 0 <= s < S):
                raise DataError(f"{path}:{lineno}: coordinate ({j}, {s}) out of range")
            if not math.isfinite(val):
                raise DataError(f"{path}:{lineno}: non-finite value at ({j}, {s})")
            X[j, s] = val
    else:
        if len(body) < J:
            raise DataError(f"{path}: truncated file, expected {J} rows, found {len(body)}")
        for j, ln in enumerate(body[:J]):
            row = ln.split()
            if len(row) != S:
                raise DataError(f"{path}:{j + 2}: expected {S} values, got {len(row)}")
            X[j] = [float(t) for t in row]
        bad = np.argwhere(~np.isfinite(X))
        if len(bad):
            raise DataError(f"{path}: non-finite value at ({bad[0][0]}, {bad[0][1]})")
    return X


def write_features(X: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{X.shape[0]} {X.shape[1]}\n")
        for row in X:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


# ----------------------------------------------------------------- splits

def split_users(inter: InteractionSet, ratios=(8, 1, 1), seed: int = 0) -> UserSplit:
    """Shuffle users and slice by ``ratios``; rounding remainder goes to train."""
    total = sum(ratios)
    if len(ratios) != 3 or total <= 0 or min(ratios) < 0:
        raise ConfigError(f"invalid split ratios {ratios}")
    n = inter.num_users
    if n < 10:
        raise ConfigError(f"need at least 10 users to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_val = n * ratios[1] // total
    n_test = n * ratios[2] // total
    n_train = n - n_val - n_test
    return UserSplit(np.sort(perm[:n_train]), np.sort(perm[n_train:n_train + n_val]),
                     np.sort(perm[n_train + n_val:]), seed)


def holdout_items(row, fraction: float = 0.2, seed: int = 0, user_id: int = -1) -> FoldInPair:
    """Split one user's items into fold-in input and held-out targets.

    ``round(fraction * n)`` items are held out, at least one when ``n >= 2``.
    A single-item user keeps it as input and has an empty holdout.
    """
    row = np.asarray(row, dtype=np.int64)
    n = len(row)
    k = int(math.floor(fraction * n + 0.5))
    if n >= 2:
        k = min(max(k, 1), n - 1)
    else:
        k = 0
    perm = np.random.default_rng(seed).permutation(n)
    return FoldInPair(user_id, np.sort(row[perm[k:]]), np.sort(row[perm[:k]]))


def fold_in_split(mat: RatingMatrix, users, fraction: float = 0.2, seed: int = 0) -> list[FoldInPair]:
    """Per-user holdouts; each user's seed is derived from ``(seed, user)``."""
    return [holdout_items(mat.row(u), fraction, seed=[seed, int(u)], user_id=int(u)) for u in users]


def mark_cold_items(inter: InteractionSet, n_cold: int, seed: int = 0) -> ColdPartition:
    J = inter.num_items
    if not 0 < n_cold < J:
        raise ConfigError(f"n_cold must be in (0, {J}), got {n_cold}")
    cold = np.sort(np.random.default_rng(seed).choice(J, size=n_cold, replace=False))
    is_cold = np.zeros(J, dtype=bool)
    is_cold[cold] = True
    drop = is_cold[inter.items]
    train = RatingMatrix.from_pairs(inter.users[~drop], inter.items[~drop], (inter.num_users, J))
    return ColdPartition(cold, train, inter.users[drop].copy(), inter.items[drop].copy())


def density_stats(mat: RatingMatrix, quantiles=(0.25, 0.5, 0.75, 0.9, 0.99)) -> LongTailStats:
    counts = mat.item_counts()
    pct = [(q, float(np.quantile(counts, q))) for q in quantiles]
    return LongTailStats(counts, pct, mat.density())


def subsample_interactions(inter: InteractionSet, density: float, seed: int = 0,
                           min_per_user: int = 2) -> InteractionSet:
    """Thin interactions to at most ``density`` (when the per-user floor allows).

    Every user keeps ``min(min_per_user, n_i)`` random interactions; the rest of
    the budget ``floor(density * I * J)`` is filled uniformly from the remaining pairs.
    """
    rng = np.random.default_rng(seed)
    mat = inter.matrix()
    budget = int(math.floor(density * inter.num_users * inter.num_items))
    keep = np.zeros(mat.nnz, dtype=bool)
    for u in range(inter.num_users):
        lo, hi = mat.indptr[u], mat.indptr[u + 1]
        keep[lo + rng.permutation(hi - lo)[:min_per_user]] = True
    rest = np.flatnonzero(~keep)
    extra = max(0, budget - int(keep.sum()))
    keep[rng.permutation(rest)[:extra]] = True
    users = np.repeat(np.arange(inter.num_users, dtype=np.int64), mat.row_counts())
    return InteractionSet(users[keep], mat.indices[keep].copy(), inter.num_users, inter.num_items)


# -------------------------------------------------------------- synthetic

@dataclass(frozen=True)
class SyntheticData:
    interactions: InteractionSet
    features: np.ndarray
    user_clusters: np.ndarray
    item_clusters: np.ndarray
    templates: np.ndarray


def gen_synthetic(n_users: int, n_items: int, n_clusters: int, s_dim: int,
                  sparsity: float = 0.1, noise: float = 0.1, seed: int = 0,
                  zipf_a: float = 1.0, off_cluster: float = 0.0,
                  n_distractors: int = 0, distractor_scale: float = 1.0,
                  min_per_user: int = 1) -> SyntheticData:
    """Clustered implicit-feedback data with content that predicts the clusters.

    Users and items get a cluster each. User ``i`` interacts with item ``j``
    with probability ``sparsity * pop_j`` when the clusters match and
    ``off_cluster * sparsity * pop_j`` otherwise, where ``pop_j`` is a
    Zipf-like weight (mean 1, capped at 1/sparsity) that creates a long tail.
    Features are the item's cluster template plus Gaussian noise; optional
    distractor templates add content variance unrelated to preferences.
    ``sparsity=1, noise=0, off_cluster=0, zipf_a=0`` gives a block-diagonal
    matrix and exact templates.
    """
    if min(n_users, n_items, n_clusters, s_dim) <= 0 or n_clusters > min(n_users, n_items):
        raise ConfigError("invalid synthetic sizes")
    if not 0 < sparsity <= 1 or noise < 0 or off_cluster < 0:
        raise ConfigError("sparsity must be in (0, 1], noise and off_cluster >= 0")
    rng = np.random.default_rng(seed)
    user_c = np.arange(n_users) % n_clusters
    item_c = np.arange(n_items) % n_clusters
    rng.shuffle(user_c)
    rng.shuffle(item_c)

    ranks = rng.permutation(n_items) + 1.0
    pop = ranks ** (-zipf_a)
    pop = np.minimum(pop / pop.mean(), 1.0 / sparsity)
    match = user_c[:, None] == item_c[None, :]
    prob = sparsity * pop[None, :] * np.where(match, 1.0, off_cluster)
    R = rng.random((n_users, n_items)) < np.clip(prob, 0.0, 1.0)
    for u in np.flatnonzero(R.sum(axis=1) < min_per_user):
        own = np.flatnonzero(item_c == user_c[u])
        R[u, rng.choice(own, size=min(min_per_user, len(own)), replace=False)] = True

    templates = np.zeros((n_clusters, s_dim))
    for c in range(n_clusters):
        templates[c, c % s_dim] = 1.0
        if n_clusters > s_dim:
            templates[c] += 0.5 * rng.standard_normal(s_dim)
    X = templates[item_c] + noise * rng.standard_normal((n_items, s_dim))
    if n_distractors:
        dis = distractor_scale * rng.standard_normal((n_distractors, s_dim))
        X = X + dis[rng.integers(n_distractors, size=n_items)]

    u, j = np.nonzero(R)
    inter = InteractionSet(u.astype(np.int64), j.astype(np.int64), n_users, n_items)
    return SyntheticData(inter, X, user_c, item_c, templates)
