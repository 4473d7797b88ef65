"""Rating data: ingestion, splits, bi-scaling, and synthetic MNAR generation.

All operations are pure given a seed; the returned objects are immutable
(backing arrays are marked read-only) and safe to share across threads.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

__all__ = [
    "RatingDataset",
    "IndicatorView",
    "SplitPair",
    "PropensityGroundTruth",
    "TrueFactors",
    "ScalingRecord",
    "load_movielens",
    "load_keep_list",
    "split",
    "biscale",
    "inverse_biscale",
    "generate_synthetic",
    "save_ratings_csv",
    "load_ratings_csv",
    "save_synthetic",
    "load_synthetic",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RatingDataset:
    """Sparse observed ratings over an m x n user/item grid.

    ``users``, ``items`` and ``ratings`` are parallel arrays, one entry per
    observed (user, item, rating) triple.  Each (user, item) pair appears at
    most once.
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        users = _frozen(np.asarray(self.users, dtype=np.int64))
        items = _frozen(np.asarray(self.items, dtype=np.int64))
        ratings = _frozen(np.asarray(self.ratings, dtype=np.float64))
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        if not (len(users) == len(items) == len(ratings)):
            raise ValueError("users/items/ratings must have equal length")
        if self.num_users <= 0 or self.num_items <= 0:
            raise ValueError("num_users and num_items must be positive")
        if len(users) and (users.min() < 0 or users.max() >= self.num_users):
            raise ValueError("user index out of range")
        if len(items) and (items.min() < 0 or items.max() >= self.num_items):
            raise ValueError("item index out of range")
        keys = users * self.num_items + items
        if len(np.unique(keys)) != len(keys):
            raise ValueError("duplicate (user, item) pair")

    def __len__(self) -> int:
        return len(self.ratings)

    @property
    def density(self) -> float:
        return len(self.ratings) / (self.num_users * self.num_items)

    @property
    def triples(self):
        """List of (user, item, rating) tuples. Intended for small datasets."""
        return list(zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()))

    def by_user(self):
        """CSR-style grouping: (indptr, item_indices, ratings), rows = users."""
        order = np.lexsort((self.items, self.users))
        indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.users, minlength=self.num_users), out=indptr[1:])
        return indptr, self.items[order], self.ratings[order]

    def by_item(self):
        """CSR-style grouping: (indptr, user_indices, ratings), rows = items."""
        order = np.lexsort((self.users, self.items))
        indptr = np.zeros(self.num_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.items, minlength=self.num_items), out=indptr[1:])
        return indptr, self.users[order], self.ratings[order]

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.num_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)


@dataclass(frozen=True)
class IndicatorView:
    """Sparse boolean observation mask derived from a RatingDataset."""

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray

    @classmethod
    def from_dataset(cls, dataset: RatingDataset) -> "IndicatorView":
        return cls(
            num_users=dataset.num_users,
            num_items=dataset.num_items,
            users=dataset.users,
            items=dataset.items,
        )

    def __post_init__(self):
        object.__setattr__(self, "users", _frozen(np.asarray(self.users, np.int64)))
        object.__setattr__(self, "items", _frozen(np.asarray(self.items, np.int64)))

    @property
    def nnz(self) -> int:
        return len(self.users)

    def by_item(self):
        """(indptr, user_indices) grouped by item."""
        order = np.lexsort((self.users, self.items))
        indptr = np.zeros(self.num_items + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.items, minlength=self.num_items), out=indptr[1:])
        return indptr, self.users[order]

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.num_items)

    def to_dense(self) -> np.ndarray:
        mask = np.zeros((self.num_users, self.num_items), dtype=bool)
        mask[self.users, self.items] = True
        return mask


@dataclass(frozen=True)
class SplitPair:
    train: RatingDataset
    test: RatingDataset
    seed: int


@dataclass(frozen=True)
class PropensityGroundTruth:
    """Per-item observation probabilities P(I_ij = 1 | item j)."""

    per_item_probability: np.ndarray

    def __post_init__(self):
        p = _frozen(np.asarray(self.per_item_probability, dtype=np.float64))
        object.__setattr__(self, "per_item_probability", p)
        if p.ndim != 1:
            raise ValueError("propensity must be a vector")
        if len(p) and (p.min() <= 0.0 or p.max() > 1.0):
            raise ValueError("propensities must lie in (0, 1]")

    def __len__(self) -> int:
        return len(self.per_item_probability)

    @property
    def oracle_weights(self) -> np.ndarray:
        """Inverse propensities, the naive bias-correcting weights."""
        return 1.0 / self.per_item_probability


@dataclass(frozen=True)
class TrueFactors:
    """Ground truth behind a synthetic dataset."""

    user_factors: np.ndarray
    item_factors: np.ndarray
    propensity: PropensityGroundTruth
    noise_sd: float
    seed: int

    def full_matrix(self) -> np.ndarray:
        """Noiseless complete rating matrix."""
        return self.user_factors @ self.item_factors.T


# ---------------------------------------------------------------------------
# MovieLens ingestion
# ---------------------------------------------------------------------------

_SEPARATORS = {"ml100k": "\t", "ml1m": "::"}


def load_keep_list(path) -> set:
    """Read an item keep-list: one raw item id per line."""
    keep = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                keep.add(int(line))
            except ValueError:
                raise DataError(f"{path}: line {lineno}: not an item id: {line!r}")
    return keep


def load_movielens(path, format: str = "ml100k", keep_items=None) -> RatingDataset:
    """Load a MovieLens ratings file into a densely re-indexed dataset.

    ``keep_items``, when given, restricts the data to those raw item ids
    before re-indexing (used to reproduce published subset statistics).
    Duplicate (user, item) pairs keep the last occurrence and a warning
    reports how many were dropped.
    """
    if format not in _SEPARATORS:
        raise DataError(f"unknown MovieLens format: {format!r}")
    sep = _SEPARATORS[format]

    raw_users, raw_items, ratings = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) < 3:
                raise DataError(f"{path}: line {lineno}: expected at least "
                                f"3 {sep!r}-separated fields, got {len(parts)}")
            try:
                raw_users.append(int(parts[0]))
                raw_items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}")
    if not raw_users:
        raise DataError(f"{path}: no ratings found")

    raw_users = np.asarray(raw_users, dtype=np.int64)
    raw_items = np.asarray(raw_items, dtype=np.int64)
    ratings = np.asarray(ratings, dtype=np.float64)

    if keep_items is not None:
        keep = np.isin(raw_items, np.fromiter(keep_items, dtype=np.int64, count=len(keep_items)))
        raw_users, raw_items, ratings = raw_users[keep], raw_items[keep], ratings[keep]
        if len(raw_users) == 0:
            raise DataError(f"{path}: keep-list removed every rating")

    # keep the last occurrence of each (user, item) pair
    key = raw_users * (raw_items.max() + 1) + raw_items
    _, last_idx = np.unique(key[::-1], return_index=True)
    last_idx = len(key) - 1 - last_idx
    dup_count = len(key) - len(last_idx)
    if dup_count:
        warnings.warn(f"{path}: dropped {dup_count} duplicate (user, item) pairs, kept last")
        last_idx.sort()
        raw_users, raw_items, ratings = raw_users[last_idx], raw_items[last_idx], ratings[last_idx]

    uniq_users, users = np.unique(raw_users, return_inverse=True)
    uniq_items, items = np.unique(raw_items, return_inverse=True)
    return RatingDataset(
        num_users=len(uniq_users),
        num_items=len(uniq_items),
        users=users,
        items=items,
        ratings=ratings,
    )


# ---------------------------------------------------------------------------
# Coverage-preserving split
# ---------------------------------------------------------------------------

def split(dataset: RatingDataset, train_fraction: float, seed: int) -> SplitPair:
    """Random train/test split keeping >= 1 train triple per user and item.

    After the initial random cut, at most one triple per uncovered user or
    item is moved from test to train, so the train size deviates from
    ``round(train_fraction * len(dataset))`` by at most m + n.
    """
    if not (0.0 < train_fraction < 1.0):
        raise DataError(f"train_fraction must be in (0, 1), got {train_fraction}")
    if (dataset.user_counts() == 0).any():
        raise DataError("dataset has a user with no ratings; cannot guarantee coverage")
    if (dataset.item_counts() == 0).any():
        raise DataError("dataset has an item with no ratings; cannot guarantee coverage")

    rng = np.random.default_rng(seed)
    size = len(dataset)
    k = int(round(train_fraction * size))
    perm = rng.permutation(size)
    in_train = np.zeros(size, dtype=bool)
    in_train[perm[:k]] = True

    def repair(index_of, count):
        covered = np.bincount(index_of[in_train], minlength=count) > 0
        for idx in np.nonzero(~covered)[0]:
            candidates = np.nonzero((index_of == idx) & ~in_train)[0]
            in_train[rng.choice(candidates)] = True

    repair(dataset.users, dataset.num_users)
    repair(dataset.items, dataset.num_items)

    def subset(mask):
        return RatingDataset(
            num_users=dataset.num_users,
            num_items=dataset.num_items,
            users=dataset.users[mask],
            items=dataset.items[mask],
            ratings=dataset.ratings[mask],
        )

    return SplitPair(train=subset(in_train), test=subset(~in_train), seed=seed)


# ---------------------------------------------------------------------------
# Bi-scaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BiscaleSweep:
    row_mean: np.ndarray
    row_scale: np.ndarray
    row_clamped: np.ndarray
    col_mean: np.ndarray
    col_scale: np.ndarray
    col_clamped: np.ndarray


@dataclass(frozen=True)
class ScalingRecord:
    """Per-sweep centering/scaling parameters; enough to invert biscale."""

    sweeps: list = field(default_factory=list)
    converged: bool = False

    @property
    def num_sweeps(self) -> int:
        return len(self.sweeps)

    def any_clamped(self) -> bool:
        return any(s.row_clamped.any() or s.col_clamped.any() for s in self.sweeps)


def _group_stats(index_of, values, count):
    """Mean and population std of ``values`` grouped by ``index_of``."""
    sizes = np.bincount(index_of, minlength=count)
    mean = np.zeros(count)
    np.divide(np.bincount(index_of, weights=values, minlength=count), sizes,
              out=mean, where=sizes > 0)
    sq = np.bincount(index_of, weights=values ** 2, minlength=count)
    var = np.zeros(count)
    np.divide(sq, sizes, out=var, where=sizes > 0)
    var = np.maximum(var - mean ** 2, 0.0)
    return mean, np.sqrt(var)


def biscale(dataset: RatingDataset, tol: float = 1e-8, max_sweeps: int = 50):
    """Alternately standardize rows then columns over observed entries.

    Stops once a sweep's parameters are the identity transform to within
    ``tol`` (all means < tol in magnitude, all scales within tol of 1) or
    after ``max_sweeps``.  Zero-variance rows/columns get their scale
    clamped to 1 and are flagged in the returned ScalingRecord.
    """
    if (dataset.user_counts() == 0).any() or (dataset.item_counts() == 0).any():
        raise DataError("biscale requires every row and column to have observations")

    values = dataset.ratings.copy()
    sweeps = []
    converged = False
    for _ in range(max_sweeps):
        row_mean, row_scale = _group_stats(dataset.users, values, dataset.num_users)
        row_clamped = row_scale <= 1e-12
        row_scale = np.where(row_clamped, 1.0, row_scale)
        values = (values - row_mean[dataset.users]) / row_scale[dataset.users]

        col_mean, col_scale = _group_stats(dataset.items, values, dataset.num_items)
        col_clamped = col_scale <= 1e-12
        col_scale = np.where(col_clamped, 1.0, col_scale)
        values = (values - col_mean[dataset.items]) / col_scale[dataset.items]

        sweeps.append(BiscaleSweep(
            row_mean=_frozen(row_mean), row_scale=_frozen(row_scale),
            row_clamped=_frozen(row_clamped),
            col_mean=_frozen(col_mean), col_scale=_frozen(col_scale),
            col_clamped=_frozen(col_clamped),
        ))
        drift = max(
            np.abs(row_mean).max(), np.abs(row_scale - 1.0).max(),
            np.abs(col_mean).max(), np.abs(col_scale - 1.0).max(),
        )
        if drift < tol:
            converged = True
            break

    scaled = RatingDataset(
        num_users=dataset.num_users, num_items=dataset.num_items,
        users=dataset.users, items=dataset.items, ratings=values,
    )
    return scaled, ScalingRecord(sweeps=sweeps, converged=converged)


def inverse_biscale(dataset: RatingDataset, record: ScalingRecord) -> RatingDataset:
    """Undo :func:`biscale` on the observed entries."""
    values = dataset.ratings.copy()
    for sweep in reversed(record.sweeps):
        values = values * sweep.col_scale[dataset.items] + sweep.col_mean[dataset.items]
        values = values * sweep.row_scale[dataset.users] + sweep.row_mean[dataset.users]
    return RatingDataset(
        num_users=dataset.num_users, num_items=dataset.num_items,
        users=dataset.users, items=dataset.items, ratings=values,
    )


# ---------------------------------------------------------------------------
# Synthetic MNAR generation
# ---------------------------------------------------------------------------

def generate_synthetic(m: int, n: int, rank: int, propensity: PropensityGroundTruth,
                       noise_sd: float = 0.0, seed: int = 0):
    """Low-rank ratings observed column-wise at known propensities.

    Factor entries are standard normal, noise is Gaussian.  Entry (i, j) is
    observed independently with probability ``propensity[j]``.  A column
    that ends up with zero observations is redrawn once; if it is empty
    again the call fails.
    """
    if rank > min(m, n):
        raise DataError(f"rank {rank} exceeds min(m, n) = {min(m, n)}")
    if len(propensity) != n:
        raise DataError(f"propensity has length {len(propensity)}, expected {n}")

    rng = np.random.default_rng(seed)
    u_star = rng.standard_normal((m, rank))
    v_star = rng.standard_normal((n, rank))
    full = u_star @ v_star.T
    if noise_sd > 0:
        full = full + noise_sd * rng.standard_normal((m, n))

    p = propensity.per_item_probability
    mask = rng.random((m, n)) < p[None, :]
    empty = np.nonzero(mask.sum(axis=0) == 0)[0]
    for j in empty:
        mask[:, j] = rng.random(m) < p[j]
        if not mask[:, j].any():
            raise DataError(f"column {j} drew zero observations twice "
                            f"(propensity {p[j]:g} too small for m={m})")

    users, items = np.nonzero(mask)
    dataset = RatingDataset(num_users=m, num_items=n, users=users, items=items,
                            ratings=full[users, items])
    truth = TrueFactors(user_factors=_frozen(u_star), item_factors=_frozen(v_star),
                        propensity=propensity, noise_sd=noise_sd, seed=seed)
    return dataset, truth


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_ratings_csv(dataset: RatingDataset, path) -> None:
    """Write (user, item, rating) rows with full-precision ratings."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user,item,rating\n")
        for u, i, r in zip(dataset.users, dataset.items, dataset.ratings):
            fh.write(f"{u},{i},{r:.17g}\n")


def load_ratings_csv(path, num_users=None, num_items=None) -> RatingDataset:
    """Read a canonical ratings CSV; grid size defaults to max index + 1."""
    users, items, ratings = [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "user,item,rating":
            raise DataError(f"{path}: unexpected header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataError(f"{path}: line {lineno}: expected 3 fields")
            try:
                users.append(int(parts[0]))
                items.append(int(parts[1]))
                ratings.append(float(parts[2]))
            except ValueError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}")
    if not users:
        raise DataError(f"{path}: no ratings found")
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    return RatingDataset(
        num_users=num_users if num_users is not None else int(users.max()) + 1,
        num_items=num_items if num_items is not None else int(items.max()) + 1,
        users=users, items=items, ratings=np.asarray(ratings),
    )


def save_synthetic(dataset: RatingDataset, truth: TrueFactors, csv_path, json_path) -> None:
    """Persist a synthetic dataset as ratings CSV plus ground-truth sidecar."""
    save_ratings_csv(dataset, csv_path)
    sidecar = {
        "num_users": dataset.num_users,
        "num_items": dataset.num_items,
        "seed": truth.seed,
        "noise_sd": truth.noise_sd,
        "propensity": truth.propensity.per_item_probability.tolist(),
        "user_factors": truth.user_factors.tolist(),
        "item_factors": truth.item_factors.tolist(),
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True)
        fh.write("\n")


def load_synthetic(csv_path, json_path):
    """Load a synthetic dataset and its ground truth."""
    with open(json_path, "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    dataset = load_ratings_csv(csv_path, num_users=sidecar["num_users"],
                               num_items=sidecar["num_items"])
    truth = TrueFactors(
        user_factors=np.asarray(sidecar["user_factors"], dtype=np.float64),
        item_factors=np.asarray(sidecar["item_factors"], dtype=np.float64),
        propensity=PropensityGroundTruth(np.asarray(sidecar["propensity"])),
        noise_sd=float(sidecar["noise_sd"]),
        seed=int(sidecar["seed"]),
    )
    return dataset, truth
