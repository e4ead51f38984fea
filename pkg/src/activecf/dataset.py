"""Rating triples, per-user normalization, synthetic data and experiment splits."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

_logger = logging.getLogger(__name__)

STD_FLOOR = 1e-3


class DatasetError(ValueError):
    """Raised for unreadable or inconsistent rating data."""


class RatingTriple(NamedTuple):
    user_id: str
    item_id: str
    rating: int


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of ratings with contiguous internal user/item ids.

    ``users``, ``items`` and ``ratings`` are parallel arrays of internal ids
    and integer ratings; ``user_ids``/``item_ids`` map internal ids back to the
    external identifiers.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple
    item_ids: tuple
    rating_scale: int

    def __post_init__(self):
        object.__setattr__(self, "users", _frozen(self.users, np.int64))
        object.__setattr__(self, "items", _frozen(self.items, np.int64))
        object.__setattr__(self, "ratings", _frozen(self.ratings, np.int64))
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if self.rating_scale < 2:
            raise DatasetError("rating scale must be at least 2")
        if not (len(self.users) == len(self.items) == len(self.ratings)):
            raise DatasetError("users, items and ratings must have equal length")
        if len(self.ratings) == 0:
            raise DatasetError("no ratings")
        if self.ratings.min() < 1 or self.ratings.max() > self.rating_scale:
            raise DatasetError("rating out of scale")
        if self.users.min() < 0 or self.users.max() >= len(self.user_ids):
            raise DatasetError("user id out of range")
        if self.items.min() < 0 or self.items.max() >= len(self.item_ids):
            raise DatasetError("item id out of range")
        keys = self.users * len(self.item_ids) + self.items
        if len(np.unique(keys)) != len(keys):
            raise DatasetError("duplicate (user, item) pair")

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.ratings)

    def triples(self) -> Iterator[RatingTriple]:
        for u, i, r in zip(self.users, self.items, self.ratings):
            yield RatingTriple(self.user_ids[u], self.item_ids[i], int(r))

    @cached_property
    def per_user_index(self) -> tuple:
        """For each internal user: ``(items, ratings)`` arrays, in file order."""
        order = np.argsort(self.users, kind="stable")
        bounds = np.searchsorted(self.users[order], np.arange(self.num_users + 1))
        out = []
        for u in range(self.num_users):
            sel = order[bounds[u]:bounds[u + 1]]
            out.append((self.items[sel], self.ratings[sel]))
        return tuple(out)

    def subset_users(self, users) -> Dataset:
        """Dataset restricted to ``users`` (internal ids), re-indexed in the given order.

        The item index is kept unchanged so models trained on the subset
        share item ids with the full dataset.
        """
        users = np.asarray(list(users), dtype=np.int64)
        remap = np.full(self.num_users, -1, dtype=np.int64)
        remap[users] = np.arange(len(users))
        keep = remap[self.users] >= 0
        return Dataset(
            remap[self.users[keep]],
            self.items[keep],
            self.ratings[keep],
            [self.user_ids[u] for u in users],
            self.item_ids,
            self.rating_scale,
        )


@dataclass(frozen=True)
class UserNormStats:
    mean: float
    std: float

    def normalize(self, r):
        return (np.asarray(r, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, n):
        return np.asarray(n, dtype=np.float64) * self.std + self.mean


@dataclass(frozen=True)
class RatingPrior:
    """Population mean and variance of per-user rating statistics."""

    mean: float
    var: float


def user_stats(ratings, std_floor: float = STD_FLOOR, prior: RatingPrior | None = None,
               prior_weight: float = 0.0) -> UserNormStats:
    """Population mean/std of one user's ratings, std clamped to ``std_floor``.

    With a ``prior`` and ``prior_weight`` k > 0 the estimates are shrunk
    toward it as if k pseudo-ratings with the prior's mean and variance had
    been added: mean = (sum r + k m0) / (n + k), var = (SS + k v0) / (n + k).
    """
    r = np.asarray(ratings, dtype=np.float64)
    use_prior = prior is not None and prior_weight > 0
    if r.size == 0 and not use_prior:
        raise ValueError("cannot compute stats of zero ratings")
    n = r.size
    mean = float(r.mean()) if n else 0.0
    ss = float(np.sum((r - mean) ** 2))
    if use_prior:
        shrunk = (n * mean + prior_weight * prior.mean) / (n + prior_weight)
        var = (ss + prior_weight * prior.var) / (n + prior_weight)
        mean = shrunk
    else:
        var = ss / n
    return UserNormStats(mean, max(float(np.sqrt(var)), std_floor))


def population_prior(dataset: Dataset) -> RatingPrior:
    """Average of the per-user rating means and (population) variances."""
    means, variances = [], []
    for _, r in dataset.per_user_index:
        if len(r):
            means.append(r.mean())
            variances.append(r.var())
    return RatingPrior(float(np.mean(means)), float(np.mean(variances)))


def normalize(dataset: Dataset, std_floor: float = STD_FLOOR):
    """Per-user z-scores of every rating.

    Returns
    -------
    values : (T,) float array, aligned with ``dataset.ratings``
    stats : list of UserNormStats, one per internal user
    """
    values = np.empty(len(dataset), dtype=np.float64)
    stats = []
    order = np.argsort(dataset.users, kind="stable")
    bounds = np.searchsorted(dataset.users[order], np.arange(dataset.num_users + 1))
    for u in range(dataset.num_users):
        sel = order[bounds[u]:bounds[u + 1]]
        if sel.size == 0:
            raise DatasetError(f"user {dataset.user_ids[u]!r} has no ratings")
        st = user_stats(dataset.ratings[sel], std_floor)
        values[sel] = st.normalize(dataset.ratings[sel])
        stats.append(st)
    return values, stats


def load_dataset(path, rating_scale: int, delimiter: str = "\t", header: bool = False) -> Dataset:
    """Read ``user<delim>item<delim>rating`` lines into a Dataset.

    Internal ids are assigned in order of first appearance.
    """
    if len(delimiter) != 1:
        raise DatasetError("delimiter must be a single character")
    text = Path(path).read_text(encoding="utf-8")
    user_index: dict = {}
    item_index: dict = {}
    users, items, ratings = [], [], []
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if header and lineno == 1:
            continue
        line = line.strip("\r")
        if not line.strip():
            continue
        parts = [p.strip() for p in line.split(delimiter)]
        if len(parts) != 3 or not parts[0] or not parts[1]:
            raise DatasetError(f"line {lineno}: expected user{delimiter!r}item{delimiter!r}rating")
        try:
            r = int(parts[2])
        except ValueError:
            raise DatasetError(f"line {lineno}: rating {parts[2]!r} is not an integer") from None
        if not 1 <= r <= rating_scale:
            raise DatasetError(f"line {lineno}: rating out of scale [1, {rating_scale}]: {r}")
        u = user_index.setdefault(parts[0], len(user_index))
        i = item_index.setdefault(parts[1], len(item_index))
        if (u, i) in seen:
            raise DatasetError(f"line {lineno}: duplicate (user, item) pair ({parts[0]}, {parts[1]})")
        seen.add((u, i))
        users.append(u)
        items.append(i)
        ratings.append(r)
    if not ratings:
        raise DatasetError("no ratings")
    return Dataset(users, items, ratings, list(user_index), list(item_index), rating_scale)


def write_dataset(dataset: Dataset, path, delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t in dataset.triples():
            fh.write(f"{t.user_id}{delimiter}{t.item_id}{delimiter}{t.rating}\n")


@dataclass(frozen=True)
class SyntheticTrace:
    """What the generator drew: latent class and pre-quantization value per triple."""

    classes: np.ndarray
    latent: np.ndarray


def generate_synthetic(
    k: int,
    users: int,
    items: int,
    ratings_per_user: int,
    rating_scale: int = 5,
    seed: int = 0,
    sigma: float = 0.3,
    concentration: float = 0.5,
    return_trace: bool = False,
):
    """Sample a dataset from a random aspect model.

    Class means are N(0, 1) per (class, item), every Gaussian has width
    ``sigma`` and user simplices are Dirichlet(``concentration``). A latent
    value v maps to the rating ``clip(round(c + s*v), 1, R)`` with
    c = (R+1)/2 and s = (R-1)/4.

    Returns ``(dataset, truth)`` or ``(dataset, truth, trace)``.
    """
    from .aspect_model import AspectModel

    if min(k, users, items, ratings_per_user) < 1:
        raise ValueError("k, users, items and ratings_per_user must be positive")
    if ratings_per_user > items:
        raise ValueError("ratings_per_user cannot exceed items")
    if rating_scale < 2 or sigma <= 0 or concentration <= 0:
        raise ValueError("invalid rating_scale, sigma or concentration")
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.0, 1.0, size=(k, items))
    simplex = rng.dirichlet(np.full(k, concentration), size=users)
    n = users * ratings_per_user
    u_arr = np.repeat(np.arange(users), ratings_per_user)
    i_arr = np.concatenate(
        [np.sort(rng.choice(items, ratings_per_user, replace=False)) for _ in range(users)]
    )
    cdf = np.cumsum(simplex, axis=1)
    cdf[:, -1] = 1.0
    draws = rng.random(n)
    z_arr = np.minimum((draws[:, None] >= cdf[u_arr]).sum(axis=1), k - 1)
    latent = mu[z_arr, i_arr] + sigma * rng.standard_normal(n)
    center = (rating_scale + 1) / 2.0
    spread = (rating_scale - 1) / 4.0
    r_arr = np.clip(np.rint(center + spread * latent), 1, rating_scale).astype(np.int64)
    dataset = Dataset(
        u_arr, i_arr, r_arr,
        [str(u) for u in range(users)], [str(i) for i in range(items)],
        rating_scale,
    )
    from .aspect_model import SIGMA_FLOOR

    truth = AspectModel(
        mu=mu,
        sigma=np.full((k, items), sigma),
        simplex=simplex,
        rating_scale=rating_scale,
        sigma_floor=min(SIGMA_FLOOR, sigma),
        item_ids=dataset.item_ids,
        prior=population_prior(dataset),
    )
    if return_trace:
        return dataset, truth, SyntheticTrace(_frozen(z_arr, np.int64), _frozen(latent, np.float64))
    return dataset, truth


@dataclass(frozen=True)
class TestUser:
    """One test user's partition of observed ratings; entries are (item, rating)."""

    __test__ = False

    user: int
    seed: tuple
    holdout: tuple
    candidates: tuple
    ratings: dict = field(repr=False, compare=False)

    def rating_of(self, item: int) -> int:
        return self.ratings[item]


@dataclass(frozen=True)
class ExperimentSplit:
    train_users: frozenset
    test_users: tuple
    excluded_users: tuple = ()


def split_protocol(
    dataset: Dataset,
    train_user_count: int,
    seed_count: int = 3,
    holdout_count: int = 20,
    seed: int = 0,
) -> ExperimentSplit:
    """First ``train_user_count`` users train; the rest become test users.

    Each test user's ratings are shuffled; the first ``seed_count`` become
    the starting seed, the next ``holdout_count`` the evaluation holdout,
    and the remainder the candidate pool. Users without at least one
    candidate are excluded with a warning.
    """
    if train_user_count < 0 or train_user_count >= dataset.num_users:
        raise ValueError("train_user_count must leave at least one test user")
    rng = np.random.default_rng(seed)
    index = dataset.per_user_index
    need = seed_count + holdout_count + 1
    tests, excluded = [], []
    for u in range(train_user_count, dataset.num_users):
        items, ratings = index[u]
        if len(items) < need:
            excluded.append(u)
            continue
        perm = rng.permutation(len(items))
        pairs = [(int(items[j]), int(ratings[j])) for j in perm]
        tests.append(TestUser(
            user=u,
            seed=tuple(pairs[:seed_count]),
            holdout=tuple(pairs[seed_count:seed_count + holdout_count]),
            candidates=tuple(sorted(pairs[seed_count + holdout_count:])),
            ratings=dict(pairs),
        ))
    if excluded:
        _logger.warning("excluded %d test users with fewer than %d ratings", len(excluded), need)
    if not tests:
        raise DatasetError("no eligible test users")
    return ExperimentSplit(frozenset(range(train_user_count)), tuple(tests), tuple(excluded))
