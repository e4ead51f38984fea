"""Active-user class-membership estimate and its Dirichlet posterior approximation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import kernels
from .aspect_model import AspectModel, log_rating_densities
from .dataset import UserNormStats, user_stats

_logger = logging.getLogger(__name__)

FOLD_IN_TOL = 1e-10
FAST_UPDATE_TOL = 1e-8
MAX_FIXED_POINT_ITER = 500
# fold-in runs once per round, not per candidate; boundary optima converge slowly
MAX_FOLD_IN_ITER = 10000
# pseudo-ratings worth of population prior in the active user's mean/std
STATS_PRIOR_WEIGHT = 5.0

# Bernoulli-number coefficients B_2k / (2k) of the digamma asymptotic series
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_SHIFT_TO = 10.0


def digamma(x):
    """Psi(x) for x > 0, scalar or array.

    Shifts x upward with Psi(x) = Psi(x + 1) - 1/x until x >= 10, then sums
    the asymptotic expansion ln x - 1/(2x) - sum_k B_2k / (2k x^2k).
    """
    arr = np.asarray(x, dtype=np.float64)
    if np.any(~(arr > 0)):
        raise ValueError("digamma is only defined here for x > 0")
    v = arr.copy()
    acc = np.zeros_like(v)
    while True:
        low = v < _SHIFT_TO
        if not np.any(low):
            break
        acc = acc - np.where(low, 1.0 / v, 0.0)
        v = np.where(low, v + 1.0, v)
    inv2 = 1.0 / (v * v)
    series = np.zeros_like(v)
    for c in reversed(_ASYMPTOTIC):
        series = (series + c) * inv2
    out = acc + np.log(v) - 0.5 / v - series
    return float(out) if np.ndim(x) == 0 else out


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray

    def __post_init__(self):
        a = np.array(self.alpha, dtype=np.float64)
        if a.ndim != 1 or a.size == 0 or np.any(~(a >= 1.0 - 1e-12)):
            raise ValueError("Dirichlet hyperparameters must all be >= 1")
        a.flags.writeable = False
        object.__setattr__(self, "alpha", a)

    @property
    def alpha_star(self) -> float:
        return float(self.alpha.sum())

    def mode(self) -> np.ndarray:
        excess = self.alpha - 1.0
        total = excess.sum()
        if total <= 0:
            return np.full(self.alpha.size, 1.0 / self.alpha.size)
        return excess / total

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha_star

    def expected_log(self) -> np.ndarray:
        """E[log theta_j] = Psi(alpha_j) - Psi(alpha*)."""
        return digamma(self.alpha) - digamma(self.alpha_star)


def _scaled_likelihoods(model: AspectModel, revealed, stats: UserNormStats) -> np.ndarray:
    """(N, K) class likelihoods of the revealed ratings, each row scaled to max 1."""
    items = np.array([x for x, _ in revealed], dtype=np.int64)
    rs = np.array([r for _, r in revealed], dtype=np.int64)
    ld = log_rating_densities(model, items, stats)[np.arange(len(items)), rs - 1]
    return np.exp(ld - ld.max(axis=1, keepdims=True))


def fold_in_objective(model: AspectModel, revealed, theta, stats: UserNormStats) -> float:
    """sum_i log sum_z p(r_i|x_i,z) theta_z, the likelihood maximized by fold_in."""
    items = np.array([x for x, _ in revealed], dtype=np.int64)
    rs = np.array([r for _, r in revealed], dtype=np.int64)
    ld = log_rating_densities(model, items, stats)[np.arange(len(items)), rs - 1]
    with np.errstate(divide="ignore"):
        lt = np.log(np.asarray(theta, dtype=np.float64))
    a = ld + lt
    top = a.max(axis=1)
    return float(np.sum(top + np.log(np.exp(a - top[:, None]).sum(axis=1))))


def fold_in(
    model: AspectModel,
    revealed,
    stats: UserNormStats | None = None,
    tol: float = FOLD_IN_TOL,
    max_iter: int = MAX_FOLD_IN_ITER,
) -> np.ndarray:
    """Maximum-likelihood class simplex for a new user, model Gaussians held fixed.

    ``revealed`` is a sequence of (item, rating). ``stats`` defaults to the
    normalization stats of the revealed ratings themselves.
    """
    k = model.k
    if not revealed:
        return np.full(k, 1.0 / k)
    if stats is None:
        stats = user_stats([r for _, r in revealed])
    p = _scaled_likelihoods(model, revealed, stats)
    theta, it = kernels.fold_in_fixed_point(p, np.full(k, 1.0 / k), tol, max_iter)
    if it >= max_iter:
        _logger.warning("fold_in did not converge in %d iterations", max_iter)
    return theta


def responsibilities(model: AspectModel, revealed, theta, stats: UserNormStats) -> np.ndarray:
    """(N, K) posterior class probabilities of each revealed rating under ``theta``."""
    p = _scaled_likelihoods(model, revealed, stats) * np.asarray(theta)
    s = p.sum(axis=1, keepdims=True)
    s[s <= 0] = 1e-300
    return p / s


def dirichlet_posterior(model: AspectModel, revealed, theta_star, stats: UserNormStats | None = None) -> DirichletParams:
    """alpha_z = 1 + sum_i resp_i(z) evaluated at the fold-in estimate."""
    if not revealed:
        return DirichletParams(np.ones(model.k))
    if stats is None:
        stats = user_stats([r for _, r in revealed])
    resp = responsibilities(model, revealed, theta_star, stats)
    return DirichletParams(resp.sum(axis=0) + 1.0)


def fast_update_many(
    model: AspectModel,
    alpha,
    items,
    stats: UserNormStats,
    tol: float = FAST_UPDATE_TOL,
    max_iter: int = MAX_FIXED_POINT_ITER,
) -> np.ndarray:
    """Updated simplex for every (item, rating) pair: array (len(items), R, K).

    Each entry maximizes p(r|x, theta) * prod_z theta_z^(alpha_z - 1) by EM.
    The objective is concave, so any interior start reaches the optimum; the
    Dirichlet mean is used because the mode can sit on the simplex boundary,
    where multiplicative EM updates can never revive a zero coordinate.
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    items = np.asarray(items, dtype=np.int64)
    k = alpha.size
    ld = log_rating_densities(model, items, stats)
    p = np.exp(ld - ld.max(axis=-1, keepdims=True)).reshape(-1, k)
    start = DirichletParams(alpha).mean()
    theta, iters = kernels.fast_update_batch(p, alpha, start, tol, max_iter)
    if np.any(iters >= max_iter):
        _logger.warning("fast_update did not converge for %d of %d pairs",
                        int(np.sum(iters >= max_iter)), len(iters))
    return theta.reshape(len(items), model.rating_scale, k)


def fast_update(model: AspectModel, state: ActiveUserState, x: int, r: int) -> np.ndarray:
    """Simplex after hypothetically observing rating ``r`` on item ``x``.

    Uses only the state's Dirichlet hyperparameters, never the revealed history.
    """
    x = model.check_item(x)
    if not 1 <= r <= model.rating_scale:
        raise ValueError(f"rating {r} outside [1, {model.rating_scale}]")
    return fast_update_many(model, state.alpha, [x], state.stats)[0, r - 1]


def active_stats(model: AspectModel, revealed, prior_weight: float = STATS_PRIOR_WEIGHT) -> UserNormStats:
    """Normalization stats of the revealed ratings, shrunk toward the model's population prior."""
    return user_stats([r for _, r in revealed], prior=model.prior, prior_weight=prior_weight)


@dataclass(frozen=True, eq=False)
class ActiveUserState:
    """What is known about the active user after some revealed ratings."""

    revealed: tuple
    theta_star: np.ndarray
    alpha: np.ndarray
    stats: UserNormStats
    prior_weight: float = STATS_PRIOR_WEIGHT

    def __post_init__(self):
        object.__setattr__(self, "revealed", tuple((int(x), int(r)) for x, r in self.revealed))
        for name in ("theta_star", "alpha"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @classmethod
    def from_revealed(cls, model: AspectModel, revealed,
                      prior_weight: float = STATS_PRIOR_WEIGHT) -> ActiveUserState:
        revealed = tuple(revealed)
        if revealed or prior_weight > 0:
            stats = active_stats(model, revealed, prior_weight)
        else:
            stats = UserNormStats((model.rating_scale + 1) / 2.0, 1.0)
        theta = fold_in(model, revealed, stats)
        alpha = dirichlet_posterior(model, revealed, theta, stats).alpha
        return cls(revealed, theta, alpha, stats, prior_weight)

    def with_rating(self, model: AspectModel, x: int, r: int) -> ActiveUserState:
        """New state with (x, r) appended; stats, theta* and alpha are recomputed."""
        if any(x == seen for seen, _ in self.revealed):
            raise ValueError(f"item {x} already rated")
        return ActiveUserState.from_revealed(model, self.revealed + ((x, r),), self.prior_weight)

    @property
    def rated_items(self) -> frozenset:
        return frozenset(x for x, _ in self.revealed)

    @property
    def dirichlet(self) -> DirichletParams:
        return DirichletParams(self.alpha)


def dirichlet_moments(alpha):
    """Closed-form E[theta_i theta_j] and E[theta_i theta_j log theta_j] under Dirichlet(alpha).

    Both are (K, K) arrays indexed [i, j].
    """
    a = np.asarray(alpha, dtype=np.float64)
    k = a.size
    s = a.sum()
    eye = np.eye(k)
    second = a[:, None] * (a[None, :] + eye) / (s * (s + 1.0))
    shifted = digamma(a[None, :] + 1.0 + eye) - digamma(s + 2.0)
    return second, second * shifted


def expected_theta_log_theta(alpha) -> np.ndarray:
    """E[theta_i log theta_j] under Dirichlet(alpha), indexed [i, j]."""
    a = np.asarray(alpha, dtype=np.float64)
    s = a.sum()
    eye = np.eye(a.size)
    return (a / s)[:, None] * (digamma(a[None, :] + eye) - digamma(s + 1.0))

