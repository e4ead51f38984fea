"""Latent-class (aspect) rating model with per-(class, item) Gaussians."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .dataset import Dataset, RatingPrior, UserNormStats, normalize, population_prior

_logger = logging.getLogger(__name__)

SIGMA_FLOOR = 0.05
LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AspectModel:
    """K user classes, Gaussian N(mu[z, x], sigma[z, x]) over normalized ratings.

    ``simplex`` holds p(z|y) for each training user (rows sum to one);
    ``prior`` summarizes the training users' rating means and variances and
    is what sparse active users are shrunk toward.
    """

    mu: np.ndarray
    sigma: np.ndarray
    simplex: np.ndarray
    rating_scale: int
    sigma_floor: float = SIGMA_FLOOR
    item_ids: tuple = None
    loglik_trace: tuple = field(default=(), repr=False)
    prior: RatingPrior | None = None

    def __post_init__(self):
        for name in ("mu", "sigma", "simplex"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        if self.mu.ndim != 2 or self.mu.shape != self.sigma.shape:
            raise ModelError("mu and sigma must be (K, M) arrays of equal shape")
        if self.simplex.ndim != 2 or self.simplex.shape[1] != self.mu.shape[0]:
            raise ModelError("simplex must be (users, K)")
        if np.any(self.sigma < self.sigma_floor):
            raise ModelError("sigma below sigma_floor")
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", tuple(str(i) for i in range(self.num_items)))
        else:
            object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if len(self.item_ids) != self.num_items:
            raise ModelError("item_ids length does not match mu")
        object.__setattr__(self, "loglik_trace", tuple(self.loglik_trace))
        if self.prior is None:
            center = (self.rating_scale + 1) / 2.0
            object.__setattr__(self, "prior", RatingPrior(center, 1.0))

    @property
    def k(self) -> int:
        return self.mu.shape[0]

    @property
    def num_items(self) -> int:
        return self.mu.shape[1]

    def check_item(self, x) -> int:
        x = int(x)
        if not 0 <= x < self.num_items:
            raise ModelError(f"unknown item {x}")
        return x

    def scale_points(self) -> np.ndarray:
        return np.arange(1, self.rating_scale + 1, dtype=np.float64)


@dataclass(frozen=True)
class TrainConfig:
    """EM settings.

    Each of ``n_init`` restarts draws per-user Dirichlet(1) responsibilities,
    runs ``anneal_iter`` tempered EM steps with the density exponent rising
    linearly from ``anneal_start`` to 1, then plain EM until convergence.
    The restart with the highest final log-likelihood wins.
    """

    k: int = 5
    max_iter: int = 200
    loglik_tol: float = 1e-6
    sigma_floor: float = SIGMA_FLOOR
    seed: int = 0
    n_init: int = 8
    anneal_iter: int = 40
    anneal_start: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ModelError("K must be at least 1")
        if self.max_iter < 1 or self.n_init < 1 or self.anneal_iter < 0:
            raise ModelError("max_iter and n_init must be at least 1, anneal_iter non-negative")
        if self.loglik_tol <= 0 or self.sigma_floor <= 0:
            raise ModelError("tolerances must be positive")
        if not 0 < self.anneal_start <= 1:
            raise ModelError("anneal_start must lie in (0, 1]")


def _m_step(values, users, items, resp, n_users, n_items, sigma_floor, mu_prev, sigma_prev):
    k = resp.shape[1]
    counts = np.bincount(users, minlength=n_users).astype(np.float64)
    simplex = np.empty((n_users, k))
    mu = mu_prev.copy()
    sigma = sigma_prev.copy()
    for z in range(k):
        q = resp[:, z]
        simplex[:, z] = np.bincount(users, weights=q, minlength=n_users)
        w = np.bincount(items, weights=q, minlength=n_items)
        ok = w > 1e-300
        m = np.bincount(items, weights=q * values, minlength=n_items)
        mu[z, ok] = m[ok] / w[ok]
        dev = values - mu[z, items]
        v = np.bincount(items, weights=q * dev * dev, minlength=n_items)
        sigma[z, ok] = np.sqrt(v[ok] / w[ok])
    empty = counts == 0
    simplex[empty] = 1.0
    simplex /= simplex.sum(axis=1, keepdims=True)
    np.maximum(sigma, sigma_floor, out=sigma)
    return simplex, mu, sigma


def _log(a):
    with np.errstate(divide="ignore"):
        return np.log(a)


def _fit_once(values, users, items, n_users, n_items, cfg: TrainConfig, rng):
    k = cfg.k
    resp = rng.dirichlet(np.ones(k), size=n_users)[users]
    params = _m_step(values, users, items, resp, n_users, n_items, cfg.sigma_floor,
                     np.zeros((k, n_items)), np.ones((k, n_items)))
    for step in range(cfg.anneal_iter):
        beta = cfg.anneal_start + (1.0 - cfg.anneal_start) * step / cfg.anneal_iter
        simplex, mu, sigma = params
        resp, _ = kernels.em_estep(values, users, items, _log(simplex), mu, sigma, beta)
        params = _m_step(values, users, items, resp, n_users, n_items, cfg.sigma_floor, mu, sigma)

    trace = []
    for it in range(cfg.max_iter + 1):
        simplex, mu, sigma = params
        resp, ll = kernels.em_estep(values, users, items, _log(simplex), mu, sigma)
        trace.append(ll)
        if it == cfg.max_iter:
            break
        if it > 0:
            prev = trace[-2]
            if ll - prev < -1e-9 * max(1.0, abs(prev)):
                _logger.warning("EM log-likelihood decreased at iteration %d: %g -> %g", it, prev, ll)
            if (ll - prev) / max(abs(prev), 1e-300) < cfg.loglik_tol:
                break
        params = _m_step(values, users, items, resp, n_users, n_items, cfg.sigma_floor, mu, sigma)
    return params, trace


def train_em(dataset: Dataset, cfg: TrainConfig) -> AspectModel:
    """Fit the aspect model to every user in ``dataset`` by EM.

    Ratings are z-scored per user first. The plain-EM phase of each restart
    stops after ``cfg.max_iter`` updates or once the relative log-likelihood
    gain drops below ``cfg.loglik_tol``; its per-iteration log-likelihood
    is kept in ``loglik_trace``. Items nobody rated keep mu=0, sigma=1.
    """
    values, _ = normalize(dataset)
    users, items = dataset.users, dataset.items
    n_users, n_items = dataset.num_users, dataset.num_items
    rng = np.random.default_rng(cfg.seed)
    best = None
    for run in range(cfg.n_init):
        params, trace = _fit_once(values, users, items, n_users, n_items, cfg, rng)
        _logger.debug("EM restart %d: %d evaluations, loglik %.6f", run, len(trace), trace[-1])
        if best is None or trace[-1] > best[1][-1]:
            best = (params, trace)
    (simplex, mu, sigma), trace = best
    _logger.info("EM best loglik %.6f over %d restarts", trace[-1], cfg.n_init)
    return AspectModel(mu, sigma, simplex, dataset.rating_scale, cfg.sigma_floor,
                       dataset.item_ids, tuple(trace), population_prior(dataset))


def triple_log_likelihood(model: AspectModel, users, items, values) -> float:
    """sum_t log sum_z p(z|y_t) N(v_t; mu[z, x_t], sigma[z, x_t])."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if items.size and (items.min() < 0 or items.max() >= model.num_items):
        raise ModelError("unknown item id")
    if users.size and (users.min() < 0 or users.max() >= model.simplex.shape[0]):
        raise ModelError("unknown user id")
    return kernels.em_estep(values, users, items, _log(model.simplex), model.mu, model.sigma)[1]


def log_likelihood(model: AspectModel, dataset: Dataset) -> float:
    """Training log-likelihood of ``dataset`` (z-scored per user) under ``model``."""
    if dataset.num_items != model.num_items:
        raise ModelError("dataset and model item indices differ")
    values, _ = normalize(dataset)
    return triple_log_likelihood(model, dataset.users, dataset.items, values)


def log_rating_densities(model: AspectModel, items, stats: UserNormStats) -> np.ndarray:
    """log N(norm(r); mu[z, x], sigma[z, x]) as an array (len(items), R, K)."""
    items = np.asarray(items, dtype=np.int64)
    if items.size and (items.min() < 0 or items.max() >= model.num_items):
        raise ModelError("unknown item id")
    n = stats.normalize(model.scale_points())
    m = model.mu[:, items].T[:, None, :]
    s = model.sigma[:, items].T[:, None, :]
    dev = (n[None, :, None] - m) / s
    return -0.5 * dev * dev - np.log(s) - LOG_SQRT_2PI


def rating_likelihood(model: AspectModel, z: int, x: int, r: int, stats: UserNormStats) -> float:
    """Gaussian density of the z-scored rating ``r`` under class ``z`` for item ``x``."""
    x = model.check_item(x)
    if not 0 <= z < model.k:
        raise ModelError(f"unknown class {z}")
    if not 1 <= r <= model.rating_scale:
        raise ModelError(f"rating {r} outside [1, {model.rating_scale}]")
    v = float(stats.normalize(r))
    s = model.sigma[z, x]
    d = (v - model.mu[z, x]) / s
    return float(np.exp(-0.5 * d * d) / (s * np.sqrt(2.0 * np.pi)))


def _logsumexp(a, axis):
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(top, axis=axis) + np.log(np.sum(np.exp(a - top), axis=axis))


def log_rating_weights(log_dens: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """log sum_z theta_z p(r|x,z) for each row of ``log_dens`` (..., R, K).

    ``theta`` broadcasts against the leading axes of ``log_dens``.
    """
    with np.errstate(divide="ignore"):
        lt = np.log(theta)
    return _logsumexp(log_dens + lt[..., None, :], axis=-1)


def normalized_rating_weights(log_dens: np.ndarray, theta: np.ndarray) -> np.ndarray:
    lw = log_rating_weights(log_dens, theta)
    lw = lw - lw.max(axis=-1, keepdims=True)
    w = np.exp(lw)
    return w / w.sum(axis=-1, keepdims=True)


def rating_distribution(model: AspectModel, theta, x: int, stats: UserNormStats):
    """Mixture weights over r = 1..R for item ``x``.

    Returns ``(raw, normalized)``: the raw Gaussian mixture densities
    sum_z theta_z p(r|x,z), which need not sum to one, and the same
    weights rescaled to a distribution.
    """
    x = model.check_item(x)
    theta = np.asarray(theta, dtype=np.float64)
    ld = log_rating_densities(model, [x], stats)[0]
    raw = np.exp(log_rating_weights(ld, theta))
    return raw, normalized_rating_weights(ld, theta)


def predict_rating(model: AspectModel, theta, x, stats: UserNormStats):
    """Posterior-mean prediction sum_z theta_z mu[z, x], denormalized and clamped to [1, R].

    ``x`` may be a single item or an array of items.
    """
    items = np.atleast_1d(np.asarray(x, dtype=np.int64))
    if items.size and (items.min() < 0 or items.max() >= model.num_items):
        raise ModelError("unknown item id")
    theta = np.asarray(theta, dtype=np.float64)
    n = theta @ model.mu[:, items]
    pred = np.clip(stats.denormalize(n), 1.0, float(model.rating_scale))
    return float(pred[0]) if np.ndim(x) == 0 else pred


# Text format, one record per line:
#   aspect-model 1
#   K <k>
#   R <rating_scale>
#   sigma_floor <float>
#   prior <mean> <variance>
#   items <M>
#   <M item ids, tab separated>
#   mu            followed by K lines of M floats
#   sigma         followed by K lines of M floats
#   users <U>     followed by U lines of K floats (training simplex)
_MAGIC = "aspect-model 1"


def _fmt(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def save_model(model: AspectModel, path) -> None:
    lines = [
        _MAGIC,
        f"K {model.k}",
        f"R {model.rating_scale}",
        f"sigma_floor {model.sigma_floor!r}",
        f"prior {model.prior.mean!r} {model.prior.var!r}",
        f"items {model.num_items}",
        "\t".join(model.item_ids),
        "mu",
        *(_fmt(row) for row in model.mu),
        "sigma",
        *(_fmt(row) for row in model.sigma),
        f"users {model.simplex.shape[0]}",
        *(_fmt(row) for row in model.simplex),
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_model(path) -> AspectModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    pos = 0

    def take() -> str:
        nonlocal pos
        if pos >= len(lines):
            raise ModelError(f"{path}: unexpected end of file")
        pos += 1
        return lines[pos - 1]

    def keyed(key):
        parts = take().split()
        if len(parts) != 2 or parts[0] != key:
            raise ModelError(f"{path}:{pos}: expected '{key} <value>'")
        return parts[1]

    def table(rows, cols):
        out = np.array([[float(v) for v in take().split()] for _ in range(rows)])
        if out.shape != (rows, cols):
            raise ModelError(f"{path}:{pos}: table has wrong shape")
        return out

    if take().strip() != _MAGIC:
        raise ModelError(f"{path}: not an aspect model file")
    k = int(keyed("K"))
    r = int(keyed("R"))
    floor = float(keyed("sigma_floor"))
    parts = take().split()
    if len(parts) != 3 or parts[0] != "prior":
        raise ModelError(f"{path}:{pos}: expected 'prior <mean> <variance>'")
    prior = RatingPrior(float(parts[1]), float(parts[2]))
    m = int(keyed("items"))
    item_ids = take().split("\t") if m else []
    if take().strip() != "mu":
        raise ModelError(f"{path}:{pos}: expected 'mu'")
    mu = table(k, m)
    if take().strip() != "sigma":
        raise ModelError(f"{path}:{pos}: expected 'sigma'")
    sigma = table(k, m)
    u = int(keyed("users"))
    simplex = table(u, k)
    return AspectModel(mu, sigma, simplex, r, floor, item_ids, prior=prior)


def align_model(model: AspectModel, item_ids) -> AspectModel:
    """Reorder a model's item axis to match ``item_ids`` (e.g. a freshly loaded dataset)."""
    index = {iid: j for j, iid in enumerate(model.item_ids)}
    try:
        order = [index[i] for i in item_ids]
    except KeyError as e:
        raise ModelError(f"item {e.args[0]!r} not present in model") from None
    return AspectModel(model.mu[:, order], model.sigma[:, order], model.simplex,
                       model.rating_scale, model.sigma_floor, tuple(item_ids), prior=model.prior)
