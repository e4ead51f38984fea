"""Item-selection policies and the Monte-Carlo check of the Bayesian loss."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .active_user import ActiveUserState, dirichlet_moments, fast_update_many
from .aspect_model import AspectModel, log_rating_densities, normalized_rating_weights


class StrategyKind(str, enum.Enum):
    RANDOM = "random"
    MODEL_ENTROPY = "model_entropy"
    PREDICTION_ENTROPY = "prediction_entropy"
    BAYESIAN = "bayesian"

    @classmethod
    def parse(cls, name: str) -> StrategyKind:
        try:
            return cls(name.strip().lower())
        except ValueError:
            known = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown strategy {name!r} (expected one of {known})") from None


def _xlogx(w):
    w = np.asarray(w, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(w > 0, w * np.log(np.where(w > 0, w, 1.0)), 0.0)


def entropy(weights, axis=-1):
    """Shannon entropy in nats of a normalized distribution (0 log 0 = 0)."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("negative weight")
    if np.any(np.abs(w.sum(axis=axis) - 1.0) > 1e-9):
        raise ValueError("weights must sum to 1")
    h = -np.sum(_xlogx(w), axis=axis)
    return np.maximum(h, 0.0)


@dataclass
class CandidateScan:
    """Per-candidate quantities shared by every loss.

    ``log_dens[c, r, z]`` is log p(r|x_c, z) under the user's stats and
    ``updated[c, r]`` the simplex after hypothetically observing r on x_c.
    """

    items: np.ndarray
    log_dens: np.ndarray
    updated: np.ndarray

    @classmethod
    def build(cls, model: AspectModel, state: ActiveUserState, items) -> CandidateScan:
        items = np.asarray(items, dtype=np.int64)
        log_dens = log_rating_densities(model, items, state.stats)
        updated = fast_update_many(model, state.alpha, items, state.stats)
        return cls(items, log_dens, updated)

    def outcome_weights(self, theta) -> np.ndarray:
        """Normalized q(r|x, theta) per candidate, shape (C, R)."""
        return normalized_rating_weights(self.log_dens, theta)


def model_entropy_losses(scan: CandidateScan, state: ActiveUserState) -> np.ndarray:
    q = scan.outcome_weights(state.theta_star)
    h = -np.sum(_xlogx(scan.updated), axis=-1)
    return np.sum(q * h, axis=-1)


def prediction_entropy_losses(scan: CandidateScan, state: ActiveUserState) -> np.ndarray:
    q = scan.outcome_weights(state.theta_star)
    # pred[c, r, c', r'] = q(r'|x_c', theta after (x_c, r))
    pred = normalized_rating_weights(
        scan.log_dens[None, None, :, :, :], scan.updated[:, :, None, :]
    )
    h = -np.sum(_xlogx(pred), axis=-1)
    c = len(scan.items)
    h[np.arange(c), :, np.arange(c)] = 0.0
    return np.sum(q * h.sum(axis=-1), axis=-1)


def bayesian_losses(scan: CandidateScan, state: ActiveUserState) -> np.ndarray:
    """Closed-form expected loss averaged over the Dirichlet posterior.

    For candidate x the loss is
        -E_theta'[ sum_r sum_i theta'_i p(r|x,i) sum_j theta'_j log(theta_{j|x,r} / theta'_j) ]
    with theta' ~ Dirichlet(alpha) and raw Gaussian weights p(r|x,i). The
    expectation splits into E[theta_i theta_j] and E[theta_i theta_j log theta_j].
    """
    alpha = state.alpha
    if np.any(alpha < 1.0 - 1e-12):
        raise ValueError("Dirichlet hyperparameters must all be >= 1")
    second, second_log = dirichlet_moments(alpha)
    raw = np.exp(scan.log_dens)
    with np.errstate(divide="ignore"):
        log_upd = np.log(np.maximum(scan.updated, 1e-300))
    cross = np.einsum("cri,ij,crj->c", raw, second, log_upd)
    self_term = np.einsum("cri,ij->c", raw, second_log)
    return -(cross - self_term)


def loss_model_entropy(model: AspectModel, state: ActiveUserState, x: int) -> float:
    x = model.check_item(x)
    return float(model_entropy_losses(CandidateScan.build(model, state, [x]), state)[0])


def loss_prediction_entropy(model: AspectModel, state: ActiveUserState, x: int, pool) -> float:
    pool = sorted(int(p) for p in pool)
    if not pool:
        raise ValueError("empty pool")
    if x not in pool:
        raise ValueError(f"item {x} not in pool")
    scan = CandidateScan.build(model, state, pool)
    return float(prediction_entropy_losses(scan, state)[pool.index(x)])


def loss_bayesian(model: AspectModel, state: ActiveUserState, x: int) -> float:
    x = model.check_item(x)
    return float(bayesian_losses(CandidateScan.build(model, state, [x]), state)[0])


def mc_expected_loss(model: AspectModel, state: ActiveUserState, x: int, n_samples: int, rng):
    """Monte-Carlo estimate of the Bayesian loss: sample theta' ~ Dirichlet(alpha).

    Returns ``(mean, stderr)``.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    alpha = np.asarray(state.alpha, dtype=np.float64)
    if np.any(~(alpha >= 1.0 - 1e-12)):
        raise ValueError("invalid Dirichlet hyperparameters")
    x = model.check_item(x)
    rng = np.random.default_rng(rng)
    if alpha.size == 1:
        return 0.0, 0.0
    raw = np.exp(log_rating_densities(model, [x], state.stats)[0])  # (R, K)
    log_upd = np.log(np.maximum(fast_update_many(model, alpha, [x], state.stats)[0], 1e-300))
    theta = rng.dirichlet(alpha, size=n_samples)  # (S, K)
    weight = theta @ raw.T  # (S, R)
    agree = theta @ log_upd.T - np.sum(_xlogx(theta), axis=1)[:, None]
    samples = -np.sum(weight * agree, axis=1)
    return float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n_samples))


@dataclass(frozen=True)
class LossReport:
    items: tuple
    losses: tuple
    chosen: int
    ties: int

    def to_csv(self, item_ids=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["item", "loss"])
        for item, loss in zip(self.items, self.losses):
            w.writerow([item_ids[item] if item_ids else item, repr(loss)])
        return buf.getvalue()


_LOSSES = {
    StrategyKind.MODEL_ENTROPY: model_entropy_losses,
    StrategyKind.PREDICTION_ENTROPY: prediction_entropy_losses,
    StrategyKind.BAYESIAN: bayesian_losses,
}


def candidate_losses(kind: StrategyKind, model: AspectModel, state: ActiveUserState, pool) -> np.ndarray:
    scan = CandidateScan.build(model, state, pool)
    return _LOSSES[StrategyKind(kind)](scan, state)


def select_item(kind: StrategyKind, model: AspectModel, state: ActiveUserState, pool, rng=None):
    """Pick the next item to query from ``pool``.

    Returns ``(item, LossReport)``. Non-random strategies take the arg-min
    loss, ties going to the smallest internal item id.
    """
    kind = StrategyKind(kind)
    pool = sorted(set(int(p) for p in pool))
    if not pool:
        raise ValueError("empty pool")
    rated = state.rated_items
    assert not rated.intersection(pool), "pool contains already-rated items"
    if kind is StrategyKind.RANDOM:
        rng = np.random.default_rng(rng)
        item = pool[int(rng.integers(len(pool)))]
        return item, LossReport((), (), item, 0)
    losses = candidate_losses(kind, model, state, pool)
    best = float(np.min(losses))
    idx = int(np.argmin(losses))
    ties = int(np.sum(losses == best))
    item = pool[idx]
    return item, LossReport(tuple(pool), tuple(float(v) for v in losses), item, ties)
