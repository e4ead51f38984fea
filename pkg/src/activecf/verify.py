"""Randomized self-checks of the closed-form Dirichlet machinery.

Shared by the ``verify`` subcommand and the test suite. Each check returns a
list of per-instance records plus a pass flag so callers can report them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .active_user import ActiveUserState, DirichletParams, dirichlet_posterior, fast_update, fold_in
from .aspect_model import AspectModel
from .dataset import UserNormStats
from .strategies import loss_bayesian, mc_expected_loss


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: int
    total: int
    required: int
    detail: tuple = ()

    @property
    def ok(self) -> bool:
        return self.passed >= self.required

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.passed}/{self.total} (need {self.required})"


def random_model(rng, k: int, items: int = 12, rating_scale: int = 5) -> AspectModel:
    """Model with N(0, 1) means and sigmas in [0.3, 1.5], for randomized checks."""
    return AspectModel(
        mu=rng.normal(size=(k, items)),
        sigma=rng.uniform(0.3, 1.5, size=(k, items)),
        simplex=rng.dirichlet(np.ones(k), size=3),
        rating_scale=rating_scale,
    )


def random_state(rng, model: AspectModel, alpha_range=(1.0, 6.0)) -> ActiveUserState:
    """State with alpha drawn uniformly from ``alpha_range`` and theta* at its mode."""
    alpha = rng.uniform(*alpha_range, size=model.k)
    stats = UserNormStats(float(rng.uniform(2.5, 3.5)), float(rng.uniform(0.8, 1.4)))
    return ActiveUserState((), DirichletParams(alpha).mode(), alpha, stats)


def random_revealed(rng, model: AspectModel, n: int):
    items = rng.choice(model.num_items, size=n, replace=False)
    return tuple((int(x), int(rng.integers(1, model.rating_scale + 1))) for x in items)


def check_bayesian_mc(instances: int = 100, samples: int = 100_000, seed: int = 0,
                      model: AspectModel | None = None, min_fraction: float = 0.95) -> CheckResult:
    """|analytic - MC mean| <= 3 stderr on random (alpha, model, item) instances."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        m = model if model is not None else random_model(rng, int(rng.integers(2, 5)))
        state = random_state(rng, m)
        x = int(rng.integers(m.num_items))
        analytic = loss_bayesian(m, state, x)
        mean, se = mc_expected_loss(m, state, x, samples, rng)
        rows.append((m.k, analytic, mean, se, abs(analytic - mean) <= 3 * se))
    passed = sum(r[-1] for r in rows)
    return CheckResult("bayesian loss vs Monte Carlo", passed, instances,
                       int(np.ceil(min_fraction * instances)), tuple(rows))


def check_expected_log(instances: int = 20, samples: int = 200_000, seed: int = 1) -> CheckResult:
    """E[log theta_j] = Psi(alpha_j) - Psi(alpha*) against Dirichlet samples, every coordinate."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        k = int(rng.integers(2, 5))
        params = DirichletParams(rng.uniform(1.0, 6.0, size=k))
        draws = np.log(rng.dirichlet(params.alpha, size=samples))
        mean = draws.mean(axis=0)
        se = draws.std(axis=0, ddof=1) / np.sqrt(samples)
        closed = params.expected_log()
        rows.append((k, closed, mean, se, bool(np.all(np.abs(closed - mean) <= 3 * se))))
    passed = sum(r[-1] for r in rows)
    return CheckResult("E[log theta] vs Monte Carlo", passed, instances, instances, tuple(rows))


def check_mode_identity(instances: int = 20, seed: int = 2, model: AspectModel | None = None,
                        tol: float = 1e-6) -> CheckResult:
    """Dirichlet mode (alpha - 1)/(alpha* - K) reproduces the fold-in estimate."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        m = model if model is not None else random_model(rng, int(rng.integers(2, 5)))
        revealed = random_revealed(rng, m, int(rng.integers(1, 9)))
        stats = UserNormStats(3.0, 1.0)
        theta = fold_in(m, revealed, stats)
        mode = dirichlet_posterior(m, revealed, theta, stats).mode()
        err = float(np.max(np.abs(mode - theta)))
        rows.append((m.k, err, err <= tol))
    passed = sum(r[-1] for r in rows)
    return CheckResult("Dirichlet mode equals fold-in", passed, instances, instances, tuple(rows))


def check_fast_update(instances: int = 20, seed: int = 3, model: AspectModel | None = None,
                      max_tv: float = 0.05) -> CheckResult:
    """fast_update within ``max_tv`` total variation of a full re-fold-in."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(instances):
        m = model if model is not None else random_model(rng, int(rng.integers(2, 5)))
        revealed = random_revealed(rng, m, int(rng.integers(4, 10)))
        history, (x, r) = revealed[:-1], revealed[-1]
        stats = UserNormStats(3.0, 1.0)
        theta = fold_in(m, history, stats)
        alpha = dirichlet_posterior(m, history, theta, stats).alpha
        state = ActiveUserState(history, theta, alpha, stats)
        tv = 0.5 * float(np.abs(fast_update(m, state, x, r) - fold_in(m, revealed, stats)).sum())
        rows.append((m.k, len(history), tv, tv <= max_tv))
    passed = sum(r[-1] for r in rows)
    return CheckResult("fast_update vs full fold-in", passed, instances, instances, tuple(rows))


def run_all(seed: int = 0, model: AspectModel | None = None, instances: int = 100,
            samples: int = 100_000) -> list:
    """Exactness checks only; ``check_fast_update`` measures an approximation and is reported separately."""
    return [
        check_bayesian_mc(instances, samples, seed, model),
        check_expected_log(seed=seed + 1),
        check_mode_identity(seed=seed + 2, model=model),
    ]
