import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from activecf.active_user import ActiveUserState, DirichletParams, fast_update
from activecf.aspect_model import AspectModel, log_rating_densities
from activecf.dataset import UserNormStats
from activecf.strategies import (
    LossReport, StrategyKind, candidate_losses, entropy, loss_bayesian, loss_model_entropy,
    loss_prediction_entropy, mc_expected_loss, select_item,
)
from activecf.verify import check_bayesian_mc

# R = 2 with mean 1.5, std 0.5 maps ratings 1, 2 to normalized -1, +1
BINARY = UserNormStats(1.5, 0.5)


@pytest.fixture(scope="module")
def binary_model():
    mu = np.array([[-0.8, 0.4, 1.0], [0.9, -0.3, -1.1]])
    sigma = np.array([[0.7, 1.0, 0.6], [0.8, 0.9, 1.2]])
    return AspectModel(mu, sigma, [[0.5, 0.5]], 2)


@pytest.fixture(scope="module")
def binary_state():
    alpha = np.array([2.6, 1.9])
    return ActiveUserState((), DirichletParams(alpha).mode(), alpha, BINARY)


def _density(model, z, x, r, stats):
    return norm.pdf((r - stats.mean) / stats.std, model.mu[z, x], model.sigma[z, x])


def _update(model, alpha, x, r, stats, iters=20000):
    """Plain EM for log(sum_z p_z theta_z) + sum_z (alpha_z - 1) log theta_z."""
    p = np.array([_density(model, z, x, r, stats) for z in range(model.k)])
    theta = alpha / alpha.sum()
    for _ in range(iters):
        theta = p * theta / (p @ theta) + alpha - 1
        theta /= theta.sum()
    return theta


def _h(w):
    w = np.asarray(w)
    return -sum(v * math.log(v) for v in w if v > 0)


def _q(model, theta, x, stats):
    w = np.array([sum(theta[z] * _density(model, z, x, r, stats) for z in range(model.k))
                  for r in range(1, model.rating_scale + 1)])
    return w / w.sum()


def test_entropy_examples():
    assert entropy([1, 0, 0, 0, 0]) == 0.0
    assert entropy(np.full(5, 0.2)) == pytest.approx(1.60944, abs=1e-5)
    assert entropy([0.5, 0.5]) == pytest.approx(0.69315, abs=1e-5)


def test_entropy_errors():
    with pytest.raises(ValueError, match="negative"):
        entropy([1.2, -0.2])
    with pytest.raises(ValueError):
        entropy([0.3, 0.3])


@given(st.lists(st.floats(0, 1), min_size=1, max_size=8).filter(lambda w: sum(w) > 1e-3))
def test_entropy_bounds(w):
    p = np.array(w) / sum(w)
    h = entropy(p)
    assert 0 <= h <= math.log(len(p)) + 1e-12


def test_strategy_kind_parse():
    assert StrategyKind.parse(" Bayesian ") is StrategyKind.BAYESIAN
    with pytest.raises(ValueError, match="unknown strategy"):
        StrategyKind.parse("oracle")


def test_model_entropy_brute_force(binary_model, binary_state):
    for x in range(3):
        q = _q(binary_model, binary_state.theta_star, x, BINARY)
        expected = sum(q[r - 1] * _h(_update(binary_model, binary_state.alpha, x, r, BINARY)) for r in (1, 2))
        assert loss_model_entropy(binary_model, binary_state, x) == pytest.approx(expected, abs=1e-7)


def test_prediction_entropy_brute_force(binary_model, binary_state):
    pool = [0, 1, 2]
    for x in pool:
        q = _q(binary_model, binary_state.theta_star, x, BINARY)
        expected = 0.0
        for r in (1, 2):
            upd = _update(binary_model, binary_state.alpha, x, r, BINARY)
            expected += q[r - 1] * sum(_h(_q(binary_model, upd, o, BINARY)) for o in pool if o != x)
        assert loss_prediction_entropy(binary_model, binary_state, x, pool) == pytest.approx(expected, abs=1e-7)


def test_model_entropy_absorbing_state(small_model, unit_stats):
    alpha = np.array([1e6, 1.0, 1.0])
    state = ActiveUserState((), DirichletParams(alpha).mode(), alpha, unit_stats)
    for x in range(8):
        assert loss_model_entropy(small_model, state, x) < 1e-4


def _identical_classes(k=3, items=6):
    mu = np.tile(np.linspace(-1, 1, items), (k, 1))
    return AspectModel(mu, np.full((k, items), 0.8), [[1.0 / k] * k], 5)


def test_model_entropy_uninformative(unit_stats):
    model = _identical_classes()
    alpha = np.array([3.0, 2.0, 1.5])
    state = ActiveUserState((), DirichletParams(alpha).mode(), alpha, unit_stats)
    h = entropy(state.theta_star)
    for x in range(6):
        assert loss_model_entropy(model, state, x) == pytest.approx(h, abs=1e-6)


def test_prediction_entropy_vacuous_pool(small_model, unit_stats):
    state = ActiveUserState.from_revealed(small_model, [(0, 3)])
    assert loss_prediction_entropy(small_model, state, 4, [4]) == 0.0
    with pytest.raises(ValueError):
        loss_prediction_entropy(small_model, state, 4, [])


def test_prediction_entropy_symmetric(unit_stats):
    model = AspectModel(np.zeros((2, 5)), np.ones((2, 5)), [[0.5, 0.5]], 5)
    state = ActiveUserState((), [0.7, 0.3], [3.8, 2.2], unit_stats)
    losses = candidate_losses(StrategyKind.PREDICTION_ENTROPY, model, state, range(5))
    np.testing.assert_allclose(losses, losses[0], rtol=1e-12)


def test_entropy_losses_bounds(small_model):
    state = ActiveUserState.from_revealed(small_model, [(0, 4), (1, 2)])
    me = candidate_losses(StrategyKind.MODEL_ENTROPY, small_model, state, range(2, 8))
    pe = candidate_losses(StrategyKind.PREDICTION_ENTROPY, small_model, state, range(2, 8))
    assert np.all(me >= 0) and np.all(me <= math.log(3) + 1e-12)
    assert np.all(pe >= 0)


def test_bayesian_single_class(unit_stats):
    model = AspectModel(np.zeros((1, 3)), np.ones((1, 3)), [[1.0]], 5)
    state = ActiveUserState((), [1.0], [5.0], unit_stats)
    assert all(loss_bayesian(model, state, x) == 0.0 for x in range(3))
    assert mc_expected_loss(model, state, 0, 1000, 0) == (0.0, 0.0)


def test_bayesian_matches_monte_carlo():
    result = check_bayesian_mc(instances=20, samples=100_000, seed=21)
    assert result.passed == 20, result.detail


def test_bayesian_converges_to_plug_in(small_model, unit_stats):
    theta = np.array([0.2, 0.5, 0.3])
    x = 2
    p = np.exp(log_rating_densities(small_model, [x], unit_stats)[0])
    gaps = []
    for c in (1e3, 1e4):
        state = ActiveUserState((), theta, 1.0 + c * theta, unit_stats)
        upd = np.array([fast_update(small_model, state, x, r) for r in range(1, 6)])
        plug_in = -np.sum((p @ theta)[:, None] * theta * (np.log(upd) - np.log(theta)))
        gaps.append(abs(loss_bayesian(small_model, state, x) - plug_in))
    assert gaps[1] < 1e-3
    assert gaps[1] < 0.2 * gaps[0]


def test_bayesian_rejects_invalid_alpha(small_model, unit_stats):
    state = ActiveUserState((), [0.3, 0.3, 0.4], [0.5, 1.0, 1.0], unit_stats)
    with pytest.raises(ValueError):
        loss_bayesian(small_model, state, 0)
    with pytest.raises(ValueError):
        mc_expected_loss(small_model, state, 0, 1000, 0)


def test_mc_deterministic_and_scaling(small_model):
    state = ActiveUserState.from_revealed(small_model, [(0, 4), (1, 2), (5, 5)])
    assert mc_expected_loss(small_model, state, 3, 10_000, 5) == mc_expected_loss(small_model, state, 3, 10_000, 5)
    _, se10 = mc_expected_loss(small_model, state, 3, 10_000, 6)
    _, se40 = mc_expected_loss(small_model, state, 3, 40_000, 7)
    assert 0.4 <= se40 / se10 <= 0.6
    with pytest.raises(ValueError):
        mc_expected_loss(small_model, state, 3, 99, 0)


def test_select_single_item_pool(small_model):
    state = ActiveUserState.from_revealed(small_model, [(0, 4)])
    for kind in StrategyKind:
        assert select_item(kind, small_model, state, [6], 0)[0] == 6


def test_select_random_reproducible(small_model):
    state = ActiveUserState.from_revealed(small_model, [(0, 4)])
    picks = [select_item("random", small_model, state, range(1, 8), 42)[0] for _ in range(3)]
    assert len(set(picks)) == 1
    with pytest.raises(ValueError):
        select_item("random", small_model, state, [], 0)


def test_select_rejects_rated_items(small_model):
    state = ActiveUserState.from_revealed(small_model, [(0, 4)])
    with pytest.raises(AssertionError):
        select_item("bayesian", small_model, state, [0, 1], 0)


def test_select_ties_to_smallest_id(unit_stats):
    model = AspectModel(np.zeros((3, 6)), np.ones((3, 6)), [[1 / 3] * 3], 5)
    state = ActiveUserState((), [0.5, 0.3, 0.2], [3.0, 2.2, 1.8], unit_stats)
    for kind in ("model_entropy", "prediction_entropy", "bayesian"):
        item, report = select_item(kind, model, state, [5, 2, 4], None)
        assert item == 2 and report.ties == 3 and report.items == (2, 4, 5)


def test_select_is_argmin_and_shift_invariant(small_model):
    state = ActiveUserState.from_revealed(small_model, [(0, 4), (3, 1)])
    for kind in ("model_entropy", "prediction_entropy", "bayesian"):
        item, report = select_item(kind, small_model, state, [1, 2, 4, 5, 6, 7], None)
        losses = np.array(report.losses)
        assert item == report.items[int(np.argmin(losses))]
        assert report.items[int(np.argmin(losses + 3.7))] == item
        assert item in report.items and item not in state.rated_items


def test_bayesian_argmin_agrees_with_monte_carlo():
    mu = np.array([[-1.2, 0.1, 0.9, -0.2], [1.0, 0.3, -0.8, 0.2]])
    sigma = np.array([[0.5, 1.4, 0.6, 2.0], [0.6, 1.3, 0.5, 1.8]])
    model = AspectModel(mu, sigma, [[0.5, 0.5]], 5)
    alpha = np.array([2.2, 2.8])
    state = ActiveUserState((), DirichletParams(alpha).mode(), alpha, UserNormStats(3.0, 1.0))
    mc = [mc_expected_loss(model, state, x, 100_000, 100 + x) for x in range(4)]
    means = np.array([m for m, _ in mc])
    order = np.argsort(means)
    best, second = order[0], order[1]
    assert means[second] - means[best] > 3 * math.hypot(mc[best][1], mc[second][1])
    assert select_item("bayesian", model, state, range(4))[0] == best


def test_loss_report_csv():
    report = LossReport((0, 2), (0.5, 0.25), 2, 1)
    assert report.to_csv() == "item,loss\n0,0.5\n2,0.25\n"
    assert report.to_csv(("a", "b", "c")).splitlines()[2] == "c,0.25"
