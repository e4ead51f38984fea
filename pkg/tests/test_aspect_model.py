import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from activecf.aspect_model import (
    AspectModel, ModelError, TrainConfig, align_model, load_model, log_likelihood, predict_rating,
    rating_distribution, rating_likelihood, save_model, train_em, triple_log_likelihood,
)
from activecf.dataset import Dataset, UserNormStats, generate_synthetic, normalize


@pytest.fixture(scope="module")
def synth():
    return generate_synthetic(3, 60, 20, 12, seed=2)


@pytest.fixture(scope="module")
def fitted(synth):
    return train_em(synth[0], TrainConfig(k=3, seed=1, n_init=2))


def test_config_validation():
    with pytest.raises(ModelError):
        TrainConfig(k=0)
    with pytest.raises(ModelError):
        TrainConfig(max_iter=0)
    with pytest.raises(ModelError):
        TrainConfig(loglik_tol=0)


def test_single_class_closed_form(synth):
    data = synth[0]
    model = train_em(data, TrainConfig(k=1, n_init=1))
    values, _ = normalize(data)
    for x in range(data.num_items):
        sel = data.items == x
        assert model.mu[0, x] == pytest.approx(values[sel].mean(), abs=1e-12)
    np.testing.assert_array_equal(model.simplex, 1.0)


def test_loglik_trace_monotone(fitted):
    trace = np.array(fitted.loglik_trace)
    assert len(trace) >= 2
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))


def test_fitted_invariants(fitted):
    np.testing.assert_allclose(fitted.simplex.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(fitted.simplex >= 0)
    assert np.all(fitted.sigma >= fitted.sigma_floor)


def test_unrated_item_gets_global_prior():
    d = Dataset([0, 0, 1, 1], [0, 1, 0, 1], [1, 5, 2, 4], ["a", "b"], ["x", "y", "never"], 5)
    model = train_em(d, TrainConfig(k=2, n_init=1))
    np.testing.assert_array_equal(model.mu[:, 2], 0.0)
    np.testing.assert_array_equal(model.sigma[:, 2], 1.0)


def _one_class(mu, sigma, items=1):
    return AspectModel(np.full((1, items), mu), np.full((1, items), sigma), np.ones((1, 1)), 5)


def test_log_likelihood_peak():
    assert triple_log_likelihood(_one_class(0.4, 1.0), [0], [0], [0.4]) == pytest.approx(-0.918939, abs=1e-6)


def test_log_likelihood_additive(fitted, synth):
    data = synth[0]
    values, _ = normalize(data)
    once = triple_log_likelihood(fitted, data.users, data.items, values)
    twice = triple_log_likelihood(fitted, np.tile(data.users, 2), np.tile(data.items, 2), np.tile(values, 2))
    assert twice == pytest.approx(2 * once, rel=1e-12)
    assert log_likelihood(fitted, data) == pytest.approx(once, rel=1e-12)


def test_log_likelihood_brute_force(rng):
    k, m = 3, 4
    model = AspectModel(rng.normal(size=(k, m)), rng.uniform(0.3, 2, (k, m)), rng.dirichlet(np.ones(k), 2), 5)
    users, items, values = [0, 1, 1, 0, 1], [0, 3, 2, 2, 1], rng.normal(size=5)
    expected = sum(
        math.log(sum(model.simplex[u, z] * norm.pdf(v, model.mu[z, x], model.sigma[z, x]) for z in range(k)))
        for u, x, v in zip(users, items, values)
    )
    assert triple_log_likelihood(model, users, items, values) == pytest.approx(expected, rel=1e-12)


def test_log_likelihood_unknown_item(small_model):
    with pytest.raises(ModelError):
        triple_log_likelihood(small_model, [0], [99], [0.0])


def test_rating_likelihood_peak():
    stats = UserNormStats(3.0, 1.0)
    assert rating_likelihood(_one_class(1.0, 0.5), 0, 0, 4, stats) == pytest.approx(0.797885, abs=1e-6)


def test_rating_likelihood_symmetric():
    stats = UserNormStats(3.0, 1.0)
    model = _one_class(0.0, 0.7)
    assert rating_likelihood(model, 0, 0, 2, stats) == pytest.approx(rating_likelihood(model, 0, 0, 4, stats))


def test_rating_likelihood_matches_scipy(small_model, rng):
    for _ in range(10):
        z, x, r = int(rng.integers(3)), int(rng.integers(8)), int(rng.integers(1, 6))
        stats = UserNormStats(rng.uniform(2, 4), rng.uniform(0.5, 1.5))
        v = (r - stats.mean) / stats.std
        expected = norm.pdf(v, small_model.mu[z, x], small_model.sigma[z, x])
        assert rating_likelihood(small_model, z, x, r, stats) == pytest.approx(expected, rel=1e-12)


def test_rating_likelihood_errors(small_model, unit_stats):
    with pytest.raises(ModelError):
        rating_likelihood(small_model, 5, 0, 3, unit_stats)
    with pytest.raises(ModelError):
        rating_likelihood(small_model, 0, 0, 6, unit_stats)


def test_rating_distribution_concentrated():
    model = _one_class(0.0, 0.1)
    _, q = rating_distribution(model, [1.0], 0, UserNormStats(3.0, 1.0))
    assert q[2] > 0.99


def test_rating_distribution_raw_not_normalized(small_model, unit_stats):
    raw, q = rating_distribution(small_model, [0.2, 0.3, 0.5], 1, unit_stats)
    assert abs(raw.sum() - 1.0) > 1e-3
    np.testing.assert_allclose(q, raw / raw.sum(), rtol=1e-12)


@given(st.lists(st.floats(0.01, 1.0), min_size=3, max_size=3), st.integers(0, 7))
def test_rating_distribution_normalized_sums_to_one(small_model, w, x):
    theta = np.array(w) / sum(w)
    _, q = rating_distribution(small_model, theta, x, UserNormStats(3.0, 1.0))
    assert abs(q.sum() - 1.0) <= 1e-12


def test_predict_identity_denormalization():
    assert predict_rating(_one_class(0.0, 1.0), [1.0], 0, UserNormStats(3.2, 1.0)) == pytest.approx(3.2)


def test_predict_clamps():
    assert predict_rating(_one_class(4.4, 1.0), [1.0], 0, UserNormStats(3.0, 1.0)) == 5.0
    assert predict_rating(_one_class(-9.0, 1.0), [1.0], 0, UserNormStats(3.0, 1.0)) == 1.0


def test_predict_symmetric_mixture():
    model = AspectModel([[-1.0], [1.0]], [[1.0], [1.0]], [[0.5, 0.5]], 5)
    assert predict_rating(model, [0.5, 0.5], 0, UserNormStats(3.0, 1.0)) == pytest.approx(3.0)


def test_predict_array_and_unknown(small_model, unit_stats):
    out = predict_rating(small_model, [0.2, 0.3, 0.5], np.arange(8), unit_stats)
    assert out.shape == (8,) and np.all((out >= 1) & (out <= 5))
    with pytest.raises(ModelError):
        predict_rating(small_model, [0.2, 0.3, 0.5], 8, unit_stats)


@settings(max_examples=25)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=1), st.integers(0, 19))
def test_single_class_prediction_ignores_theta(synth, w, x):
    data = synth[0]
    model = train_em(data, TrainConfig(k=1, n_init=1))
    values, _ = normalize(data)
    stats = UserNormStats(2.9, 1.1)
    expected = np.clip(stats.denormalize(values[data.items == x].mean()), 1, 5)
    assert predict_rating(model, [1.0], x, stats) == pytest.approx(float(expected))


def test_class_permutation_invariance(fitted, synth, unit_stats):
    perm = [2, 0, 1]
    permuted = AspectModel(fitted.mu[perm], fitted.sigma[perm], fitted.simplex[:, perm], 5, fitted.sigma_floor)
    assert log_likelihood(permuted, synth[0]) == pytest.approx(log_likelihood(fitted, synth[0]), rel=1e-12)
    theta = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(predict_rating(permuted, theta[perm], np.arange(20), unit_stats),
                               predict_rating(fitted, theta, np.arange(20), unit_stats), rtol=1e-12)


def test_model_validation():
    with pytest.raises(ModelError):
        AspectModel([[0.0]], [[0.01]], [[1.0]], 5)
    with pytest.raises(ModelError):
        AspectModel([[0.0, 1.0]], [[1.0]], [[1.0]], 5)


def test_save_load_roundtrip(fitted, tmp_path):
    save_model(fitted, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    np.testing.assert_array_equal(back.mu, fitted.mu)
    np.testing.assert_array_equal(back.sigma, fitted.sigma)
    np.testing.assert_array_equal(back.simplex, fitted.simplex)
    assert (back.rating_scale, back.sigma_floor, back.item_ids, back.prior) == (
        fitted.rating_scale, fitted.sigma_floor, fitted.item_ids, fitted.prior)


def test_load_rejects_garbage(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("not a model\n")
    with pytest.raises(ModelError):
        load_model(p)


def test_load_rejects_truncated(fitted, tmp_path):
    save_model(fitted, tmp_path / "m.txt")
    lines = (tmp_path / "m.txt").read_text().splitlines()
    (tmp_path / "cut.txt").write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(ModelError):
        load_model(tmp_path / "cut.txt")


def test_align_model(fitted):
    ids = list(reversed(fitted.item_ids))
    aligned = align_model(fitted, ids)
    np.testing.assert_array_equal(aligned.mu, fitted.mu[:, ::-1])
    with pytest.raises(ModelError):
        align_model(fitted, ids + ["extra"])
