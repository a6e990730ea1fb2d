"""
Tests for the NSNMF model: initialization, prediction, the per-rating
update with its semi-NMF acceptance rules, gradients and checkpoints
"""

import os

import numpy as np
import pytest

from activations import ActivationKind, apply
from conftest import make_dataset, random_dataset
from errors import ConfigurationError, DivergenceError, PredictionIndexError
from nsnmf_model import (
    AdaGradState,
    NsnmfModel,
    TrainConfig,
    init_model,
    item_representation,
    load_model,
    regularized_objective,
    sample_gradients,
    sample_loss,
    save_model,
    sgd_step,
)


def scalar_model(p=1.0, s=1.0, q=1.0, mu=0.0, activation='relu', use_bias=True):
    """1 user, 1 item, k = l = 1"""
    return NsnmfModel(
        mu=mu, b_user=np.zeros(1), b_item=np.zeros(1),
        P=np.array([[p]]), S=[np.array([[s]])], Q=np.array([[q]]),
        activation=ActivationKind.parse(activation), use_bias=use_bias,
        scale_min=1.0, scale_max=5.0, clamp_predictions=False,
    )


def random_model(n_users, n_items, dims, activation='softplus', seed=0, use_bias=True):
    rng = np.random.default_rng(seed)
    S = [rng.normal(0, 0.7, (dims[j], dims[j + 1])) for j in range(len(dims) - 1)]
    return NsnmfModel(
        mu=3.0, b_user=rng.normal(0, 0.3, n_users), b_item=rng.normal(0, 0.3, n_items),
        P=rng.normal(0, 0.7, (n_users, dims[0])), S=S, Q=rng.random((dims[-1], n_items)) + 0.05,
        activation=ActivationKind.parse(activation), use_bias=use_bias,
        scale_min=1.0, scale_max=5.0, clamp_predictions=False,
    )


def diagnostic_config(eta=0.1, lam=0.0, dims=(1, 1)):
    return TrainConfig(eta=eta, lam=lam, dims=dims, use_adagrad=False)


class TestInit:

    def test_seeded_init_is_bit_identical(self, toy_dataset):
        config = TrainConfig(dims=(4, 3), seed=5)
        a, _ = init_model(config, toy_dataset.n_users, toy_dataset.n_items, toy_dataset)
        b, _ = init_model(config, toy_dataset.n_users, toy_dataset.n_items, toy_dataset)
        np.testing.assert_array_equal(a.P, b.P)
        np.testing.assert_array_equal(a.S[0], b.S[0])
        np.testing.assert_array_equal(a.Q, b.Q)

    def test_mu_is_training_mean(self):
        train = make_dataset([(0, 0, 4.0), (1, 1, 4.0), (1, 0, 4.0)])
        model, _ = init_model(TrainConfig(dims=(2, 2)), 2, 2, train)
        assert model.mu == 4.0
        np.testing.assert_array_equal(model.b_user, 0.0)
        np.testing.assert_array_equal(model.b_item, 0.0)

    def test_uniform_unit_interval(self):
        train = make_dataset([(0, 0, 3.0)], n_users=1250, n_items=10)
        model, adagrad = init_model(TrainConfig(dims=(8, 8), seed=1), 1250, 10, train)
        assert model.P.size == 10000
        assert abs(model.P.mean() - 0.5) < 0.02
        for values in (model.P, model.S[0], model.Q):
            assert values.min() > 0.0 and values.max() <= 1.0
        assert not adagrad.P.any() and not adagrad.Q.any() and not adagrad.S[0].any()

    def test_dimension_chain(self, toy_dataset):
        model, _ = init_model(TrainConfig(dims=(5, 4, 3)), toy_dataset.n_users, toy_dataset.n_items, toy_dataset)
        assert model.P.shape == (toy_dataset.n_users, 5)
        assert [s.shape for s in model.S] == [(5, 4), (4, 3)]
        assert model.Q.shape == (3, toy_dataset.n_items)
        assert model.n_layers == 3
        assert model.dims == (5, 4, 3)

    def test_index_space_mismatch(self, toy_dataset):
        with pytest.raises(ConfigurationError):
            init_model(TrainConfig(), toy_dataset.n_users + 1, toy_dataset.n_items, toy_dataset)

    @pytest.mark.parametrize('changes', [
        {'epochs': 0}, {'eta': 0.0}, {'lam': -0.1}, {'dims': (8,)}, {'dims': (8, 0)},
    ])
    def test_invalid_config(self, changes):
        with pytest.raises(ConfigurationError):
            TrainConfig(**changes).validate()


class TestPredict:

    def test_bias_only(self):
        model = scalar_model(p=0.0, mu=3.5)
        model.b_user[0], model.b_item[0] = 0.3, -0.1
        assert model.predict(0, 0) == pytest.approx(3.7, abs=1e-12)

    def test_hand_arithmetic(self):
        model = scalar_model(p=2.0, s=0.5, q=3.0)
        assert model.predict(0, 0) == pytest.approx(3.0, abs=1e-15)

    def test_dense_matrix_oracle(self):
        model = random_model(4, 5, (3, 2), activation='softplus', seed=11)
        dense = model.mu + model.b_user[:, None] + model.b_item[None, :] \
            + model.P @ apply('softplus', model.S[0] @ model.Q)
        users, items = np.meshgrid(np.arange(4), np.arange(5), indexing='ij')
        np.testing.assert_allclose(model.predict_many(users.ravel(), items.ravel()), dense.ravel(), atol=1e-10)
        for u in range(4):
            for i in range(5):
                assert abs(model.predict(u, i) - dense[u, i]) < 1e-10

    def test_cold_start_fallbacks(self):
        model = random_model(2, 2, (2, 2), seed=2)
        model.seen_users = np.array([True, False])
        model.seen_items = np.array([True, False])
        assert model.predict(1, 0) == pytest.approx(model.mu + model.b_item[0])
        assert model.predict(0, 1) == pytest.approx(model.mu + model.b_user[0])
        assert model.predict(1, 1) == pytest.approx(model.mu)
        assert model.predict(None, None) == pytest.approx(model.mu)
        assert model.predict(None, 0) == pytest.approx(model.mu + model.b_item[0])
        np.testing.assert_allclose(model.predict_many([1, 0, 1], [0, 1, 1]),
                                   [model.mu + model.b_item[0], model.mu + model.b_user[0], model.mu])

    def test_clamping(self):
        model = scalar_model(p=10.0, s=1.0, q=1.0)
        assert model.predict(0, 0) == 10.0
        model.clamp_predictions = True
        assert model.predict(0, 0) == 5.0
        model.P[0, 0] = -10.0
        assert model.predict_many([0], [0]).tolist() == [1.0]

    def test_index_out_of_range(self):
        model = scalar_model()
        with pytest.raises(PredictionIndexError):
            model.predict(1, 0)
        with pytest.raises(IndexError):
            model.predict_many([0], [3])


class TestSgdStep:

    def test_zero_error_and_zero_lambda_is_fixed_point(self):
        model = scalar_model()
        before = model.copy()
        sgd_step(model, AdaGradState.zeros_like(model), 0, 0, 1.0, TrainConfig(eta=0.1, lam=0.0, dims=(1, 1)))
        for name in ('P', 'Q', 'b_user', 'b_item'):
            np.testing.assert_array_equal(getattr(model, name), getattr(before, name))
        np.testing.assert_array_equal(model.S[0], before.S[0])

    def test_single_step_accept_branch(self):
        # r_hat = 1 * relu(1 * 1) = 1, e = 1, every gradient is -1
        model = scalar_model()
        sgd_step(model, AdaGradState.zeros_like(model), 0, 0, 2.0, diagnostic_config())
        assert model.b_user[0] == pytest.approx(0.1, abs=1e-15)
        assert model.b_item[0] == pytest.approx(0.1, abs=1e-15)
        assert model.P[0, 0] == pytest.approx(1.1, abs=1e-15)
        assert model.S[0][0, 0] == pytest.approx(1.1, abs=1e-15)
        assert model.Q[0, 0] == pytest.approx(1.1, abs=1e-15)
        assert model.mu == 0.0

    def test_single_step_with_regularization(self):
        model = scalar_model()
        sgd_step(model, AdaGradState.zeros_like(model), 0, 0, 2.0, diagnostic_config(lam=0.1))
        # biases start at 0 so their penalty gradient vanishes
        assert model.b_user[0] == pytest.approx(0.1, abs=1e-15)
        assert model.P[0, 0] == pytest.approx(1.09, abs=1e-15)
        assert model.S[0][0, 0] == pytest.approx(1.09, abs=1e-15)
        assert model.Q[0, 0] == pytest.approx(1.09, abs=1e-15)

    def test_single_step_reject_branch(self):
        # e = -11: candidates s* = q* = 1 - 0.1 * 11 = -0.1 are both refused
        model = scalar_model()
        sgd_step(model, AdaGradState.zeros_like(model), 0, 0, -10.0, diagnostic_config())
        assert model.Q[0, 0] == 1.0
        assert model.S[0][0, 0] == 1.0
        assert model.b_user[0] == pytest.approx(-1.1, abs=1e-15)
        assert model.b_item[0] == pytest.approx(-1.1, abs=1e-15)
        assert model.P[0, 0] == pytest.approx(-0.1, abs=1e-15)

    def test_adagrad_step_size(self):
        model = scalar_model()
        adagrad = AdaGradState.zeros_like(model)
        config = TrainConfig(eta=0.1, lam=0.0, dims=(1, 1), use_adagrad=True)
        sgd_step(model, adagrad, 0, 0, 2.0, config)
        expected = 1.0 + 0.1 / (1.0 + config.adagrad_epsilon)
        assert model.P[0, 0] == pytest.approx(expected, abs=1e-15)
        assert adagrad.P[0, 0] == 1.0
        assert adagrad.Q[0, 0] == 1.0
        assert adagrad.S[0][0, 0] == 1.0

    def test_without_bias_biases_stay_zero(self):
        model = scalar_model(use_bias=False)
        sgd_step(model, AdaGradState.zeros_like(model), 0, 0, 2.0, diagnostic_config())
        assert model.b_user[0] == 0.0 and model.b_item[0] == 0.0
        assert model.P[0, 0] == pytest.approx(1.1, abs=1e-15)

    def test_rejected_q_candidates_would_have_been_non_positive(self):
        rng = np.random.default_rng(4)
        for trial in range(30):
            model = random_model(3, 4, (3, 2), activation='relu', seed=trial)
            u, i, r = int(rng.integers(3)), int(rng.integers(4)), float(rng.uniform(-20, 20))
            config = TrainConfig(eta=0.5, lam=0.1, dims=(3, 2), use_adagrad=False)
            grads = sample_gradients(model, u, i, r, config.lam)
            candidate = model.Q[:, i] - config.eta * grads.q
            before = model.Q[:, i].copy()
            sgd_step(model, AdaGradState.zeros_like(model), u, i, r, config)
            after = model.Q[:, i]
            np.testing.assert_array_equal(after[candidate > 0], candidate[candidate > 0])
            np.testing.assert_array_equal(after[candidate <= 0], before[candidate <= 0])

    @pytest.mark.parametrize('dims', [(3, 2), (4, 3, 2)])
    def test_s_rows_kept_or_reverted_against_updated_input(self, dims):
        rng = np.random.default_rng(11)
        kept = reverted = 0
        for trial in range(40):
            model = random_model(3, 4, dims, activation='relu', seed=100 + trial)
            u, i, r = int(rng.integers(3)), int(rng.integers(4)), float(rng.uniform(-20, 20))
            config = TrainConfig(eta=0.5, lam=0.1, dims=dims, use_adagrad=False)
            grads = sample_gradients(model, u, i, r, config.lam)
            before = [s.copy() for s in model.S]
            q_candidate = model.Q[:, i] - config.eta * grads.q
            h = np.where(q_candidate > 0, q_candidate, model.Q[:, i])

            sgd_step(model, AdaGradState.zeros_like(model), u, i, r, config)

            for j in reversed(range(len(before))):
                candidate = before[j] - config.eta * grads.S[j]
                accept = np.maximum(candidate @ h, 0.0) > 0
                for k in range(candidate.shape[0]):
                    expected = candidate[k] if accept[k] else before[j][k]
                    np.testing.assert_array_equal(model.S[j][k], expected)
                kept += int(accept.sum())
                reverted += int((~accept).sum())
                h = np.maximum(model.S[j] @ h, 0.0)
        assert kept > 0 and reverted > 0

    def test_non_finite_item_factor_raises_before_any_update(self):
        model = scalar_model()
        model.Q[0, 0] = np.inf
        with pytest.raises(DivergenceError):
            sgd_step(model, AdaGradState.zeros_like(model), 0, 0, 2.0, diagnostic_config())
        assert model.P[0, 0] == 1.0 and model.b_user[0] == 0.0

    def test_q_stays_non_negative_and_accumulators_grow(self, toy_dataset):
        config = TrainConfig(eta=0.3, lam=0.05, dims=(3, 3), activation='relu', seed=2)
        model, adagrad = init_model(config, toy_dataset.n_users, toy_dataset.n_items, toy_dataset)
        previous = adagrad.Q.copy()
        for u, i, r in list(toy_dataset.triples()) * 3:
            sgd_step(model, adagrad, u, i, r, config)
            assert model.Q.min() >= 0.0
            assert np.all(adagrad.Q >= previous)
            previous = adagrad.Q.copy()

    def test_divergence_names_parameter(self):
        model = scalar_model()
        model.P[0, 0] = np.inf
        with pytest.raises(DivergenceError) as info:
            sgd_step(model, AdaGradState.zeros_like(model), 0, 0, 2.0, diagnostic_config())
        assert info.value.parameter


def _numeric_gradients(model, u, i, r, lam, h=1e-6):
    """Central differences of sample_loss for every parameter touched by (u, i)"""
    def diff(array, index):
        original = array[index]
        array[index] = original + h
        plus = sample_loss(model, u, i, r, lam)
        array[index] = original - h
        minus = sample_loss(model, u, i, r, lam)
        array[index] = original
        return (plus - minus) / (2 * h)

    grads = {
        'b_user': diff(model.b_user, u),
        'b_item': diff(model.b_item, i),
        'p': np.array([diff(model.P, (u, k)) for k in range(model.P.shape[1])]),
        'q': np.array([diff(model.Q, (l, i)) for l in range(model.Q.shape[0])]),
        'S': [np.array([[diff(s, (a, b)) for b in range(s.shape[1])] for a in range(s.shape[0])])
              for s in model.S],
    }
    return grads


class TestGradients:

    @pytest.mark.parametrize('lam', [0.0, 0.1])
    def test_softplus_gradients_match_finite_differences(self, lam):
        rng = np.random.default_rng(123)
        for point in range(100):
            dims = (3, 2) if point % 2 == 0 else (3, 2, 2)
            model = random_model(3, 4, dims, activation='softplus', seed=point)
            u, i, r = int(rng.integers(3)), int(rng.integers(4)), float(rng.uniform(1, 5))
            analytic = sample_gradients(model, u, i, r, lam)
            numeric = _numeric_gradients(model, u, i, r, lam)
            np.testing.assert_allclose(analytic.b_user, numeric['b_user'], rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(analytic.b_item, numeric['b_item'], rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(analytic.p, numeric['p'], rtol=1e-4, atol=1e-7)
            np.testing.assert_allclose(analytic.q, numeric['q'], rtol=1e-4, atol=1e-7)
            for got, expected in zip(analytic.S, numeric['S']):
                np.testing.assert_allclose(got, expected, rtol=1e-4, atol=1e-7)

    def test_descent_on_toy_set(self):
        data = make_dataset([(0, 0, 4.0), (0, 1, 2.0), (1, 0, 3.0), (1, 2, 5.0), (2, 1, 1.0)])
        model = random_model(3, 3, (2, 2), activation='softplus', seed=9)
        config = TrainConfig(eta=1e-3, lam=0.0, dims=(2, 2), activation='softplus', use_adagrad=False)
        before = regularized_objective(model, data, 0.0)
        adagrad = AdaGradState.zeros_like(model)
        for u, i, r in data.triples():
            sgd_step(model, adagrad, u, i, r, config)
        assert regularized_objective(model, data, 0.0) <= before + 1e-9


class TestObjective:

    def test_perfect_model_with_zero_parameters(self):
        data = make_dataset([(0, 0, 3.0), (1, 1, 3.0)])
        model = NsnmfModel(mu=3.0, b_user=np.zeros(2), b_item=np.zeros(2), P=np.zeros((2, 2)),
                           S=[np.zeros((2, 2))], Q=np.zeros((2, 2)), activation=ActivationKind.RELU,
                           use_bias=True, scale_min=1.0, scale_max=5.0)
        assert regularized_objective(model, data, 0.7) == 0.0

    def test_zero_lambda_is_sum_of_squared_residuals(self):
        data = random_dataset(4, 5, 0.6, seed=1)
        model = random_model(4, 5, (3, 2), seed=3)
        residuals = [r - model.raw_score(u, i) for u, i, r in data.triples()]
        assert regularized_objective(model, data, 0.0) == pytest.approx(sum(e * e for e in residuals), rel=1e-12)

    def test_brute_force(self):
        data = random_dataset(3, 4, 0.7, seed=2)
        model = random_model(3, 4, (2, 3, 2), seed=8)
        lam = 0.25
        total = sum((r - model.raw_score(u, i)) ** 2 for u, i, r in data.triples())
        penalty = 0.0
        for array in [model.b_user, model.b_item, model.P, model.Q] + model.S:
            penalty += sum(float(v) ** 2 for v in np.ravel(array))
        assert regularized_objective(model, data, lam) == pytest.approx(total + lam * penalty, rel=1e-12)


class TestItemRepresentation:

    def test_relu_features_non_negative(self):
        rep = item_representation(random_model(3, 6, (4, 3), activation='relu', seed=1))
        assert rep.activated.min() >= 0.0
        assert rep.activated.shape == (4, 6)
        assert rep.deep.shape == (3, 6)

    def test_identity_single_layer(self):
        model = random_model(3, 6, (4, 3), activation='identity', seed=1)
        np.testing.assert_array_equal(item_representation(model).activated, model.S[0] @ model.Q)


class TestCheckpoint:

    def test_round_trip_predictions_bit_exact(self, tmp_path):
        model = random_model(4, 5, (3, 2, 2), seed=6)
        model.seen_items = np.array([True, True, False, True, True])
        config = TrainConfig(dims=(3, 2, 2), activation='softplus', seed=13)
        path = os.path.join(str(tmp_path), 'model.npz')
        save_model(model, path, config)

        loaded, loaded_config = load_model(path)
        users, items = np.meshgrid(np.arange(4), np.arange(5), indexing='ij')
        np.testing.assert_array_equal(loaded.predict_many(users.ravel(), items.ravel()),
                                      model.predict_many(users.ravel(), items.ravel()))
        assert loaded_config.to_dict() == config.to_dict()
        assert loaded.activation is ActivationKind.SOFTPLUS
