"""
Tests for the neighbourhood CF and matrix factorization baselines
"""

import os

import numpy as np
import pytest

from conftest import make_dataset, random_dataset
from errors import ConfigurationError, PredictionIndexError
from evaluation import evaluate_rmse
from matrix_factorization import MfModel, MfVariant, fit_mf, load_mf, predict_baseline, save_mf
from neighborhood_cf import NeighborhoodMode, fit_neighborhood, load_neighborhood, save_neighborhood


def hand_worked_dataset():
    """
    4 users x 4 items; user 0 has not rated item 3

        u0: 5 3 4 .
        u1: 4 2 3 5     Pearson(u0, u1) = 1 over items 0-2
        u2: 1 3 2 2     Pearson(u0, u2) = -1
        u3: 5 4 . 1     Pearson(u0, u3) = 1 over items 0-1
    """
    rows = {0: [5, 3, 4, None], 1: [4, 2, 3, 5], 2: [1, 3, 2, 2], 3: [5, 4, None, 1]}
    triples = [(u, i, float(r)) for u, values in rows.items() for i, r in enumerate(values) if r is not None]
    return make_dataset(triples)


class TestNeighborhood:

    def test_identical_vectors_have_similarity_one(self):
        data = make_dataset([(0, 0, 1.0), (0, 1, 3.0), (0, 2, 5.0), (1, 0, 1.0), (1, 1, 3.0), (1, 2, 5.0)])
        model = fit_neighborhood(data, 'user', shrinkage=0.0)
        assert model.similarity_row(0)[1] == pytest.approx(1.0, abs=1e-12)
        shrunk = fit_neighborhood(data, 'user', shrinkage=25.0).similarity_row(0)[1]
        assert shrunk == pytest.approx(3.0 / 28.0, abs=1e-12)

    def test_no_positive_neighbour_falls_back_to_user_mean(self):
        # item 2 is rated only by user 0, who is anti-correlated with user 1
        data = make_dataset([(0, 0, 4.0), (0, 1, 2.0), (1, 0, 3.0), (1, 1, 5.0), (0, 2, 5.0)])
        model = fit_neighborhood(data, 'user', shrinkage=0.0)
        assert model.similarity_row(1)[0] == pytest.approx(-1.0)
        assert model.predict(1, 2) == pytest.approx(4.0)

    def test_hand_worked_prediction(self):
        model = fit_neighborhood(hand_worked_dataset(), 'user', k=40, shrinkage=0.0, clamp_predictions=False)
        sims = model.similarity_row(0)
        np.testing.assert_allclose(sims, [0.0, 1.0, -1.0, 1.0], atol=1e-12)
        # u0 mean 4; u1 mean 3.5 rates 5; u3 mean 10/3 rates 1; u2 has negative similarity
        expected = 4.0 + ((5 - 3.5) + (1 - 10 / 3)) / 2
        assert model.predict(0, 3) == pytest.approx(expected, abs=1e-12)
        assert model.predict_many([0], [3])[0] == pytest.approx(expected, abs=1e-12)

    def test_similarities_bounded(self):
        model = fit_neighborhood(random_dataset(15, 12, 0.5, seed=1), 'item', shrinkage=0.0)
        for a in range(12):
            sims = model.similarity_row(a)
            assert sims.min() >= -1.0 and sims.max() <= 1.0
            assert sims[a] == 0.0

    def test_user_and_item_cf_agree_on_symmetric_data(self):
        rng = np.random.default_rng(3)
        n = 8
        ratings = rng.integers(1, 6, (n, n)).astype(float)
        ratings = np.triu(ratings) + np.triu(ratings, 1).T
        mask = rng.random((n, n)) < 0.7
        mask = np.triu(mask) | np.triu(mask, 1).T
        u, i = np.nonzero(mask)
        data = make_dataset(zip(u.tolist(), i.tolist(), ratings[u, i].tolist()), n_users=n, n_items=n)

        user_cf = fit_neighborhood(data, 'user', k=3, shrinkage=5.0)
        item_cf = fit_neighborhood(data, 'item', k=3, shrinkage=5.0)
        for x in range(n):
            for y in range(n):
                assert item_cf.predict(x, y) == pytest.approx(user_cf.predict(y, x), abs=1e-10)

    def test_predict_many_matches_predict(self, toy_dataset):
        model = fit_neighborhood(toy_dataset, 'item', k=5)
        users = np.repeat(np.arange(toy_dataset.n_users), toy_dataset.n_items)
        items = np.tile(np.arange(toy_dataset.n_items), toy_dataset.n_users)
        expected = [model.predict(int(u), int(i)) for u, i in zip(users, items)]
        np.testing.assert_allclose(model.predict_many(users, items), expected, atol=1e-12)

    def test_fallback_chain_for_unseen_entities(self):
        data = make_dataset([(0, 0, 2.0), (1, 1, 4.0)], n_users=3, n_items=3)
        model = fit_neighborhood(data, 'user')
        assert model.predict(2, 1) == pytest.approx(4.0)
        assert model.predict(2, 2) == pytest.approx(3.0)
        assert model.predict(None, None) == pytest.approx(3.0)

    def test_invalid_settings(self, toy_dataset):
        with pytest.raises(ConfigurationError):
            fit_neighborhood(toy_dataset, 'user', k=0)
        with pytest.raises(PredictionIndexError):
            fit_neighborhood(toy_dataset, 'user').predict(toy_dataset.n_users, 0)

    def test_checkpoint_round_trip(self, tmp_path, toy_dataset):
        model = fit_neighborhood(toy_dataset, 'item', k=4, shrinkage=10.0)
        path = os.path.join(str(tmp_path), 'cf.npz')
        save_neighborhood(model, path)
        loaded = load_neighborhood(path)
        assert loaded.mode is NeighborhoodMode.ITEM
        np.testing.assert_array_equal(loaded.predict_many(toy_dataset.users, toy_dataset.items),
                                      model.predict_many(toy_dataset.users, toy_dataset.items))


class TestMatrixFactorization:

    def test_nmf_factors_non_negative(self, toy_dataset):
        for variant in ('nmf', 'reg-nmf'):
            model = fit_mf(toy_dataset, variant, k=3, eta=0.05, lam=0.05, epochs=20, seed=1)
            assert model.P.min() >= 0.0 and model.Q.min() >= 0.0

    def test_plain_nmf_ignores_lambda(self, toy_dataset):
        assert fit_mf(toy_dataset, 'nmf', k=2, eta=0.01, lam=0.5, epochs=1, seed=0).lam == 0.0

    def test_rank_one_matrix_is_fitted(self):
        data = make_dataset([(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 4.0)], scale=(1.0, 4.0))
        model = fit_mf(data, 'svd', k=1, eta=0.05, lam=0.0, epochs=3000, seed=0, clamp_predictions=False)
        assert evaluate_rmse(model, data) < 1e-2

    def test_same_seed_same_parameters(self, toy_dataset):
        a = fit_mf(toy_dataset, 'svd', k=3, eta=0.01, lam=0.1, epochs=5, seed=9)
        b = fit_mf(toy_dataset, 'svd', k=3, eta=0.01, lam=0.1, epochs=5, seed=9)
        np.testing.assert_array_equal(a.P, b.P)
        np.testing.assert_array_equal(a.Q, b.Q)
        np.testing.assert_array_equal(a.b_item, b.b_item)

    def test_zero_factors_predict_biases(self):
        model = MfModel(variant=MfVariant.SVD, P=np.zeros((2, 3)), Q=np.zeros((3, 2)), mu=3.2,
                        b_user=np.array([0.5, -0.2]), b_item=np.array([0.1, 0.3]), lam=0.1,
                        scale_min=1.0, scale_max=5.0, clamp_predictions=False)
        assert predict_baseline(model, 1, 1) == pytest.approx(3.2 - 0.2 + 0.3, abs=1e-12)

    def test_nmf_raw_prediction_non_negative(self):
        rng = np.random.default_rng(0)
        model = MfModel(variant=MfVariant.NMF, P=rng.random((4, 3)), Q=rng.random((3, 5)), mu=3.0,
                        b_user=np.zeros(4), b_item=np.zeros(5), lam=0.0, scale_min=1.0, scale_max=5.0)
        assert all(model.raw_score(u, i) >= 0.0 for u in range(4) for i in range(5))

    def test_dense_oracle(self, toy_dataset):
        model = fit_mf(toy_dataset, 'svd', k=2, eta=0.01, lam=0.05, epochs=3, seed=4, clamp_predictions=False)
        dense = model.mu + model.b_user[:, None] + model.b_item[None, :] + model.P @ model.Q
        for u, i in [(0, 0), (3, 5), (11, 8)]:
            assert abs(predict_baseline(model, u, i) - dense[u, i]) < 1e-10

    def test_cold_start_fallback(self):
        data = make_dataset([(0, 0, 3.0), (1, 1, 5.0)], n_users=3, n_items=3)
        model = fit_mf(data, 'svd', k=2, eta=0.01, lam=0.0, epochs=2, seed=0)
        assert model.predict(2, 2) == pytest.approx(model.mu)
        assert model.predict(2, 0) == pytest.approx(model.mu + model.b_item[0])
        assert model.predict(None, None) == pytest.approx(4.0)

    @pytest.mark.parametrize('user,item', [(None, 3), (3, None), (-1, 0), (0, 3), (None, -1)])
    def test_index_out_of_range(self, user, item):
        data = make_dataset([(0, 0, 3.0), (1, 1, 5.0)], n_users=3, n_items=3)
        model = fit_mf(data, 'svd', k=2, eta=0.01, lam=0.0, epochs=1, seed=0)
        with pytest.raises(PredictionIndexError):
            model.predict(user, item)

    def test_item_representation_is_a_copy_of_q(self, toy_dataset):
        model = fit_mf(toy_dataset, 'nmf', k=2, eta=0.02, lam=0.0, epochs=2, seed=3)
        features = model.item_representation()
        np.testing.assert_array_equal(features, model.Q)
        features[:] = -1.0
        assert model.Q.min() >= 0.0

    def test_invalid_settings(self, toy_dataset):
        with pytest.raises(ConfigurationError):
            fit_mf(toy_dataset, 'svd', k=0, eta=0.01, lam=0.0, epochs=1, seed=0)
        with pytest.raises(ValueError):
            fit_mf(toy_dataset, 'pmf', k=2, eta=0.01, lam=0.0, epochs=1, seed=0)

    def test_checkpoint_round_trip(self, tmp_path, toy_dataset):
        model = fit_mf(toy_dataset, 'reg-nmf', k=2, eta=0.02, lam=0.1, epochs=3, seed=2)
        path = os.path.join(str(tmp_path), 'mf.npz')
        save_mf(model, path)
        loaded = load_mf(path)
        assert loaded.variant is MfVariant.REG_NMF
        np.testing.assert_array_equal(loaded.predict_many(toy_dataset.users, toy_dataset.items),
                                      model.predict_many(toy_dataset.users, toy_dataset.items))
