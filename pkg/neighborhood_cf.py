"""
Neighborhood Collaborative Filtering
User-User and Item-Item CF with shrunk Pearson similarity over co-rated
entries and a mean-centered weighted average of the top-K neighbours
"""

import logging
from collections import OrderedDict
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from checkpoint import load_checkpoint, save_checkpoint
from errors import ConfigurationError, PredictionIndexError
from rating_dataset import RatingDataset

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'neighborhood'


class NeighborhoodMode(str, Enum):
    USER = 'user'
    ITEM = 'item'


class NeighborhoodModel:
    """
    Memory-based CF over a training view

    Rows of the internal matrix are the target entities (users in user
    mode, items in item mode); similarity rows are computed on demand.
    """

    def __init__(self, train: RatingDataset, mode: NeighborhoodMode, k: int = 40,
                 shrinkage: float = 25.0, clamp_predictions: bool = True, cache_size: int = 512):
        """
        Args:
            train: Training view
            mode: user- or item-based
            k: Neighbourhood size
            shrinkage: Pearson shrinkage constant (n_co / (n_co + shrinkage))
            clamp_predictions: Clip predictions to the rating scale
            cache_size: Similarity rows kept for single predictions
        """
        if len(train) == 0:
            raise ConfigurationError("cannot fit a neighbourhood model on an empty training set")
        if k < 1 or shrinkage < 0:
            raise ConfigurationError(f"need k >= 1 and shrinkage >= 0, got k={k}, shrinkage={shrinkage}")

        self.mode = NeighborhoodMode(mode)
        self.k = k
        self.shrinkage = shrinkage
        self.clamp_predictions = clamp_predictions
        self.scale_min, self.scale_max = train.scale_min, train.scale_max
        self.n_users, self.n_items = train.n_users, train.n_items
        self.train = train

        if self.mode is NeighborhoodMode.USER:
            rows, cols, shape = train.users, train.items, (train.n_users, train.n_items)
        else:
            rows, cols, shape = train.items, train.users, (train.n_items, train.n_users)

        self.X = sp.csr_matrix((train.ratings, (rows, cols)), shape=shape)
        self.M = sp.csr_matrix((np.ones(len(train)), (rows, cols)), shape=shape)
        self.X2 = self.X.multiply(self.X).tocsr()
        self.X_cols = self.X.tocsc()

        self.row_counts = np.asarray(self.M.sum(axis=1)).ravel()
        self.col_counts = np.asarray(self.M.sum(axis=0)).ravel()
        with np.errstate(invalid='ignore', divide='ignore'):
            self.row_means = np.asarray(self.X.sum(axis=1)).ravel() / self.row_counts
            self.col_means = np.asarray(self.X.sum(axis=0)).ravel() / self.col_counts
        self.global_mean = train.mean_rating()

        self._cache: 'OrderedDict[int, np.ndarray]' = OrderedDict()
        self._cache_size = cache_size
        logger.info(f"{self.mode.value}-based CF over {shape[0]} entities "
                    f"(k={k}, shrinkage={shrinkage})")

    def similarity_row(self, a: int) -> np.ndarray:
        """
        Shrunk Pearson similarity of entity a to every entity, co-rated only

        Pairs with fewer than two co-rated entries or zero variance get 0.
        """
        xa = self.X.getrow(a).toarray().ravel()
        ma = self.M.getrow(a).toarray().ravel()

        n_co = self.M @ ma
        sum_a = self.M @ xa
        sum_b = self.X @ ma
        sum_aa = self.M @ (xa * xa)
        sum_bb = self.X2 @ ma
        sum_ab = self.X @ xa

        numerator = n_co * sum_ab - sum_a * sum_b
        variance = (n_co * sum_aa - sum_a ** 2) * (n_co * sum_bb - sum_b ** 2)
        valid = (n_co >= 2) & (variance > 1e-12)
        sim = np.zeros_like(numerator)
        sim[valid] = numerator[valid] / np.sqrt(variance[valid])
        sim = np.clip(sim, -1.0, 1.0)
        sim *= n_co / (n_co + self.shrinkage) if self.shrinkage > 0 else 1.0
        sim[a] = 0.0
        return sim

    def _cached_similarity(self, a: int) -> np.ndarray:
        if a in self._cache:
            self._cache.move_to_end(a)
            return self._cache[a]
        sim = self.similarity_row(a)
        self._cache[a] = sim
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return sim

    def _to_target(self, user: int, item: int) -> Tuple[int, int]:
        if self.mode is NeighborhoodMode.USER:
            return user, item
        return item, user

    def _fallback(self, a: Optional[int], c: Optional[int]) -> float:
        if a is not None and self.row_counts[a] > 0:
            return float(self.row_means[a])
        if c is not None and self.col_counts[c] > 0:
            return float(self.col_means[c])
        return self.global_mean

    def _estimate(self, a: int, c: int, sim: np.ndarray) -> float:
        start, end = self.X_cols.indptr[c], self.X_cols.indptr[c + 1]
        neighbours = self.X_cols.indices[start:end]
        values = self.X_cols.data[start:end]
        weights = sim[neighbours]
        positive = weights > 0
        if not positive.any():
            return self._fallback(a, c)
        neighbours, values, weights = neighbours[positive], values[positive], weights[positive]
        # stable sort keeps the lower index on equal similarity
        top = np.argsort(-weights, kind='stable')[:self.k]
        weights, values, neighbours = weights[top], values[top], neighbours[top]
        offset = np.dot(weights, values - self.row_means[neighbours]) / weights.sum()
        return float(self.row_means[a] + offset)

    def _check_index(self, user, item):
        if user is not None and not 0 <= user < self.n_users:
            raise PredictionIndexError(f"user index {user} outside [0, {self.n_users})")
        if item is not None and not 0 <= item < self.n_items:
            raise PredictionIndexError(f"item index {item} outside [0, {self.n_items})")

    def _finish(self, value: float) -> float:
        if self.clamp_predictions:
            return float(np.clip(value, self.scale_min, self.scale_max))
        return value

    def predict(self, user: Optional[int], item: Optional[int]) -> float:
        """
        Predict one rating: neighbourhood -> entity mean -> global mean

        Args:
            user: Dense user index (None for unseen)
            item: Dense item index (None for unseen)

        Returns:
            Predicted rating
        """
        self._check_index(user, item)
        if user is None or item is None:
            a, c = self._to_target(user, item)
            return self._finish(self._fallback(a, c))
        a, c = self._to_target(user, item)
        if self.row_counts[a] == 0 or self.col_counts[c] == 0:
            return self._finish(self._fallback(a, c))
        return self._finish(self._estimate(a, c, self._cached_similarity(a)))

    def predict_many(self, users: Sequence[int], items: Sequence[int]) -> np.ndarray:
        """Predict index arrays, computing each similarity row once"""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise PredictionIndexError(f"user indices outside [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise PredictionIndexError(f"item indices outside [0, {self.n_items})")

        targets, others = (users, items) if self.mode is NeighborhoodMode.USER else (items, users)
        predictions = np.empty(len(users))
        order = np.argsort(targets, kind='stable')
        boundaries = np.flatnonzero(np.diff(targets[order])) + 1
        for group in np.split(order, boundaries):
            if group.size == 0:
                continue
            a = int(targets[group[0]])
            sim = self.similarity_row(a) if self.row_counts[a] > 0 else None
            for position in group:
                c = int(others[position])
                if sim is None or self.col_counts[c] == 0:
                    predictions[position] = self._finish(self._fallback(a, c))
                else:
                    predictions[position] = self._finish(self._estimate(a, c, sim))
        return predictions


def fit_neighborhood(train: RatingDataset, mode: str, k: int = 40, shrinkage: float = 25.0,
                     clamp_predictions: bool = True) -> NeighborhoodModel:
    """Build a user- or item-based neighbourhood model"""
    return NeighborhoodModel(train, NeighborhoodMode(mode), k=k, shrinkage=shrinkage,
                             clamp_predictions=clamp_predictions)


def save_neighborhood(model: NeighborhoodModel, path: str):
    """Checkpoint a neighbourhood model (its training triples and settings)"""
    header = {
        'variant': f"{model.mode.value}-cf",
        'mode': model.mode.value,
        'k': model.k,
        'shrinkage': model.shrinkage,
        'clamp_predictions': model.clamp_predictions,
        'scale': [model.scale_min, model.scale_max],
        'n_users': model.n_users,
        'n_items': model.n_items,
        'user_ids': list(model.train.user_ids),
        'item_ids': list(model.train.item_ids),
    }
    arrays = {'users': model.train.users, 'items': model.train.items, 'ratings': model.train.ratings}
    save_checkpoint(path, CHECKPOINT_KIND, header, arrays)
    logger.info(f"Saved {header['variant']} model to {path}")


def load_neighborhood(path: str) -> NeighborhoodModel:
    header, arrays = load_checkpoint(path, CHECKPOINT_KIND)
    train = RatingDataset(
        users=arrays['users'], items=arrays['items'], ratings=arrays['ratings'],
        n_users=int(header['n_users']), n_items=int(header['n_items']),
        scale_min=float(header['scale'][0]), scale_max=float(header['scale'][1]),
        user_ids=tuple(header['user_ids']), item_ids=tuple(header['item_ids']),
    )
    return NeighborhoodModel(train, NeighborhoodMode(header['mode']), k=int(header['k']),
                             shrinkage=float(header['shrinkage']),
                             clamp_predictions=bool(header['clamp_predictions']))
