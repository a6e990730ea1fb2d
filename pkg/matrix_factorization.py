"""
Matrix Factorization Baselines
Biased SVD-style MF and (regularized) NMF, all trained by SGD on the
observed ratings only; the NMF variants project P and Q onto the
non-negative orthant after every update
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from checkpoint import load_checkpoint, save_checkpoint
from errors import ConfigurationError, DivergenceError, PredictionIndexError
from rating_dataset import RatingDataset, epoch_seed, seeded_permutation

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'mf'


class MfVariant(str, Enum):
    SVD = 'svd'
    NMF = 'nmf'
    REG_NMF = 'reg-nmf'

    @property
    def non_negative(self) -> bool:
        return self is not MfVariant.SVD


@dataclass
class MfModel:
    """R ~ mu + b_u + b_i + P Q (svd) or R ~ P Q with P, Q >= 0 (nmf variants)"""
    variant: MfVariant
    P: np.ndarray
    Q: np.ndarray
    mu: float
    b_user: np.ndarray
    b_item: np.ndarray
    lam: float
    scale_min: float
    scale_max: float
    clamp_predictions: bool = True
    seen_users: Optional[np.ndarray] = None
    seen_items: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.seen_users is None:
            self.seen_users = np.ones(self.P.shape[0], dtype=bool)
        if self.seen_items is None:
            self.seen_items = np.ones(self.Q.shape[1], dtype=bool)

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[1]

    @property
    def uses_bias(self) -> bool:
        return self.variant is MfVariant.SVD

    def raw_score(self, user: int, item: int) -> float:
        score = float(self.P[user] @ self.Q[:, item])
        if self.uses_bias:
            score += self.mu + self.b_user[user] + self.b_item[item]
        return score

    def predict_many(self, users: Sequence[int], items: Sequence[int]) -> np.ndarray:
        """Predictions with the NSNMF cold-start fallback chain"""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise PredictionIndexError(f"user indices outside [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise PredictionIndexError(f"item indices outside [0, {self.n_items})")

        user_seen = self.seen_users[users]
        item_seen = self.seen_items[items]
        scores = np.einsum('nk,kn->n', self.P[users], self.Q[:, items])
        if self.uses_bias:
            scores = scores + self.mu + self.b_user[users] + self.b_item[items]
        fallback = self.mu + np.where(user_seen, self.b_user[users], 0.0) \
            + np.where(item_seen, self.b_item[items], 0.0)
        scores = np.where(user_seen & item_seen, scores, fallback)
        if self.clamp_predictions:
            scores = np.clip(scores, self.scale_min, self.scale_max)
        return scores

    def _check_index(self, user: Optional[int], item: Optional[int]):
        if user is not None and not 0 <= user < self.n_users:
            raise PredictionIndexError(f"user index {user} outside [0, {self.n_users})")
        if item is not None and not 0 <= item < self.n_items:
            raise PredictionIndexError(f"item index {item} outside [0, {self.n_items})")

    def predict(self, user: Optional[int], item: Optional[int]) -> float:
        self._check_index(user, item)
        if user is None or item is None:
            value = self.mu
            if user is not None and self.seen_users[user]:
                value += self.b_user[user]
            if item is not None and self.seen_items[item]:
                value += self.b_item[item]
            if self.clamp_predictions:
                value = np.clip(value, self.scale_min, self.scale_max)
            return float(value)
        return float(self.predict_many([user], [item])[0])

    def item_representation(self) -> np.ndarray:
        """Item latent columns (k x n_items)"""
        return self.Q.copy()


def fit_mf(train: RatingDataset, variant: str, k: int, eta: float, lam: float, epochs: int,
           seed: int, clamp_predictions: bool = True) -> MfModel:
    """
    Fit a factor baseline by SGD over the observed ratings

    Args:
        train: Training view
        variant: 'svd', 'nmf' or 'reg-nmf' (plain nmf ignores lam)
        k: Number of latent factors
        eta: Learning rate
        lam: L2 regularizer
        epochs: Passes over the training set
        seed: Initialisation and shuffle seed
        clamp_predictions: Clip predictions to the rating scale

    Returns:
        Trained MfModel
    """
    variant = MfVariant(variant)
    if k < 1:
        raise ConfigurationError(f"need at least one factor, got k={k}")
    if eta <= 0 or lam < 0 or epochs < 1:
        raise ConfigurationError(f"invalid SGD settings eta={eta}, lambda={lam}, epochs={epochs}")
    if len(train) == 0:
        raise ConfigurationError("cannot fit a factor model on an empty training set")
    if variant is MfVariant.NMF:
        lam = 0.0

    rng = np.random.default_rng(seed)
    if variant.non_negative:
        P = rng.random((train.n_users, k))
        Q = rng.random((k, train.n_items))
    else:
        P = rng.normal(0.0, 0.1, (train.n_users, k))
        Q = rng.normal(0.0, 0.1, (k, train.n_items))

    model = MfModel(
        variant=variant, P=P, Q=Q, mu=train.mean_rating(),
        b_user=np.zeros(train.n_users), b_item=np.zeros(train.n_items), lam=lam,
        scale_min=train.scale_min, scale_max=train.scale_max,
        clamp_predictions=clamp_predictions,
        seen_users=train.user_counts() > 0, seen_items=train.item_counts() > 0,
    )
    logger.info(f"Training {variant.value} k={k} eta={eta} lambda={lam} for {epochs} epochs "
                f"on {len(train)} ratings")

    for epoch in range(1, epochs + 1):
        order = seeded_permutation(len(train), epoch_seed(seed, epoch))
        users = train.users[order].tolist()
        items = train.items[order].tolist()
        ratings = train.ratings[order].tolist()
        squared = 0.0
        for step, (u, i, r) in enumerate(zip(users, items, ratings)):
            p_u = model.P[u].copy()
            q_i = model.Q[:, i].copy()
            e = r - model.raw_score(u, i)
            if not np.isfinite(e):
                raise DivergenceError(f"{variant.value}.P[{u}]/Q[:, {i}]", epoch=epoch, step=step)
            squared += e * e
            if model.uses_bias:
                model.b_user[u] += eta * (e - lam * model.b_user[u])
                model.b_item[i] += eta * (e - lam * model.b_item[i])
            model.P[u] = p_u + eta * (e * q_i - lam * p_u)
            model.Q[:, i] = q_i + eta * (e * p_u - lam * q_i)
            if variant.non_negative:
                np.maximum(model.P[u], 0.0, out=model.P[u])
                np.maximum(model.Q[:, i], 0.0, out=model.Q[:, i])
        logger.debug(f"{variant.value} epoch {epoch}/{epochs}: running train RMSE "
                     f"{np.sqrt(squared / len(train)):.5f}")

    return model


def save_mf(model: MfModel, path: str):
    header = {
        'variant': model.variant.value,
        'mu': model.mu,
        'lam': model.lam,
        'scale': [model.scale_min, model.scale_max],
        'clamp_predictions': model.clamp_predictions,
    }
    arrays = {
        'P': model.P, 'Q': model.Q, 'b_user': model.b_user, 'b_item': model.b_item,
        'seen_users': model.seen_users, 'seen_items': model.seen_items,
    }
    save_checkpoint(path, CHECKPOINT_KIND, header, arrays)
    logger.info(f"Saved {model.variant.value} model to {path}")


def load_mf(path: str) -> MfModel:
    header, arrays = load_checkpoint(path, CHECKPOINT_KIND)
    return MfModel(
        variant=MfVariant(header['variant']), P=arrays['P'], Q=arrays['Q'],
        mu=float(header['mu']), b_user=arrays['b_user'], b_item=arrays['b_item'],
        lam=float(header['lam']), scale_min=float(header['scale'][0]),
        scale_max=float(header['scale'][1]), clamp_predictions=bool(header['clamp_predictions']),
        seen_users=arrays['seen_users'].astype(bool), seen_items=arrays['seen_items'].astype(bool),
    )


def predict_baseline(model, user: Optional[int], item: Optional[int]) -> float:
    """Single prediction from any baseline family (MF or neighbourhood)"""
    return model.predict(user, item)
