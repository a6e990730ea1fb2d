"""
NSNMF Model
Multilayer non-linear semi-NMF for explicit ratings:

    R ~ B + P g(S_2 g(S_3 ... g(S_f Q_f+)))    with B = mu + b_u + b_i

Holds the parameters, prediction with cold-start fallbacks, the per-rating
SGD/AdaGrad update with the semi-NMF conditional rules, the regularized
objective and checkpoint I/O
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from activations import ActivationKind, forward, gradient
from checkpoint import load_checkpoint, save_checkpoint
from errors import ConfigurationError, DivergenceError, PredictionIndexError
from rating_dataset import RatingDataset

logger = logging.getLogger(__name__)

CHECKPOINT_KIND = 'nsnmf'


@dataclass
class TrainConfig:
    """Hyperparameters of one NSNMF training run"""
    eta: float = 0.01
    lam: float = 0.1
    dims: Tuple[int, ...] = (8, 8)
    epochs: int = 50
    seed: int = 42
    activation: ActivationKind = ActivationKind.RELU
    use_bias: bool = True
    use_adagrad: bool = True
    adagrad_epsilon: float = 1e-8
    clamp_predictions: bool = True
    early_stopping: bool = False
    validation_fraction: float = 0.05
    patience: int = 5
    min_delta: float = 1e-4

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.activation = ActivationKind.parse(self.activation)

    def validate(self):
        """Raise ConfigurationError on any out-of-range value"""
        if not self.eta > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.eta}")
        if self.lam < 0:
            raise ConfigurationError(f"regularizer must be non-negative, got {self.lam}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be at least 1, got {self.epochs}")
        if len(self.dims) < 2:
            raise ConfigurationError(f"need at least two layer widths (k, l), got {self.dims}")
        if any(d < 1 for d in self.dims):
            raise ConfigurationError(f"layer widths must be positive, got {self.dims}")
        if self.adagrad_epsilon <= 0:
            raise ConfigurationError("adagrad_epsilon must be positive")
        if self.early_stopping:
            if not 0.0 < self.validation_fraction < 1.0:
                raise ConfigurationError("validation_fraction must lie in (0, 1)")
            if self.patience < 1:
                raise ConfigurationError("patience must be at least 1")

    def to_dict(self) -> Dict:
        document = asdict(self)
        document['dims'] = list(self.dims)
        document['activation'] = self.activation.value
        return document

    @classmethod
    def from_dict(cls, document: Dict) -> 'TrainConfig':
        known = {name: value for name, value in document.items() if name in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class NsnmfModel:
    """
    Parameters of R ~ B + P g(S_2 ... g(S_f Q))

    S[0] is S_2 (k x l), S[1] is S_3 (l x l_2) and so on; Q is the deepest,
    non-negative item matrix (dims[-1] x n_items).
    """
    mu: float
    b_user: np.ndarray
    b_item: np.ndarray
    P: np.ndarray
    S: List[np.ndarray]
    Q: np.ndarray
    activation: ActivationKind
    use_bias: bool
    scale_min: float
    scale_max: float
    clamp_predictions: bool = True
    seen_users: Optional[np.ndarray] = None
    seen_items: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.seen_users is None:
            self.seen_users = np.ones(self.n_users, dtype=bool)
        if self.seen_items is None:
            self.seen_items = np.ones(self.n_items, dtype=bool)

    @property
    def n_users(self) -> int:
        return self.P.shape[0]

    @property
    def n_items(self) -> int:
        return self.Q.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.S) + 1

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple([self.P.shape[1]] + [s.shape[1] for s in self.S])

    def check_shapes(self):
        """Raise ConfigurationError when the dimension chain is broken"""
        width = self.P.shape[1]
        for j, weights in enumerate(self.S):
            if weights.shape[0] != width:
                raise ConfigurationError(f"S[{j}] has {weights.shape[0]} rows, expected {width}")
            width = weights.shape[1]
        if self.Q.shape[0] != width:
            raise ConfigurationError(f"Q has {self.Q.shape[0]} rows, expected {width}")
        if self.b_user.shape != (self.n_users,) or self.b_item.shape != (self.n_items,):
            raise ConfigurationError("bias vectors do not match the factor matrices")

    def item_features(self, item: int) -> np.ndarray:
        """Activated top-layer features of one item column"""
        h = self.Q[:, item]
        for weights in reversed(self.S):
            h = forward(self.activation, weights @ h)
        return h

    def activated_items(self) -> np.ndarray:
        """Activated top-layer features of every item (k x n_items)"""
        h = self.Q
        for weights in reversed(self.S):
            h = forward(self.activation, weights @ h)
        return h

    def _check_index(self, user: Optional[int], item: Optional[int]):
        if user is not None and not 0 <= user < self.n_users:
            raise PredictionIndexError(f"user index {user} outside [0, {self.n_users})")
        if item is not None and not 0 <= item < self.n_items:
            raise PredictionIndexError(f"item index {item} outside [0, {self.n_items})")

    def raw_score(self, user: int, item: int) -> float:
        """Unclamped r_hat for a user and item seen in training"""
        score = float(self.P[user] @ self.item_features(item))
        if self.use_bias:
            score += self.mu + self.b_user[user] + self.b_item[item]
        return score

    def _clamp(self, value):
        if self.clamp_predictions:
            return np.clip(value, self.scale_min, self.scale_max)
        return value

    def predict(self, user: Optional[int], item: Optional[int]) -> float:
        """
        Predict one rating

        A None index, or an index never seen in training, is unseen:
        unseen user -> mu + b_i, unseen item -> mu + b_u, both -> mu.

        Args:
            user: Dense user index or None
            item: Dense item index or None

        Returns:
            Predicted rating (clamped to the scale when configured)
        """
        self._check_index(user, item)
        user_seen = user is not None and bool(self.seen_users[user])
        item_seen = item is not None and bool(self.seen_items[item])
        if user_seen and item_seen:
            return float(self._clamp(self.raw_score(user, item)))
        value = self.mu
        if user_seen:
            value += self.b_user[user]
        if item_seen:
            value += self.b_item[item]
        return float(self._clamp(value))

    def predict_many(self, users: Sequence[int], items: Sequence[int]) -> np.ndarray:
        """Vectorised predict() over index arrays"""
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= self.n_users):
            raise PredictionIndexError(f"user indices outside [0, {self.n_users})")
        if items.size and (items.min() < 0 or items.max() >= self.n_items):
            raise PredictionIndexError(f"item indices outside [0, {self.n_items})")

        user_seen = self.seen_users[users]
        item_seen = self.seen_items[items]
        features = self.activated_items()
        interaction = np.einsum('nk,kn->n', self.P[users], features[:, items])

        fallback = self.mu + np.where(user_seen, self.b_user[users], 0.0) \
            + np.where(item_seen, self.b_item[items], 0.0)
        full = interaction
        if self.use_bias:
            full = full + self.mu + self.b_user[users] + self.b_item[items]
        return self._clamp(np.where(user_seen & item_seen, full, fallback))

    def copy(self) -> 'NsnmfModel':
        return NsnmfModel(
            mu=self.mu, b_user=self.b_user.copy(), b_item=self.b_item.copy(),
            P=self.P.copy(), S=[s.copy() for s in self.S], Q=self.Q.copy(),
            activation=self.activation, use_bias=self.use_bias,
            scale_min=self.scale_min, scale_max=self.scale_max,
            clamp_predictions=self.clamp_predictions,
            seen_users=self.seen_users.copy(), seen_items=self.seen_items.copy(),
        )


@dataclass
class AdaGradState:
    """Accumulated squared gradients, one array per trainable field"""
    b_user: np.ndarray
    b_item: np.ndarray
    P: np.ndarray
    S: List[np.ndarray]
    Q: np.ndarray

    @classmethod
    def zeros_like(cls, model: NsnmfModel) -> 'AdaGradState':
        return cls(
            b_user=np.zeros_like(model.b_user),
            b_item=np.zeros_like(model.b_item),
            P=np.zeros_like(model.P),
            S=[np.zeros_like(s) for s in model.S],
            Q=np.zeros_like(model.Q),
        )


@dataclass
class PredictionContext:
    """Residual and per-layer caches for one (user, item) pair"""
    error: float
    layer_inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    item_features: np.ndarray


@dataclass
class SampleGradients:
    """
    Gradients of the per-rating loss

        0.5 * e^2 + 0.5 * lam * (b_u^2 + b_i^2 + |p_u|^2 + sum_j |S_j|^2 + |q_i|^2)

    The update rules move every parameter by -step * gradient.
    """
    b_user: float
    b_item: float
    p: np.ndarray
    S: List[np.ndarray]
    q: np.ndarray
    context: PredictionContext = field(repr=False)


def init_model(config: TrainConfig, n_users: int, n_items: int,
               train: RatingDataset) -> Tuple[NsnmfModel, AdaGradState]:
    """
    Random initialization of an NSNMF model

    P, every S and Q are drawn uniformly from (0, 1] in that order; mu is the
    training mean, biases start at 0 and AdaGrad accumulators at 0.

    Args:
        config: Training configuration
        n_users: Size of the user index space
        n_items: Size of the item index space
        train: Training view (non-empty)

    Returns:
        (model, adagrad state)
    """
    config.validate()
    if len(train) == 0:
        raise ConfigurationError("cannot initialise a model from an empty training set")
    if train.n_users != n_users or train.n_items != n_items:
        raise ConfigurationError(
            f"training view spans {train.n_users}x{train.n_items}, model asked for {n_users}x{n_items}"
        )

    rng = np.random.default_rng(config.seed)
    dims = config.dims

    def draw(shape):
        return 1.0 - rng.random(shape)

    P = draw((n_users, dims[0]))
    S = [draw((dims[j], dims[j + 1])) for j in range(len(dims) - 1)]
    Q = draw((dims[-1], n_items))

    model = NsnmfModel(
        mu=train.mean_rating(),
        b_user=np.zeros(n_users),
        b_item=np.zeros(n_items),
        P=P, S=S, Q=Q,
        activation=config.activation,
        use_bias=config.use_bias,
        scale_min=train.scale_min,
        scale_max=train.scale_max,
        clamp_predictions=config.clamp_predictions,
        seen_users=train.user_counts() > 0,
        seen_items=train.item_counts() > 0,
    )
    model.check_shapes()
    return model, AdaGradState.zeros_like(model)


def _forward_pass(model: NsnmfModel, user: int, item: int, rating: float):
    """(error, layer inputs, pre-activations, top features) for one rating"""
    h = model.Q[:, item]
    inputs, pre = [], []
    for weights in reversed(model.S):
        inputs.append(h)
        z = weights @ h
        pre.append(z)
        h = forward(model.activation, z)
    inputs.reverse()
    pre.reverse()

    score = float(model.P[user] @ h)
    if model.use_bias:
        score += model.mu + model.b_user[user] + model.b_item[item]
    return rating - score, inputs, pre, h


def compute_context(model: NsnmfModel, user: int, item: int, rating: float) -> PredictionContext:
    """Forward pass for one rating, keeping the layer caches"""
    error, inputs, pre, h = _forward_pass(model, user, item, rating)
    return PredictionContext(error=error, layer_inputs=inputs, pre_activations=pre, item_features=h)


def _backward(model: NsnmfModel, user: int, item: int, rating: float, lam: float):
    """(error, grad b_u, grad b_i, grad p_u, grad S_j list, grad q_i, forward caches)"""
    e, inputs, pre, h = _forward_pass(model, user, item, rating)
    p_u = model.P[user]

    delta = -e * p_u
    grad_S = []
    for j, weights in enumerate(model.S):
        dz = delta * gradient(model.activation, pre[j])
        grad_S.append(np.outer(dz, inputs[j]) + lam * weights)
        delta = weights.T @ dz
    grad_q = delta + lam * model.Q[:, item]
    grad_p = -e * h + lam * p_u

    if model.use_bias:
        grad_bu = -e + lam * model.b_user[user]
        grad_bi = -e + lam * model.b_item[item]
    else:
        grad_bu = grad_bi = 0.0
    return e, float(grad_bu), float(grad_bi), grad_p, grad_S, grad_q, (inputs, pre, h)


def sample_gradients(model: NsnmfModel, user: int, item: int, rating: float,
                     lam: float) -> SampleGradients:
    """
    Gradients of the per-rating regularized loss at the current parameters

    For two layers these are the negated update directions of
    b_u, b_i, p_uk, s_kl and q_li; deeper stacks follow the chain rule
    through every g(S_j .) layer for the item column.
    """
    e, grad_bu, grad_bi, grad_p, grad_S, grad_q, (inputs, pre, h) = _backward(model, user, item, rating, lam)
    context = PredictionContext(error=e, layer_inputs=inputs, pre_activations=pre, item_features=h)
    return SampleGradients(b_user=grad_bu, b_item=grad_bi, p=grad_p, S=grad_S, q=grad_q, context=context)


def sample_loss(model: NsnmfModel, user: int, item: int, rating: float, lam: float) -> float:
    """Per-rating regularized loss whose gradients sample_gradients returns"""
    e = _forward_pass(model, user, item, rating)[0]
    penalty = float(model.P[user] @ model.P[user]) + float(model.Q[:, item] @ model.Q[:, item])
    penalty += sum(float(np.sum(s * s)) for s in model.S)
    if model.use_bias:
        penalty += model.b_user[user] ** 2 + model.b_item[item] ** 2
    return 0.5 * e * e + 0.5 * lam * penalty


def _rate(accumulator: np.ndarray, index, g, eta: float, eps: float):
    """AdaGrad step size after adding g^2 to the accumulator"""
    accumulator[index] += g * g
    return eta / (np.sqrt(accumulator[index]) + eps)


def sgd_step(model: NsnmfModel, adagrad: AdaGradState, user: int, item: int,
             rating: float, config: TrainConfig) -> Tuple[NsnmfModel, AdaGradState]:
    """
    One SGD update for an observed rating, in place

    Gradients are taken at the entry values. Step sizes are
    eta / (sqrt(G) + eps) after adding the squared gradient to G, or eta
    when AdaGrad is off. Q entries are kept only if the candidate is > 0;
    a row k of S_j is kept only if g(S_j* h*)[k] > 0, where h* is the
    updated input column of that layer for this item.

    Args:
        model: Model to update
        adagrad: Accumulators matching the model
        user: Dense user index
        item: Dense item index
        rating: Observed rating
        config: Training configuration

    Returns:
        (model, adagrad), the same objects

    Raises:
        DivergenceError: the residual at the entry values is not finite
    """
    e, grad_bu, grad_bi, grad_p, grad_S, grad_q, _ = _backward(model, user, item, rating, config.lam)
    # non-finite parameters on this rating's path surface in the residual
    if not math.isfinite(e):
        raise DivergenceError(f"residual(u={user}, i={item})")

    eta, eps, adaptive = config.eta, config.adagrad_epsilon, config.use_adagrad

    if model.use_bias:
        model.b_user[user] -= (_rate(adagrad.b_user, user, grad_bu, eta, eps) if adaptive else eta) * grad_bu
        model.b_item[item] -= (_rate(adagrad.b_item, item, grad_bi, eta, eps) if adaptive else eta) * grad_bi

    model.P[user] -= (_rate(adagrad.P, user, grad_p, eta, eps) if adaptive else eta) * grad_p

    # Deepest layer first so each S_j condition sees its updated input column
    q_rate = _rate(adagrad.Q, (slice(None), item), grad_q, eta, eps) if adaptive else eta
    q_candidate = model.Q[:, item] - q_rate * grad_q
    accepted = q_candidate > 0.0
    model.Q[accepted, item] = q_candidate[accepted]

    h = model.Q[:, item]
    for j in range(len(model.S) - 1, -1, -1):
        weights, g = model.S[j], grad_S[j]
        candidate = weights - (_rate(adagrad.S[j], slice(None), g, eta, eps) if adaptive else eta) * g
        keep_rows = forward(model.activation, candidate @ h) > 0.0
        weights[keep_rows] = candidate[keep_rows]
        h = forward(model.activation, weights @ h)

    return model, adagrad


def regularized_objective(model: NsnmfModel, data: RatingDataset, lam: float) -> float:
    """
    Sum of squared residuals over data plus the L2 penalty

    Residuals use unclamped scores; mu is not penalised.
    """
    model.check_shapes()
    if data.n_users != model.n_users or data.n_items != model.n_items:
        raise ConfigurationError("dataset index space does not match the model")
    features = model.activated_items()
    scores = np.einsum('nk,kn->n', model.P[data.users], features[:, data.items])
    if model.use_bias:
        scores = scores + model.mu + model.b_user[data.users] + model.b_item[data.items]
    residuals = data.ratings - scores
    penalty = (np.sum(model.b_user ** 2) + np.sum(model.b_item ** 2) + np.sum(model.P ** 2)
               + np.sum(model.Q ** 2) + sum(np.sum(s ** 2) for s in model.S))
    return float(np.sum(residuals ** 2) + lam * penalty)


@dataclass
class ItemRepresentation:
    """Item columns of the deepest layer and of the activated top layer"""
    deep: np.ndarray
    activated: np.ndarray


def item_representation(model: NsnmfModel) -> ItemRepresentation:
    """Deep non-negative factors Q_f and activated features g(S_2 ...)"""
    return ItemRepresentation(deep=model.Q.copy(), activated=model.activated_items())


def save_model(model: NsnmfModel, path: str, config: Optional[TrainConfig] = None):
    """Write a model checkpoint"""
    header = {
        'variant': f"nsnmf-{model.activation.value}{'-bias' if model.use_bias else ''}",
        'mu': model.mu,
        'activation': model.activation.value,
        'use_bias': model.use_bias,
        'scale': [model.scale_min, model.scale_max],
        'clamp_predictions': model.clamp_predictions,
        'n_layers': model.n_layers,
        'config': config.to_dict() if config else None,
    }
    arrays = {
        'b_user': model.b_user, 'b_item': model.b_item, 'P': model.P, 'Q': model.Q,
        'seen_users': model.seen_users, 'seen_items': model.seen_items,
    }
    for j, weights in enumerate(model.S):
        arrays[f"S{j}"] = weights
    save_checkpoint(path, CHECKPOINT_KIND, header, arrays)
    logger.info(f"Saved {header['variant']} model ({model.n_layers} layers) to {path}")


def load_model(path: str) -> Tuple[NsnmfModel, Optional[TrainConfig]]:
    """Read a model checkpoint written by save_model"""
    header, arrays = load_checkpoint(path, CHECKPOINT_KIND)
    S = [arrays[f"S{j}"] for j in range(header['n_layers'] - 1)]
    model = NsnmfModel(
        mu=float(header['mu']),
        b_user=arrays['b_user'], b_item=arrays['b_item'],
        P=arrays['P'], S=S, Q=arrays['Q'],
        activation=ActivationKind.parse(header['activation']),
        use_bias=bool(header['use_bias']),
        scale_min=float(header['scale'][0]), scale_max=float(header['scale'][1]),
        clamp_predictions=bool(header['clamp_predictions']),
        seen_users=arrays['seen_users'].astype(bool),
        seen_items=arrays['seen_items'].astype(bool),
    )
    model.check_shapes()
    config = TrainConfig.from_dict(header['config']) if header.get('config') else None
    return model, config
