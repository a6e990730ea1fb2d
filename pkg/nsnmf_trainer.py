"""
NSNMF Trainer
Epoch loop around sgd_step: seeded shuffling, per-epoch RMSE, semi-NMF
invariant check and optional early stopping on a held-out slice
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import DivergenceError
from evaluation import evaluate_rmse
from nsnmf_model import NsnmfModel, TrainConfig, init_model, sgd_step
from rating_dataset import RatingDataset, epoch_seed, holdout, seeded_permutation

logger = logging.getLogger(__name__)


@dataclass
class TrainReport:
    """Per-epoch record of one training run"""
    train_rmse: List[float] = field(default_factory=list)
    validation_rmse: List[float] = field(default_factory=list)
    q_min: List[float] = field(default_factory=list)
    epochs_run: int = 0
    wall_time: float = 0.0
    config: Dict = field(default_factory=dict)
    seed: int = 0
    stopped_early: bool = False

    def to_dict(self) -> Dict:
        return {
            'train_rmse': self.train_rmse,
            'validation_rmse': self.validation_rmse,
            'q_min': self.q_min,
            'epochs_run': self.epochs_run,
            'wall_time': self.wall_time,
            'config': self.config,
            'seed': self.seed,
            'stopped_early': self.stopped_early,
        }


def train(train_set: RatingDataset, config: TrainConfig) -> Tuple[NsnmfModel, TrainReport]:
    """
    Train an NSNMF model with per-rating SGD

    Args:
        train_set: Training view
        config: Training configuration

    Returns:
        (trained model, training report)
    """
    config.validate()
    started = time.monotonic()

    fit_set: RatingDataset = train_set
    validation: Optional[RatingDataset] = None
    if config.early_stopping:
        fit_set, validation = holdout(train_set, config.validation_fraction, config.seed)
        logger.info(f"Early stopping on {len(validation)} held-out ratings "
                    f"(patience {config.patience}, min_delta {config.min_delta})")

    model, adagrad = init_model(config, train_set.n_users, train_set.n_items, fit_set)
    report = TrainReport(config=config.to_dict(), seed=config.seed)
    logger.info(f"Training NSNMF dims={list(config.dims)} activation={config.activation.value} "
                f"bias={config.use_bias} eta={config.eta} lambda={config.lam} "
                f"on {len(fit_set)} ratings for up to {config.epochs} epochs")

    best_model, best_score, stale = None, np.inf, 0
    for epoch in range(1, config.epochs + 1):
        order = seeded_permutation(len(fit_set), epoch_seed(config.seed, epoch))
        users = fit_set.users[order].tolist()
        items = fit_set.items[order].tolist()
        ratings = fit_set.ratings[order].tolist()
        for step, (u, i, r) in enumerate(zip(users, items, ratings)):
            try:
                sgd_step(model, adagrad, u, i, r, config)
            except DivergenceError as e:
                logger.error(f"❌ Training diverged: {e.parameter} at epoch {epoch}, step {step}")
                raise e.with_context(epoch, step)

        q_min = float(model.Q.min())
        report.q_min.append(q_min)
        if q_min < 0.0:
            raise AssertionError(f"semi-NMF constraint violated after epoch {epoch}")

        train_rmse = evaluate_rmse(model, fit_set)
        report.train_rmse.append(train_rmse)
        report.epochs_run = epoch
        message = f"Epoch {epoch}/{config.epochs}: train RMSE {train_rmse:.5f}"

        if validation is not None:
            val_rmse = evaluate_rmse(model, validation)
            report.validation_rmse.append(val_rmse)
            message += f", validation RMSE {val_rmse:.5f}"
            if val_rmse < best_score - config.min_delta:
                best_model, best_score, stale = model.copy(), val_rmse, 0
            else:
                stale += 1
        logger.info(message)

        if validation is not None and stale >= config.patience:
            logger.info(f"Stopping early after epoch {epoch}; best validation RMSE {best_score:.5f}")
            report.stopped_early = True
            break

    if best_model is not None:
        model = best_model
    report.wall_time = time.monotonic() - started
    logger.info(f"✅ Training finished in {report.wall_time:.1f}s after {report.epochs_run} epochs")
    return model, report
