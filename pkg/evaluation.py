"""
Evaluation
RMSE for rate prediction, seeded k-means++ over item representations and the
pooled within-cluster sum of distances (WCSS)
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist

from errors import ConfigurationError, EvaluationError
from rating_dataset import RatingDataset

logger = logging.getLogger(__name__)

WCSS_BLOCK_ROWS = 1024


def rmse_arrays(actual: np.ndarray, predicted: np.ndarray) -> float:
    """Root mean squared error between two equally long vectors"""
    actual = np.asarray(actual, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if actual.size == 0:
        raise EvaluationError("cannot compute RMSE of an empty evaluation set")
    if actual.shape != predicted.shape:
        raise EvaluationError(f"shape mismatch: {actual.shape} actual vs {predicted.shape} predicted")
    if not (np.all(np.isfinite(actual)) and np.all(np.isfinite(predicted))):
        raise EvaluationError("RMSE inputs must be finite")
    return float(np.sqrt(np.mean((actual - predicted) ** 2)))


def rmse(pairs: Union[Iterable[Tuple[float, float]], np.ndarray]) -> float:
    """
    RMSE = sqrt(mean((actual - predicted)^2))

    Args:
        pairs: (actual, predicted) pairs

    Returns:
        RMSE value
    """
    values = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.float64)
    if values.size == 0:
        raise EvaluationError("cannot compute RMSE of an empty evaluation set")
    if values.ndim != 2 or values.shape[1] != 2:
        raise EvaluationError(f"expected (actual, predicted) pairs, got shape {values.shape}")
    return rmse_arrays(values[:, 0], values[:, 1])


def evaluate_rmse(model, data: RatingDataset) -> float:
    """RMSE of any model exposing predict_many over a dataset view"""
    predictions = model.predict_many(data.users, data.items)
    return rmse_arrays(data.ratings, predictions)


@dataclass
class ClusterResult:
    """Outcome of the best k-means restart"""
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    wcss: float
    objective: float
    restarts_used: int
    seed: int
    iterations: int = 0
    objective_trace: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            'k': self.k,
            'assignments': self.assignments.tolist(),
            'centroids': self.centroids.tolist(),
            'wcss': self.wcss,
            'objective': self.objective,
            'restarts_used': self.restarts_used,
            'seed': self.seed,
            'iterations': self.iterations,
        }


def _kmeans_plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """D^2-weighted seeding"""
    m = points.shape[0]
    chosen = [int(rng.integers(m))]
    closest = cdist(points, points[chosen], 'sqeuclidean')[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            index = int(rng.choice(m, p=closest / total))
        else:
            index = int(rng.integers(m))
        chosen.append(index)
        closest = np.minimum(closest, cdist(points, points[[index]], 'sqeuclidean')[:, 0])
    return points[chosen].copy()


def _lloyd(points: np.ndarray, centroids: np.ndarray, max_iters: int):
    """Lloyd iterations until the assignment stops changing"""
    k = centroids.shape[0]
    assignments = None
    trace = []
    iterations = 0
    for iterations in range(1, max_iters + 1):
        distances = cdist(points, centroids, 'sqeuclidean')
        new_assignments = distances.argmin(axis=1)
        trace.append(float(distances[np.arange(len(points)), new_assignments].sum()))
        if assignments is not None and np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments

        for cluster in range(k):
            members = assignments == cluster
            if members.any():
                centroids[cluster] = points[members].mean(axis=0)
            else:
                # Empty cluster: move it onto the point farthest from its centroid
                own = ((points - centroids[assignments]) ** 2).sum(axis=1)
                farthest = int(own.argmax())
                centroids[cluster] = points[farthest]
                assignments[farthest] = cluster
                logger.debug(f"Re-seeded empty cluster {cluster} at point {farthest}")

    distances = cdist(points, centroids, 'sqeuclidean')
    assignments = distances.argmin(axis=1)
    objective = float(distances[np.arange(len(points)), assignments].sum())
    return assignments, centroids, objective, iterations, trace


def kmeans(points: np.ndarray, k: int, seed: int, restarts: int = 20, max_iters: int = 300,
           squared_wcss: bool = False) -> ClusterResult:
    """
    Best-of-restarts k-means with k-means++ seeding

    All restarts draw from one generator seeded with `seed`; the best run is
    the one with the lowest squared-distance objective, ties going to the
    earlier restart.

    Args:
        points: m x d matrix, one row per item
        k: Number of clusters (<= m)
        seed: Generator seed
        restarts: Number of independent initialisations
        max_iters: Lloyd iteration cap per restart
        squared_wcss: Report WCSS with squared distances

    Returns:
        ClusterResult of the best restart
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ConfigurationError(f"points must be a 2-D matrix, got shape {points.shape}")
    m = points.shape[0]
    if k < 1 or k > m:
        raise ConfigurationError(f"k must lie in [1, {m}], got {k}")
    if restarts < 1 or max_iters < 1:
        raise ConfigurationError("restarts and max_iters must be at least 1")

    rng = np.random.default_rng(seed)
    best = None
    for restart in range(restarts):
        centroids = _kmeans_plus_plus(points, k, rng)
        run = _lloyd(points, centroids, max_iters)
        if best is None or run[2] < best[2]:
            best = run
        logger.debug(f"k-means k={k} restart {restart}: objective {run[2]:.6f} after {run[3]} iterations")

    assignments, centroids, objective, iterations, trace = best
    result = ClusterResult(k=k, assignments=assignments, centroids=centroids, wcss=0.0,
                           objective=objective, restarts_used=restarts, seed=seed,
                           iterations=iterations, objective_trace=trace)
    result.wcss = wcss(points, result, squared=squared_wcss)
    return result


def wcss(points: np.ndarray, result: Union[ClusterResult, Sequence[int]], squared: bool = False) -> float:
    """
    Pooled within-cluster sum of distances

        WCSS = sum_r 1/(2 n_r) sum_{i,j in C_r} d_ij

    with d_ij the Euclidean distance (squared when `squared` is set); the
    double sum visits each unordered pair twice.

    Args:
        points: m x d matrix
        result: ClusterResult or per-point cluster labels

    Returns:
        WCSS value
    """
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(result.assignments if isinstance(result, ClusterResult) else result)
    if points.ndim != 2 or labels.shape != (points.shape[0],):
        raise EvaluationError(f"{labels.shape} labels do not cover {points.shape[0]} points")

    metric = 'sqeuclidean' if squared else 'euclidean'
    total = 0.0
    for cluster in np.unique(labels):
        members = points[labels == cluster]
        n_r = members.shape[0]
        pair_sum = 0.0
        for start in range(0, n_r, WCSS_BLOCK_ROWS):
            pair_sum += cdist(members[start:start + WCSS_BLOCK_ROWS], members, metric).sum()
        total += pair_sum / (2.0 * n_r)
    return float(total)


def wcss_sweep(points: np.ndarray, ks: Sequence[int], seed: int, restarts: int = 20,
               max_iters: int = 300, squared: bool = False) -> List[ClusterResult]:
    """
    Best k-means result for every cluster count in ks (same seed for each k)

    A rise of more than 1% from one k to the next is logged as a sign of
    too few restarts.
    """
    results = []
    for k in ks:
        result = kmeans(points, k, seed, restarts=restarts, max_iters=max_iters, squared_wcss=squared)
        results.append(result)
        logger.info(f"k={k}: WCSS {result.wcss:.4f}")

    ordered = sorted(results, key=lambda r: r.k)
    for low, high in zip(ordered, ordered[1:]):
        if high.wcss > low.wcss * 1.01:
            logger.warning(f"⚠️  WCSS rises from k={low.k} ({low.wcss:.4f}) to k={high.k} "
                           f"({high.wcss:.4f}); consider more restarts")
    return results


def wcss_curve(points: np.ndarray, ks: Sequence[int], seed: int, restarts: int = 20,
               max_iters: int = 300, squared: bool = False) -> Dict[int, float]:
    """{k: WCSS} for every cluster count in ks"""
    results = wcss_sweep(points, ks, seed, restarts=restarts, max_iters=max_iters, squared=squared)
    return {int(result.k): result.wcss for result in results}
