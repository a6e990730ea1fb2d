"""
Shared pytest fixtures: toy rating files and in-memory datasets
"""

import logging
import os
from typing import Iterable, Tuple

import numpy as np
import pytest

from rating_dataset import RatingDataset


@pytest.fixture(autouse=True)
def _quiet_environment(monkeypatch):
    """Keep tests from writing log files or honouring a developer's .env"""
    monkeypatch.setenv('LOG_FILE', '')
    monkeypatch.delenv('NSNMF_OUTPUT_ROOT', raising=False)
    monkeypatch.delenv('NSNMF_JOBS', raising=False)
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    # main() replaces the root handlers
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    for handler in handlers:
        if handler not in root.handlers:
            root.addHandler(handler)
    root.setLevel(level)


@pytest.fixture
def write_ratings(tmp_path):
    """Write text lines to a rating file and return its path"""
    def _write(lines: Iterable[str], name: str = 'ratings.csv') -> str:
        path = os.path.join(str(tmp_path), name)
        with open(path, 'w', encoding='utf-8') as f:
            f.write('\n'.join(lines) + '\n')
        return path
    return _write


def make_dataset(triples: Iterable[Tuple[int, int, float]], scale: Tuple[float, float] = (1.0, 5.0),
                 n_users: int = None, n_items: int = None) -> RatingDataset:
    """Dataset over dense indices, ids are the indices as strings"""
    triples = list(triples)
    users = np.array([t[0] for t in triples], dtype=np.int64)
    items = np.array([t[1] for t in triples], dtype=np.int64)
    ratings = np.array([t[2] for t in triples], dtype=np.float64)
    n_users = n_users if n_users is not None else int(users.max()) + 1
    n_items = n_items if n_items is not None else int(items.max()) + 1
    return RatingDataset(
        users=users, items=items, ratings=ratings, n_users=n_users, n_items=n_items,
        scale_min=scale[0], scale_max=scale[1],
        user_ids=tuple(f"u{u}" for u in range(n_users)),
        item_ids=tuple(f"i{i}" for i in range(n_items)),
    )


def random_dataset(n_users: int, n_items: int, density: float, seed: int,
                   scale: Tuple[float, float] = (1.0, 5.0)) -> RatingDataset:
    """Random dataset where every user and item has at least one rating"""
    rng = np.random.default_rng(seed)
    mask = rng.random((n_users, n_items)) < density
    mask[np.arange(n_users), rng.integers(0, n_items, n_users)] = True
    mask[rng.integers(0, n_users, n_items), np.arange(n_items)] = True
    users, items = np.nonzero(mask)
    ratings = rng.integers(int(scale[0]), int(scale[1]) + 1, users.size).astype(float)
    return make_dataset(zip(users.tolist(), items.tolist(), ratings.tolist()), scale=scale,
                        n_users=n_users, n_items=n_items)


@pytest.fixture
def toy_dataset() -> RatingDataset:
    return random_dataset(12, 9, 0.5, seed=7)
