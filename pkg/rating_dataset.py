"""
Rating Dataset
Loads explicit rating files, assigns dense user/item indices, applies
activity filters and produces seeded train/test splits and CV folds
"""

import gzip
import hashlib
import json
import logging
import math
import os
import re
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd

from errors import (
    ConfigurationError,
    DataError,
    DuplicateRatingError,
    EmptyDatasetError,
    ParseError,
)

logger = logging.getLogger(__name__)

# format tag -> delimiter (None means sniff from the first record)
FORMAT_DELIMITERS = {
    'auto': None,
    'movielens-csv': ',',
    'amazon-csv': ',',
    'ml-100k': '\t',
    'ml-1m': '::',
    'filmtrust': ' ',
}

CANONICAL_COLUMNS = ['user_id', 'item_id', 'rating']

# float literal as accepted by float(), nan and inf included
NUMBER_PATTERN = r'[+-]?(?:(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?|nan|inf(?:inity)?)'


class RatingTriple(NamedTuple):
    """One observed rating in dense index space"""
    user: int
    item: int
    rating: float


@dataclass(frozen=True, eq=False)
class RatingDataset:
    """
    Columnar store of (user, item, rating) triples

    Views produced by take() share n_users, n_items and the id maps of their
    parent, so every split and fold lives in one index space.
    """
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    n_users: int
    n_items: int
    scale_min: float
    scale_max: float
    user_ids: Tuple[str, ...] = field(repr=False)
    item_ids: Tuple[str, ...] = field(repr=False)

    def __len__(self) -> int:
        return int(self.ratings.shape[0])

    @cached_property
    def user_id_map(self) -> Dict[str, int]:
        return {uid: index for index, uid in enumerate(self.user_ids)}

    @cached_property
    def item_id_map(self) -> Dict[str, int]:
        return {iid: index for index, iid in enumerate(self.item_ids)}

    def triples(self) -> Iterator[RatingTriple]:
        """Iterate over the triples in storage order"""
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()):
            yield RatingTriple(u, i, r)

    def take(self, rows: np.ndarray) -> 'RatingDataset':
        """
        Select a subset of rows as a view sharing this dataset's index space

        Args:
            rows: Row positions to keep, in the order they should appear

        Returns:
            RatingDataset view
        """
        rows = np.asarray(rows, dtype=np.int64)
        return RatingDataset(
            users=self.users[rows],
            items=self.items[rows],
            ratings=self.ratings[rows],
            n_users=self.n_users,
            n_items=self.n_items,
            scale_min=self.scale_min,
            scale_max=self.scale_max,
            user_ids=self.user_ids,
            item_ids=self.item_ids,
        )

    def mean_rating(self) -> float:
        if len(self) == 0:
            raise EmptyDatasetError("cannot take the mean of an empty dataset")
        return float(self.ratings.mean())

    def user_counts(self) -> np.ndarray:
        return np.bincount(self.users, minlength=self.n_users)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.items, minlength=self.n_items)

    def to_frame(self) -> pd.DataFrame:
        """Triples with external ids, in storage order"""
        return pd.DataFrame({
            'user_id': np.asarray(self.user_ids, dtype=object)[self.users],
            'item_id': np.asarray(self.item_ids, dtype=object)[self.items],
            'rating': self.ratings,
        })

    def content_hash(self) -> str:
        """SHA-256 over the canonical (user_id, item_id, rating) lines"""
        digest = hashlib.sha256()
        frame = self.to_frame()
        for user_id, item_id, rating in frame.itertuples(index=False, name=None):
            digest.update(f"{user_id},{item_id},{float(rating)!r}\n".encode('utf-8'))
        return digest.hexdigest()


@dataclass(frozen=True, eq=False)
class SplitPlan:
    """Seeded train/test partition of one dataset"""
    train: RatingDataset
    test: RatingDataset
    seed: int
    train_fraction: float


@dataclass(frozen=True, eq=False)
class CvPlan:
    """Seeded K-fold partition of a training view"""
    folds: List[Tuple[RatingDataset, RatingDataset]]
    n_folds: int
    seed: int


def _open_text(path: str):
    if path.endswith('.gz'):
        return gzip.open(path, 'rt', encoding='utf-8')
    return open(path, 'r', encoding='utf-8')


def _sniff_delimiter(path: str) -> str:
    """Pick the delimiter of the first record among '::', tab, comma, whitespace"""
    with _open_text(path) as handle:
        line = next((raw for raw in handle if raw.strip()), '')
    if '::' in line:
        return '::'
    if '\t' in line:
        return '\t'
    if ',' in line:
        return ','
    return ' '


def _empty_records() -> pd.DataFrame:
    return pd.DataFrame({'user_id': pd.Series(dtype=object), 'item_id': pd.Series(dtype=object),
                         'rating': pd.Series(dtype=np.float64), 'line': pd.Series(dtype=np.int64)})


def _read_records(path: str, delimiter: Optional[str]) -> pd.DataFrame:
    """
    Parse a delimiter-separated rating file into external-id columns

    A first record with no numeric field among user, item and rating is a
    header and is skipped.

    Args:
        path: Rating file (optionally .gz)
        delimiter: Field delimiter, or None to sniff it

    Returns:
        DataFrame with user_id, item_id, rating and the source line number
    """
    if delimiter is None:
        delimiter = _sniff_delimiter(path)
        logger.debug(f"Sniffed delimiter {delimiter!r} from {path}")

    try:
        raw = pd.read_csv(
            path,
            sep=r'\s+' if delimiter == ' ' else delimiter,
            engine='python' if len(delimiter) > 1 else 'c',
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            compression='infer',
            encoding='utf-8',
        )
    except pd.errors.EmptyDataError:
        return _empty_records()
    except pd.errors.ParserError as e:
        match = re.search(r'line (\d+)', str(e))
        raise ParseError(f"inconsistent number of fields ({e})", int(match.group(1)) if match else 0, path)

    # blank lines are kept as empty rows so the row position is the line number
    fields = raw.fillna('').astype(str).apply(lambda column: column.str.strip())
    fields['line'] = np.arange(1, len(fields) + 1, dtype=np.int64)
    values = [column for column in fields.columns if column != 'line']
    fields = fields[(fields[values] != '').any(axis=1)]
    if fields.empty:
        return _empty_records()
    if len(values) < 3:
        raise ParseError(f"expected 3 or 4 fields, found {len(values)}", int(fields['line'].iloc[0]), path)

    head = fields.iloc[0]
    if not head.loc[[0, 1, 2]].str.fullmatch(NUMBER_PATTERN, case=False).any():
        logger.info(f"Skipping header on line {head['line']} of {path}: {list(head.loc[values])}")
        fields = fields.iloc[1:]

    extra = values[4:]
    if extra:
        too_long = (fields[extra] != '').any(axis=1)
        if too_long.any():
            line = int(fields.loc[too_long, 'line'].iloc[0])
            raise ParseError("expected 3 or 4 fields, found more than 4", line, path)

    missing = (fields[[0, 1, 2]] == '').any(axis=1)
    if missing.any():
        raise ParseError("expected user, item and rating fields", int(fields.loc[missing, 'line'].iloc[0]), path)

    ratings = pd.to_numeric(fields[2], errors='coerce').to_numpy(dtype=np.float64)
    invalid = ~np.isfinite(ratings)
    if invalid.any():
        row = fields[invalid].iloc[0]
        raise ParseError(f"rating {row.loc[2]!r} is not a finite number", int(row['line']), path)

    return pd.DataFrame({
        'user_id': fields[0].to_numpy(dtype=object),
        'item_id': fields[1].to_numpy(dtype=object),
        'rating': ratings,
        'line': fields['line'].to_numpy(dtype=np.int64),
    })


def _from_frame(frame: pd.DataFrame, scale_min: float, scale_max: float) -> RatingDataset:
    """Assign dense indices in first-appearance order"""
    user_codes, user_uniques = pd.factorize(frame['user_id'], sort=False)
    item_codes, item_uniques = pd.factorize(frame['item_id'], sort=False)
    return RatingDataset(
        users=np.asarray(user_codes, dtype=np.int64),
        items=np.asarray(item_codes, dtype=np.int64),
        ratings=frame['rating'].to_numpy(dtype=np.float64),
        n_users=len(user_uniques),
        n_items=len(item_uniques),
        scale_min=float(scale_min),
        scale_max=float(scale_max),
        user_ids=tuple(str(u) for u in user_uniques),
        item_ids=tuple(str(i) for i in item_uniques),
    )


def load_ratings(path: str, format: str = 'auto',
                 scale: Optional[Tuple[float, float]] = None) -> RatingDataset:
    """
    Load a rating file

    Timestamps are discarded. Dense indices follow first appearance.

    Args:
        path: Path to the rating file
        format: One of FORMAT_DELIMITERS
        scale: (min, max) rating scale; inferred from the data when None

    Returns:
        RatingDataset over all records in the file
    """
    if format not in FORMAT_DELIMITERS:
        raise ConfigurationError(f"unknown dataset format {format!r}; expected one of {sorted(FORMAT_DELIMITERS)}")
    if not os.path.exists(path):
        raise DataError(f"rating file not found: {path}")

    frame = _read_records(path, FORMAT_DELIMITERS[format])
    if frame.empty:
        raise EmptyDatasetError(f"no ratings in {path}")

    duplicated = frame.duplicated(['user_id', 'item_id'], keep=False)
    if duplicated.any():
        clash = frame[duplicated]
        first = clash.iloc[0]
        twin = clash[(clash['user_id'] == first['user_id']) & (clash['item_id'] == first['item_id'])]
        raise DuplicateRatingError(first['user_id'], first['item_id'],
                                   int(twin['line'].iloc[0]), int(twin['line'].iloc[1]))

    if scale is None:
        scale_min, scale_max = float(frame['rating'].min()), float(frame['rating'].max())
    else:
        scale_min, scale_max = float(scale[0]), float(scale[1])
        if scale_min > scale_max:
            raise ConfigurationError(f"rating scale min {scale_min} exceeds max {scale_max}")
        outside = frame[(frame['rating'] < scale_min) | (frame['rating'] > scale_max)]
        if not outside.empty:
            row = outside.iloc[0]
            raise ParseError(f"rating {row['rating']} outside scale [{scale_min}, {scale_max}]",
                             int(row['line']), path)

    dataset = _from_frame(frame, scale_min, scale_max)
    logger.info(f"Loaded {len(dataset)} ratings from {path}: "
                f"{dataset.n_users} users, {dataset.n_items} items, "
                f"scale [{dataset.scale_min}, {dataset.scale_max}]")
    return dataset


def filter_activity(ds: RatingDataset, min_user_ratings: int, min_item_ratings: int) -> RatingDataset:
    """
    Drop users and items below the activity thresholds until a fixed point

    Args:
        ds: Source dataset
        min_user_ratings: Minimum ratings per kept user
        min_item_ratings: Minimum ratings per kept item

    Returns:
        Re-indexed dataset with updated id maps
    """
    if min_user_ratings < 0 or min_item_ratings < 0:
        raise ConfigurationError("activity thresholds must be non-negative")

    keep = np.ones(len(ds), dtype=bool)
    rounds = 0
    while True:
        rounds += 1
        user_counts = np.bincount(ds.users[keep], minlength=ds.n_users)
        next_keep = keep & (user_counts[ds.users] >= min_user_ratings)
        item_counts = np.bincount(ds.items[next_keep], minlength=ds.n_items)
        next_keep &= item_counts[ds.items] >= min_item_ratings
        if np.array_equal(next_keep, keep):
            break
        keep = next_keep

    if not keep.any():
        raise EmptyDatasetError(
            f"no ratings survive filtering (min_user={min_user_ratings}, min_item={min_item_ratings})"
        )

    frame = ds.to_frame()[keep].reset_index(drop=True)
    filtered = _from_frame(frame, ds.scale_min, ds.scale_max)
    logger.info(f"Activity filter (user>={min_user_ratings}, item>={min_item_ratings}) "
                f"converged after {rounds} rounds: {len(ds)} -> {len(filtered)} ratings, "
                f"{filtered.n_users} users, {filtered.n_items} items")
    return filtered


def seeded_permutation(n: int, seed: int) -> np.ndarray:
    """
    Uniform permutation of range(n), reproducible across platforms

    Fisher-Yates: a PCG64 generator seeded with `seed` draws, in a single
    call, j_i = integers(0, i + 1) for i = n-1 down to 1; positions i and
    j_i are then swapped in that order, starting from the identity.

    Args:
        n: Length of the permutation
        seed: 64-bit seed

    Returns:
        Permutation as an int64 array
    """
    order = list(range(n))
    if n > 1:
        rng = np.random.Generator(np.random.PCG64(seed))
        draws = rng.integers(0, np.arange(n, 1, -1)).tolist()
        for i, j in zip(range(n - 1, 0, -1), draws):
            order[i], order[j] = order[j], order[i]
    return np.asarray(order, dtype=np.int64)


def split(ds: RatingDataset, train_fraction: float, seed: int) -> SplitPlan:
    """
    Seeded train/test split

    The first floor(train_fraction * N) shuffled triples go to train.

    Args:
        ds: Dataset to split
        train_fraction: Fraction of triples for training, in (0, 1)
        seed: Shuffle seed

    Returns:
        SplitPlan with disjoint views covering ds
    """
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError(f"train fraction must lie in (0, 1), got {train_fraction}")
    order = seeded_permutation(len(ds), seed)
    n_train = math.floor(Fraction(str(train_fraction)) * len(ds))
    train_rows = np.sort(order[:n_train])
    test_rows = np.sort(order[n_train:])
    logger.info(f"Split {len(ds)} ratings (fraction {train_fraction}, seed {seed}): "
                f"{len(train_rows)} train / {len(test_rows)} test")
    return SplitPlan(train=ds.take(train_rows), test=ds.take(test_rows),
                     seed=seed, train_fraction=train_fraction)


def holdout(ds: RatingDataset, fraction: float, seed: int) -> Tuple[RatingDataset, RatingDataset]:
    """
    Carve a validation subset out of a training view

    Returns:
        (fit view, validation view)
    """
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"validation fraction must lie in (0, 1), got {fraction}")
    plan = split(ds, 1.0 - fraction, seed)
    if len(plan.test) == 0:
        raise ConfigurationError(f"validation fraction {fraction} leaves no validation ratings")
    return plan.train, plan.test


def make_folds(train: RatingDataset, n_folds: int, seed: int) -> CvPlan:
    """
    Seeded shuffle followed by contiguous chunking into validation blocks

    Args:
        train: Training view to partition
        n_folds: Number of folds (>= 2)
        seed: Shuffle seed

    Returns:
        CvPlan whose validation blocks partition train
    """
    if n_folds < 2:
        raise ConfigurationError(f"need at least 2 folds, got {n_folds}")
    if len(train) < n_folds:
        raise ConfigurationError(f"{len(train)} ratings cannot fill {n_folds} folds")

    order = seeded_permutation(len(train), seed)
    folds = []
    for block in np.array_split(order, n_folds):
        mask = np.ones(len(train), dtype=bool)
        mask[block] = False
        folds.append((train.take(np.flatnonzero(mask)), train.take(np.sort(block))))
    return CvPlan(folds=folds, n_folds=n_folds, seed=seed)


def save_ratings(ds: RatingDataset, path: str):
    """Write triples with external ids as a headed CSV"""
    ds.to_frame().to_csv(path, index=False, columns=CANONICAL_COLUMNS)


def build_manifest(raw: RatingDataset, filtered: RatingDataset, min_user_ratings: int,
                   min_item_ratings: int, plan: Optional[SplitPlan] = None) -> Dict:
    """Provenance record for a prepared dataset"""
    manifest = {
        'raw': {'ratings': len(raw), 'users': raw.n_users, 'items': raw.n_items},
        'filtered': {'ratings': len(filtered), 'users': filtered.n_users, 'items': filtered.n_items},
        'scale': [filtered.scale_min, filtered.scale_max],
        'filters': {'min_user_ratings': min_user_ratings, 'min_item_ratings': min_item_ratings},
        'content_hash': filtered.content_hash(),
    }
    if plan is not None:
        manifest['split'] = {
            'seed': plan.seed,
            'train_fraction': plan.train_fraction,
            'train': len(plan.train),
            'test': len(plan.test),
        }
    return manifest


def write_manifest(manifest: Dict, path: str):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')


def _rows_for(ds: RatingDataset, path: str) -> np.ndarray:
    """Locate the rows of ds listed in a split CSV"""
    subset = load_ratings(path, 'movielens-csv', scale=(ds.scale_min, ds.scale_max)).to_frame()
    user_map, item_map = ds.user_id_map, ds.item_id_map
    try:
        users = subset['user_id'].map(user_map.__getitem__).to_numpy(dtype=np.int64)
        items = subset['item_id'].map(item_map.__getitem__).to_numpy(dtype=np.int64)
    except KeyError as e:
        raise DataError(f"{path} references id {e} missing from the prepared dataset")
    index = pd.MultiIndex.from_arrays([ds.users, ds.items])
    rows = index.get_indexer(pd.MultiIndex.from_arrays([users, items]))
    if (rows < 0).any():
        raise DataError(f"{path} contains ratings missing from the prepared dataset")
    return np.sort(rows)


def load_prepared(run_dir: str) -> Tuple[RatingDataset, SplitPlan, Dict]:
    """
    Reload a directory written by the prepare command

    Returns:
        (filtered dataset, split plan, manifest)
    """
    manifest_path = os.path.join(run_dir, 'manifest.json')
    if not os.path.exists(manifest_path):
        raise DataError(f"no prepared split in {run_dir} (manifest.json missing)")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)

    scale = tuple(manifest['scale'])
    ds = load_ratings(os.path.join(run_dir, 'ratings.csv'), 'movielens-csv', scale=scale)
    if ds.content_hash() != manifest['content_hash']:
        raise DataError(f"ratings.csv in {run_dir} does not match its manifest hash")

    split_info = manifest.get('split', {})
    plan = SplitPlan(
        train=ds.take(_rows_for(ds, os.path.join(run_dir, 'train.csv'))),
        test=ds.take(_rows_for(ds, os.path.join(run_dir, 'test.csv'))),
        seed=int(split_info.get('seed', 0)),
        train_fraction=float(split_info.get('train_fraction', 0.8)),
    )
    logger.info(f"Loaded prepared split from {run_dir}: {len(plan.train)} train / {len(plan.test)} test")
    return ds, plan, manifest


def epoch_seed(seed: int, epoch: int) -> int:
    """Shuffle seed of one training epoch, derived from the run seed"""
    return int(np.random.SeedSequence([seed, epoch]).generate_state(1, dtype=np.uint64)[0])
