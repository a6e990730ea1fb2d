"""
Experiment Runner
Command pipeline behind main.py: prepare a split, cross-validate a grid,
train and evaluate any method, sweep depths and cluster counts, and
reproduce the full suite for every configured dataset
"""

import csv
import json
import logging
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from datetime import datetime
from itertools import product
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from checkpoint import read_kind
from errors import ConfigurationError, DataError, EvaluationError, NsnmfError
from evaluation import evaluate_rmse, wcss_sweep
from experiment_config import (
    TABLE_METHODS,
    load_config,
    method_spec,
    save_config,
    train_config,
)
from matrix_factorization import MfModel, fit_mf, load_mf, save_mf
from neighborhood_cf import NeighborhoodModel, fit_neighborhood, load_neighborhood, save_neighborhood
from nsnmf_model import NsnmfModel, item_representation, load_model, save_model
from nsnmf_trainer import train as train_nsnmf
from rating_dataset import (
    RatingDataset,
    build_manifest,
    filter_activity,
    load_prepared,
    load_ratings,
    make_folds,
    save_ratings,
    split,
    write_manifest,
)
from report_writer import MetricsReport, config_digest, plot_rmse_bars, plot_wcss, write_metrics
from run_monitor import RunMonitor

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_ROOT = 'runs'
CV_FOLD_COLUMNS = ['point', 'dims', 'eta', 'lambda', 'fold', 'rmse', 'status']
CV_SUMMARY_COLUMNS = ['point', 'dims', 'eta', 'lambda', 'mean_rmse', 'std_rmse', 'status', 'error']


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------

def resolve_run_dir(config: Dict, out: Optional[str] = None) -> str:
    """--out, else <output root>/<dataset name>"""
    if out:
        return out
    root = os.getenv('NSNMF_OUTPUT_ROOT') or config['output'].get('root') or DEFAULT_OUTPUT_ROOT
    return os.path.join(root, config['dataset']['name'])


@contextmanager
def staged_directory(path: str) -> Iterator[str]:
    """
    Write into <path>.partial and move it over path on success

    The staging directory is removed when the body raises.
    """
    staging = f"{path.rstrip(os.sep)}.partial"
    if os.path.exists(staging):
        shutil.rmtree(staging)
    os.makedirs(staging)
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        logger.error(f"❌ Removed partial outputs in {staging}")
        raise
    if os.path.exists(path):
        shutil.rmtree(path)
    os.replace(staging, path)


def _adopt_prepared_config(config: Dict, run_dir: str) -> Dict:
    """Data identity (dataset, split) always comes from the prepared directory"""
    stored_path = os.path.join(run_dir, 'config.json')
    if not os.path.exists(stored_path):
        return config
    with open(stored_path, 'r', encoding='utf-8') as f:
        stored = json.load(f)
    config = dict(config)
    config['dataset'] = stored['dataset']
    config['split'] = stored['split']
    return config


def _load_split(config: Dict, run_dir: str):
    if not os.path.isdir(run_dir):
        raise DataError(f"run directory {run_dir} does not exist; run the prepare command first")
    config = _adopt_prepared_config(config, run_dir)
    dataset, plan, manifest = load_prepared(run_dir)
    return config, dataset, plan, manifest


# ---------------------------------------------------------------------------
# fitting any method
# ---------------------------------------------------------------------------

def model_label(tag: str, dims: Sequence[int]) -> str:
    """Directory/metric name of one trained configuration"""
    if method_spec(tag).family == 'nsnmf' and len(dims) != 2:
        return f"{tag}@{len(dims)}-layers"
    return tag


def method_digest(config: Dict, tag: str, **changes) -> str:
    """Digest of everything that determines a method's result (paths excluded)"""
    dataset = {key: value for key, value in config['dataset'].items() if key != 'path'}
    train_section = dict(config['train'])
    train_section.update(changes)
    document = {
        'method': tag,
        'dataset': dataset,
        'split': config['split'],
        'train': train_section,
    }
    if method_spec(tag).family == 'neighborhood':
        document['baseline'] = config['baseline']
        document.pop('train')
    return config_digest(document)


def fit_method(tag: str, train_set: RatingDataset, config: Dict, dims: Optional[Sequence[int]] = None,
               eta: Optional[float] = None, lam: Optional[float] = None) -> Tuple[object, Dict]:
    """
    Fit any supported method on a training view

    Args:
        tag: Method tag
        train_set: Training view
        config: Resolved configuration
        dims, eta, lam: Grid-point overrides of the train section

    Returns:
        (model, training summary)
    """
    spec = method_spec(tag)
    section = config['train']
    dims = list(dims if dims is not None else section['dims'])
    eta = float(eta if eta is not None else section['eta'])
    lam = float(lam if lam is not None else section['lambda'])

    if spec.family == 'nsnmf':
        tcfg = train_config(config, tag, dims=tuple(dims), eta=eta, lam=lam)
        model, report = train_nsnmf(train_set, tcfg)
        return model, report.to_dict()

    if spec.family == 'mf':
        model = fit_mf(train_set, spec.option('variant'), k=dims[0], eta=eta, lam=lam,
                       epochs=section['epochs'], seed=section['seed'],
                       clamp_predictions=section.get('clamp_predictions', True))
        return model, {'train_rmse': [evaluate_rmse(model, train_set)], 'k': dims[0],
                       'eta': eta, 'lambda': model.lam, 'epochs': section['epochs']}

    model = fit_neighborhood(train_set, spec.option('mode'), k=config['baseline']['neighbors'],
                             shrinkage=config['baseline']['shrinkage'],
                             clamp_predictions=section.get('clamp_predictions', True))
    return model, {'neighbors': model.k, 'shrinkage': model.shrinkage}


def save_fitted(model, path: str, config: Optional[Dict] = None, tag: Optional[str] = None):
    if isinstance(model, NsnmfModel):
        save_model(model, path, train_config(config, tag, dims=model.dims) if config else None)
    elif isinstance(model, MfModel):
        save_mf(model, path)
    elif isinstance(model, NeighborhoodModel):
        save_neighborhood(model, path)
    else:
        raise ConfigurationError(f"cannot checkpoint {type(model).__name__}")


def load_fitted(path: str):
    """Load any checkpoint written by save_fitted"""
    if not os.path.exists(path):
        raise DataError(f"no trained model at {path}; run the train command first")
    kind = read_kind(path)
    if kind == 'nsnmf':
        return load_model(path)[0]
    if kind == 'mf':
        return load_mf(path)
    if kind == 'neighborhood':
        return load_neighborhood(path)
    raise DataError(f"{path}: unknown checkpoint kind {kind!r}")


def _map_tasks(fn: Callable, tasks: List, jobs: int) -> List:
    """Run tasks in order, in a process pool when jobs > 1"""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def cmd_prepare(config: Dict, run_dir: str) -> Dict:
    """
    Load, filter and split a rating file into a run directory

    Writes ratings.csv (filtered canonical dataset), train.csv, test.csv,
    manifest.json and config.json.

    Returns:
        Manifest
    """
    dataset_cfg = config['dataset']
    if not dataset_cfg.get('path'):
        raise ConfigurationError("no dataset path given (--dataset)")
    scale = tuple(dataset_cfg['scale']) if dataset_cfg.get('scale') else None

    raw = load_ratings(dataset_cfg['path'], dataset_cfg['format'], scale=scale)
    filtered = filter_activity(raw, dataset_cfg['min_user_ratings'], dataset_cfg['min_item_ratings'])
    plan = split(filtered, config['split']['train_fraction'], config['split']['seed'])

    manifest = build_manifest(raw, filtered, dataset_cfg['min_user_ratings'],
                              dataset_cfg['min_item_ratings'], plan)
    manifest['dataset'] = dataset_cfg['name']

    with staged_directory(run_dir) as staging:
        save_ratings(filtered, os.path.join(staging, 'ratings.csv'))
        save_ratings(plan.train, os.path.join(staging, 'train.csv'))
        save_ratings(plan.test, os.path.join(staging, 'test.csv'))
        write_manifest(manifest, os.path.join(staging, 'manifest.json'))
        save_config(config, os.path.join(staging, 'config.json'))

    logger.info(f"✅ Prepared {dataset_cfg['name']} in {run_dir}: "
                f"{manifest['filtered']['ratings']} ratings "
                f"({manifest['split']['train']} train / {manifest['split']['test']} test)")
    return manifest


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def build_grid(config: Dict, tag: str) -> List[Dict]:
    """
    Grid points of one method, in evaluation order

    NSNMF widths are repeated once per layer of the configured chain; plain
    NMF has no regularizer so its lambda axis collapses to 0; neighbourhood
    methods have a single point.
    """
    spec = method_spec(tag)
    cv = config['cv']
    if not cv['dims'] or not cv['eta'] or not cv['lambda']:
        raise ConfigurationError("cross-validation grids must be non-empty")
    if spec.family == 'neighborhood':
        return [{'dims': list(config['train']['dims']), 'eta': None, 'lambda': None}]

    layers = len(config['train']['dims'])
    lambdas = [0.0] if spec.option('variant') == 'nmf' else cv['lambda']
    points = []
    for width, eta, lam in product(cv['dims'], cv['eta'], lambdas):
        dims = [int(width)] * layers if spec.family == 'nsnmf' else [int(width)]
        points.append({'dims': dims, 'eta': float(eta), 'lambda': float(lam)})
    return points


def _evaluate_fold(task: Dict) -> Dict:
    """Fit on one fold's training view and score its validation view"""
    point, fold = task['point'], task['fold']
    try:
        model, _ = fit_method(task['tag'], task['fit'], task['config'], dims=task['dims'],
                              eta=task['eta'], lam=task['lambda'])
        return {'point': point, 'fold': fold, 'rmse': evaluate_rmse(model, task['validation']), 'error': None}
    except NsnmfError as e:
        logger.error(f"❌ Grid point {point} fold {fold} failed: {e}", exc_info=True)
        return {'point': point, 'fold': fold, 'rmse': None, 'error': f"{type(e).__name__}: {e}"}


def cross_validate(train_set: RatingDataset, tag: str, config: Dict, grid: List[Dict],
                   jobs: int = 1, monitor: Optional[RunMonitor] = None) -> Dict:
    """
    Evaluate every grid point over every fold

    Results are merged in grid order whatever the completion order. A point
    with any failed fold is marked failed and skipped for selection.

    Returns:
        {'folds': per-fold rows, 'points': per-point summaries, 'best': best summary}
    """
    monitor = monitor or RunMonitor()
    cv = config['cv']
    plan = make_folds(train_set, cv['folds'], cv['seed'])
    logger.info(f"Cross-validating {tag}: {len(grid)} grid points x {plan.n_folds} folds "
                f"on {len(train_set)} ratings with {jobs} job(s)")

    tasks = []
    for point, params in enumerate(grid):
        monitor.point_started(f"{tag}#{point}")
        for fold, (fit_view, validation_view) in enumerate(plan.folds):
            tasks.append({'point': point, 'fold': fold, 'tag': tag, 'config': config,
                          'fit': fit_view, 'validation': validation_view,
                          'dims': params['dims'], 'eta': params['eta'], 'lambda': params['lambda']})

    results = _map_tasks(_evaluate_fold, tasks, jobs)

    fold_rows, summaries = [], []
    for point, params in enumerate(grid):
        point_results = [r for r in results if r['point'] == point]
        errors = [r['error'] for r in point_results if r['error']]
        for r in point_results:
            monitor.fold_finished(f"{tag}#{point}/fold{r['fold']}", r['error'])
            fold_rows.append({'point': point, **params, 'fold': r['fold'], 'rmse': r['rmse'],
                              'status': 'failed' if r['error'] else 'ok'})
        summary = {'point': point, **params, 'mean_rmse': None, 'std_rmse': None,
                   'status': 'failed' if errors else 'ok', 'error': errors[0] if errors else None}
        if not errors:
            values = np.array([r['rmse'] for r in point_results])
            summary['mean_rmse'] = float(values.mean())
            summary['std_rmse'] = float(values.std())
        monitor.point_finished(f"{tag}#{point}", summary['error'])
        summaries.append(summary)
        if summary['status'] == 'ok':
            logger.info(f"{tag} dims={params['dims']} eta={params['eta']} lambda={params['lambda']}: "
                        f"CV RMSE {summary['mean_rmse']:.5f} +/- {summary['std_rmse']:.5f}")

    best = select_best(summaries)
    monitor.log_summary()
    return {'folds': fold_rows, 'points': summaries, 'best': best}


def _selection_key(summary: Dict):
    lam = summary['lambda'] if summary['lambda'] is not None else 0.0
    eta = summary['eta'] if summary['eta'] is not None else 0.0
    return (summary['mean_rmse'], tuple(summary['dims']), -lam, eta, summary['point'])


def select_best(summaries: List[Dict]) -> Dict:
    """Lowest mean RMSE; ties go to smaller dims, then larger lambda, then the rest in order"""
    ok = [s for s in summaries if s['status'] == 'ok']
    if not ok:
        raise EvaluationError("every grid point failed; nothing to select")
    return min(ok, key=_selection_key)


def _write_rows(path: str, columns: List[str], rows: List[Dict]):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            values = []
            for column in columns:
                value = row.get(column)
                if isinstance(value, float):
                    value = repr(value)
                elif isinstance(value, list):
                    value = 'x'.join(str(v) for v in value)
                elif value is None:
                    value = ''
                values.append(value)
            writer.writerow(values)


def cmd_cv(config: Dict, run_dir: str, jobs: int = 1) -> Dict:
    """Grid search for config['method'] over the prepared training split"""
    config, _, plan, _ = _load_split(config, run_dir)
    tag = config['method']
    grid = build_grid(config, tag)
    monitor = RunMonitor()

    outcome = cross_validate(plan.train, tag, config, grid, jobs=jobs, monitor=monitor)
    best = outcome['best']
    with staged_directory(os.path.join(run_dir, 'cv', tag)) as staging:
        _write_rows(os.path.join(staging, 'cv_folds.csv'), CV_FOLD_COLUMNS, outcome['folds'])
        _write_rows(os.path.join(staging, 'cv_summary.csv'), CV_SUMMARY_COLUMNS, outcome['points'])
        with open(os.path.join(staging, 'cv_best.json'), 'w', encoding='utf-8') as f:
            json.dump({'method': tag, 'best': best, 'status': monitor.get_status()}, f, indent=2, sort_keys=True)
            f.write('\n')
        save_config(config, os.path.join(staging, 'config.json'))

    logger.info(f"✅ Best {tag}: dims={best['dims']} eta={best['eta']} lambda={best['lambda']} "
                f"(CV RMSE {best['mean_rmse']:.5f})")
    return outcome


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _train_into(run_dir: str, tag: str, config: Dict, train_set: RatingDataset,
                dims: Optional[Sequence[int]] = None) -> Tuple[str, object]:
    dims = list(dims if dims is not None else config['train']['dims'])
    label = model_label(tag, dims)
    model, summary = fit_method(tag, train_set, config, dims=dims)
    with staged_directory(os.path.join(run_dir, 'models', label)) as staging:
        save_fitted(model, os.path.join(staging, 'model.npz'), config, tag)
        with open(os.path.join(staging, 'train_report.json'), 'w', encoding='utf-8') as f:
            json.dump({'method': tag, 'label': label, 'dims': dims, 'summary': summary},
                      f, indent=2, sort_keys=True)
            f.write('\n')
        save_config(config, os.path.join(staging, 'config.json'))
    return label, model


def cmd_train(config: Dict, run_dir: str) -> str:
    """Train config['method'] on the prepared training split"""
    config, _, plan, _ = _load_split(config, run_dir)
    tag = config['method']
    label, _ = _train_into(run_dir, tag, config, plan.train)
    logger.info(f"✅ Trained {label} in {os.path.join(run_dir, 'models', label)}")
    return label


def _metadata(config: Dict, manifest: Dict) -> Dict:
    return {
        'created_at': datetime.now().isoformat(),
        'split_seed': config['split']['seed'],
        'train_seed': config['train']['seed'],
        'content_hash': manifest.get('content_hash'),
    }


def cmd_eval(config: Dict, run_dir: str) -> MetricsReport:
    """Test RMSE of a model trained by cmd_train"""
    config, _, plan, manifest = _load_split(config, run_dir)
    tag = config['method']
    label = model_label(tag, config['train']['dims'])
    model = load_fitted(os.path.join(run_dir, 'models', label, 'model.npz'))

    report = MetricsReport(metadata=_metadata(config, manifest))
    digest = method_digest(config, tag)
    report.add(label, config['dataset']['name'], digest, 'train_rmse', evaluate_rmse(model, plan.train))
    report.add(label, config['dataset']['name'], digest, 'test_rmse', evaluate_rmse(model, plan.test))
    with staged_directory(os.path.join(run_dir, 'eval', label)) as staging:
        write_metrics(report, os.path.join(staging, 'metrics.csv'))
        save_config(config, os.path.join(staging, 'config.json'))
    logger.info(f"✅ {label} test RMSE on {config['dataset']['name']}: "
                f"{report.value(label, config['dataset']['name'], 'test_rmse'):.5f}")
    return report


# ---------------------------------------------------------------------------
# clustering
# ---------------------------------------------------------------------------

def item_points(model, representation: str = 'activated') -> np.ndarray:
    """
    Item representations as rows, restricted to items seen in training

    NSNMF uses the activated top-layer features (or the deep Q with
    representation='deep'); factor baselines use Q.
    """
    if isinstance(model, NsnmfModel):
        features = item_representation(model)
        features = features.activated if representation == 'activated' else features.deep
    elif isinstance(model, MfModel):
        features = model.item_representation()
    else:
        raise ConfigurationError(f"{type(model).__name__} has no item representation to cluster")
    return np.ascontiguousarray(features[:, model.seen_items].T)


def _cluster_task(task: Dict) -> Dict:
    tag, width, config = task['tag'], task['width'], task['config']
    spec = method_spec(tag)
    dims = [width] * len(config['train']['dims']) if spec.family == 'nsnmf' else [width]
    model, _ = fit_method(tag, task['train'], config, dims=dims)
    points = item_points(model, config['cluster']['representation'])
    cluster_cfg = config['cluster']
    ks = [k for k in cluster_cfg['ks'] if k <= points.shape[0]]
    if len(ks) < len(cluster_cfg['ks']):
        logger.warning(f"⚠️  Only {points.shape[0]} items; clustering with k in {ks}")
    results = wcss_sweep(points, ks, config['train']['seed'], restarts=cluster_cfg['restarts'],
                         max_iters=cluster_cfg['max_iters'], squared=cluster_cfg['squared'])
    return {'tag': tag, 'width': width, 'label': f"{tag} ({width}d)",
            'curve': {int(r.k): r.wcss for r in results}, 'results': [r.to_dict() for r in results]}


def run_cluster_study(config: Dict, train_set: RatingDataset, jobs: int = 1) -> List[Dict]:
    """WCSS curves for every (method, feature width) of the cluster section"""
    cluster_cfg = config['cluster']
    tasks = [{'tag': tag, 'width': int(width), 'config': config, 'train': train_set}
             for tag in cluster_cfg['methods'] for width in cluster_cfg['feature_dims']]
    logger.info(f"Cluster study: {len(tasks)} representations, k in {cluster_cfg['ks']}, "
                f"{cluster_cfg['restarts']} restarts")
    return _map_tasks(_cluster_task, tasks, jobs)


def cmd_cluster(config: Dict, run_dir: str, jobs: int = 1) -> List[Dict]:
    """Fit the cluster methods and write WCSS curves, cluster assignments and an SVG"""
    config, _, plan, manifest = _load_split(config, run_dir)
    studies = run_cluster_study(config, plan.train, jobs=jobs)

    report = MetricsReport(metadata=_metadata(config, manifest))
    for study in studies:
        digest = method_digest(config, study['tag'], dims=[study['width']])
        for k, value in sorted(study['curve'].items()):
            report.add(study['label'], config['dataset']['name'], digest, f"wcss@k={k}", value)

    with staged_directory(os.path.join(run_dir, 'cluster')) as staging:
        write_metrics(report, os.path.join(staging, 'wcss.csv'))
        with open(os.path.join(staging, 'clusters.json'), 'w', encoding='utf-8') as f:
            json.dump([{key: study[key] for key in ('tag', 'width', 'label', 'results')} for study in studies],
                      f, sort_keys=True)
            f.write('\n')
        plot_wcss([(study['label'], study['curve']) for study in studies],
                  os.path.join(staging, 'wcss.svg'),
                  title=f"WCSS of item clusters on {config['dataset']['name']}")
        save_config(config, os.path.join(staging, 'config.json'))
    logger.info(f"✅ Cluster study written to {os.path.join(run_dir, 'cluster')}")
    return studies


# ---------------------------------------------------------------------------
# reproduce
# ---------------------------------------------------------------------------

def _table_task(task: Dict) -> Dict:
    model, _ = fit_method(task['tag'], task['train'], task['config'], dims=task['dims'])
    return {'label': task['label'], 'tag': task['tag'], 'dims': task['dims'],
            'train_rmse': evaluate_rmse(model, task['train']),
            'test_rmse': evaluate_rmse(model, task['test'])}


def reproduce_dataset(config: Dict, run_dir: str, jobs: int = 1,
                      methods: Sequence[str] = TABLE_METHODS) -> MetricsReport:
    """
    prepare -> train -> eval for every method, the depth sweep and the cluster study

    Returns:
        MetricsReport of the computed rows for this dataset
    """
    name = config['dataset']['name']
    logger.info("=" * 60)
    logger.info(f"Reproducing {name}")
    logger.info("=" * 60)
    manifest = cmd_prepare(config, run_dir)
    _, plan, _ = load_prepared(run_dir)

    width = config['train']['dims'][0]
    tasks = [{'tag': tag, 'label': tag, 'train': plan.train, 'test': plan.test, 'config': config,
              'dims': list(config['train']['dims']) if method_spec(tag).family == 'nsnmf' else [width]}
             for tag in methods]
    for layers in config['depth']['layers']:
        tasks.append({'tag': 'nsnmf-relu', 'label': f"nsnmf-relu@{layers}-layers", 'train': plan.train,
                      'test': plan.test, 'config': config, 'dims': [width] * layers})

    report = MetricsReport(metadata=_metadata(config, manifest))
    for outcome in _map_tasks(_table_task, tasks, jobs):
        digest = method_digest(config, outcome['tag'], dims=outcome['dims'])
        report.add(outcome['label'], name, digest, 'train_rmse', outcome['train_rmse'])
        report.add(outcome['label'], name, digest, 'test_rmse', outcome['test_rmse'])
        logger.info(f"{name} {outcome['label']}: test RMSE {outcome['test_rmse']:.5f}")

    with staged_directory(os.path.join(run_dir, 'reproduce')) as staging:
        write_metrics(report, os.path.join(staging, 'metrics.csv'))
        plot_rmse_bars(report, name, os.path.join(staging, 'rmse.svg'))
        save_config(config, os.path.join(staging, 'config.json'))

    cmd_cluster(config, run_dir, jobs=jobs)
    return report


def cmd_reproduce(datasets: Sequence[Tuple[str, str]], root: str, jobs: int = 1,
                  config_file: Optional[str] = None, overrides: Optional[Dict] = None) -> MetricsReport:
    """
    Run the whole suite for each (preset, path) pair

    Writes <root>/metrics.csv with every computed row plus the reference
    rows of the reproduced datasets, and one RMSE bar chart per dataset.
    """
    if not datasets:
        raise ConfigurationError("reproduce needs at least one --dataset NAME=PATH")
    combined = MetricsReport(metadata={'created_at': datetime.now().isoformat(), 'datasets': {}})
    for preset, path in datasets:
        dataset_overrides = dict(overrides or {})
        dataset_overrides['dataset'] = {**dataset_overrides.get('dataset', {}), 'path': path}
        config = load_config(config_file, preset=preset, overrides=dataset_overrides)
        report = reproduce_dataset(config, os.path.join(root, config['dataset']['name']), jobs=jobs)
        combined.rows.extend(report.rows)
        combined.metadata['datasets'][config['dataset']['name']] = report.metadata

    combined.extend_published_rows([config_name for config_name, _ in datasets])
    os.makedirs(root, exist_ok=True)
    write_metrics(combined, os.path.join(root, 'metrics.csv'))
    logger.info(f"✅ Reproduction finished: {len(combined.computed_rows())} computed rows in "
                f"{os.path.join(root, 'metrics.csv')}")
    return combined
