"""
Experiment Configuration
Defaults, dataset presets, JSON config files and command-line overrides,
resolved into one validated document per run
"""

import copy
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import jsonschema

from errors import ConfigurationError
from nsnmf_model import TrainConfig

logger = logging.getLogger(__name__)

SCHEMA_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'experiment_schema.json')

DEFAULT_CONFIG = {
    'preset': None,
    'dataset': {
        'name': 'custom',
        'path': None,
        'format': 'auto',
        'scale': None,
        'min_user_ratings': 0,
        'min_item_ratings': 0,
    },
    'split': {
        'seed': 42,
        'train_fraction': 0.8,
    },
    'method': 'nsnmf-relu-bias',
    'train': {
        'eta': 0.01,
        'lambda': 0.1,
        'dims': [8, 8],
        'epochs': 50,
        'seed': 42,
        'use_adagrad': True,
        'adagrad_epsilon': 1e-8,
        'clamp_predictions': True,
        'early_stopping': False,
        'validation_fraction': 0.05,
        'patience': 5,
        'min_delta': 1e-4,
    },
    'baseline': {
        'neighbors': 40,
        'shrinkage': 25.0,
    },
    'cv': {
        'folds': 10,
        'seed': 42,
        'dims': [4, 6, 8, 10, 15, 20],
        'eta': [0.1, 0.01, 0.001],
        'lambda': [0.1, 0.01, 0.001],
    },
    'cluster': {
        'ks': [2, 3, 4, 5, 6, 7, 8, 9, 10],
        'restarts': 20,
        'max_iters': 300,
        'squared': False,
        'representation': 'activated',
        'methods': ['nsnmf-relu', 'nmf'],
        'feature_dims': [3, 8],
    },
    'depth': {
        'layers': [2, 3],
    },
    'output': {
        'root': None,
    },
}

# final settings per dataset: learning rate 0.01, regularizer 0.1, factors 8/4/6
PRESETS = {
    'movielens': {
        'dataset': {'name': 'movielens', 'format': 'auto', 'scale': [0.5, 5.0],
                    'min_user_ratings': 20, 'min_item_ratings': 0},
        'train': {'eta': 0.01, 'lambda': 0.1, 'dims': [8, 8]},
    },
    'filmtrust': {
        'dataset': {'name': 'filmtrust', 'format': 'filmtrust', 'scale': [0.5, 4.0],
                    'min_user_ratings': 20, 'min_item_ratings': 0},
        'train': {'eta': 0.01, 'lambda': 0.1, 'dims': [4, 4]},
    },
    'amusic': {
        'dataset': {'name': 'amusic', 'format': 'amazon-csv', 'scale': [1.0, 5.0],
                    'min_user_ratings': 20, 'min_item_ratings': 2},
        'train': {'eta': 0.01, 'lambda': 0.1, 'dims': [6, 6]},
    },
}


@dataclass(frozen=True)
class MethodSpec:
    """How a method tag maps onto a model family"""
    tag: str
    family: str
    options: Tuple[Tuple[str, object], ...]

    def option(self, name: str, default=None):
        return dict(self.options).get(name, default)


METHODS = {
    'nsnmf-relu': MethodSpec('nsnmf-relu', 'nsnmf', (('activation', 'relu'), ('use_bias', False))),
    'nsnmf-softplus': MethodSpec('nsnmf-softplus', 'nsnmf', (('activation', 'softplus'), ('use_bias', False))),
    'nsnmf-relu-bias': MethodSpec('nsnmf-relu-bias', 'nsnmf', (('activation', 'relu'), ('use_bias', True))),
    'svd': MethodSpec('svd', 'mf', (('variant', 'svd'),)),
    'nmf': MethodSpec('nmf', 'mf', (('variant', 'nmf'),)),
    'reg-nmf': MethodSpec('reg-nmf', 'mf', (('variant', 'reg-nmf'),)),
    'user-cf': MethodSpec('user-cf', 'neighborhood', (('mode', 'user'),)),
    'item-cf': MethodSpec('item-cf', 'neighborhood', (('mode', 'item'),)),
}

TABLE_METHODS = ['user-cf', 'item-cf', 'svd', 'nmf', 'reg-nmf',
                 'nsnmf-relu', 'nsnmf-softplus', 'nsnmf-relu-bias']


def method_spec(tag: str) -> MethodSpec:
    if tag not in METHODS:
        raise ConfigurationError(f"unknown method {tag!r}; expected one of {sorted(METHODS)}")
    return METHODS[tag]


def _deep_merge(default: dict, loaded: dict) -> dict:
    """
    Deep merge loaded config into default config

    Args:
        default: Default configuration dictionary
        loaded: Loaded configuration dictionary

    Returns:
        Merged configuration dictionary
    """
    result = copy.deepcopy(default)
    for key, value in loaded.items():
        if key in result and isinstance(result[key], dict) and isinstance(value, dict):
            result[key] = _deep_merge(result[key], value)
        else:
            result[key] = copy.deepcopy(value)
    return result


def _load_schema() -> Dict:
    with open(SCHEMA_PATH, 'r', encoding='utf-8') as f:
        return json.load(f)


def validate_config(document: Dict):
    """Check a resolved config against experiment_schema.json"""
    try:
        jsonschema.Draft7Validator(_load_schema()).validate(document)
    except jsonschema.ValidationError as e:
        location = '.'.join(str(part) for part in e.absolute_path) or '<root>'
        raise ConfigurationError(f"invalid configuration at {location}: {e.message}") from e


def expand_dims(dims: Optional[Sequence[int]], layers: Optional[int], current: Sequence[int]) -> List[int]:
    """
    Resolve --dims / --layers into the full width chain

    A single width is repeated once per factor layer; --layers alone repeats
    the current first width.
    """
    if dims is None and layers is None:
        return list(current)
    if layers is not None and layers < 2:
        raise ConfigurationError(f"need at least 2 layers, got {layers}")
    if dims is None:
        return [int(current[0])] * layers
    dims = [int(d) for d in dims]
    if len(dims) == 1:
        return dims * (layers if layers is not None else len(current))
    if layers is not None and len(dims) != layers:
        raise ConfigurationError(f"--dims lists {len(dims)} widths but --layers is {layers}")
    return dims


def load_config(config_file: Optional[str] = None, preset: Optional[str] = None,
                overrides: Optional[Dict] = None) -> Dict:
    """
    Resolve defaults <- preset <- JSON file <- flag overrides, then validate

    Args:
        config_file: Optional JSON file mirroring DEFAULT_CONFIG
        preset: Optional dataset preset name
        overrides: Nested dict of values taken from command-line flags

    Returns:
        Validated configuration document
    """
    config = copy.deepcopy(DEFAULT_CONFIG)

    loaded = {}
    if config_file:
        if not os.path.exists(config_file):
            raise ConfigurationError(f"config file not found: {config_file}")
        try:
            with open(config_file, 'r', encoding='utf-8') as f:
                loaded = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {config_file} is not valid JSON: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {config_file} must hold a JSON object")
        logger.info(f"✅ Configuration loaded from {config_file}")

    preset = preset or loaded.get('preset')
    if preset:
        if preset not in PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}; expected one of {sorted(PRESETS)}")
        config = _deep_merge(config, PRESETS[preset])
        config['preset'] = preset
        logger.info(f"Using {preset} preset")

    config = _deep_merge(config, loaded)
    if overrides:
        config = _deep_merge(config, overrides)
    if preset:
        config['preset'] = preset

    validate_config(config)
    return config


def train_config(config: Dict, method: Optional[str] = None, **changes) -> TrainConfig:
    """
    Build the NSNMF TrainConfig of a resolved document

    Args:
        config: Resolved configuration
        method: NSNMF method tag (defaults to config['method'])
        changes: Field overrides (e.g. dims, eta, lam) for grid points

    Returns:
        TrainConfig
    """
    spec = method_spec(method or config['method'])
    section = config['train']
    values = {
        'eta': section['eta'],
        'lam': section['lambda'],
        'dims': tuple(section['dims']),
        'epochs': section['epochs'],
        'seed': section['seed'],
        'use_adagrad': section.get('use_adagrad', True),
        'adagrad_epsilon': section.get('adagrad_epsilon', 1e-8),
        'clamp_predictions': section.get('clamp_predictions', True),
        'early_stopping': section.get('early_stopping', False),
        'validation_fraction': section.get('validation_fraction', 0.05),
        'patience': section.get('patience', 5),
        'min_delta': section.get('min_delta', 1e-4),
        'activation': spec.option('activation', 'relu'),
        'use_bias': spec.option('use_bias', True),
    }
    values.update(changes)
    return TrainConfig(**values)


def save_config(config: Dict, path: str):
    """Write the resolved document next to a run's outputs"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(config, f, indent=2, sort_keys=True)
        f.write('\n')
