"""
Checkpoint Container
Self-describing .npz archive shared by NSNMF and the factor baselines:
named float arrays plus a JSON header with the format version and kind
"""

import json
import logging
import os
from typing import Dict, Tuple

import numpy as np

from errors import DataError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_HEADER_KEY = '__header__'


def save_checkpoint(path: str, kind: str, header: Dict, arrays: Dict[str, np.ndarray]):
    """
    Write arrays and a JSON header to an .npz archive

    Args:
        path: Destination file (.npz appended by numpy when missing)
        kind: Model family tag, e.g. 'nsnmf' or 'mf'
        header: JSON-serializable metadata (config echo, scale, variant)
        arrays: Parameter arrays by name
    """
    if _HEADER_KEY in arrays:
        raise ValueError(f"array name {_HEADER_KEY!r} is reserved")
    document = dict(header, kind=kind, format_version=FORMAT_VERSION)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    payload = {name: np.asarray(value) for name, value in arrays.items()}
    payload[_HEADER_KEY] = np.array(json.dumps(document, sort_keys=True))
    np.savez(path, **payload)
    logger.debug(f"Checkpoint written to {path} ({kind}, {len(arrays)} arrays)")


def load_checkpoint(path: str, kind: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    """
    Read an archive written by save_checkpoint

    Args:
        path: Archive path
        kind: Expected model family tag

    Returns:
        (header, arrays)
    """
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if _HEADER_KEY not in archive.files:
            raise DataError(f"{path} is not a checkpoint (header missing)")
        header = json.loads(str(archive[_HEADER_KEY]))
        arrays = {name: archive[name] for name in archive.files if name != _HEADER_KEY}
    if header.get('format_version') != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint format {header.get('format_version')!r}")
    if header.get('kind') != kind:
        raise DataError(f"{path} holds a {header.get('kind')!r} model, expected {kind!r}")
    return header, arrays


def read_kind(path: str) -> str:
    """Model family tag of a checkpoint without loading its arrays"""
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        return json.loads(str(archive[_HEADER_KEY])).get('kind', '')
