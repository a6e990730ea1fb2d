"""
Activation Functions
Element-wise non-linearities g and their derivatives g' for the NSNMF layers
"""

from enum import Enum
from typing import Union

import numpy as np
from scipy.special import expit

from errors import ConfigurationError, NumericDomainError

ArrayLike = Union[float, np.ndarray]


class ActivationKind(str, Enum):
    """Supported element-wise functions"""
    RELU = 'relu'
    SOFTPLUS = 'softplus'
    IDENTITY = 'identity'

    @classmethod
    def parse(cls, value: Union[str, 'ActivationKind']) -> 'ActivationKind':
        try:
            return cls(value)
        except ValueError:
            choices = ', '.join(kind.value for kind in cls)
            raise ConfigurationError(f"unknown activation {value!r}; expected one of {choices}")


def forward(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    """g(x) without input validation (hot path of the trainer)"""
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0.0)
    if kind is ActivationKind.SOFTPLUS:
        # log(1 + e^x) == x + log(1 + e^-x) for large x
        return np.logaddexp(0.0, x)
    return np.array(x, dtype=np.float64, copy=True)


def gradient(kind: ActivationKind, x: np.ndarray) -> np.ndarray:
    """g'(x) without input validation; relu'(0) is 0"""
    if kind is ActivationKind.RELU:
        return (x > 0.0).astype(np.float64)
    if kind is ActivationKind.SOFTPLUS:
        return expit(x)
    return np.ones_like(x, dtype=np.float64)


def _checked(x: ArrayLike) -> np.ndarray:
    values = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NumericDomainError(f"activation input must be finite, got {x!r}")
    return values


def _unwrap(result: np.ndarray, x: ArrayLike) -> ArrayLike:
    return float(result) if np.ndim(x) == 0 else result


def apply(kind: Union[str, ActivationKind], x: ArrayLike) -> ArrayLike:
    """
    Evaluate g(x)

    Args:
        kind: Activation kind or its tag
        x: Finite scalar or array

    Returns:
        g(x), same shape as x
    """
    kind = ActivationKind.parse(kind)
    return _unwrap(forward(kind, _checked(x)), x)


def derivative(kind: Union[str, ActivationKind], x: ArrayLike) -> ArrayLike:
    """
    Evaluate g'(x)

    Args:
        kind: Activation kind or its tag
        x: Finite scalar or array

    Returns:
        g'(x), same shape as x
    """
    kind = ActivationKind.parse(kind)
    return _unwrap(gradient(kind, _checked(x)), x)
