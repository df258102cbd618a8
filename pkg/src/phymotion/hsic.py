"""Biased empirical HSIC with RBF kernels."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import tensor as T
from .errors import ContractError, ParameterError, ShapeError
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelSpec:
    """RBF kernel; ``bandwidth`` is a positive float or ``"median"``."""

    bandwidth: Union[float, str] = "median"

    def __post_init__(self):
        if isinstance(self.bandwidth, str):
            if self.bandwidth != "median":
                raise ParameterError(f"unknown bandwidth rule {self.bandwidth!r}")
        elif not self.bandwidth > 0:
            raise ParameterError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass
class Gram:
    matrix: Tensor
    sigma: float
    fallback: bool = False


def _as_batch(x):
    x = T.as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"feature batch must be (n, d), got {x.shape}")
    if x.shape[0] < 2:
        raise ContractError(f"HSIC needs at least 2 samples, got {x.shape[0]}")
    return x


def pairwise_sq_dists(x):
    diff = x.reshape((x.shape[0], 1, x.shape[1])) - x.reshape((1, x.shape[0], x.shape[1]))
    return (diff * diff).sum(axis=-1)


def median_bandwidth(x):
    """Median pairwise distance over i < j; ``(1.0, True)`` if that is zero."""
    data = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    n = data.shape[0]
    sq = ((data[:, None, :] - data[None, :, :]) ** 2).sum(-1)
    iu = np.triu_indices(n, k=1)
    sigma = float(np.median(np.sqrt(sq[iu])))
    if not sigma > 0:
        log.warning("median-heuristic bandwidth is zero (constant batch); falling back to 1.0")
        return 1.0, True
    return sigma, False


def gram_matrix(x, spec=KernelSpec()):
    """RBF Gram matrix ``exp(-|xi - xj|^2 / (2 sigma^2))``.

    The median-heuristic bandwidth is computed from the data but treated as a
    constant for differentiation.
    """
    x = _as_batch(x)
    if spec.bandwidth == "median":
        sigma, fallback = median_bandwidth(x)
    else:
        sigma, fallback = float(spec.bandwidth), False
    d2 = pairwise_sq_dists(x)
    k = T.exp(d2 * (-1.0 / (2.0 * sigma * sigma)))
    return Gram(k, sigma, fallback)


def centering_matrix(n, dtype=np.float64):
    return np.eye(n, dtype=dtype) - np.full((n, n), 1.0 / n, dtype=dtype)


def hsic_from_grams(k, l):
    """``tr(K H L H) / (n - 1)^2`` for precomputed Gram matrices."""
    k, l = T.as_tensor(k), T.as_tensor(l)
    if k.shape != l.shape or k.ndim != 2 or k.shape[0] != k.shape[1]:
        raise ShapeError(f"Gram matrices must be equal square shapes, got {k.shape} and {l.shape}")
    n = k.shape[0]
    if n < 2:
        raise ContractError(f"HSIC needs at least 2 samples, got {n}")
    h = Tensor(centering_matrix(n, k.dtype))
    hlh = h @ l @ h
    # K and HLH are symmetric, so tr(K HLH) is the sum of their elementwise product
    return (k * hlh).sum() * (1.0 / (n - 1) ** 2)


def hsic(mot, app, spec=KernelSpec(), app_spec=None):
    """Empirical HSIC between paired motion and appearance batches (n x d each)."""
    mot, app = _as_batch(mot), _as_batch(app)
    if mot.shape[0] != app.shape[0]:
        raise ShapeError(f"HSIC batches must pair up: {mot.shape} vs {app.shape}")
    k = gram_matrix(mot, spec).matrix
    l = gram_matrix(app, app_spec or spec).matrix
    return hsic_from_grams(k, l)
