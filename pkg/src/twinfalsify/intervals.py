"""One-sided confidence endpoints: Hoeffding and bootstrap backends."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ._rng import stream_key


class Side(str, Enum):
    LOWER_FOR_BOUND = "lower_for_bound"   # q_lo, lower endpoint for the bound in an H_lo test
    UPPER_FOR_TWIN = "upper_for_twin"     # upper endpoint for the twin mean in an H_lo test
    UPPER_FOR_BOUND = "upper_for_bound"   # q_up, H_up test
    LOWER_FOR_TWIN = "lower_for_twin"

    @property
    def is_lower(self) -> bool:
        return self in (Side.LOWER_FOR_BOUND, Side.LOWER_FOR_TWIN)


class Backend(str, Enum):
    HOEFFDING = "hoeffding"
    BOOT_REVERSE_PERCENTILE = "boot-revperc"
    BOOT_PERCENTILE = "boot-perc"

    @property
    def is_bootstrap(self) -> bool:
        return self is not Backend.HOEFFDING


@dataclass(frozen=True)
class IntervalRequest:
    values: np.ndarray
    y_lo: float
    y_up: float
    alpha: float
    side: Side
    backend: Backend = Backend.HOEFFDING
    resamples: int = 100
    seed: int = 0
    stream: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "side", Side(self.side))
        object.__setattr__(self, "backend", Backend(self.backend))
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class IntervalResult:
    endpoint: float
    n: int
    backend: Backend
    nested: bool = True


def hoeffding_delta(n: int, width: float, alpha) -> float:
    """Half-width ``width * sqrt(log(2/alpha) / (2n))``."""
    return width * np.sqrt(np.log(2.0 / np.asarray(alpha, dtype=np.float64)) / (2.0 * n))


def hoeffding_endpoint(req: IntervalRequest) -> IntervalResult:
    """Sample mean shifted by the Hoeffding half-width toward the requested side.

    The endpoint is not clamped to ``[y_lo, y_up]``.
    """
    n = req.values.size
    if n == 0:
        raise ValueError("empty sample")
    if req.values.min() < req.y_lo or req.values.max() > req.y_up:
        raise ValueError("Hoeffding endpoint needs values inside [y_lo, y_up]")
    mean = math.fsum(req.values.tolist()) / n
    delta = float(hoeffding_delta(n, req.y_up - req.y_lo, req.alpha))
    return IntervalResult(mean - delta if req.side.is_lower else mean + delta, n, req.backend)


def bootstrap_rng(seed: int, stream: str, side: Side) -> np.random.Generator:
    """Philox stream keyed by ``(seed, stream id, side)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream, Side(side).value)))


def resample_means(values: np.ndarray, resamples: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted means of ``resamples`` uniform-with-replacement resamples."""
    n = values.size
    idx = rng.integers(0, n, size=(resamples, n))
    return np.sort(values[idx].mean(axis=1))


def nearest_rank_sorted(sorted_vals: np.ndarray, q) -> np.ndarray:
    m = sorted_vals.size
    rank = np.clip(np.ceil(np.asarray(q) * m).astype(np.int64), 1, m)
    return sorted_vals[rank - 1]


def bootstrap_endpoints(
    values: np.ndarray, alphas, side: Side, backend: Backend, resamples: int, rng: np.random.Generator
) -> np.ndarray:
    """Bootstrap endpoints for several levels from one set of resamples.

    Lower sides use the ``1 - alpha/2`` resample quantile in the reverse
    percentile form ``2 * mean - q`` (percentile form: the ``alpha/2``
    quantile); upper sides mirror this.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty sample")
    if resamples < 1:
        raise ValueError("need at least one resample")
    side, backend = Side(side), Backend(backend)
    alphas = np.asarray(alphas, dtype=np.float64)
    boots = resample_means(values, resamples, rng)
    mean = math.fsum(values.tolist()) / values.size
    hi_q = nearest_rank_sorted(boots, 1.0 - alphas / 2.0)
    lo_q = nearest_rank_sorted(boots, alphas / 2.0)
    if backend is Backend.BOOT_REVERSE_PERCENTILE:
        return 2.0 * mean - (hi_q if side.is_lower else lo_q)
    if backend is Backend.BOOT_PERCENTILE:
        return lo_q if side.is_lower else hi_q
    raise ValueError(f"{backend} is not a bootstrap backend")


def bootstrap_endpoint(req: IntervalRequest) -> IntervalResult:
    if req.values.size == 0:
        raise ValueError("empty sample")
    rng = bootstrap_rng(req.seed, req.stream, req.side)
    ep = bootstrap_endpoints(req.values, [req.alpha], req.side, req.backend, req.resamples, rng)[0]
    return IntervalResult(float(ep), req.values.size, req.backend)


def endpoint(req: IntervalRequest) -> IntervalResult:
    if req.backend is Backend.HOEFFDING:
        return hoeffding_endpoint(req)
    return bootstrap_endpoint(req)
