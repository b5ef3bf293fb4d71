"""
Moving-window and correlation statistics shared by the metric and mapping layers.

Moving statistics run over the time axis of (frames x bands) matrices with
centered windows that shrink at the edges; the variance divisor is always
(window_count - 1).
"""

from collections import deque
from typing import Tuple

import numpy as np
from scipy import stats

from paqm.core.exceptions import DegenerateDataError, InsufficientDataError


class SlidingWindowStats:
    """
    Streaming mean and sample variance over a sliding window of band vectors.

    Values enter with push() and leave in FIFO order with pop(). Welford
    add/remove updates keep the cost O(1) per frame; the running sums are
    rebuilt from the buffered window every `reanchor_every` updates and
    whenever a band's M2 collapses against its recent peak, which bounds
    the cancellation error of removals.
    """

    def __init__(self, width: int, reanchor_every: int = 32, cancellation_ratio: float = 0.1):
        self._values: deque = deque()
        self._mean = np.zeros(width)
        self._m2 = np.zeros(width)
        self._peak = np.zeros(width)
        self._steps = 0
        self._reanchor_every = reanchor_every
        self._ratio = cancellation_ratio

    @property
    def count(self) -> int:
        return len(self._values)

    @property
    def mean(self) -> np.ndarray:
        return self._mean.copy()

    @property
    def variance(self) -> np.ndarray:
        """Sample variance, zero for fewer than two values"""
        n = len(self._values)
        if n < 2:
            return np.zeros_like(self._m2)
        return np.maximum(self._m2, 0.0) / (n - 1)

    def push(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        self._values.append(x)
        n = len(self._values)
        delta = x - self._mean
        self._mean = self._mean + delta / n
        self._m2 = self._m2 + delta * (x - self._mean)
        self._after_update()

    def pop(self) -> None:
        x = self._values.popleft()
        n = len(self._values)
        if n == 0:
            self._mean = np.zeros_like(self._mean)
            self._m2 = np.zeros_like(self._m2)
            self._peak = np.zeros_like(self._peak)
            self._steps = 0
            return
        delta = x - self._mean
        new_mean = self._mean - delta / n
        self._m2 = self._m2 - delta * (x - new_mean)
        self._mean = new_mean
        self._after_update()

    def _after_update(self) -> None:
        self._steps += 1
        self._peak = np.maximum(self._peak, self._m2)
        if self._steps >= self._reanchor_every or np.any(self._m2 < self._ratio * self._peak):
            self._reanchor()

    def _reanchor(self) -> None:
        block = np.asarray(self._values)
        self._mean = block.mean(axis=0)
        self._m2 = ((block - self._mean) ** 2).sum(axis=0)
        self._peak = self._m2.copy()
        self._steps = 0


def window_bounds(n: int, n_frames: int, window: int) -> Tuple[int, int]:
    """Inclusive [lo, hi] frame range of the centered window at frame n"""
    before = window // 2
    after = window - 1 - before
    return max(0, n - before), min(n_frames - 1, n + after)


def moving_statistics(values: np.ndarray, window: int) -> Tuple[np.ndarray, np.ndarray]:
    """Centered moving mean and sample variance along axis 0 of a (frames x bands) matrix"""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if window < 1:
        raise ValueError("window must be at least one frame")
    n_frames, width = values.shape
    means = np.empty_like(values)
    variances = np.empty_like(values)

    window_stats = SlidingWindowStats(width)
    left, right = 0, -1
    for n in range(n_frames):
        lo, hi = window_bounds(n, n_frames, window)
        while right < hi:
            right += 1
            window_stats.push(values[right])
        while left < lo:
            window_stats.pop()
            left += 1
        means[n] = window_stats.mean
        variances[n] = window_stats.variance
    return means, variances


def pearson_with_ci(x, y, confidence: float = 0.95) -> Tuple[float, Tuple[float, float]]:
    """Pearson r with a Fisher-z confidence interval"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"Length mismatch: {x.shape} vs {y.shape}")
    n = x.size
    if n < 4:
        raise InsufficientDataError(f"Pearson CI needs at least 4 points, got {n}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateDataError("constant vector: correlation undefined")

    r = float(np.clip(stats.pearsonr(x, y).statistic, -1.0, 1.0))
    z_crit = stats.norm.ppf(0.5 + confidence / 2)
    with np.errstate(divide="ignore"):
        z = np.arctanh(r)
    half_width = z_crit / np.sqrt(n - 3)
    return r, (float(np.tanh(z - half_width)), float(np.tanh(z + half_width)))
