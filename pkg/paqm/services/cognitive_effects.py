"""
Cognitive effect metrics: perceptual streaming (PS), power-deviation
informational masking (PDEV), near-threshold variance masking (beta-VAR)
and the legacy IMPS-modified loudness.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import numpy as np

from paqm import config
from paqm.core.ear_model import ExcitationSequence
from paqm.core.exceptions import InsufficientDataError, PipelineError
from paqm.core.statistics import moving_statistics
from paqm.services.distortion_metrics import PartialLoudnessSeries
from paqm.settings import CemSettings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImpsConstants:
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if self.c <= 0:
            raise PipelineError(f"IMPS constant C must be positive, got {self.c}")

    @classmethod
    def from_settings(cls, settings: CemSettings) -> "ImpsConstants":
        return cls(a=settings.imps_a, b=settings.imps_b, c=settings.imps_c)


@dataclass
class CemSeries:
    ps: np.ndarray
    pdev_band: np.ndarray
    pdev: np.ndarray
    bvar_band: np.ndarray
    bvar: np.ndarray
    item_summary: Dict[str, float]


def _values(x: Union[np.ndarray, ExcitationSequence]) -> np.ndarray:
    if isinstance(x, ExcitationSequence):
        return x.values
    return np.atleast_2d(np.asarray(x, dtype=float))


def window_frames(duration: float, frame_duration: float, minimum: int) -> int:
    return max(minimum, int(round(duration / frame_duration)))


def ps_streaming(e_ref, e_test) -> np.ndarray:
    """Two-tap smoothed SUT/REF excitation ratio"""
    ref, test = _values(e_ref), _values(e_test)
    if ref.shape != test.shape:
        raise PipelineError(f"Dimension mismatch: {ref.shape} vs {test.shape}")
    if ref.shape[0] == 0:
        raise InsufficientDataError("Perceptual streaming of an empty sequence")
    ratio = (test + 1.0) / (ref + 1.0)
    ps = ratio.copy()
    ps[1:] = 0.5 * ratio[1:] + 0.5 * ratio[:-1]
    return ps


def pdev(e_ref, frame_duration: Optional[float] = None, window: float = 0.02,
         min_frames: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Deviation of REF excitation from its windowed mean, per band and band-averaged"""
    ref = _values(e_ref)
    if ref.shape[0] == 0:
        raise InsufficientDataError("PDEV of an empty sequence")
    if frame_duration is None:
        if not isinstance(e_ref, ExcitationSequence):
            raise PipelineError("frame_duration is required for raw matrices")
        frame_duration = e_ref.frame_duration
    width = window_frames(window, frame_duration, min_frames)
    means, _ = moving_statistics(ref, width)
    band = np.abs(ref - means)
    return band, band.mean(axis=1)


def beta_var(beta: np.ndarray, frame_duration: float, window: float = 0.1) -> Tuple[np.ndarray, np.ndarray]:
    """Centered moving sample variance of beta per band, and its band mean"""
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if beta.shape[0] < 2:
        raise InsufficientDataError(f"beta-VAR needs at least 2 frames, got {beta.shape[0]}")
    width = window_frames(window, frame_duration, 2)
    _, variances = moving_statistics(beta, width)
    return variances, variances.mean(axis=1)


def imps_legacy(ps: np.ndarray, pdev_frames: np.ndarray,
                noise_loud: Union[PartialLoudnessSeries, np.ndarray], consts: ImpsConstants) -> np.ndarray:
    """IMPS-modified loudness: C PS^a N' / (PDEV^b + C)"""
    if consts.c <= 0:
        raise PipelineError(f"IMPS constant C must be positive, got {consts.c}")
    loudness = noise_loud.values if isinstance(noise_loud, PartialLoudnessSeries) else np.asarray(noise_loud)
    ps = np.asarray(ps, dtype=float)
    pdev_frames = np.asarray(pdev_frames, dtype=float)
    if ps.shape != loudness.shape or pdev_frames.shape != (loudness.shape[0],):
        raise PipelineError(
            f"Dimension mismatch: PS {ps.shape}, PDEV {pdev_frames.shape}, N' {loudness.shape}"
        )
    return consts.c * ps ** consts.a * loudness / (pdev_frames[:, None] ** consts.b + consts.c)


def pool(values: np.ndarray, pooling: str = "mean") -> float:
    if values.size == 0:
        raise InsufficientDataError("Nothing to pool")
    if pooling == "median":
        return float(np.median(values))
    return float(np.mean(values))


def summarize_cems(ps: np.ndarray, pdev_frames: np.ndarray, bvar_frames: np.ndarray,
                   skip_frames: int = 0, pooling: str = "mean") -> Dict[str, float]:
    """Per-item CEM scalars pooled over the post-settling frames"""
    n_frames = pdev_frames.shape[0]
    if skip_frames >= n_frames:
        logger.warning(f"Settling interval covers all {n_frames} frames, pooling over the whole item")
        skip_frames = 0
    return {
        config.CEM_PS: pool(ps[skip_frames:].mean(axis=1), pooling),
        config.CEM_PDEV: pool(pdev_frames[skip_frames:], pooling),
        config.CEM_BVAR: pool(bvar_frames[skip_frames:], pooling),
    }


def compute_cems(e_ref: ExcitationSequence, e_test: ExcitationSequence, beta: np.ndarray,
                 settings: Optional[CemSettings] = None, skip_frames: int = 0) -> CemSeries:
    settings = settings or CemSettings()
    ps = ps_streaming(e_ref, e_test)
    pdev_band, pdev_frames = pdev(e_ref, window=settings.pdev_window, min_frames=settings.pdev_min_frames)
    bvar_band, bvar_frames = beta_var(beta, e_ref.frame_duration, settings.bvar_window)
    summary = summarize_cems(ps, pdev_frames, bvar_frames, skip_frames, settings.pooling)
    return CemSeries(ps=ps, pdev_band=pdev_band, pdev=pdev_frames, bvar_band=bvar_band,
                     bvar=bvar_frames, item_summary=summary)
