"""
Near-threshold masking term, partial disturbance loudness and the three
distortion metrics (RmsNoiseLoud, SegmentalNMR, EHS).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import find_peaks, windows

from paqm import config
from paqm.core.ear_model import BandLayout, ExcitationSequence, ModulationWeights, SpectrumSequence, get_ear_model
from paqm.core.exceptions import InsufficientDataError, PipelineError
from paqm.settings import EarModelSettings, LoudnessSettings, MetricSettings

logger = logging.getLogger(__name__)

Matrix = Union[np.ndarray, ExcitationSequence, ModulationWeights]

# exp() overflows past ~709
_EXP_LIMIT = 700.0


def _values(x: Matrix) -> np.ndarray:
    if isinstance(x, (ExcitationSequence, ModulationWeights)):
        return x.values
    return np.asarray(x, dtype=float)


def _check_shapes(*matrices: np.ndarray) -> None:
    shapes = {m.shape for m in matrices}
    if len(shapes) != 1:
        raise PipelineError(f"Dimension mismatch: {sorted(shapes)}")


@dataclass(frozen=True)
class LoudnessConstants:
    c0: float
    gamma: float
    alpha: float
    e_th: np.ndarray
    e0: float

    @classmethod
    def from_settings(cls, settings: LoudnessSettings, band_centers: np.ndarray) -> "LoudnessConstants":
        """Threshold-index energies E_th(k) follow the threshold in quiet"""
        f_khz = np.asarray(band_centers, dtype=float) / 1000.0
        e_th = 10.0 ** (settings.threshold_db * f_khz ** -0.8 / 10.0)
        return cls(c0=settings.c0, gamma=settings.gamma, alpha=settings.alpha, e_th=e_th, e0=settings.e0)


@dataclass(frozen=True)
class PartialLoudnessSeries:
    values: np.ndarray
    beta: np.ndarray
    frame_duration: float = 0.0


@dataclass
class EhsResult:
    value: float
    frame_values: np.ndarray
    band_series: np.ndarray


@dataclass
class MovRecord:
    rms_noise_loud: float
    segmental_nmr: float
    ehs: float
    imps_noise_loud: Optional[float] = None
    series: Dict[str, np.ndarray] = field(default_factory=dict)

    def scalars(self) -> Dict[str, float]:
        values = {
            config.DM_RMS_NOISE_LOUD: self.rms_noise_loud,
            config.DM_SEGMENTAL_NMR: self.segmental_nmr,
            config.DM_EHS: self.ehs,
        }
        if self.imps_noise_loud is not None:
            values[config.DM_IMPS_NOISE_LOUD] = self.imps_noise_loud
        return values


def beta_term(e_ref: Matrix, e_test: Matrix, alpha: float, floor: Optional[np.ndarray] = None) -> np.ndarray:
    """beta = exp(-alpha (E_T - E_R) / E_R), E_R floored at the internal noise level"""
    ref, test = _values(e_ref), _values(e_test)
    _check_shapes(ref, test)
    if floor is None and isinstance(e_ref, ExcitationSequence):
        floor = e_ref.noise_floor
    floor = np.zeros(ref.shape[-1]) if floor is None else np.asarray(floor, dtype=float)
    denominator = np.maximum(ref, np.maximum(floor, np.finfo(float).tiny))
    with np.errstate(over="ignore", invalid="ignore"):
        exponent = -alpha * (test - ref) / denominator
    return np.exp(np.clip(np.nan_to_num(exponent), -_EXP_LIMIT, _EXP_LIMIT))


def partial_loudness(e_ref: Matrix, e_test: Matrix, s_ref: Matrix, s_test: Matrix,
                     consts: LoudnessConstants) -> PartialLoudnessSeries:
    """Partial disturbance loudness N'(n, k) of the SUT in presence of the REF"""
    ref, test = _values(e_ref), _values(e_test)
    sr, st = _values(s_ref), _values(s_test)
    _check_shapes(ref, test, sr, st)
    if np.any(sr <= 0) or np.any(st <= 0):
        raise PipelineError("Modulation weights must be positive")

    beta = beta_term(e_ref, e_test, consts.alpha)
    scale = consts.c0 * ((1.0 / st) * (consts.e_th / consts.e0)) ** consts.gamma
    excess = np.maximum(st * test - sr * ref, 0.0)
    bracket = (1.0 + excess / (consts.e_th + sr * ref * beta)) ** consts.gamma - 1.0

    frame_duration = e_ref.frame_duration if isinstance(e_ref, ExcitationSequence) else 0.0
    return PartialLoudnessSeries(values=scale * bracket, beta=beta, frame_duration=frame_duration)


def settling_frames(settling_interval: float, frame_duration: float) -> int:
    if frame_duration <= 0:
        return 0
    return int(round(settling_interval / frame_duration))


def mov_rms_noise_loud(pl: Union[PartialLoudnessSeries, np.ndarray], settling_interval: float = 0.5,
                       frame_duration: Optional[float] = None) -> float:
    """RMS over active frames of the band-averaged loudness"""
    values = pl.values if isinstance(pl, PartialLoudnessSeries) else np.asarray(pl, dtype=float)
    if frame_duration is None:
        frame_duration = pl.frame_duration if isinstance(pl, PartialLoudnessSeries) else 0.0
    skip = settling_frames(settling_interval, frame_duration)
    active = values[skip:]
    if active.shape[0] == 0:
        raise InsufficientDataError(
            f"All {values.shape[0]} frames fall inside the {settling_interval} s settling interval"
        )
    per_frame = active.mean(axis=1)
    return float(np.sqrt(np.mean(per_frame ** 2)))


def masking_offset_db(centers_bark: np.ndarray, dz: float, settings: Optional[MetricSettings] = None) -> np.ndarray:
    """Mask offset per band: flat up to the knee, then rising per band of width dz above it"""
    settings = settings or MetricSettings()
    z = np.asarray(centers_bark, dtype=float)
    above = np.maximum(z - settings.mask_offset_knee_bark, 0.0) / dz
    return settings.mask_offset_db + settings.mask_offset_slope_db * above


def mov_segmental_nmr(e_ref: Matrix, error_exc: Matrix, offset_db: Optional[np.ndarray] = None) -> float:
    """Segmental noise-to-mask ratio in dB"""
    ref, error = _values(e_ref), _values(error_exc)
    _check_shapes(ref, error)
    if ref.shape[0] == 0:
        raise InsufficientDataError("Segmental NMR of an empty sequence")
    if offset_db is None:
        offset_db = np.full(ref.shape[1], MetricSettings().mask_offset_db)
    threshold = np.maximum(ref * 10.0 ** (-np.asarray(offset_db) / 10.0), np.finfo(float).tiny)
    ratio = (error / threshold).mean(axis=1).mean()
    return float(10.0 * np.log10(max(ratio, 10.0 ** (config.NMR_FLOOR_DB / 10.0))))


def ehs_lengths(frame_size: int, sample_rate: int, max_freq: float = 9000.0) -> int:
    """Autocorrelation length (power of two) covering bins up to max_freq"""
    return int(2 ** np.floor(np.log2(frame_size * max_freq / sample_rate)))


def ehs_lag_spectrum(error_power: np.ndarray, n_lags: int) -> np.ndarray:
    """Power spectrum over lag of the normalized log-error autocorrelation, frames x (n_lags // 2 + 1)"""
    span = 2 * n_lags - 1
    if error_power.shape[1] < span + 1:
        raise PipelineError(f"EHS needs {span + 1} spectral bins, got {error_power.shape[1]}")
    power = error_power[:, 1:span + 1]
    floor = power.max(axis=1, keepdims=True) * 1e-10 + 1e-300
    d = np.log(np.maximum(power, floor))
    d = d - d.mean(axis=1, keepdims=True)

    segments = sliding_window_view(d, n_lags, axis=1)
    corr = np.einsum("nij,nj->ni", segments, d[:, :n_lags])
    energy = np.einsum("nij,nij->ni", segments, segments)
    norm = energy[:, :1] * energy
    with np.errstate(invalid="ignore", divide="ignore"):
        corr_n = np.where(norm > 0, corr / np.sqrt(np.where(norm > 0, norm, 1.0)), 0.0)

    hann = windows.hann(n_lags, sym=True)
    weighted = hann * (corr_n - corr_n.mean(axis=1, keepdims=True))
    return np.abs(np.fft.rfft(weighted, axis=1)) ** 2 / (hann.sum() / 2.0) ** 2


def ehs_frames(error_power: np.ndarray, n_lags: int) -> np.ndarray:
    """Per-frame error harmonic structure of (frames x bins) error power spectra"""
    c2 = ehs_lag_spectrum(error_power, n_lags)
    heights = np.zeros(c2.shape[0])
    for n, row in enumerate(c2):
        peaks, _ = find_peaks(row)
        if peaks.size:
            heights[n] = row[peaks].max()
    return heights


def mov_ehs(ref_spec: SpectrumSequence, sut_spec: SpectrumSequence, max_freq: float = 9000.0,
            layout: Optional[BandLayout] = None) -> EhsResult:
    """EHS scalar (error-energy weighted over frames) and its band-resolved series"""
    error = sut_spec.difference(ref_spec)
    if error.n_frames == 0:
        raise InsufficientDataError("EHS of an empty sequence")
    power = error.power
    n_lags = ehs_lengths(error.plan.frame_size, error.sample_rate, max_freq)
    frame_values = ehs_frames(power, n_lags)

    weights = power.sum(axis=1)
    total = weights.sum()
    value = float(np.dot(weights, frame_values) / total) if total > 0 else 0.0

    if layout is None:
        settings = EarModelSettings(frame_size=error.plan.frame_size, hop=error.plan.hop)
        layout = get_ear_model(settings, error.sample_rate).layout
    band_energy = layout.group(power)
    band_total = band_energy.sum(axis=1, keepdims=True)
    share = np.divide(band_energy, band_total, out=np.zeros_like(band_energy), where=band_total > 0)
    return EhsResult(value=value, frame_values=frame_values, band_series=frame_values[:, None] * share)
