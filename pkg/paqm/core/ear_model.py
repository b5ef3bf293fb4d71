"""
FFT ear model: framing, outer/middle-ear weighting, Bark band grouping,
level-dependent spreading, time smearing and modulation weights.

The structure follows the FFT model of PEAQ Advanced, re-gridded to 40 equal
Bark bands between f_low and f_high. Every constant comes from
EarModelSettings so the model can be recalibrated without code changes.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import windows

from paqm.core.audio_io import AudioSignal
from paqm.core.exceptions import InsufficientDataError, PipelineError
from paqm.settings import EarModelSettings

logger = logging.getLogger(__name__)


def hz_to_bark(f):
    return 7.0 * np.arcsinh(np.asarray(f, dtype=float) / 650.0)


def bark_to_hz(z):
    return 650.0 * np.sinh(np.asarray(z, dtype=float) / 7.0)


@dataclass(frozen=True)
class FramePlan:
    frame_size: int = 2048
    hop: int = 1024
    window: str = "hann"

    def __post_init__(self):
        if self.frame_size < 2 or self.frame_size & (self.frame_size - 1):
            raise PipelineError(f"frame_size {self.frame_size} is not a power of two")
        if not 0 < self.hop <= self.frame_size:
            raise PipelineError(f"hop {self.hop} must be in (0, {self.frame_size}]")

    @classmethod
    def from_settings(cls, settings: EarModelSettings) -> "FramePlan":
        return cls(frame_size=settings.frame_size, hop=settings.hop)

    def n_frames(self, n_samples: int) -> int:
        return (n_samples - self.frame_size) // self.hop + 1


@dataclass(frozen=True)
class SpectrumSequence:
    """Ear-weighted complex spectra, one row per frame"""
    bins: np.ndarray
    sample_rate: int
    plan: FramePlan

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.bins) ** 2

    @property
    def freqs(self) -> np.ndarray:
        return np.fft.rfftfreq(self.plan.frame_size, d=1.0 / self.sample_rate)

    @property
    def frame_duration(self) -> float:
        return self.plan.hop / self.sample_rate

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]

    def difference(self, other: "SpectrumSequence") -> "SpectrumSequence":
        """Spectrum of (self - other), frame by frame"""
        if self.bins.shape != other.bins.shape:
            raise PipelineError(f"Spectra shapes differ: {self.bins.shape} vs {other.bins.shape}")
        return SpectrumSequence(self.bins - other.bins, self.sample_rate, self.plan)


@dataclass(frozen=True)
class BandLayout:
    """Equal-Bark band grid and the DFT-bin to band overlap matrix"""
    edges_hz: np.ndarray
    centers_hz: np.ndarray
    centers_bark: np.ndarray
    dz: float
    overlap: np.ndarray

    @property
    def n_bands(self) -> int:
        return self.centers_hz.size

    @classmethod
    def build(cls, sample_rate: int, frame_size: int, settings: EarModelSettings) -> "BandLayout":
        f_high = min(settings.f_high, sample_rate / 2.0)
        z_edges = np.linspace(hz_to_bark(settings.f_low), hz_to_bark(f_high), settings.n_bands + 1)
        dz = float(z_edges[1] - z_edges[0])
        edges = bark_to_hz(z_edges)
        z_centers = 0.5 * (z_edges[:-1] + z_edges[1:])

        df = sample_rate / frame_size
        k = np.arange(frame_size // 2 + 1)[:, None]
        lo = np.maximum(edges[None, :-1], (k - 0.5) * df)
        hi = np.minimum(edges[None, 1:], (k + 0.5) * df)
        overlap = np.maximum(hi - lo, 0.0) / df
        return cls(edges, bark_to_hz(z_centers), z_centers, dz, overlap)

    def group(self, power: np.ndarray) -> np.ndarray:
        """Sum DFT-bin energies into bands (fractional bin overlap)"""
        return power @ self.overlap


@dataclass(frozen=True)
class ExcitationSequence:
    """Excitation energies E(n, k), frames x bands"""
    values: np.ndarray
    band_centers: np.ndarray
    frame_duration: float
    noise_floor: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise PipelineError("Excitation must be a frames x bands matrix")
        if values.shape[1] != np.asarray(self.band_centers).size:
            raise PipelineError("Band count does not match band_centers")
        object.__setattr__(self, "values", values)
        if self.noise_floor is None:
            object.__setattr__(self, "noise_floor", np.zeros(values.shape[1]))

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ModulationWeights:
    """Masking-threshold modulation weights s(n, k) > 0"""
    values: np.ndarray
    modulation: np.ndarray


class EarModel:
    """Ear model bound to one sample rate and one set of calibration constants"""

    def __init__(self, settings: EarModelSettings, sample_rate: int):
        self.settings = settings
        self.sample_rate = sample_rate
        self.plan = FramePlan.from_settings(settings)
        self.layout = BandLayout.build(sample_rate, self.plan.frame_size, settings)

        self.window = self._scaled_window()
        freqs = np.fft.rfftfreq(self.plan.frame_size, d=1.0 / sample_rate)
        self.ear_weight = np.sqrt(self._outer_middle_ear(freqs))
        self.internal_noise = 10.0 ** (
            settings.internal_noise_db * (self.layout.centers_hz / 1000.0) ** -0.8 / 10.0
        )

        dz = self.layout.dz
        self._a_lower = 10.0 ** (settings.spread_lower_db_per_bark * dz / 10.0)
        self._a_upper = 10.0 ** (
            -(settings.spread_upper_db_per_bark + settings.spread_upper_freq_term / self.layout.centers_hz)
            * dz / 10.0
        )
        self._spread_norm = 1.0
        self._spread_norm = self._spread(np.ones((1, self.layout.n_bands)))[0]

        hop_duration = self.plan.hop / sample_rate
        self._smear_alpha = self._time_constants(settings.smear_tau_100, settings.smear_tau_min, hop_duration)

        logger.debug(
            f"Ear model at {sample_rate} Hz: {self.layout.n_bands} bands, dz={dz:.3f} Bark, "
            f"frame={self.plan.frame_size}/{self.plan.hop}, s_min={settings.s_min}, c_mod={settings.c_mod}"
        )

    def _scaled_window(self) -> np.ndarray:
        """Hann window scaled so a full-scale sine at the reference frequency reads listening_level_db"""
        n = self.plan.frame_size
        span = n - 1
        fc_norm = self.settings.level_reference_hz / self.sample_rate
        df = 1.0 / n
        k = np.floor(fc_norm / df)
        offset = min((k + 1) * df - fc_norm, fc_norm - k * df) * span
        peak_factor = np.sin(np.pi * offset) / (np.pi * offset * (1.0 - offset ** 2))
        gain = 10.0 ** (self.settings.listening_level_db / 20.0) / (peak_factor * span / 4.0)
        return gain * windows.hann(n, sym=True)

    @staticmethod
    def _outer_middle_ear(freqs: np.ndarray) -> np.ndarray:
        """Power weighting of the outer and middle ear, zero at DC"""
        weight = np.zeros_like(freqs)
        f_khz = freqs[1:] / 1000.0
        a_db = -2.184 * f_khz ** -0.8 + 6.5 * np.exp(-0.6 * (f_khz - 3.3) ** 2) - 0.001 * f_khz ** 3.6
        weight[1:] = 10.0 ** (a_db / 10.0)
        return weight

    def _time_constants(self, tau_100: float, tau_min: float, hop_duration: float,
                        centers_hz: Optional[np.ndarray] = None) -> np.ndarray:
        centers = self.layout.centers_hz if centers_hz is None else np.asarray(centers_hz, dtype=float)
        tau = tau_min + (100.0 / centers) * (tau_100 - tau_min)
        return np.exp(-hop_duration / tau)

    def _spread(self, energy: np.ndarray) -> np.ndarray:
        """Level-dependent triangular spreading across bands, frames x bands"""
        n_bands = self.layout.n_bands
        e = self.settings.spread_exponent
        idx = np.arange(n_bands)

        a_upper = np.minimum(
            self._a_upper[None, :] * energy ** (self.settings.spread_level_slope * self.layout.dz),
            1.0 - 1e-9,
        )
        g_lower = (1.0 - self._a_lower ** -(idx + 1.0)) / (1.0 - self._a_lower ** -1.0)
        g_upper = (1.0 - a_upper ** (n_bands - idx)[None, :]) / (1.0 - a_upper)
        contribution = (energy / (g_lower[None, :] + g_upper - 1.0)) ** e

        distance = idx[None, :] - idx[:, None]  # [source l, target i] = i - l
        lower = np.where(distance <= 0, (self._a_lower ** -e) ** (-distance), 0.0)
        spread = contribution @ lower

        above = distance > 0
        powers = (a_upper ** e)[:, :, None] ** np.where(above, distance, 0)[None, :, :]
        spread = spread + np.einsum("nl,nli->ni", contribution, powers * above)

        return spread ** (1.0 / e) / self._spread_norm

    def compute_spectra(self, audio: AudioSignal) -> SpectrumSequence:
        if audio.sample_rate != self.sample_rate:
            raise PipelineError(f"Ear model built for {self.sample_rate} Hz, got {audio.sample_rate} Hz")
        if len(audio) < self.plan.frame_size:
            raise InsufficientDataError(
                f"Signal of {len(audio)} samples is shorter than one frame ({self.plan.frame_size})"
            )
        frames = sliding_window_view(audio.samples, self.plan.frame_size)[:: self.plan.hop]
        bins = np.fft.rfft(frames * self.window, axis=1) * self.ear_weight
        return SpectrumSequence(bins=bins, sample_rate=self.sample_rate, plan=self.plan)

    def group_bands(self, spectra: SpectrumSequence) -> np.ndarray:
        return self.layout.group(spectra.power)

    def compute_excitation(self, spectra: SpectrumSequence) -> ExcitationSequence:
        pitch = self.group_bands(spectra)
        spread = self._spread(pitch)

        smeared = np.empty_like(spread)
        state = np.zeros(self.layout.n_bands)
        alpha = self._smear_alpha
        for n in range(spread.shape[0]):
            state = alpha * state + (1.0 - alpha) * spread[n]
            smeared[n] = np.maximum(state, spread[n])

        return ExcitationSequence(
            values=smeared + self.internal_noise,
            band_centers=self.layout.centers_hz,
            frame_duration=spectra.frame_duration,
            noise_floor=self.internal_noise,
        )

    def error_excitation(self, ref_spectra: SpectrumSequence, sut_spectra: SpectrumSequence) -> ExcitationSequence:
        """Band energies of the SUT-minus-REF spectrum, without spreading or smearing"""
        error = sut_spectra.difference(ref_spectra)
        return ExcitationSequence(
            values=self.group_bands(error),
            band_centers=self.layout.centers_hz,
            frame_duration=error.frame_duration,
        )

    def compute_modulation_weights(self, excitation: ExcitationSequence) -> ModulationWeights:
        if excitation.n_frames < 2:
            raise InsufficientDataError("Modulation weights need at least 2 frames")
        settings = self.settings
        compressed = excitation.values ** settings.mod_compression
        if excitation.frame_duration <= 0:
            raise PipelineError("Modulation weights need a positive frame duration")
        frame_rate = 1.0 / excitation.frame_duration
        # time constants follow the excitation's own frame rate and band grid
        alpha = self._time_constants(settings.mod_tau_100, settings.mod_tau_min, excitation.frame_duration,
                                     excitation.band_centers)

        modulation = np.empty_like(compressed)
        derivative = np.zeros(excitation.n_bands)
        average = compressed[0].copy()
        previous = compressed[0]
        for n in range(compressed.shape[0]):
            derivative = alpha * derivative + (1.0 - alpha) * frame_rate * np.abs(compressed[n] - previous)
            average = alpha * average + (1.0 - alpha) * compressed[n]
            previous = compressed[n]
            modulation[n] = derivative / (1.0 + average / settings.mod_compression)

        weights = settings.s_min * (1.0 + settings.c_mod * modulation)
        return ModulationWeights(values=weights, modulation=modulation)


@lru_cache(maxsize=16)
def _cached_model(settings_json: str, sample_rate: int) -> EarModel:
    return EarModel(EarModelSettings.model_validate_json(settings_json), sample_rate)


def get_ear_model(settings: Optional[EarModelSettings], sample_rate: int) -> EarModel:
    settings = settings or EarModelSettings()
    return _cached_model(settings.model_dump_json(), sample_rate)


def compute_spectra(audio: AudioSignal, plan: Optional[FramePlan] = None,
                    settings: Optional[EarModelSettings] = None) -> SpectrumSequence:
    """Hann-windowed, ear-weighted FFT spectra of a signal"""
    settings = settings or EarModelSettings()
    if plan is not None:
        settings = settings.model_copy(update={"frame_size": plan.frame_size, "hop": plan.hop})
    return get_ear_model(settings, audio.sample_rate).compute_spectra(audio)


def compute_excitation(spectra: SpectrumSequence, settings: Optional[EarModelSettings] = None) -> ExcitationSequence:
    settings = (settings or EarModelSettings()).model_copy(
        update={"frame_size": spectra.plan.frame_size, "hop": spectra.plan.hop}
    )
    return get_ear_model(settings, spectra.sample_rate).compute_excitation(spectra)


def compute_modulation_weights(excitation: ExcitationSequence,
                               settings: Optional[EarModelSettings] = None) -> ModulationWeights:
    """Modulation weights s(n, k); time constants come from the excitation's frame duration"""
    settings = settings or EarModelSettings()
    sample_rate = int(round(settings.hop / excitation.frame_duration)) if excitation.frame_duration > 0 else 48000
    return get_ear_model(settings, sample_rate).compute_modulation_weights(excitation)
