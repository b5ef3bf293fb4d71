"""
Loading, validation and alignment of REF/SUT audio pairs.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
import soundfile as sf
from scipy import signal as sps

from paqm import config
from paqm.core.exceptions import AlignmentError, AudioFormatError, AudioIOError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class AudioSignal:
    """Mono signal with amplitudes in [-1, 1]"""
    samples: np.ndarray
    sample_rate: int
    channel_count: int = 1

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1:
            raise AudioFormatError("AudioSignal holds a single (mono) channel")
        if self.sample_rate not in config.SUPPORTED_SAMPLE_RATES:
            raise AudioFormatError(
                f"Unsupported sample rate {self.sample_rate} Hz; "
                f"expected one of {config.SUPPORTED_SAMPLE_RATES} (no resampling is done)"
            )
        if not np.all(np.isfinite(samples)):
            raise AudioFormatError("Audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class AlignedPair:
    """REF and SUT after lag and level alignment, equal length and rate"""
    ref: AudioSignal
    sut: AudioSignal
    lag_samples: int
    gain_applied_db: float


def load_audio(path: PathLike) -> AudioSignal:
    """Read a PCM/float WAV file into a mono signal at its original rate"""
    path = Path(path)
    if not path.is_file():
        raise AudioIOError(f"Audio file not found: {path}")
    try:
        info = sf.info(str(path))
    except (RuntimeError, OSError) as e:
        raise AudioIOError(f"Unreadable audio file {path}: {e}") from e

    if info.format != "WAV":
        raise AudioFormatError(f"{path}: only RIFF WAV is supported, got {info.format}")
    if info.subtype not in config.SUPPORTED_WAV_SUBTYPES:
        raise AudioFormatError(f"{path}: unsupported codec/bit depth {info.subtype}")
    if info.channels not in (1, 2):
        raise AudioFormatError(f"{path}: {info.channels} channels, only mono or stereo supported")
    if info.frames == 0:
        raise AudioFormatError(f"{path}: zero-length audio")

    try:
        data, sample_rate = sf.read(str(path), dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise AudioIOError(f"Failed reading {path}: {e}") from e

    mono = data.mean(axis=1)
    peak = np.max(np.abs(mono))
    if peak > 1.0:
        logger.warning(f"{path}: peak {peak:.3f} exceeds full scale, clipping to [-1, 1]")
        mono = np.clip(mono, -1.0, 1.0)
    return AudioSignal(samples=mono, sample_rate=int(sample_rate), channel_count=info.channels)


def write_audio(path: PathLike, audio: AudioSignal, subtype: str = "PCM_16") -> Path:
    """Write a mono WAV; 16-bit output round-trips load_audio bit-exactly"""
    path = Path(path)
    if subtype == "PCM_16":
        data = np.clip(np.round(audio.samples * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = audio.samples
    sf.write(str(path), data, audio.sample_rate, subtype=subtype, format="WAV")
    return path


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x ** 2)))


def estimate_lag(ref: np.ndarray, sut: np.ndarray, max_lag: int, min_correlation: float) -> int:
    """Lag (samples) by which sut trails ref, maximizing cross-correlation within +-max_lag"""
    norm = np.linalg.norm(ref) * np.linalg.norm(sut)
    if norm == 0:
        logger.warning("Silent REF or SUT, skipping lag alignment")
        return 0
    corr = sps.correlate(sut, ref, mode="full", method="fft")
    lags = sps.correlation_lags(sut.size, ref.size, mode="full")
    allowed = np.abs(lags) <= max_lag
    corr, lags = np.abs(corr[allowed]), lags[allowed]
    best = int(np.argmax(corr))
    peak = corr[best] / norm
    if peak < min_correlation:
        raise AlignmentError(
            f"Correlation peak ambiguous (normalized peak {peak:.4f} < {min_correlation}); "
            "REF and SUT look unrelated"
        )
    return int(lags[best])


def prepare_pair(
    ref: AudioSignal,
    sut: AudioSignal,
    max_lag: int = 48000,
    align_lag: bool = True,
    match_gain: bool = False,
    min_correlation: float = 0.05,
    max_duration_mismatch: float = 1.0,
) -> AlignedPair:
    """Align SUT to REF in time and (optionally) level, truncating both to a common length"""
    if ref.sample_rate != sut.sample_rate:
        raise AlignmentError(f"Sample-rate mismatch: REF {ref.sample_rate} Hz, SUT {sut.sample_rate} Hz")
    if abs(len(ref) - len(sut)) >= max_duration_mismatch * ref.sample_rate:
        raise AlignmentError(
            f"REF and SUT durations differ by {abs(ref.duration - sut.duration):.3f} s "
            f"(limit {max_duration_mismatch} s)"
        )

    x, y = ref.samples, sut.samples
    lag = estimate_lag(x, y, max_lag, min_correlation) if align_lag else 0
    if lag >= 0:
        y = y[lag:]
    else:
        x = x[-lag:]
    length = min(x.size, y.size)
    x, y = x[:length], y[:length]

    gain_db = 0.0
    if match_gain:
        ref_rms, sut_rms = _rms(x), _rms(y)
        if ref_rms > 0 and sut_rms > 0:
            gain_db = 20.0 * np.log10(ref_rms / sut_rms)
            y = y * 10.0 ** (gain_db / 20.0)
            if np.max(np.abs(y)) > 1.0:
                logger.warning(f"Gain match of {gain_db:+.2f} dB clips the SUT")
                y = np.clip(y, -1.0, 1.0)

    logger.debug(f"Aligned pair: lag={lag} samples, gain={gain_db:+.3f} dB, length={length}")
    return AlignedPair(
        ref=AudioSignal(x, ref.sample_rate, ref.channel_count),
        sut=AudioSignal(y, sut.sample_rate, sut.channel_count),
        lag_samples=lag,
        gain_applied_db=float(gain_db),
    )
