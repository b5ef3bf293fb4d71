import numpy as np
import pytest
import soundfile as sf

from paqm.core.audio_io import AudioSignal, write_audio
from paqm.settings import PipelineConfig


@pytest.fixture
def fast_config():
    """Defaults with no settling interval and no lag search"""
    return PipelineConfig(metrics={"settling_interval": 0.0}, alignment={"align_lag": False})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tone():
    def make(frequency=1000.0, duration=1.0, sample_rate=48000, amplitude=0.3):
        t = np.arange(int(duration * sample_rate)) / sample_rate
        return AudioSignal(amplitude * np.sin(2 * np.pi * frequency * t), sample_rate)
    return make


@pytest.fixture
def wav(tmp_path):
    """Write an AudioSignal (16-bit) or a raw array (any subtype) into tmp_path"""
    def write(name, audio, sample_rate=48000, subtype="PCM_16", format="WAV"):
        path = tmp_path / name
        if isinstance(audio, AudioSignal):
            return write_audio(path, audio)
        sf.write(str(path), audio, sample_rate, subtype=subtype, format=format)
        return path
    return write
