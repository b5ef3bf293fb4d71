import numpy as np
import pytest

from paqm.core.audio_io import AudioSignal, load_audio, prepare_pair, write_audio
from paqm.core.exceptions import AlignmentError, AudioFormatError, AudioIOError


def test_load_16bit_full_scale(wav):
    path = wav("full.wav", np.array([32767, 0, -32768], dtype=np.int16))
    audio = load_audio(path)
    assert audio.sample_rate == 48000
    assert audio.samples[0] == 32767 / 32768
    assert audio.samples[2] == -1.0


def test_stereo_opposite_channels_mix_to_silence(wav, rng):
    x = rng.integers(-32767, 32767, 4800).astype(np.int16)
    path = wav("stereo.wav", np.column_stack([x, -x]))
    audio = load_audio(path)
    assert audio.channel_count == 2
    assert np.all(audio.samples == 0.0)


def test_ten_seconds_at_48k(wav):
    path = wav("long.wav", np.zeros(480000, dtype=np.int16))
    assert len(load_audio(path)) == 480000


@pytest.mark.parametrize("subtype", ["PCM_24", "PCM_32", "FLOAT"])
def test_supported_subtypes(wav, subtype):
    data = 0.25 * np.sin(np.linspace(0, 20, 1000))
    audio = load_audio(wav(f"{subtype}.wav", data, subtype=subtype))
    np.testing.assert_allclose(audio.samples, data, atol=1e-4)


def test_missing_file_is_io_error(tmp_path):
    path = tmp_path / "nope.wav"
    with pytest.raises(AudioIOError, match="nope.wav") as info:
        load_audio(path)
    assert info.value.exit_code == 3


def test_rejects_unsupported_inputs(wav):
    with pytest.raises(AudioFormatError):
        load_audio(wav("u8.wav", np.zeros(100), subtype="PCM_U8"))
    with pytest.raises(AudioFormatError):
        load_audio(wav("low_rate.wav", np.zeros(100, dtype=np.int16), sample_rate=22050))
    with pytest.raises(AudioFormatError):
        load_audio(wav("empty.wav", np.zeros(0, dtype=np.int16)))
    with pytest.raises(AudioFormatError):
        load_audio(wav("x.flac", np.zeros(100, dtype=np.int16), format="FLAC"))


def test_garbage_file_is_io_error(tmp_path):
    path = tmp_path / "garbage.wav"
    path.write_bytes(b"definitely not a riff header")
    with pytest.raises(AudioIOError):
        load_audio(path)


def test_16bit_round_trip_is_bit_exact(wav, tmp_path, rng):
    original = rng.integers(-32768, 32767, 10000).astype(np.int16)
    first = load_audio(wav("a.wav", original))
    second = load_audio(write_audio(tmp_path / "b.wav", first))
    np.testing.assert_array_equal(first.samples, second.samples)
    np.testing.assert_array_equal(np.round(second.samples * 32768).astype(np.int16), original)


def _noise(rng, n=48000, scale=0.1):
    return AudioSignal(np.clip(scale * rng.standard_normal(n), -1, 1), 48000)


def test_recovers_delay(rng):
    ref = _noise(rng)
    sut = AudioSignal(np.concatenate([np.zeros(100), ref.samples[:-100]]), 48000)
    pair = prepare_pair(ref, sut)
    assert pair.lag_samples == 100
    np.testing.assert_array_equal(pair.ref.samples, pair.sut.samples)
    assert len(pair.ref) == len(pair.sut)


def test_gain_match():
    ref = AudioSignal(0.5 * np.sin(np.linspace(0, 2000, 48000)), 48000)
    sut = AudioSignal(0.5 * ref.samples, 48000)
    pair = prepare_pair(ref, sut, match_gain=True)
    assert pair.gain_applied_db == pytest.approx(6.02, abs=0.01)


def test_noisy_copy_aligns_at_zero(rng):
    ref = _noise(rng)
    noise = 0.001 * rng.standard_normal(len(ref))  # -40 dB re the 0.1 rms reference
    sut = AudioSignal(ref.samples + noise, 48000)
    pair = prepare_pair(ref, sut, match_gain=True)
    assert pair.lag_samples == 0
    assert abs(pair.gain_applied_db) < 0.1


def test_prepare_pair_is_idempotent(rng):
    ref = _noise(rng)
    sut = AudioSignal(0.7 * np.concatenate([np.zeros(37), ref.samples[:-37]]), 48000)
    once = prepare_pair(ref, sut, match_gain=True)
    twice = prepare_pair(once.ref, once.sut, match_gain=True)
    assert twice.lag_samples == 0
    assert abs(twice.gain_applied_db) < 0.01


def test_alignment_errors(rng):
    ref = _noise(rng)
    with pytest.raises(AlignmentError):
        prepare_pair(ref, AudioSignal(ref.samples, 44100))
    with pytest.raises(AlignmentError):
        prepare_pair(ref, AudioSignal(np.zeros(len(ref) * 3), 48000))
    with pytest.raises(AlignmentError, match="unrelated"):
        prepare_pair(ref, _noise(np.random.default_rng(99)))


def test_signal_validation():
    with pytest.raises(AudioFormatError):
        AudioSignal(np.array([0.0, np.nan]), 48000)
    with pytest.raises(AudioFormatError):
        AudioSignal(np.zeros((10, 2)), 48000)
