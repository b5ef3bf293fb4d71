"""End-to-end behaviour on synthetic material with known ground truth."""

import time

import numpy as np
import pytest

from paqm.core.audio_io import AudioSignal
from paqm.services.evaluation import evaluate_models
from paqm.services.pipeline import analyze_signals
from paqm.services.salience_mapping import analyze_interactions, train_mapping
from paqm.services.synthetic import bandwidth_extension_pair, synthetic_feature_db, white_noise_pair
from paqm.settings import PipelineConfig


@pytest.fixture(scope="module")
def bwe_analyses():
    cfg = PipelineConfig(alignment={"align_lag": False})
    ref, sut = bandwidth_extension_pair(f0=375.0, duration=2.0, cutoff=3000.0, depth=0.3)
    error_energy = float(np.sum((sut.samples - ref.samples) ** 2))
    _, white = white_noise_pair(ref, error_energy, seed=1)
    return analyze_signals(ref, sut, cfg), analyze_signals(ref, white, cfg)


def test_bandwidth_extension_artifact_has_harmonic_error(bwe_analyses):
    artifact, white = bwe_analyses
    assert artifact.movs.ehs > white.movs.ehs


def test_bvar_localizes_high_band_artifact(bwe_analyses):
    artifact, _ = bwe_analyses
    per_band = artifact.cems.bvar_band.mean(axis=0)
    quarter = per_band.size // 4
    assert per_band[-quarter:].mean() > 2.0 * per_band[:quarter].mean()


def test_pdev_ignores_the_sut(bwe_analyses):
    artifact, white = bwe_analyses
    np.testing.assert_array_equal(artifact.cems.pdev_band, white.cems.pdev_band)


@pytest.mark.slow
def test_synthetic_gate_recovery_and_held_out_correlation():
    train_db = synthetic_feature_db(n_items=200, seed=7)
    table = analyze_interactions(train_db.items)
    gate = [s for s in table.selected if s.key == ("BVAR", "EHS")]
    assert gate and gate[0].sign == -1 and abs(gate[0].r) >= 0.6

    model = train_mapping(train_db.items, table.selected)
    assert any(g.cem == "BVAR" and g.dm == "EHS" and g.weight < 0 for g in model.gates)

    held_out = synthetic_feature_db(n_items=200, seed=8)
    evaluation = evaluate_models(held_out.items, {"salience": model})[0]
    assert evaluation.r >= 0.9


@pytest.mark.slow
def test_ten_second_pair_runtime():
    rng = np.random.default_rng(0)
    ref = AudioSignal(0.1 * rng.standard_normal(480000), 48000)
    sut = AudioSignal(ref.samples + 0.003 * rng.standard_normal(480000), 48000)
    start = time.perf_counter()
    analysis = analyze_signals(ref, sut)
    assert time.perf_counter() - start < 5.0
    assert analysis.n_frames == 467
