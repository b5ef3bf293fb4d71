"""
Synthetic signals and listening-test databases with known ground truth.

Scores come from a forward salience model with a suppressing beta-VAR gate on
EHS plus Gaussian rating noise, so interaction analysis and training can be
checked against the generating parameters.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.interpolate import interp1d

from paqm import config
from paqm.core.audio_io import AudioSignal, write_audio
from paqm.core.statistics import pearson_with_ci
from paqm.database.manifest import write_manifest
from paqm.database.schemas import (
    BasisFunction,
    CemStats,
    DbManifest,
    GateWeight,
    ItemFeatures,
    ManifestRow,
    SalienceMappingModel,
)
from paqm.services.salience_mapping import predict_matrix
from paqm.settings import PipelineConfig

logger = logging.getLogger(__name__)

DEFAULT_DM_WEIGHTS = {
    config.DM_RMS_NOISE_LOUD: 10.0,
    config.DM_SEGMENTAL_NMR: 10.0,
    config.DM_EHS: 40.0,
}

# Sampling ranges of the feature-level generator
DM_RANGES = {
    config.DM_RMS_NOISE_LOUD: (0.05, 2.0),
    config.DM_SEGMENTAL_NMR: (-20.0, 5.0),
    config.DM_EHS: (0.05, 0.6),
}
CEM_RANGES = {
    config.CEM_PS: (0.9, 1.5),
    config.CEM_PDEV: (0.0, 50.0),
    config.CEM_BVAR: (0.0, 0.2),
}


def _time(duration: float, sample_rate: int) -> np.ndarray:
    return np.arange(int(round(duration * sample_rate))) / sample_rate


def harmonic_tone(f0: float = 375.0, duration: float = 2.0, sample_rate: int = 48000,
                  max_freq: float = 16000.0, amplitude: float = 0.3, rolloff: float = 0.5,
                  seed: int = 0) -> AudioSignal:
    """Harmonic complex with random phases and a 1/h**rolloff amplitude slope"""
    rng = np.random.default_rng(seed)
    t = _time(duration, sample_rate)
    harmonics = np.arange(1, int(max_freq // f0) + 1)
    weights = harmonics ** -rolloff
    phases = rng.uniform(0, 2 * np.pi, harmonics.size)
    x = (weights[:, None] * np.sin(2 * np.pi * f0 * harmonics[:, None] * t + phases[:, None])).sum(axis=0)
    return AudioSignal(amplitude * x / np.max(np.abs(x)), sample_rate)


def _slow_modulation(rng: np.random.Generator, n_samples: int, sample_rate: int, rate: float) -> np.ndarray:
    """Zero-mean random modulation, linearly interpolated from `rate` Hz control points"""
    n_points = max(2, int(np.ceil(n_samples / sample_rate * rate)) + 2)
    control = rng.uniform(-1.0, 1.0, n_points)
    positions = np.arange(n_points) * sample_rate / rate
    return interp1d(positions, control)(np.arange(n_samples))


def bandwidth_extension_pair(f0: float = 375.0, duration: float = 2.0, sample_rate: int = 48000,
                             cutoff: float = 3000.0, depth: float = 0.3, rate: float = 20.0,
                             max_freq: float = 16000.0, seed: int = 0) -> Tuple[AudioSignal, AudioSignal]:
    """Tonal REF; SUT with small random level modulations on the harmonics above cutoff"""
    rng = np.random.default_rng(seed)
    t = _time(duration, sample_rate)
    harmonics = np.arange(1, int(max_freq // f0) + 1)
    weights = harmonics ** -0.5
    phases = rng.uniform(0, 2 * np.pi, harmonics.size)
    partials = weights[:, None] * np.sin(2 * np.pi * f0 * harmonics[:, None] * t + phases[:, None])

    gains = np.ones_like(partials)
    for i, h in enumerate(harmonics):
        if h * f0 >= cutoff:
            gains[i] += depth * _slow_modulation(rng, t.size, sample_rate, rate)

    scale = 0.3 / np.max(np.abs(partials.sum(axis=0)))
    ref = scale * partials.sum(axis=0)
    sut = np.clip(scale * (gains * partials).sum(axis=0), -1.0, 1.0)
    return AudioSignal(ref, sample_rate), AudioSignal(sut, sample_rate)


def white_noise_pair(ref: AudioSignal, error_energy: float, seed: int = 0) -> Tuple[AudioSignal, AudioSignal]:
    """REF plus white noise with the given total error energy"""
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(len(ref))
    noise *= np.sqrt(error_energy / np.sum(noise ** 2))
    return ref, AudioSignal(np.clip(ref.samples + noise, -1.0, 1.0), ref.sample_rate)


def am_tone(carrier: float = 1000.0, modulation: float = 4.0, depth: float = 0.9, duration: float = 2.0,
            sample_rate: int = 48000, amplitude: float = 0.3) -> AudioSignal:
    t = _time(duration, sample_rate)
    envelope = 1.0 + depth * np.sin(2 * np.pi * modulation * t)
    return AudioSignal(amplitude / (1.0 + depth) * envelope * np.sin(2 * np.pi * carrier * t), sample_rate)


def pure_tone(frequency: float = 1000.0, duration: float = 2.0, sample_rate: int = 48000,
              amplitude: float = 0.3) -> AudioSignal:
    return AudioSignal(amplitude * np.sin(2 * np.pi * frequency * _time(duration, sample_rate)), sample_rate)


# ---------------------------------------------------------------- forward model

def forward_model(dm_ranges: Dict[str, Tuple[float, float]], cem_stats: Dict[str, CemStats],
                  gate_weight: float = -0.35, weights: Optional[Dict[str, float]] = None,
                  g_max: float = 2.0) -> SalienceMappingModel:
    """Generating model: linear bases over each DM range, one suppressing beta-VAR gate on EHS"""
    weights = weights or DEFAULT_DM_WEIGHTS
    bases = {}
    for dm, (low, high) in dm_ranges.items():
        anchor = min(config.NO_DISTORTION_VALUES[dm], low - 1.0)
        bases[dm] = BasisFunction(knots=[anchor, low, high], values=[0.0, weights[dm] / 3.0, weights[dm]])
    gates = []
    if gate_weight != 0.0:
        gates.append(GateWeight(dm=config.DM_EHS, cem=config.CEM_BVAR, sign=-1 if gate_weight < 0 else 1,
                                weight=gate_weight))
    return SalienceMappingModel(
        dm_names=list(dm_ranges),
        bases=bases,
        gates=gates,
        cem_stats={config.CEM_BVAR: cem_stats[config.CEM_BVAR]},
        g_max=g_max,
        metadata={"synthetic": True},
    )


@dataclass
class SyntheticDb:
    items: List[ItemFeatures]
    model: SalienceMappingModel
    gate: np.ndarray


def _scores(model: SalienceMappingModel, movs: np.ndarray, cems: Dict[str, np.ndarray],
            rng: np.random.Generator, noise_sigma: float) -> np.ndarray:
    clean = predict_matrix(model, movs, cems)
    return np.clip(clean + rng.normal(0.0, noise_sigma, clean.size), 0.0, 100.0) if noise_sigma > 0 else clean


def synthetic_feature_db(n_items: int = 200, seed: int = 0, gate_weight: float = -0.35,
                         noise_sigma: float = 3.0, weights: Optional[Dict[str, float]] = None) -> SyntheticDb:
    """Feature-level listening test drawn from the forward model"""
    rng = np.random.default_rng(seed)
    dm_names = list(config.DM_NAMES)
    movs = np.column_stack([rng.uniform(*DM_RANGES[dm], n_items) for dm in dm_names])
    cems = {cem: rng.uniform(*CEM_RANGES[cem], n_items) for cem in config.CEM_NAMES}
    stats = {cem: CemStats(mean=float(v.mean()), std=float(v.std()) or 1.0) for cem, v in cems.items()}

    model = forward_model({dm: DM_RANGES[dm] for dm in dm_names}, stats, gate_weight, weights)
    scores = _scores(model, movs, cems, rng, noise_sigma)
    bvar_z = (cems[config.CEM_BVAR] - stats[config.CEM_BVAR].mean) / stats[config.CEM_BVAR].std
    gate = np.clip(1.0 + gate_weight * bvar_z, 0.0, model.g_max)

    items = [
        ItemFeatures(
            item_id=f"syn{i:04d}",
            condition=f"cond{i % 8}",
            movs={dm: float(movs[i, d]) for d, dm in enumerate(dm_names)},
            cems={cem: float(values[i]) for cem, values in cems.items()},
            subjective_score=float(scores[i]),
        )
        for i in range(n_items)
    ]
    return SyntheticDb(items=items, model=model, gate=gate)


# ---------------------------------------------------------------- audio database

def _render_item(index: int, seed: int, sample_rate: int, duration: float) -> Tuple[str, AudioSignal, AudioSignal]:
    rng = np.random.default_rng([seed, index])
    f0 = float(rng.uniform(150.0, 500.0))
    kind = ("noise", "bwe", "mixed")[index % 3]
    ref, sut = bandwidth_extension_pair(
        f0=f0,
        duration=duration,
        sample_rate=sample_rate,
        cutoff=float(rng.uniform(2500.0, 6000.0)),
        depth=float(rng.uniform(0.05, 0.5)) if kind != "noise" else 0.0,
        seed=int(rng.integers(1 << 31)),
    )
    if kind != "bwe":
        noise_db = rng.uniform(-60.0, -25.0)
        noise = rng.standard_normal(len(ref)) * 10.0 ** (noise_db / 20.0)
        sut = AudioSignal(np.clip(sut.samples + noise, -1.0, 1.0), sample_rate)
    return kind, ref, sut


def _analyze_rendered(ref_path: Path, sut_path: Path, cfg: PipelineConfig):
    from paqm.services.pipeline import analyze_pair

    analysis = analyze_pair(ref_path, sut_path, cfg)
    return analysis.movs.scalars(), analysis.cems.item_summary


def synthesize_db(out_dir: Union[str, Path], n_items: int = 40, seed: int = 0, sample_rate: int = 48000,
                  duration: float = 2.0, gate_weight: float = -0.35, noise_sigma: float = 3.0,
                  cfg: Optional[PipelineConfig] = None, jobs: Optional[int] = None) -> Path:
    """Write REF/SUT WAV pairs and a manifest whose scores follow the forward model"""
    cfg = cfg or PipelineConfig()
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for index in range(n_items):
        kind, ref, sut = _render_item(index, seed, sample_rate, duration)
        item_id = f"item{index:03d}"
        ref_path = write_audio(audio_dir / f"{item_id}_ref.wav", ref)
        sut_path = write_audio(audio_dir / f"{item_id}_{kind}.wav", sut)
        rows.append((item_id, kind, ref_path, sut_path))

    features = Parallel(n_jobs=jobs or -1)(delayed(_analyze_rendered)(r, s, cfg) for _, _, r, s in rows)
    dm_names = list(config.DM_NAMES)
    movs = np.array([[f[0][dm] for dm in dm_names] for f in features])
    cems = {cem: np.array([f[1][cem] for f in features]) for cem in config.CEM_NAMES}
    stats = {cem: CemStats(mean=float(v.mean()), std=float(v.std()) or 1.0) for cem, v in cems.items()}
    ranges = {dm: (float(movs[:, d].min()), float(movs[:, d].max()) + 1e-9) for d, dm in enumerate(dm_names)}

    model = forward_model(ranges, stats, gate_weight)
    scores = _scores(model, movs, cems, np.random.default_rng(seed), noise_sigma)
    if n_items >= 4 and np.ptp(scores) > 0 and np.ptp(cems[config.CEM_BVAR]) > 0:
        r, _ = pearson_with_ci(cems[config.CEM_BVAR], scores)
        logger.info(f"Synthetic DB: score vs beta-VAR correlation {r:.3f}")

    manifest = DbManifest(rows=[
        ManifestRow(item_id=item_id, condition=kind, ref_path=str(ref_path), sut_path=str(sut_path),
                    mushra_mean=round(float(score), 4))
        for (item_id, kind, ref_path, sut_path), score in zip(rows, scores)
    ])
    manifest_path = write_manifest(manifest, out_dir / "manifest.csv", relative_to=out_dir)
    logger.info(f"Wrote {n_items} synthetic items to {manifest_path}")
    return manifest_path
