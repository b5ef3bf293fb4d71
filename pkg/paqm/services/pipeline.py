"""
End-to-end item analysis: alignment, ear model, distortion metrics and
cognitive effect metrics for REF/SUT pairs, single or batched.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from joblib import Parallel, delayed

from paqm import config
from paqm.core.audio_io import AlignedPair, AudioSignal, load_audio, prepare_pair
from paqm.core.ear_model import EarModel, ExcitationSequence, get_ear_model
from paqm.core.exceptions import ConfigError, InsufficientDataError, PaqmError
from paqm.database.schemas import AlignmentInfo, CompareReport, DbManifest, ItemFeatures, ManifestRow, \
    SalienceMappingModel
from paqm.services.cognitive_effects import CemSeries, ImpsConstants, compute_cems, imps_legacy
from paqm.services.distortion_metrics import (
    LoudnessConstants,
    MovRecord,
    PartialLoudnessSeries,
    masking_offset_db,
    mov_ehs,
    mov_rms_noise_loud,
    mov_segmental_nmr,
    partial_loudness,
    settling_frames,
)
from paqm.services.salience_mapping import predict_baq
from paqm.settings import PipelineConfig

logger = logging.getLogger(__name__)


@dataclass
class ItemAnalysis:
    pair: AlignedPair
    ref_excitation: ExcitationSequence
    sut_excitation: ExcitationSequence
    loudness: PartialLoudnessSeries
    movs: MovRecord
    cems: CemSeries
    imps: Optional[np.ndarray]
    skip_frames: int

    @property
    def n_frames(self) -> int:
        return self.ref_excitation.n_frames

    @property
    def band_centers(self) -> np.ndarray:
        return self.ref_excitation.band_centers


def analyze_signals(ref: AudioSignal, sut: AudioSignal, cfg: Optional[PipelineConfig] = None) -> ItemAnalysis:
    cfg = cfg or PipelineConfig()
    alignment = cfg.alignment
    pair = prepare_pair(
        ref,
        sut,
        max_lag=alignment.max_lag,
        align_lag=alignment.align_lag,
        match_gain=alignment.match_gain,
        min_correlation=alignment.min_correlation,
        max_duration_mismatch=alignment.max_duration_mismatch,
    )

    ear: EarModel = get_ear_model(cfg.ear, pair.ref.sample_rate)
    ref_spec = ear.compute_spectra(pair.ref)
    sut_spec = ear.compute_spectra(pair.sut)
    if ref_spec.n_frames < 2:
        raise InsufficientDataError(f"Aligned pair yields {ref_spec.n_frames} frame(s), at least 2 are needed")
    ref_exc = ear.compute_excitation(ref_spec)
    sut_exc = ear.compute_excitation(sut_spec)
    ref_mod = ear.compute_modulation_weights(ref_exc)
    sut_mod = ear.compute_modulation_weights(sut_exc)

    consts = LoudnessConstants.from_settings(cfg.loudness, ear.layout.centers_hz)
    loudness = partial_loudness(ref_exc, sut_exc, ref_mod, sut_mod, consts)
    settling = cfg.metrics.settling_interval
    rms_noise_loud = mov_rms_noise_loud(loudness, settling)

    offset = masking_offset_db(ear.layout.centers_bark, ear.layout.dz, cfg.metrics)
    segmental_nmr = mov_segmental_nmr(ref_exc, ear.error_excitation(ref_spec, sut_spec), offset)
    ehs = mov_ehs(ref_spec, sut_spec, cfg.metrics.ehs_max_freq, ear.layout)

    skip = settling_frames(settling, ref_exc.frame_duration)
    cems = compute_cems(ref_exc, sut_exc, loudness.beta, cfg.cem, skip_frames=skip)

    imps, imps_noise_loud = None, None
    if cfg.metrics.include_imps_dm:
        imps = imps_legacy(cems.ps, cems.pdev, loudness, ImpsConstants.from_settings(cfg.cem))
        imps_noise_loud = mov_rms_noise_loud(imps, settling, ref_exc.frame_duration)

    movs = MovRecord(
        rms_noise_loud=rms_noise_loud,
        segmental_nmr=segmental_nmr,
        ehs=ehs.value,
        imps_noise_loud=imps_noise_loud,
        series={"nprime": loudness.values, "ehs": ehs.band_series},
    )
    logger.debug(f"Item analysed: {ref_exc.n_frames} frames, MOVs {movs.scalars()}, CEMs {cems.item_summary}")
    return ItemAnalysis(pair, ref_exc, sut_exc, loudness, movs, cems, imps, skip)


def analyze_pair(ref_path: Union[str, Path], sut_path: Union[str, Path],
                 cfg: Optional[PipelineConfig] = None) -> ItemAnalysis:
    return analyze_signals(load_audio(ref_path), load_audio(sut_path), cfg)


def _analyze_row(row: ManifestRow, cfg: PipelineConfig) -> ItemFeatures:
    try:
        analysis = analyze_pair(row.ref_path, row.sut_path, cfg)
    except PaqmError as e:
        raise type(e)(f"Item {row.item_id} / {row.condition}: {e}") from e
    return ItemFeatures(
        item_id=row.item_id,
        condition=row.condition,
        movs=analysis.movs.scalars(),
        cems=analysis.cems.item_summary,
        subjective_score=row.mushra_mean,
    )


def analyze_manifest(manifest: DbManifest, cfg: Optional[PipelineConfig] = None,
                     jobs: Optional[int] = None) -> List[ItemFeatures]:
    """Features for every manifest row, in manifest order"""
    cfg = cfg or PipelineConfig()
    n_jobs = jobs if jobs else -1
    logger.info(f"Analysing {len(manifest)} items with n_jobs={n_jobs}")
    return Parallel(n_jobs=n_jobs)(delayed(_analyze_row)(row, cfg) for row in manifest.rows)


def build_compare_report(analysis: ItemAnalysis, cfg: PipelineConfig,
                         model: Optional[SalienceMappingModel] = None,
                         ref_path: Optional[str] = None, sut_path: Optional[str] = None) -> CompareReport:
    movs = analysis.movs.scalars()
    baq = predict_baq(model, movs, analysis.cems.item_summary) if model is not None else None
    metadata = cfg.echo()
    if model is not None:
        metadata["model"] = {"variant": model.variant, "gates": [g.model_dump() for g in model.gates]}
    return CompareReport(
        ref_path=ref_path,
        sut_path=sut_path,
        alignment=AlignmentInfo(
            lag_samples=analysis.pair.lag_samples,
            gain_applied_db=analysis.pair.gain_applied_db,
            sample_rate=analysis.pair.ref.sample_rate,
            n_frames=analysis.n_frames,
        ),
        movs=movs,
        cems=analysis.cems.item_summary,
        baq=baq,
        metadata=metadata,
    )


def heatmap_matrix(analysis: ItemAnalysis, which: str) -> np.ndarray:
    """Bands x frames matrix for a time/frequency plot, lowest band first"""
    series = {
        "ehs": lambda: analysis.movs.series["ehs"],
        "pdev": lambda: analysis.cems.pdev_band,
        "bvar": lambda: analysis.cems.bvar_band,
        "ps": lambda: analysis.cems.ps,
        "nprime": lambda: analysis.loudness.values,
    }
    if which not in series:
        raise ConfigError(f"Unknown heatmap metric {which!r}; choose from {', '.join(config.HEATMAP_METRICS)}")
    return np.ascontiguousarray(series[which]().T)
