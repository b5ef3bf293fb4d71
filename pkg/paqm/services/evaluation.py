"""
Validation statistics: cubic pre-mapping of objective scores onto the MUSHRA
scale, Pearson R with Fisher-z confidence intervals and per-database reports.
"""

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize

from paqm.core.exceptions import DegenerateDataError, InsufficientDataError
from paqm.core.statistics import pearson_with_ci
from paqm.database.schemas import (
    ConditionScore,
    DbManifest,
    EvaluationReport,
    ItemFeatures,
    ItemScore,
    SalienceMappingModel,
    SystemEvaluation,
)
from paqm.services.salience_mapping import predict_items
from paqm.settings import PipelineConfig

logger = logging.getLogger(__name__)

__all__ = [
    "fit_cubic_premap",
    "apply_premap",
    "pearson_with_ci",
    "evaluate_features",
    "evaluate_db",
]

MIN_PREMAP_POINTS = 4
_GRID_POINTS = 200


def apply_premap(coeffs: Sequence[float], objective) -> np.ndarray:
    return P.polyval(np.asarray(objective, dtype=float), coeffs)


def _correlation(a: np.ndarray, b: np.ndarray) -> float:
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def fit_cubic_premap(objective, subjective, monotone: bool = True) -> np.ndarray:
    """Least-squares cubic objective -> subjective, coefficients in ascending order"""
    x = np.asarray(objective, dtype=float)
    y = np.asarray(subjective, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"Length mismatch: {x.shape} vs {y.shape}")
    if x.size < MIN_PREMAP_POINTS:
        raise InsufficientDataError(f"Cubic pre-map needs at least {MIN_PREMAP_POINTS} points, got {x.size}")
    if np.ptp(x) == 0:
        raise DegenerateDataError("constant vector: objective scores do not vary")

    # fit on [-1, 1] for conditioning, convert back at the end
    center, half = (x.max() + x.min()) / 2.0, np.ptp(x) / 2.0
    u = (x - center) / half
    vander = np.vander(u, 4, increasing=True)
    if np.linalg.matrix_rank(vander) < 4:
        raise DegenerateDataError(f"Rank-deficient pre-map: only {np.unique(x).size} distinct objective values")
    coeffs_u, *_ = np.linalg.lstsq(vander, y, rcond=None)

    if monotone:
        direction = 1.0 if _correlation(x, y) >= 0 else -1.0
        grid = np.linspace(-1.0, 1.0, _GRID_POINTS)
        slope_rows = np.column_stack([np.zeros_like(grid), np.ones_like(grid), 2 * grid, 3 * grid ** 2])
        if np.any(direction * (slope_rows @ coeffs_u) < -1e-12):
            coeffs_u = _monotone_refit(vander, y, slope_rows, direction)

    mapped = Polynomial(coeffs_u)(Polynomial([-center / half, 1.0 / half]))
    return np.pad(mapped.coef, (0, 4 - mapped.coef.size))


def _monotone_refit(vander: np.ndarray, y: np.ndarray, slope_rows: np.ndarray, direction: float) -> np.ndarray:
    """SLSQP cubic with slope sign constraints on the grid; linear fit if that is no better"""
    linear = np.zeros(4)
    linear[:2], *_ = np.linalg.lstsq(vander[:, :2], y, rcond=None)

    def sse(c):
        residual = vander @ c - y
        return residual @ residual

    result = minimize(
        sse,
        linear,
        jac=lambda c: 2.0 * vander.T @ (vander @ c - y),
        constraints=[{
            "type": "ineq",
            "fun": lambda c: direction * (slope_rows @ c),
            "jac": lambda c: direction * slope_rows,
        }],
        method="SLSQP",
        options={"maxiter": 500, "ftol": 1e-12},
    )
    candidate = result.x
    feasible = np.all(direction * (slope_rows @ candidate) >= -1e-9)
    if not (result.success and feasible) or _correlation(vander @ candidate, y) < _correlation(vander @ linear, y):
        logger.warning("Monotone cubic refit did not improve on the linear map, using linear pre-map")
        return linear
    return candidate


def evaluate_features(objective, subjective, item_ids: Sequence[str], conditions: Sequence[str],
                      system: str = "model", pool_conditions: bool = False,
                      monotone: bool = True) -> SystemEvaluation:
    """R and CI95 after cubic pre-map, with a per-condition score table"""
    frame = pd.DataFrame({
        "item_id": list(item_ids),
        "condition": list(conditions),
        "objective": np.asarray(objective, dtype=float),
        "subjective": np.asarray(subjective, dtype=float),
    })
    if len(frame) < MIN_PREMAP_POINTS:
        raise InsufficientDataError(f"Evaluation needs at least {MIN_PREMAP_POINTS} items, got {len(frame)}")

    by_condition = frame.groupby("condition", sort=False)[["objective", "subjective"]]
    fit_frame = by_condition.mean().reset_index() if pool_conditions else frame
    coeffs = fit_cubic_premap(fit_frame["objective"], fit_frame["subjective"], monotone=monotone)
    mapped_fit = apply_premap(coeffs, fit_frame["objective"])
    r, ci95 = pearson_with_ci(mapped_fit, fit_frame["subjective"])
    r_raw, _ = pearson_with_ci(fit_frame["objective"], fit_frame["subjective"])

    frame["mapped"] = apply_premap(coeffs, frame["objective"])
    pooled = frame.groupby("condition", sort=False).agg(
        n_items=("item_id", "size"),
        objective=("objective", "mean"),
        mapped=("mapped", "mean"),
        subjective=("subjective", "mean"),
    ).reset_index()

    logger.info(f"{system}: R={r:.4f} CI95=[{ci95[0]:.4f}, {ci95[1]:.4f}] over {len(fit_frame)} points")
    return SystemEvaluation(
        system=system,
        r=r,
        ci95=ci95,
        r_raw=r_raw,
        poly_coeffs=[float(c) for c in coeffs],
        n_items=len(frame),
        pooled_conditions=pool_conditions,
        conditions=[
            ConditionScore(condition=str(row.condition), n_items=int(row.n_items), objective=float(row.objective),
                           mapped=float(row.mapped), subjective=float(row.subjective))
            for row in pooled.itertuples(index=False)
        ],
        items=[
            ItemScore(item_id=str(row.item_id), condition=str(row.condition), objective=float(row.objective),
                      mapped=float(row.mapped), subjective=float(row.subjective))
            for row in frame.itertuples(index=False)
        ],
    )


def evaluate_models(features: Sequence[ItemFeatures], models: Dict[str, SalienceMappingModel],
                    pool_conditions: bool = False, monotone: bool = True) -> List[SystemEvaluation]:
    subjective = [item.subjective_score for item in features]
    ids = [item.item_id for item in features]
    conditions = [item.condition for item in features]
    return [
        evaluate_features(predict_items(model, features), subjective, ids, conditions,
                          system=name, pool_conditions=pool_conditions, monotone=monotone)
        for name, model in models.items()
    ]


def evaluate_db(manifest: DbManifest, models: Dict[str, SalienceMappingModel],
                cfg: Optional[PipelineConfig] = None, jobs: Optional[int] = None) -> EvaluationReport:
    """Run the pipeline on every manifest row and evaluate each model's BAQ against MUSHRA"""
    from paqm.services.pipeline import analyze_manifest

    cfg = cfg or PipelineConfig()
    if len(manifest) < MIN_PREMAP_POINTS:
        raise InsufficientDataError(
            f"Manifest has {len(manifest)} rows; the cubic pre-map needs at least {MIN_PREMAP_POINTS}"
        )
    features = analyze_manifest(manifest, cfg, jobs=jobs)
    systems = evaluate_models(features, models, cfg.mapping.pool_conditions, cfg.mapping.monotone_premap)
    return EvaluationReport(manifest=manifest.source, systems=systems, metadata=cfg.echo())
