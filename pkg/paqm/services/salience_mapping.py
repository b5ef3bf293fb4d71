"""
CEM-DM salience interaction analysis and the salience-gated BAQ mapping.

Distortion metrics (DMs) map to MUSHRA degradation through monotone
piecewise-linear basis functions. Selected cognitive effect metrics (CEMs)
gate each basis multiplicatively:

    BAQ = clamp(100 - sum_d gate_d * f_d(DM_d), 0, 100)
    gate_d = clamp(1 + sum_c lambda_dc * z(CEM_c), 0, g_max)
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import lsq_linear, nnls

from paqm import config
from paqm.core.exceptions import DegenerateDataError, InsufficientDataError, ModelError
from paqm.core.statistics import pearson_with_ci
from paqm.core.utils import finite_or_none
from paqm.database.schemas import (
    BasisFunction,
    CemStats,
    GateWeight,
    Interaction,
    InteractionCell,
    InteractionTableDocument,
    ItemFeatures,
    SalienceMappingModel,
    TrainingSummary,
)
from paqm.settings import MappingSettings

logger = logging.getLogger(__name__)

MIN_SALIENCE_ITEMS = 20
MIN_TRAINING_ITEMS = 30


# ---------------------------------------------------------------- bases

def make_knots(values: np.ndarray, n_knots: int, anchor: Optional[float] = None) -> np.ndarray:
    """Quantile knots, preceded by the no-distortion anchor when it lies below the data"""
    knots = np.unique(np.quantile(values, np.linspace(0.0, 1.0, n_knots)))
    if anchor is not None and anchor < knots[0]:
        knots = np.concatenate([[anchor], knots])
    if knots.size < 2:
        logger.warning(f"Degenerate knots at {knots[0]}: DM is constant over the training data")
        knots = np.array([knots[0], knots[0] + 1.0])
    return knots


def basis_matrix(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Ramp features phi_j(x) in [0, 1]; f(x) = phi(x) @ increments"""
    x = np.asarray(x, dtype=float)
    widths = np.diff(knots)
    return np.clip((x[:, None] - knots[None, :-1]) / widths[None, :], 0.0, 1.0)


def evaluate_basis(x, basis: BasisFunction) -> np.ndarray:
    """Piecewise-linear evaluation, clamped to the end knots"""
    return np.interp(np.asarray(x, dtype=float), basis.knots, basis.values)


def _basis_from_increments(knots: np.ndarray, increments: np.ndarray) -> BasisFunction:
    values = np.concatenate([[0.0], np.cumsum(increments)])
    return BasisFunction(knots=knots.tolist(), values=values.tolist())


def _fit_increments(blocks: List[np.ndarray], gates: np.ndarray, target: np.ndarray) -> List[np.ndarray]:
    """Non-negative least squares for all basis increments with gates fixed"""
    design = np.hstack([gates[:, [d]] * block for d, block in enumerate(blocks)])
    if design.shape[0] < design.shape[1]:
        raise DegenerateDataError(
            f"Underdetermined basis fit: {design.shape[0]} items for {design.shape[1]} knot values"
        )
    solution, _ = nnls(design, target, maxiter=50 * design.shape[1])
    splits = np.cumsum([block.shape[1] for block in blocks])[:-1]
    return np.split(solution, splits)


# ---------------------------------------------------------------- features

def feature_matrix(items: Sequence[ItemFeatures], names: Sequence[str], source: str = "movs") -> np.ndarray:
    try:
        return np.array([[getattr(item, source)[name] for name in names] for item in items], dtype=float)
    except KeyError as e:
        raise ModelError(f"Item features lack {source[:-1].upper()} {e.args[0]!r}") from e


def subjective_scores(items: Sequence[ItemFeatures]) -> np.ndarray:
    missing = [item.item_id for item in items if item.subjective_score is None]
    if missing:
        raise InsufficientDataError(f"Items without subjective score: {missing[:5]}")
    return np.array([item.subjective_score for item in items], dtype=float)


# ---------------------------------------------------------------- salience targets

def proportional_attribution(residual: np.ndarray, contributions: np.ndarray) -> np.ndarray:
    """Spread each item residual over DMs in proportion to their fitted contribution"""
    total = contributions.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        correction = 1.0 + residual[:, None] / total
    return np.broadcast_to(correction, contributions.shape).copy()


ATTRIBUTION_RULES: Dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "proportional": proportional_attribution,
}


@dataclass
class SalienceTargets:
    item_ids: List[str]
    dm_names: List[str]
    values: np.ndarray
    contributions: np.ndarray
    bases: Dict[str, BasisFunction] = field(default_factory=dict)

    def column(self, dm: str) -> np.ndarray:
        return self.values[:, self.dm_names.index(dm)]


def compute_salience_targets(items: Sequence[ItemFeatures], dm_names: Optional[Sequence[str]] = None,
                             n_knots: int = 5, min_contribution: float = 1.0,
                             attribution: str = "proportional") -> SalienceTargets:
    """Per-item, per-DM salience from an additive monotone fit of the degradation"""
    dm_names = list(dm_names or config.DM_NAMES)
    if len(items) < MIN_SALIENCE_ITEMS:
        raise InsufficientDataError(f"Salience analysis needs {MIN_SALIENCE_ITEMS} items, got {len(items)}")
    scores = subjective_scores(items)
    if np.ptp(scores) == 0:
        raise DegenerateDataError("constant vector: all subjective scores are equal")
    x = feature_matrix(items, dm_names)
    varying = int(np.sum(np.ptp(x, axis=0) > 0))
    if varying < 2:
        raise DegenerateDataError(f"Salience analysis needs 2 varying DMs, got {varying}")

    knots = [make_knots(x[:, d], n_knots, config.NO_DISTORTION_VALUES.get(dm)) for d, dm in enumerate(dm_names)]
    blocks = [basis_matrix(x[:, d], k) for d, k in enumerate(knots)]
    degradation = 100.0 - scores
    increments = _fit_increments(blocks, np.ones_like(x), degradation)

    contributions = np.column_stack([block @ inc for block, inc in zip(blocks, increments)])
    residual = degradation - contributions.sum(axis=1)
    salience = ATTRIBUTION_RULES[attribution](residual, contributions)
    salience[contributions < min_contribution] = np.nan

    logger.info(
        f"Salience targets for {len(items)} items: additive fit RMSE {np.sqrt(np.mean(residual ** 2)):.3f}, "
        f"defined cells per DM {dict(zip(dm_names, np.isfinite(salience).sum(axis=0).tolist()))}"
    )
    return SalienceTargets(
        item_ids=[item.item_id for item in items],
        dm_names=dm_names,
        values=salience,
        contributions=contributions,
        bases={dm: _basis_from_increments(k, inc) for dm, k, inc in zip(dm_names, knots, increments)},
    )


# ---------------------------------------------------------------- interaction table

@dataclass
class InteractionTable:
    cems: List[str]
    dms: List[str]
    r: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    counts: np.ndarray
    selected: List[Interaction] = field(default_factory=list)

    @classmethod
    def from_matrix(cls, cems: Sequence[str], dms: Sequence[str], r, counts=None) -> "InteractionTable":
        r = np.asarray(r, dtype=float)
        counts = np.full(r.shape, -1, dtype=int) if counts is None else np.asarray(counts, dtype=int)
        return cls(list(cems), list(dms), r, np.full(r.shape, np.nan), np.full(r.shape, np.nan), counts)

    def value(self, cem: str, dm: str) -> float:
        return float(self.r[self.cems.index(cem), self.dms.index(dm)])

    def to_document(self, threshold: float, metadata: Optional[dict] = None) -> InteractionTableDocument:
        cells = []
        for i, cem in enumerate(self.cems):
            for j, dm in enumerate(self.dms):
                defined = np.isfinite(self.r[i, j])
                cells.append(InteractionCell(
                    cem=cem,
                    dm=dm,
                    r=finite_or_none(self.r[i, j]),
                    ci95=(float(self.ci_low[i, j]), float(self.ci_high[i, j]))
                    if defined and np.isfinite(self.ci_low[i, j]) else None,
                    n=int(self.counts[i, j]),
                ))
        return InteractionTableDocument(
            threshold=threshold,
            cems=self.cems,
            dms=self.dms,
            cells=cells,
            selected=self.selected,
            metadata=metadata or {},
        )

    @classmethod
    def from_document(cls, document: InteractionTableDocument) -> "InteractionTable":
        shape = (len(document.cems), len(document.dms))
        table = cls(document.cems, document.dms, np.full(shape, np.nan), np.full(shape, np.nan),
                    np.full(shape, np.nan), np.zeros(shape, dtype=int), list(document.selected))
        for cell in document.cells:
            i, j = document.cems.index(cell.cem), document.dms.index(cell.dm)
            table.r[i, j] = np.nan if cell.r is None else cell.r
            if cell.ci95 is not None:
                table.ci_low[i, j], table.ci_high[i, j] = cell.ci95
            table.counts[i, j] = cell.n
        return table


def correlate_interactions(targets: SalienceTargets, cem_values: Mapping[str, np.ndarray],
                           min_observations: int = 10) -> InteractionTable:
    """Pearson r (with Fisher-z CI95) of each CEM against each DM's salience"""
    cems = list(cem_values)
    shape = (len(cems), len(targets.dm_names))
    r = np.full(shape, np.nan)
    ci_low, ci_high = np.full(shape, np.nan), np.full(shape, np.nan)
    counts = np.zeros(shape, dtype=int)

    for i, cem in enumerate(cems):
        values = np.asarray(cem_values[cem], dtype=float)
        for j, dm in enumerate(targets.dm_names):
            salience = targets.values[:, j]
            mask = np.isfinite(salience) & np.isfinite(values)
            counts[i, j] = int(mask.sum())
            if counts[i, j] < min_observations:
                logger.warning(f"{cem} x {dm}: only {counts[i, j]} observations, correlation left undefined")
                continue
            try:
                r[i, j], (ci_low[i, j], ci_high[i, j]) = pearson_with_ci(values[mask], salience[mask])
            except DegenerateDataError as e:
                raise DegenerateDataError(f"{cem} x {dm}: zero-variance column ({e})") from e
    return InteractionTable(cems, list(targets.dm_names), r, ci_low, ci_high, counts)


def select_interactions(table: InteractionTable, threshold: float = 0.6) -> List[Interaction]:
    """Cells with |r| >= threshold, sign retained, in (CEM, DM) order"""
    selected = []
    for i, cem in enumerate(table.cems):
        for j, dm in enumerate(table.dms):
            value = table.r[i, j]
            if np.isfinite(value) and abs(value) >= threshold:
                selected.append(Interaction(cem=cem, dm=dm, r=float(value), sign=1 if value > 0 else -1))
    return sorted(selected, key=lambda s: (s.cem, s.dm))


def filter_variant(selected: Iterable[Interaction], variant: str) -> List[Interaction]:
    """Drop interactions whose CEM the system variant does not model"""
    allowed = config.VARIANT_CEMS[variant]
    kept = [s for s in selected if s.cem in allowed]
    dropped = [f"{s.cem}->{s.dm}" for s in selected if s.cem not in allowed]
    if dropped:
        logger.info(f"Variant '{variant}' ignores interactions {dropped}")
    return kept


# ---------------------------------------------------------------- mapping

def cem_statistics(items: Sequence[ItemFeatures], cems: Iterable[str]) -> Dict[str, CemStats]:
    stats = {}
    for cem in sorted(set(cems)):
        values = feature_matrix(items, [cem], source="cems")[:, 0]
        std = float(np.std(values))
        stats[cem] = CemStats(mean=float(np.mean(values)), std=std if std > 0 else 1.0)
    return stats


def gate_values(model: SalienceMappingModel, cems: Mapping[str, np.ndarray], n_items: int) -> np.ndarray:
    """Clamped gates, items x DMs"""
    gates = np.ones((n_items, len(model.dm_names)))
    for gate in model.gates:
        stats = model.cem_stats[gate.cem]
        z = (np.asarray(cems[gate.cem], dtype=float) - stats.mean) / stats.std
        gates[:, model.dm_names.index(gate.dm)] += gate.weight * z
    return np.clip(gates, 0.0, model.g_max)


def predict_matrix(model: SalienceMappingModel, movs: np.ndarray, cems: Mapping[str, np.ndarray]) -> np.ndarray:
    """BAQ for a matrix of MOVs (items x model.dm_names) and per-CEM value vectors"""
    if not model.bases:
        raise ModelError("Mapping model is untrained")
    movs = np.atleast_2d(np.asarray(movs, dtype=float))
    degradation = np.column_stack([evaluate_basis(movs[:, d], model.bases[dm])
                                   for d, dm in enumerate(model.dm_names)])
    gates = gate_values(model, cems, movs.shape[0])
    return np.clip(100.0 - (gates * degradation).sum(axis=1), 0.0, 100.0)


def predict_baq(model: Optional[SalienceMappingModel], movs: Mapping[str, float],
                cem_summary: Mapping[str, float]) -> float:
    if model is None or not model.bases:
        raise ModelError("Mapping model is untrained")
    missing = [dm for dm in model.dm_names if dm not in movs]
    missing += [g.cem for g in model.gates if g.cem not in cem_summary]
    if missing:
        raise ModelError(f"Features missing for prediction: {sorted(set(missing))}")
    row = np.array([[movs[dm] for dm in model.dm_names]])
    cems = {g.cem: np.array([cem_summary[g.cem]]) for g in model.gates}
    return float(predict_matrix(model, row, cems)[0])


def predict_items(model: SalienceMappingModel, items: Sequence[ItemFeatures]) -> np.ndarray:
    movs = feature_matrix(items, model.dm_names)
    cem_names = sorted({g.cem for g in model.gates})
    cem_block = feature_matrix(items, cem_names, source="cems")
    return predict_matrix(model, movs, {c: cem_block[:, i] for i, c in enumerate(cem_names)})


def train_mapping(items: Sequence[ItemFeatures], selected: Sequence[Interaction],
                  settings: Optional[MappingSettings] = None, dm_names: Optional[Sequence[str]] = None,
                  metadata: Optional[dict] = None) -> SalienceMappingModel:
    """Alternating least squares over basis increments (NNLS) and sign-bounded gate weights"""
    settings = settings or MappingSettings()
    dm_names = list(dm_names or config.DM_NAMES)
    if len(items) < MIN_TRAINING_ITEMS:
        raise InsufficientDataError(f"Training needs {MIN_TRAINING_ITEMS} items, got {len(items)}")

    selected = [s for s in filter_variant(selected, settings.variant) if s.dm in dm_names]
    scores = subjective_scores(items)
    x = feature_matrix(items, dm_names)
    cem_stats = cem_statistics(items, [s.cem for s in selected])
    cem_names = sorted(cem_stats)
    cem_block = feature_matrix(items, cem_names, source="cems")
    cems = {c: cem_block[:, i] for i, c in enumerate(cem_names)}

    knots = [make_knots(x[:, d], settings.n_knots, config.NO_DISTORTION_VALUES.get(dm))
             for d, dm in enumerate(dm_names)]
    blocks = [basis_matrix(x[:, d], k) for d, k in enumerate(knots)]
    degradation = 100.0 - scores

    z = np.column_stack([(cems[s.cem] - cem_stats[s.cem].mean) / cem_stats[s.cem].std for s in selected]) \
        if selected else np.zeros((len(items), 0))
    gate_dm = [dm_names.index(s.dm) for s in selected]
    lower = np.array([0.0 if s.sign > 0 else -np.inf for s in selected])
    upper = np.array([np.inf if s.sign > 0 else 0.0 for s in selected])

    def build(increments, weights) -> SalienceMappingModel:
        return SalienceMappingModel(
            dm_names=dm_names,
            bases={dm: _basis_from_increments(k, inc) for dm, k, inc in zip(dm_names, knots, increments)},
            gates=[GateWeight(dm=s.dm, cem=s.cem, sign=s.sign, weight=float(w)) for s, w in zip(selected, weights)],
            cem_stats=cem_stats,
            g_max=settings.g_max,
            variant=settings.variant,
        )

    def objective(model) -> float:
        return float(np.mean((predict_matrix(model, x, cems) - scores) ** 2))

    weights = np.zeros(len(selected))
    model, previous = None, None
    converged, rounds = False, 0
    for rounds in range(1, settings.max_rounds + 1):
        gates = np.ones_like(x)
        for g, d in enumerate(gate_dm):
            gates[:, d] += weights[g] * z[:, g]
        gates = np.clip(gates, 0.0, settings.g_max)
        increments = _fit_increments(blocks, gates, degradation)

        if selected:
            contributions = np.column_stack([block @ inc for block, inc in zip(blocks, increments)])
            design = contributions[:, gate_dm] * z
            target = degradation - contributions.sum(axis=1)
            weights = lsq_linear(design, target, bounds=(lower, upper)).x

        model = build(increments, weights)
        value = objective(model)
        logger.debug(f"ALS round {rounds}: MSE {value:.6f}")
        if not selected:
            converged = True
            break
        if previous is not None and abs(previous - value) <= settings.tolerance * max(previous, 1e-12):
            converged = True
            break
        previous = value

    if not converged:
        logger.warning(f"Mapping training did not converge in {settings.max_rounds} rounds, keeping the last iterate")

    final_objective = objective(model)
    model.training = TrainingSummary(
        n_items=len(items),
        rounds=rounds,
        converged=converged,
        objective=final_objective,
        rmse=float(np.sqrt(final_objective)),
    )
    model.metadata = metadata or {}
    logger.info(
        f"Trained mapping on {len(items)} items with {len(selected)} gates: "
        f"RMSE {model.training.rmse:.3f} after {rounds} rounds"
    )
    return model


def load_model(text: str) -> SalienceMappingModel:
    """Parse and version-check a serialized mapping model"""
    try:
        return SalienceMappingModel.model_validate_json(text)
    except ValueError as e:
        raise ModelError(f"Invalid mapping model: {e}") from e


def analyze_interactions(items: Sequence[ItemFeatures], settings: Optional[MappingSettings] = None,
                         dm_names: Optional[Sequence[str]] = None,
                         cem_names: Sequence[str] = config.CEM_NAMES) -> InteractionTable:
    """Salience targets, CEM x DM correlation table and the selected interactions"""
    settings = settings or MappingSettings()
    targets = compute_salience_targets(items, dm_names, settings.n_knots, settings.min_contribution)
    cem_block = feature_matrix(items, cem_names, source="cems")
    table = correlate_interactions(
        targets, {cem: cem_block[:, i] for i, cem in enumerate(cem_names)}, settings.min_observations
    )
    table.selected = select_interactions(table, settings.threshold)
    logger.info(f"Selected interactions at |r| >= {settings.threshold}: "
                f"{[(s.cem, s.dm, s.sign) for s in table.selected]}")
    return table
