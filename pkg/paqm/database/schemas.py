from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator

from paqm import config


class ManifestRow(BaseModel):
    """Schema for one listening-test manifest row"""
    item_id: str
    condition: str
    ref_path: str
    sut_path: str
    mushra_mean: float = Field(ge=0.0, le=100.0)
    mushra_ci95: Optional[float] = None


class DbManifest(BaseModel):
    """Schema for a listening-test database manifest"""
    source: Optional[str] = None
    rows: List[ManifestRow]

    def __len__(self) -> int:
        return len(self.rows)


class ItemFeatures(BaseModel):
    """Schema for per-item distortion and cognitive effect features"""
    item_id: str
    condition: str = ""
    movs: Dict[str, float]
    cems: Dict[str, float]
    subjective_score: Optional[float] = Field(default=None, ge=0.0, le=100.0)


class Interaction(BaseModel):
    """Schema for a selected CEM-DM interaction"""
    cem: str
    dm: str
    r: float
    sign: Literal[1, -1]

    @property
    def key(self) -> Tuple[str, str]:
        return (self.cem, self.dm)


class InteractionCell(BaseModel):
    """Schema for one CEM-DM correlation cell"""
    cem: str
    dm: str
    r: Optional[float]
    ci95: Optional[Tuple[float, float]]
    n: int


class InteractionTableDocument(BaseModel):
    """Schema for the interaction analysis output"""
    format_version: str = config.INTERACTIONS_FORMAT_VERSION
    threshold: float
    cems: List[str]
    dms: List[str]
    cells: List[InteractionCell]
    selected: List[Interaction]
    metadata: Dict[str, Any] = {}

    @field_validator("format_version")
    @classmethod
    def _known_version(cls, value: str) -> str:
        if value != config.INTERACTIONS_FORMAT_VERSION:
            raise ValueError(f"unsupported interactions format {value!r}")
        return value


class BasisFunction(BaseModel):
    """Schema for a monotone piecewise-linear DM basis function"""
    knots: List[float]
    values: List[float]


class GateWeight(BaseModel):
    """Schema for a gate weight lambda(DM, CEM)"""
    dm: str
    cem: str
    sign: Literal[1, -1]
    weight: float


class CemStats(BaseModel):
    """Schema for CEM standardization statistics"""
    mean: float
    std: float


class TrainingSummary(BaseModel):
    """Schema for mapping training diagnostics"""
    n_items: int
    rounds: int
    converged: bool
    objective: float
    rmse: float


class SalienceMappingModel(BaseModel):
    """Schema for the salience-gated BAQ mapping model"""
    format_version: str = config.MODEL_FORMAT_VERSION
    dm_names: List[str]
    bases: Dict[str, BasisFunction]
    gates: List[GateWeight] = []
    cem_stats: Dict[str, CemStats] = {}
    g_max: float = 2.0
    variant: str = "bvar"
    training: Optional[TrainingSummary] = None
    metadata: Dict[str, Any] = {}

    @field_validator("format_version")
    @classmethod
    def _known_version(cls, value: str) -> str:
        if value != config.MODEL_FORMAT_VERSION:
            raise ValueError(f"unsupported model format {value!r}, expected {config.MODEL_FORMAT_VERSION!r}")
        return value


class AlignmentInfo(BaseModel):
    """Schema for alignment results of a compared pair"""
    lag_samples: int
    gain_applied_db: float
    sample_rate: int
    n_frames: int


class CompareReport(BaseModel):
    """Schema for a single REF/SUT comparison report"""
    format_version: str = config.REPORT_FORMAT_VERSION
    ref_path: Optional[str] = None
    sut_path: Optional[str] = None
    alignment: AlignmentInfo
    movs: Dict[str, float]
    cems: Dict[str, float]
    baq: Optional[float] = None
    metadata: Dict[str, Any] = {}


class ItemScore(BaseModel):
    """Schema for a predicted vs subjective item score"""
    item_id: str
    condition: str
    objective: float
    mapped: float
    subjective: float


class ConditionScore(BaseModel):
    """Schema for per-condition pooled scores"""
    condition: str
    n_items: int
    objective: float
    mapped: float
    subjective: float


class SystemEvaluation(BaseModel):
    """Schema for the evaluation of one system on one database"""
    system: str
    r: float
    ci95: Tuple[float, float]
    r_raw: float
    poly_coeffs: List[float]
    n_items: int
    pooled_conditions: bool = False
    conditions: List[ConditionScore]
    items: List[ItemScore]


class EvaluationReport(BaseModel):
    """Schema for an evaluation report over one or more systems"""
    format_version: str = config.REPORT_FORMAT_VERSION
    manifest: Optional[str] = None
    systems: List[SystemEvaluation]
    metadata: Dict[str, Any] = {}
