import json
from typing import Dict, List, Optional

from pydantic import BaseModel, Field

from app.parser import format_expr

SCHEMA_VERSION = 1


class Report(BaseModel):
    """Base for JSON reports; `schema` is versioned so consumers can pin it"""

    schema_version: int = Field(SCHEMA_VERSION, serialization_alias="schema")

    def to_json(self) -> str:
        return json.dumps(self.model_dump(by_alias=True), sort_keys=True, indent=2)


# Request Models
class VerifyRequest(BaseModel):
    equation: str  # contents of a .eq file
    vector: str  # contents of a .cv file
    assume: Optional[List[str]] = None  # e.g. ["x > 1"]


class ClassifyRequest(BaseModel):
    equation: str
    assume: Optional[List[str]] = None


# Conserved Vector Models
class VectorModel(BaseModel):
    F: str
    G: str
    rules: List[str] = []

    @classmethod
    def from_vector(cls, cv) -> "VectorModel":
        rules = [
            f"{r.target}{'_' + r.wrt.name if r.wrt is not None else ''} = {format_expr(r.replacement)}"
            for r in cv.rules
        ]
        return cls(F=format_expr(cv.F), G=format_expr(cv.G), rules=rules)


class VerificationReportModel(Report):
    verdict: str
    verified: bool
    residual: str
    rhs: str
    equation: str
    vector: VectorModel
    oracle_residual: Optional[float] = None
    oracle_tolerance: Optional[float] = None
    oracle_within_tolerance: Optional[bool] = None

    @classmethod
    def from_report(cls, report, eq, cv, oracle_residual: Optional[float] = None,
                    oracle_tolerance: Optional[float] = None) -> "VerificationReportModel":
        within = None
        if oracle_residual is not None and oracle_tolerance is not None:
            within = oracle_residual < oracle_tolerance
        return cls(
            verdict=report.verdict,
            verified=report.verified,
            residual=format_expr(report.residual),
            rhs=format_expr(report.rhs),
            equation=eq.describe(),
            vector=VectorModel.from_vector(cv),
            oracle_residual=oracle_residual,
            oracle_tolerance=oracle_tolerance,
            oracle_within_tolerance=within,
        )


# Classification Models
class CaseMatchModel(BaseModel):
    case_id: str
    parameters: Dict[str, str] = {}
    chain: List[str] = []
    vectors: List[VectorModel] = []


class ClassificationResultModel(Report):
    equation: str
    matched: List[str]
    matches: List[CaseMatchModel]

    @classmethod
    def from_result(cls, result) -> "ClassificationResultModel":
        from app.catalog import describe_element

        matches = [
            CaseMatchModel(
                case_id=m.case_id,
                parameters={k: format_expr(v) for k, v in m.parameters.items()},
                chain=[describe_element(e) for e in m.chain],
                vectors=[VectorModel.from_vector(cv) for cv in m.vectors],
            )
            for m in result.matches
        ]
        return cls(equation=result.equation.describe(), matched=result.case_ids, matches=matches)


# Catalog Models
class CatalogRuleModel(BaseModel):
    target: str
    wrt: Optional[str] = None
    replacement: str


class CatalogVectorModel(BaseModel):
    F: str
    G: str
    rules: List[CatalogRuleModel] = []


class CatalogCaseModel(BaseModel):
    id: str
    family: int
    constraints: List[str]
    parameters: Dict[str, str] = {}
    coordinate: str = "x"
    equation: Dict[str, str]
    assumptions: List[str] = []
    vectors: List[CatalogVectorModel]
    notes: List[str] = []


class CatalogModel(Report):
    cases: List[CatalogCaseModel]
    reductions: List[str] = []


# Transformation Models
class TransformReportModel(Report):
    kind: str
    equation: str
    image: str
    same_equation: Optional[bool] = None
    vector: Optional[VectorModel] = None
    image_vector: Optional[VectorModel] = None


# Numerical Models
class DriftReportModel(Report):
    label: str = ""
    n: int
    t_end: float
    q0: float
    drift: float
    tolerance: float
    within_tolerance: bool

    @classmethod
    def from_report(cls, report) -> "DriftReportModel":
        return cls(
            label=report.label,
            n=report.n,
            t_end=report.t_end,
            q0=report.q0,
            drift=report.drift,
            tolerance=report.tolerance,
            within_tolerance=report.within_tolerance,
        )
