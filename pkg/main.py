import sys
from typing import List, Optional

import uvicorn
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware

from app.catalog import CASES, case_to_dict, classify, export_catalog, get_case, list_cases
from app.config import get_settings
from app.conslaw import cv_from_text, verify
from app.equations import DCEquation, equation_from_text
from app.expr_core import DCEError, PreconditionError
from app.models import (
    CatalogCaseModel, CatalogModel, ClassificationResultModel, ClassifyRequest,
    VerificationReportModel, VerifyRequest
)
from app.parser import ParseError, parse_assumption

# Initialize FastAPI app
app = FastAPI(
    title="Conservation Law Engine API",
    description="Verification and classification of conservation laws for variable-coefficient diffusion-convection equations",
    version="1.0.0"
)

# CORS middleware
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


def _equation(text: str, assume: Optional[List[str]]) -> DCEquation:
    eq = equation_from_text(text)
    if not assume:
        return eq
    extra = tuple(parse_assumption(a) for a in assume)
    return DCEquation(space=eq.space, chart=eq.chart, assumptions=eq.assumptions + extra, **eq.coefficients())


@app.get("/")
async def root():
    """Root endpoint"""
    return {
        "message": "Conservation Law Engine API is running!",
        "version": "1.0.0",
        "endpoints": {
            "health": "/api/health",
            "verify": "/api/verify",
            "classify": "/api/classify",
            "catalog": "/api/catalog",
            "case": "/api/catalog/{case_id}"
        }
    }


@app.get("/api/health")
async def health():
    settings = get_settings()
    return {"status": "ok", "cases": len(CASES), "rewrite_depth": settings.rewrite_depth}

# ==================== VERIFICATION ====================

@app.post("/api/verify", response_model=VerificationReportModel)
def verify_vector(request: VerifyRequest):
    """
    Check D_tF + D_xG = 0 on solutions.

    Request:
    {
        "equation": "f = 1\\nA = 1\\nB = u\\nh = 1\\ng = 1",
        "vector": "F = u\\nG = -u_x - u^2/2",
        "assume": ["x > 1"]  // optional
    }
    """
    try:
        eq = _equation(request.equation, request.assume)
        cv = cv_from_text(request.vector)
        report = verify(eq, cv)
        return VerificationReportModel.from_report(report, eq, cv)
    except ParseError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except DCEError as e:
        raise HTTPException(status_code=400, detail=str(e))

# ==================== CLASSIFICATION ====================

@app.post("/api/classify", response_model=ClassificationResultModel)
def classify_equation(request: ClassifyRequest):
    """Match a g = 1 equation against both classification lists"""
    try:
        result = classify(_equation(request.equation, request.assume))
        return ClassificationResultModel.from_result(result)
    except ParseError as e:
        raise HTTPException(status_code=422, detail=str(e))
    except DCEError as e:
        raise HTTPException(status_code=400, detail=str(e))

# ==================== CATALOG ====================

@app.get("/api/catalog", response_model=CatalogModel)
def get_catalog(family: Optional[int] = None):
    """Full catalog, or the cases of one list (family=3|4)"""
    if family is None:
        return CatalogModel(**export_catalog())
    try:
        cases = list_cases(family)
    except PreconditionError as e:
        raise HTTPException(status_code=400, detail=str(e))
    return CatalogModel(cases=[CatalogCaseModel(**case_to_dict(c)) for c in cases])


@app.get("/api/catalog/{case_id}", response_model=CatalogCaseModel)
def get_catalog_case(case_id: str):
    try:
        case = get_case(case_id)
    except PreconditionError:
        raise HTTPException(status_code=404, detail=f"Case {case_id} not found")
    return CatalogCaseModel(**case_to_dict(case))


if __name__ == "__main__":
    if len(sys.argv) > 1:
        from app.cli import run

        sys.exit(run(sys.argv[1:]))
    settings = get_settings()
    uvicorn.run(app, host=settings.host, port=settings.port)
