from fastapi import APIRouter, HTTPException, Request
from pydantic import BaseModel
from typing import Optional
from pathlib import Path
import logging

from paqm.core.exceptions import AudioFormatError, AudioIOError, PaqmError
from paqm.database.schemas import CompareReport
from paqm.services.pipeline import analyze_pair, build_compare_report
from paqm.services.salience_mapping import load_model

router = APIRouter()
logger = logging.getLogger(__name__)


class CompareRequest(BaseModel):
    """Schema for a REF/SUT comparison request"""
    ref_path: str
    sut_path: str
    model_path: Optional[str] = None


@router.post("/compare", response_model=CompareReport)
def compare(request: CompareRequest, http_request: Request):
    """Run the measurement pipeline on a pair of server-side WAV files"""
    cfg = http_request.app.state.config
    try:
        model = None
        if request.model_path:
            path = Path(request.model_path)
            if not path.is_file():
                raise AudioIOError(f"Model file not found: {path}")
            model = load_model(path.read_text(encoding="utf-8"))
        analysis = analyze_pair(request.ref_path, request.sut_path, cfg)
        return build_compare_report(analysis, cfg, model, request.ref_path, request.sut_path)
    except AudioFormatError as e:
        raise HTTPException(status_code=415, detail=str(e))
    except AudioIOError as e:
        raise HTTPException(status_code=404, detail=str(e))
    except PaqmError as e:
        logger.error(f"Comparison failed: {e}")
        raise HTTPException(status_code=422, detail=str(e))
