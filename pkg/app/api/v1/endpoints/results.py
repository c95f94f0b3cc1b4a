from pathlib import Path
from typing import Any, List

from fastapi import APIRouter, HTTPException

from app.core.config import settings
from app.core.exceptions import ArtifactMissingError
from app.models.results import ResultRow
from app.services.experiments import read_results

router = APIRouter()


@router.get("/results", response_model=List[ResultRow])
def get_results() -> Any:
    """Rows of the last evaluation run"""
    try:
        return read_results(Path(settings.OUTPUT_DIR) / "results.csv")
    except ArtifactMissingError as e:
        raise HTTPException(status_code=404, detail=e.detail)
