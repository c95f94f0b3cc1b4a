from typing import Any, List

from fastapi import APIRouter, HTTPException

from app.core.exceptions import AppException
from app.models.config import ExperimentConfig
from app.models.results import NmseRequest, ResultRow
from app.services.experiments import monte_carlo_classical

router = APIRouter()


@router.post("/estimation/nmse", response_model=List[ResultRow])
def estimate_nmse(request: NmseRequest) -> Any:
    """Monte Carlo NMSE of LS and both LMMSE variants at the requested SNRs"""
    overrides = {"seed": request.seed, "snr_mode": request.snr_mode, "snr_grid_db": request.snr_db}
    if request.system is not None:
        overrides["system"] = request.system
    cfg = ExperimentConfig.desk(**overrides)
    try:
        return monte_carlo_classical(cfg, request.link_id, request.trials)
    except AppException as e:
        raise HTTPException(status_code=e.status_code, detail=e.detail)
