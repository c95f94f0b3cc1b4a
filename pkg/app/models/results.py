import math
from typing import List, Literal, Optional

from pydantic import BaseModel, validator

from app.models.config import SystemConfig


class ResultRow(BaseModel):
    """One point of an NMSE-versus-SNR curve"""
    link_id: int
    estimator: str
    snr_db: float
    nmse: float
    nmse_db: Optional[float] = None

    @validator("nmse")
    def validate_nmse(cls, v):
        if not math.isfinite(v) or v < 0:
            raise ValueError("nmse must be finite and >= 0")
        return v

    @validator("nmse_db", always=True)
    def fill_nmse_db(cls, v, values):
        if "nmse" not in values:
            return v
        nmse = values["nmse"]
        # a perfect estimate has no dB value
        return 10.0 * math.log10(nmse) if nmse > 0 else None


class AblationRow(BaseModel):
    """Skip connection on versus off at one SNR, next to the reference values"""
    snr_db: float
    attention_only: float
    sc_attention: float
    improvement: float
    meets_floor: bool = False
    reference_attention_only: Optional[float] = None
    reference_sc_attention: Optional[float] = None


class NmseRequest(BaseModel):
    link_id: int = 3
    snr_db: List[float] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0]
    trials: int = 200
    seed: int = 0
    snr_mode: Literal["transmit", "receive"] = "receive"
    system: Optional[SystemConfig] = None

    @validator("link_id")
    def validate_link_id(cls, v):
        if v not in (1, 2, 3):
            raise ValueError("link_id must be 1, 2 or 3")
        return v

    @validator("trials")
    def validate_trials(cls, v):
        if not 1 <= v <= 2000:
            raise ValueError("trials must lie in [1, 2000]")
        return v

    @validator("snr_db")
    def validate_snr_db(cls, v):
        if not v:
            raise ValueError("snr_db must not be empty")
        return v
