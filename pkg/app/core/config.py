import os
from typing import List
from pydantic import BaseSettings

class Settings(BaseSettings):
    # Project settings
    PROJECT_NAME: str = "Double-RIS Channel Estimation Lab"
    PROJECT_DESCRIPTION: str = "LS/LMMSE and SC-attention channel estimation for double-RIS aided massive MIMO"
    PROJECT_VERSION: str = "0.1.0"

    # API settings
    API_PREFIX: str = "/api/v1"
    DOCS_URL: str = "/docs"
    REDOC_URL: str = "/redoc"

    # Server settings
    DEBUG: bool = os.getenv("DEBUG", "False").lower() in ("true", "1", "t")
    HOST: str = os.getenv("HOST", "127.0.0.1")
    PORT: int = int(os.getenv("PORT", "8000"))

    # CORS settings
    CORS_ORIGINS: List[str] = ["*"]

    # Experiment settings
    OUTPUT_DIR: str = "runs"
    LOG_LEVEL: str = "INFO"
    # 0 means "use every core"
    RISCE_THREADS: int = 0

    class Config:
        env_file = ".env"
        case_sensitive = True

settings = Settings()


def effective_threads() -> int:
    """Worker count for parallel generation/evaluation, capped by RISCE_THREADS"""
    cpus = os.cpu_count() or 1
    if settings.RISCE_THREADS <= 0:
        return cpus
    return max(1, min(settings.RISCE_THREADS, cpus))
