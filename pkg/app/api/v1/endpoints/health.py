from fastapi import APIRouter

from app.core.config import effective_threads, settings

router = APIRouter()

@router.get("/healthz")
async def health_check():
    """Liveness plus the experiment settings the service runs with"""
    return {
        "status": "ok",
        "version": settings.PROJECT_VERSION,
        "output_dir": settings.OUTPUT_DIR,
        "threads": effective_threads(),
    }
