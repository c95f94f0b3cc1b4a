from fastapi import APIRouter

from app.api.v1.endpoints import estimation, health, results

api_router = APIRouter()

# Include API endpoints
api_router.include_router(estimation.router, tags=["estimation"])
api_router.include_router(results.router, tags=["results"])
api_router.include_router(health.router, tags=["health"])
