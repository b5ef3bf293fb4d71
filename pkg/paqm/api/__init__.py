from fastapi import APIRouter
from paqm.api.routes import analysis, health


api_router = APIRouter()

# Include all route modules
api_router.include_router(analysis.router, tags=["analysis"])
api_router.include_router(health.router, tags=["health"])
