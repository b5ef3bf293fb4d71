from fastapi import APIRouter, HTTPException, Request
from paqm import config
from paqm.core.ear_model import get_ear_model
import logging
import time
import psutil
from datetime import datetime, timezone

router = APIRouter()
logger = logging.getLogger(__name__)


@router.get("/health")
async def health_check(request: Request):
    """
    Health check endpoint for monitoring
    Returns component status and host load
    """
    start_time = time.time()
    cfg = request.app.state.config

    health_status = {
        "status": "healthy",
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "version": config.TOOL_VERSION,
        "components": {},
        "system": {}
    }

    # Ear model builds for every supported rate
    try:
        for rate in config.SUPPORTED_SAMPLE_RATES:
            get_ear_model(cfg.ear, rate)
        health_status["components"]["ear_model"] = {
            "status": "healthy",
            "message": f"{cfg.ear.n_bands} bands at {list(config.SUPPORTED_SAMPLE_RATES)} Hz"
        }
    except Exception as e:
        logger.error(f"Ear model check failed: {e}")
        health_status["status"] = "unhealthy"
        health_status["components"]["ear_model"] = {
            "status": "unhealthy",
            "message": f"Ear model construction failed: {str(e)}"
        }

    health_status["components"]["config"] = {
        "status": "healthy",
        "variant": cfg.mapping.variant,
        "threshold": cfg.mapping.threshold
    }

    # System metrics
    try:
        memory = psutil.virtual_memory()
        cpu_percent = psutil.cpu_percent(interval=None)
        health_status["system"] = {
            "memory": {
                "total": memory.total,
                "available": memory.available,
                "percent": memory.percent
            },
            "cpu_count": psutil.cpu_count(),
            "cpu_percent": cpu_percent
        }
        if memory.percent > 90 or cpu_percent > 90:
            health_status["status"] = "degraded"
    except Exception as e:
        health_status["system"]["error"] = f"Could not get system metrics: {str(e)}"

    health_status["response_time_ms"] = round((time.time() - start_time) * 1000, 2)

    if health_status["status"] == "unhealthy":
        raise HTTPException(status_code=503, detail=health_status)

    return health_status
