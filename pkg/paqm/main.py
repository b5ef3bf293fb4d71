from typing import Optional

import uvicorn
from fastapi import FastAPI

from paqm import __version__
from paqm.api import api_router
from paqm.settings import PipelineConfig, load_config


def create_app(cfg: Optional[PipelineConfig] = None) -> FastAPI:
    app = FastAPI(
        title="paqm API",
        description="Perceptual audio quality measurement",
        version=__version__,
    )
    app.state.config = cfg or load_config()
    app.include_router(api_router)

    @app.get("/")
    def root():
        return {"message": "paqm perceptual audio quality API"}

    return app


if __name__ == "__main__":
    uvicorn.run(create_app(), host="127.0.0.1", port=8000)
