"""
FastAPI Application Entry Point

This module initializes the FastAPI app, sets up CORS middleware, creates the
run registry tables and includes the API router.
"""

from fastapi import FastAPI
from fastapi.middleware.cors import CORSMiddleware

from heightlane import __version__
from heightlane.api.routes import router as api_router
from heightlane.database.database import init_db

# Initialize FastAPI application
app = FastAPI(
    title="HeightLane API",
    description="Run registry and lane inference for the HeightLane pipeline",
    version=__version__,
)

# Allows all origins, methods, and headers for development
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)

# Create registry tables
init_db()

app.include_router(api_router, prefix="/api", tags=["HeightLane"])
