"""
API Routes Module

Endpoints:
- Run registry listing and detail
- Lane inference on a dataset scene directory
"""

from fastapi import APIRouter, Depends, HTTPException
from fastapi.concurrency import run_in_threadpool
from sqlalchemy.orm import Session

from heightlane.api.schemas import InferRequest, InferResponse
from heightlane.api.service import get_run_service, infer_service, list_runs_service
from heightlane.database.database import SessionLocal
from heightlane.exceptions import HeightLaneError

# Initialize router
router = APIRouter()


def get_db():
    """
    Dependency function to get database session.
    Ensures proper session cleanup after use.

    Yields:
        Session: Database session
    """
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


@router.get("/runs")
def list_runs(page: int = 1, page_size: int = 10, db: Session = Depends(get_db)) -> dict:
    """
    Registered training runs with pagination.

    Args:
        page (int): Page number (default: 1)
        page_size (int): Number of items per page (default: 10)
        db (Session): Database session

    Returns:
        dict: Paginated list of runs
    """
    return list_runs_service(page, page_size, db)


@router.get("/runs/{run_id}")
def get_run(run_id: int, db: Session = Depends(get_db)) -> dict:
    """
    Raises:
        HTTPException: If the run is not found
    """
    return get_run_service(run_id, db)


@router.post("/infer", response_model=InferResponse)
async def infer(request: InferRequest) -> InferResponse:
    """
    Run the served model on one scene directory.

    Raises:
        HTTPException: 404 for a missing scene or model, 400 for invalid scene content
    """
    try:
        return await run_in_threadpool(infer_service, request)
    except HeightLaneError as e:
        raise HTTPException(status_code=400, detail=str(e))
    except FileNotFoundError as e:
        raise HTTPException(status_code=404, detail=str(e))
