"""
API Service Module

Read access to the run registry and inference with the served model.
"""

import json
import logging
from functools import lru_cache
from pathlib import Path

import numpy as np
from fastapi import HTTPException
from sqlalchemy import func
from sqlalchemy.orm import Session

from heightlane.api.schemas import HeightmapStats, InferRequest, InferResponse, LaneOut
from heightlane.config import served_model_paths
from heightlane.database.models import EvalRecord, TrainRun
from heightlane.diffcore.checkpoint import load_checkpoint, load_into
from heightlane.model.network import build_model
from heightlane.synth.dataset import load_scene
from heightlane.trainer.service import load_train_config, predict

logger = logging.getLogger(__name__)


def _eval_dict(record: EvalRecord) -> dict:
    return {
        "id": record.id,
        "iteration": record.iteration,
        "checkpoint_path": record.checkpoint_path,
        "use_gt_heightmap": record.use_gt_heightmap,
        "f_score": record.f_score,
        "precision": record.precision,
        "recall": record.recall,
        "x_error_near": record.x_error_near,
        "x_error_far": record.x_error_far,
        "z_error_near": record.z_error_near,
        "z_error_far": record.z_error_far,
        "height_mae": record.height_mae,
        "scenarios": json.loads(record.scenarios) if record.scenarios else {},
    }


def _run_dict(run: TrainRun) -> dict:
    return {
        "run_id": run.id,
        "name": run.name,
        "seed": run.seed,
        "anchors": run.anchors,
        "iterations": run.iterations,
        "final_loss": run.final_loss,
        "checkpoint_path": run.checkpoint_path,
        "created_at": run.created_at.isoformat() if run.created_at else None,
    }


def list_runs_service(page: int, page_size: int, db: Session) -> dict:
    """
    Registered training runs, oldest first.

    Args:
        page (int): Page number, from 1
        page_size (int): Number of runs per page
        db (Session): Database session

    Returns:
        dict: Runs of the page plus pagination metadata
    """
    if page < 1 or page_size < 1:
        raise HTTPException(status_code=400, detail="page and page_size must be >= 1")
    offset = (page - 1) * page_size
    total_count = db.query(func.count(TrainRun.id)).scalar()
    runs = db.query(TrainRun).order_by(TrainRun.id).offset(offset).limit(page_size).all()
    return {
        "runs": [_run_dict(run) for run in runs],
        "pagination": {
            "total": total_count,
            "page": page,
            "page_size": page_size,
            "total_pages": (total_count + page_size - 1) // page_size,
        },
    }


def get_run_service(run_id: int, db: Session) -> dict:
    """
    One run with its evaluation records.

    Raises:
        HTTPException: If the run is not registered
    """
    run = db.get(TrainRun, run_id)
    if run is None:
        raise HTTPException(status_code=404, detail=f"Run with ID {run_id} not found")
    data = _run_dict(run)
    data["config"] = json.loads(run.config)
    data["evals"] = [_eval_dict(record) for record in run.evals]
    return data


@lru_cache(maxsize=1)
def served_model():
    """Frozen (config, model) pair named by HEIGHTLANE_CHECKPOINT and HEIGHTLANE_CONFIG."""
    checkpoint, config = served_model_paths()
    if not checkpoint or not config:
        raise HTTPException(status_code=404, detail="no served model: set HEIGHTLANE_CHECKPOINT and HEIGHTLANE_CONFIG")
    cfg = load_train_config(Path(config))
    model = build_model(cfg.model)
    load_into(model, load_checkpoint(Path(checkpoint)))
    model.eval()
    for p in model.parameters():
        p.requires_grad_(False)
    logger.info("serving %s", checkpoint)
    return cfg, model


def infer_service(request: InferRequest) -> InferResponse:
    """
    Decode lanes of one dataset scene directory with the served model.

    Raises:
        HTTPException: 404 if the scene or the served model is missing
    """
    scene_dir = Path(request.scene_dir)
    if not scene_dir.is_dir():
        raise HTTPException(status_code=404, detail=f"scene directory {scene_dir} not found")
    cfg, model = served_model()
    sample = load_scene(scene_dir, cfg.model.grid)
    ((lanes, predicted),) = predict(model, [sample], request.use_gt_heightmap, cfg.conf_thresh, cfg.embed_margin)
    values = predicted.values
    return InferResponse(
        scene_id=sample.scene_id,
        lanes=[LaneOut(points=[list(p) for p in lane.points]) for lane in lanes],
        heightmap=HeightmapStats(min=float(np.min(values)), max=float(np.max(values)), mean=float(np.mean(values))),
    )
